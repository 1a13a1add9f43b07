//! Reservoir-sampled episodic memory.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled stream element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInstance {
    pub features: Vec<f64>,
    pub label: usize,
    pub position: u64,
}

impl StreamInstance {
    pub fn new(features: Vec<f64>, label: usize, position: u64) -> Self {
        Self { features, label, position }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicMemory {
    capacity: usize,
    items: Vec<StreamInstance>,
    seen: u64,
}

impl EpisodicMemory {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: Vec::with_capacity(capacity), seen: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn items(&self) -> &[StreamInstance] {
        &self.items
    }

    /// Offers `inst` to the reservoir: kept outright while filling, afterwards
    /// it replaces a uniform slot with probability `M / (s + 1)`.
    pub fn maybe_insert<R: Rng + ?Sized>(&mut self, inst: StreamInstance, rng: &mut R) {
        if self.items.len() < self.capacity {
            self.items.push(inst);
        } else if self.capacity > 0 {
            let j = rng.gen_range(0..=self.seen);
            if (j as usize) < self.capacity {
                self.items[j as usize] = inst;
            }
        }
        self.seen += 1;
    }

    /// `k` uniform draws with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<StreamInstance>> {
        if self.items.is_empty() {
            return Err(Error::State("cannot sample from an empty memory".into()));
        }
        Ok((0..k).map(|_| self.items[rng.gen_range(0..self.items.len())].clone()).collect())
    }

    /// Writes `position,label,x0,x1,...` rows.
    pub fn dump_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        for it in &self.items {
            let mut rec = vec![it.position.to_string(), it.label.to_string()];
            rec.extend(it.features.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn item(i: u64) -> StreamInstance {
        StreamInstance::new(vec![i as f64], 0, i)
    }

    #[test]
    fn fill_phase_keeps_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = EpisodicMemory::new(10);
        for i in 0..10 {
            m.maybe_insert(item(i), &mut rng);
        }
        let pos: Vec<u64> = m.items().iter().map(|x| x.position).collect();
        assert_eq!(pos, (0..10).collect::<Vec<_>>());
        assert_eq!(m.seen(), 10);
    }

    #[test]
    fn capacity_one_keeps_each_item_with_prob_one_over_s() {
        let s = 8u64;
        let runs = 10_000;
        let mut counts = vec![0u32; s as usize];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..runs {
            let mut m = EpisodicMemory::new(1);
            for i in 0..s {
                m.maybe_insert(item(i), &mut rng);
            }
            counts[m.items()[0].position as usize] += 1;
        }
        let expect = runs as f64 / s as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        let p = 1.0 - ChiSquared::new((s - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2={chi2} p={p} counts={counts:?}");
    }

    #[test]
    fn sample_batch_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let empty = EpisodicMemory::new(4);
        assert!(matches!(empty.sample_batch(1, &mut rng), Err(Error::State(_))));

        let mut m = EpisodicMemory::new(4);
        m.maybe_insert(item(5), &mut rng);
        assert!(m.sample_batch(0, &mut rng).unwrap().is_empty());
        let b = m.sample_batch(5, &mut rng).unwrap();
        assert_eq!(b.len(), 5);
        assert!(b.iter().all(|x| x.position == 5));
    }

    #[test]
    fn sample_batch_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = EpisodicMemory::new(20);
        for i in 0..20 {
            m.maybe_insert(item(i), &mut rng);
        }
        let draws = m.sample_batch(10_000, &mut rng).unwrap();
        let mut counts = [0u32; 20];
        draws.iter().for_each(|x| counts[x.position as usize] += 1);
        let expect = 500.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        let p = 1.0 - ChiSquared::new(19.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "p={p}");
    }

    #[test]
    fn reservoir_is_reproducible_and_bounded() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = EpisodicMemory::new(16);
            for i in 0..1_000 {
                m.maybe_insert(item(i), &mut rng);
                assert!(m.len() <= 16);
                assert_eq!(m.len() as u64, m.seen().min(16));
            }
            m
        };
        assert_eq!(run(9), run(9));
        let m = run(9);
        let mut pos: Vec<u64> = m.items().iter().map(|x| x.position).collect();
        pos.sort_unstable();
        pos.dedup();
        assert_eq!(pos.len(), 16);
    }

    #[test]
    fn dump_csv_writes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = EpisodicMemory::new(2);
        m.maybe_insert(StreamInstance::new(vec![1.5, -2.0], 1, 7), &mut rng);
        let mut buf = Vec::new();
        m.dump_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "7,1,1.5,-2\n");
    }
}
