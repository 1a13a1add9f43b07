use bodl::stream::StreamSpec;

fn shape(spec: &str) -> (usize, usize, usize) {
    let s = spec.parse::<StreamSpec>().unwrap().open(0).unwrap();
    (s.len(), s.input_dim, s.classes)
}

#[test]
fn pima_shape() {
    assert_eq!(shape("csv:pima"), (768, 8, 2));
}

#[test]
fn magic_shape() {
    assert_eq!(shape("csv:magic"), (19020, 10, 2));
}

#[test]
fn magic_shuffle_depends_on_seed_only() {
    let spec: StreamSpec = "csv:magic;shuffle=true".parse().unwrap();
    let a = spec.open(1).unwrap();
    let b = spec.open(1).unwrap();
    let c = spec.open(2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.instances[..50], c.instances[..50]);
    // positions follow the replay order
    assert!(a.instances.iter().enumerate().all(|(i, x)| x.position == i as u64));
}
