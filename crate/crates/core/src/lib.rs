//! Online deep learning with a hedged ensemble of depth-indexed heads,
//! error-rate drift detection, reservoir memory and first-order bilevel
//! adaptation, plus linear online baselines and a prequential harness.

pub mod baselines;
pub mod bilevel;
pub mod drift;
pub mod error;
pub mod harness;
pub mod hedge_net;
pub mod memory;
pub mod numerics;
pub mod stream;

pub use baselines::{BaselineKind, BaselineParams, LinearModel};
pub use bilevel::{adapt_on_drift, AdaptLog, BilevelConfig, ParamSpace, RecentBuffer};
pub use drift::{DetectorConfig, DriftDetector, DriftStatus};
pub use error::{Error, Result};
pub use harness::{prequential_run, run_suite, BodlVariant, LearnerSpec, MetricsReport, RunConfig};
pub use hedge_net::{EnsembleWeights, HedgeNet, NetworkConfig, NetworkParams, OptimizerKind};
pub use memory::{EpisodicMemory, StreamInstance};
pub use stream::{gen_drift_stream, GeneratorSpec, StreamSource, StreamSpec};
