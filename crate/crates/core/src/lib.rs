//! High-dimensional canonical correlation analysis in the finite-rank
//! (spiked) regime.
//!
//! * [`rmt`]: limiting spectrum, outlier map and fluctuation scales.
//! * [`sampling`]: seeded spiked Gaussian CCA data and GOE-type matrices.
//! * [`engine`]: sample canonical correlations via principal angles.
//! * [`refdist`]: Tracy-Widom F1 and GOE gap reference distributions.
//! * [`inference`]: spike counting, spike estimation and tests.
//! * [`montecarlo`]: seeded replication studies.

pub mod engine;
pub mod error;
pub mod inference;
pub mod montecarlo;
pub mod quad;
pub mod refdist;
pub mod rmt;
pub mod sampling;

pub use engine::{cca_eigenvalues, center_observations, EmpiricalSpectralDistribution, SampleSpectrum};
pub use error::{Error, Result};
pub use montecarlo::{run_study, StudyConfig, StudyResult};
pub use rmt::{ModelConfig, PhiInverse, Ratios, SpectralConstants, SpikeSpec};
pub use sampling::{DataMatrixPair, SampleSeed};
