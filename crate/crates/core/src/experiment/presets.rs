//! Bundled configurations.
//!
//! The `sample-*` and `feature-*` presets hold the published MNIST settings
//! per batch size; `fixture` is the small synthetic setup used by the
//! acceptance suite.

use super::config::{DataSource, RunConfig};
use crate::baselines::SgdConfig;
use crate::error::{Error, Result};
use crate::protocol::Algorithm;
use crate::schedules::StepsizeSchedule;

pub const NAMES: &[&str] = &[
    "sample-b10",
    "sample-b100",
    "sample-b6000",
    "feature-b10",
    "feature-b100",
    "feature-b1000",
    "fixture",
];

/// `(B, a1, a2, alpha, tau)`
const SAMPLE_GRID: [(usize, f64, f64, f64, f64); 3] = [
    (10, 0.9, 0.5, 0.1, 0.2),
    (100, 0.3, 0.3, 0.1, 0.05),
    (6000, 0.2, 0.3, 0.1, 0.03),
];
const FEATURE_GRID: [(usize, f64, f64, f64, f64); 3] = [
    (10, 0.9, 0.3, 0.3, 0.1),
    (100, 0.9, 0.5, 0.1, 0.2),
    (1000, 0.3, 0.3, 0.1, 0.05),
];

fn mnist(
    algorithm: Algorithm,
    (batch, a1, a2, alpha, tau): (usize, f64, f64, f64, f64),
) -> RunConfig {
    let mut cfg = RunConfig::default();
    let r = &mut cfg.round;
    r.algorithm = algorithm;
    r.batch = batch;
    r.rounds = 1000;
    r.hidden = 128;
    r.tau = tau;
    r.lambda = 1e-5;
    r.ubound = 0.13;
    r.penalty = 1e5;
    r.rho = StepsizeSchedule::power(a1, alpha);
    r.gamma = StepsizeSchedule::power(a2, alpha);
    r.sgd = SgdConfig::sgd();
    cfg.clients = 10;
    cfg.repetitions = 10;
    cfg.data = DataSource::Idx {
        train_images: "train-images-idx3-ubyte".into(),
        train_labels: "train-labels-idx1-ubyte".into(),
        test_images: Some("t10k-images-idx3-ubyte".into()),
        test_labels: Some("t10k-labels-idx1-ubyte".into()),
    };
    cfg
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let grid = |g: &[(usize, f64, f64, f64, f64)], b: usize| {
        *g.iter().find(|x| x.0 == b).expect("batch in grid")
    };
    Ok(match name {
        "sample-b10" => mnist(Algorithm::SscaSampleUncon, grid(&SAMPLE_GRID, 10)),
        "sample-b100" => mnist(Algorithm::SscaSampleUncon, grid(&SAMPLE_GRID, 100)),
        "sample-b6000" => mnist(Algorithm::SscaSampleUncon, grid(&SAMPLE_GRID, 6000)),
        "feature-b10" => mnist(Algorithm::SscaFeatureUncon, grid(&FEATURE_GRID, 10)),
        "feature-b100" => mnist(Algorithm::SscaFeatureUncon, grid(&FEATURE_GRID, 100)),
        "feature-b1000" => mnist(Algorithm::SscaFeatureUncon, grid(&FEATURE_GRID, 1000)),
        "fixture" => RunConfig::default(),
        other => {
            return Err(Error::config(format!(
                "unknown preset {other:?}; available: {}",
                NAMES.join(", ")
            )))
        }
    })
}
