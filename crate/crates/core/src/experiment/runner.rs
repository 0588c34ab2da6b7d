//! Runs repetitions of a configured experiment and writes metrics CSV.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::config::{DataSource, RunConfig};
use crate::data::{load_idx, synth_train_test, RawDataset};
use crate::error::{Error, Result};
use crate::model::{loss, predict};
use crate::numerics::norm_sq;
use crate::protocol::server::ServerSnapshot;
use crate::protocol::{Federation, PartitionedDataset};

#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: Arc<RawDataset>,
    pub test: Arc<RawDataset>,
}

pub fn load_datasets(source: &DataSource) -> Result<Datasets> {
    let (train, test) = match source {
        DataSource::Synthetic {
            samples,
            inputs,
            classes,
            separation,
            seed,
        } => synth_train_test(*seed, *samples, *inputs, *classes, *separation)?,
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => load_idx(i, l)?,
                _ => train.clone(),
            };
            if test.inputs != train.inputs {
                return Err(Error::config(format!(
                    "test images have {} pixels, training images {}",
                    test.inputs, train.inputs
                )));
            }
            let classes = train.classes.max(test.classes);
            (train.with_classes(classes)?, test.with_classes(classes)?)
        }
    };
    Ok(Datasets {
        train: Arc::new(train),
        test: Arc::new(test),
    })
}

/// Metrics of the model after round `round`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: u32,
    /// Mean training cross-entropy.
    pub training_cost: f64,
    pub test_accuracy: f64,
    pub l2_norm: f64,
    /// `cost - U`, constrained runs only.
    pub constraint_value: Option<f64>,
    pub slack: Option<f64>,
    pub samples: usize,
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug)]
pub struct RepetitionResult {
    pub seed: u64,
    pub rows: Vec<RoundMetrics>,
    pub snapshot: ServerSnapshot,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub repetitions: Vec<RepetitionResult>,
}

impl ExperimentResult {
    /// Mean over repetitions, per round.
    pub fn mean_rows(&self) -> Vec<RoundMetrics> {
        let r = self.repetitions.len() as f64;
        let mean = |f: &dyn Fn(&RoundMetrics) -> f64, t: usize| {
            self.repetitions.iter().map(|x| f(&x.rows[t])).sum::<f64>() / r
        };
        let mean_opt = |f: &dyn Fn(&RoundMetrics) -> Option<f64>, t: usize| -> Option<f64> {
            let v: Option<Vec<f64>> = self.repetitions.iter().map(|x| f(&x.rows[t])).collect();
            v.map(|v| v.iter().sum::<f64>() / r)
        };
        let first = &self.repetitions[0].rows;
        (0..first.len())
            .map(|t| RoundMetrics {
                round: first[t].round,
                training_cost: mean(&|m| m.training_cost, t),
                test_accuracy: mean(&|m| m.test_accuracy, t),
                l2_norm: mean(&|m| m.l2_norm, t),
                constraint_value: mean_opt(&|m| m.constraint_value, t),
                slack: mean_opt(&|m| m.slack, t),
                samples: first[t].samples,
                elapsed_ms: (mean(&|m| m.elapsed_ms as f64, t)).round() as u64,
            })
            .collect()
    }

    /// Final row of the mean block.
    pub fn final_mean(&self) -> RoundMetrics {
        self.mean_rows().pop().expect("at least one round")
    }
}

fn evaluate(data: &Datasets, fed: &Federation) -> Result<(f64, f64, f64)> {
    let params = fed.server().params();
    let cost = loss(&params, data.train.samples())?;
    let mut hits = 0usize;
    for n in 0..data.test.len() {
        if predict(&params, data.test.z(n))? == data.test.label_index[n] {
            hits += 1;
        }
    }
    Ok((
        cost,
        hits as f64 / data.test.len().max(1) as f64,
        norm_sq(fed.server().omega()),
    ))
}

/// Runs one repetition with master seed `seed`.
pub fn run_repetition(cfg: &RunConfig, data: &Datasets, seed: u64) -> Result<RepetitionResult> {
    let mut round_cfg = cfg.round.clone();
    round_cfg.seed = seed;
    let parted = PartitionedDataset::for_algorithm(
        Arc::clone(&data.train),
        cfg.clients,
        round_cfg.algorithm,
    )?;
    let mut fed = Federation::start(&round_cfg, &parted, cfg.transport)?;
    let constrained = round_cfg.algorithm.is_constrained();
    let mut rows = Vec::with_capacity(round_cfg.rounds as usize);
    for _ in 0..round_cfg.rounds {
        let start = Instant::now();
        let report = fed.step()?;
        let elapsed = if cfg.timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let (cost, acc, l2) = evaluate(data, &fed)?;
        rows.push(RoundMetrics {
            round: report.round,
            training_cost: cost,
            test_accuracy: acc,
            l2_norm: l2,
            constraint_value: constrained.then_some(cost - round_cfg.ubound),
            slack: if constrained { report.slack } else { None },
            samples: report.samples,
            elapsed_ms: elapsed,
        });
    }
    let snapshot = fed.shutdown()?.snapshot();
    Ok(RepetitionResult {
        seed,
        rows,
        snapshot,
    })
}

/// Validates the configuration against the data, then runs every
/// repetition on its own thread (seeds `seed + rep`).
pub fn run_experiment(cfg: &RunConfig, data: &Datasets) -> Result<ExperimentResult> {
    cfg.validate_static()?;
    // A client count the data cannot be split into is a configuration error.
    let probe = PartitionedDataset::for_algorithm(
        Arc::clone(&data.train),
        cfg.clients,
        cfg.round.algorithm,
    )
    .map_err(|e| Error::config(e.to_string()))?;
    cfg.round.validate(&probe)?;
    let results: Vec<Result<RepetitionResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.repetitions as u64)
            .map(|rep| s.spawn(move || run_repetition(cfg, data, cfg.round.seed + rep)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Protocol("repetition thread panicked".into())))
            })
            .collect()
    });
    let repetitions = results.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(path) = &cfg.checkpoint {
        let snaps: Vec<&ServerSnapshot> = repetitions.iter().map(|r| &r.snapshot).collect();
        let json = serde_json::to_string(&snaps)
            .map_err(|e| Error::Protocol(format!("checkpoint encoding: {e}")))?;
        std::fs::write(path, json)?;
    }
    Ok(ExperimentResult { repetitions })
}

fn write_header<W: Write>(cfg: &RunConfig, out: &mut W) -> Result<()> {
    writeln!(out, "# sscafl {}", crate::VERSION)?;
    for (k, v) in cfg.echo() {
        writeln!(out, "# {k} = {v}")?;
    }
    Ok(())
}

fn write_row<W: Write>(out: &mut W, rep: &str, m: &RoundMetrics, constrained: bool) -> Result<()> {
    write!(
        out,
        "{rep},{},{},{},{}",
        m.round, m.training_cost, m.test_accuracy, m.l2_norm
    )?;
    if constrained {
        let cv = m
            .constraint_value
            .map(|v| v.to_string())
            .unwrap_or_default();
        let s = m.slack.map(|v| v.to_string()).unwrap_or_default();
        write!(out, ",{cv},{s}")?;
    }
    writeln!(out, ",{},{}", m.samples, m.elapsed_ms)?;
    Ok(())
}

/// Echoed configuration, then one row per round per repetition, then the
/// mean block with `rep = mean`.
pub fn write_metrics_csv<W: Write>(
    cfg: &RunConfig,
    result: &ExperimentResult,
    out: &mut W,
) -> Result<()> {
    let constrained = cfg.round.algorithm.is_constrained();
    write_header(cfg, out)?;
    let mut cols = vec!["rep", "round", "training_cost", "test_accuracy", "l2_norm"];
    if constrained {
        cols.extend(["constraint_value", "slack"]);
    }
    cols.extend(["samples", "elapsed_ms"]);
    writeln!(out, "{}", cols.join(","))?;
    for (k, rep) in result.repetitions.iter().enumerate() {
        for m in &rep.rows {
            write_row(out, &k.to_string(), m, constrained)?;
        }
    }
    for m in result.mean_rows() {
        write_row(out, "mean", &m, constrained)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Lambda,
    Ubound,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Ubound => "ubound",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub final_cost: f64,
    pub final_l2_norm: f64,
}

/// One experiment per sweep value; reports the repetition-mean finals.
pub fn run_tradeoff_sweep(
    base: &RunConfig,
    data: &Datasets,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match axis {
                SweepAxis::Lambda => cfg.round.lambda = v,
                SweepAxis::Ubound => cfg.round.ubound = v,
            }
            let last = run_experiment(&cfg, data)?.final_mean();
            Ok(SweepPoint {
                value: v,
                final_cost: last.training_cost,
                final_l2_norm: last.l2_norm,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(
    base: &RunConfig,
    axis: SweepAxis,
    points: &[SweepPoint],
    out: &mut W,
) -> Result<()> {
    write_header(base, out)?;
    writeln!(out, "# sweep = {}", axis.name())?;
    writeln!(out, "{},final_training_cost,final_l2_norm", axis.name())?;
    for p in points {
        writeln!(out, "{},{},{}", p.value, p.final_cost, p.final_l2_norm)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Algorithm;

    fn small(algorithm: Algorithm, reps: usize) -> RunConfig {
        let mut cfg = RunConfig::parse(
            "synthetic.n = 120\nsynthetic.inputs = 6\nsynthetic.classes = 3\nhidden = 4\nbatch = 10\nclients = 2\nrounds = 3",
        )
        .unwrap();
        cfg.round.algorithm = algorithm;
        cfg.repetitions = reps;
        cfg
    }

    fn csv(cfg: &RunConfig) -> String {
        let data = load_datasets(&cfg.data).unwrap();
        let res = run_experiment(cfg, &data).unwrap();
        let mut out = Vec::new();
        write_metrics_csv(cfg, &res, &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    fn body(text: &str) -> Vec<&str> {
        text.lines().filter(|l| !l.starts_with('#')).collect()
    }

    #[test]
    fn row_accounting() {
        let cfg = small(Algorithm::SscaSampleUncon, 2);
        let text = csv(&cfg);
        let rows = body(&text);
        assert_eq!(
            rows[0],
            "rep,round,training_cost,test_accuracy,l2_norm,samples,elapsed_ms"
        );
        assert_eq!(rows.len() - 1, 3 * 2 + 3);
        assert!(rows.last().unwrap().starts_with("mean,3,"));
        assert!(text.starts_with(&format!("# sscafl {}\n", crate::VERSION)));
        assert!(text.contains("# algorithm = ssca-sample-uncon\n"));
    }

    #[test]
    fn constrained_schema_has_slack() {
        let text = csv(&small(Algorithm::SscaSampleCon, 1));
        assert_eq!(
            body(&text)[0],
            "rep,round,training_cost,test_accuracy,l2_norm,constraint_value,slack,samples,elapsed_ms"
        );
        for row in &body(&text)[1..] {
            assert_eq!(row.split(',').count(), 9);
        }
    }

    #[test]
    fn rerun_is_byte_identical() {
        for alg in [Algorithm::SscaFeatureCon, Algorithm::SgdmSample] {
            let cfg = small(alg, 2);
            assert_eq!(csv(&cfg), csv(&cfg));
        }
    }

    #[test]
    fn sample_sgd_reports_local_budget() {
        let mut cfg = small(Algorithm::SgdSample, 1);
        cfg.round.sgd.local_steps = 3;
        let text = csv(&cfg);
        assert!(body(&text)[1..].iter().all(|r| r.ends_with(",30,0")));
    }

    #[test]
    fn sweep_matches_single_runs() {
        let cfg = small(Algorithm::SscaSampleUncon, 1);
        let data = load_datasets(&cfg.data).unwrap();
        let pts = run_tradeoff_sweep(&cfg, &data, SweepAxis::Lambda, &[1e-5, 1e-3]).unwrap();
        assert_eq!(pts.len(), 2);
        let mut one = cfg.clone();
        one.round.lambda = 1e-3;
        let fin = run_experiment(&one, &data).unwrap().final_mean();
        assert_eq!(pts[1].final_cost, fin.training_cost);
        assert_eq!(pts[1].final_l2_norm, fin.l2_norm);
        assert!(run_tradeoff_sweep(&cfg, &data, SweepAxis::Ubound, &[])
            .unwrap_err()
            .is_config_error());
    }

    #[test]
    fn validation_happens_before_running() {
        let mut cfg = small(Algorithm::SscaSampleUncon, 1);
        cfg.round.batch = 1000;
        let data = load_datasets(&cfg.data).unwrap();
        assert!(run_experiment(&cfg, &data).unwrap_err().is_config_error());
    }

    #[test]
    fn checkpoint_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(Algorithm::SscaSampleUncon, 2);
        cfg.checkpoint = Some(dir.path().join("ck.json"));
        let data = load_datasets(&cfg.data).unwrap();
        let res = run_experiment(&cfg, &data).unwrap();
        let v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("ck.json")).unwrap()).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);
        assert_eq!(v[0]["round"], 3);
        assert_eq!(res.repetitions[1].seed, cfg.round.seed + 1);
    }
}
