//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors. [`RunConfig::echo`] lists the keys in a fixed order and parses
//! back to the same configuration.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::SgdConfig;
use crate::error::{Error, Result};
use crate::protocol::{Algorithm, RoundConfig, SolverChoice, TransportKind};
use crate::schedules::{validate_pair, ScheduleKind, StepsizeSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    /// `n` training samples plus a held-out `n / 4` test split.
    Synthetic {
        samples: usize,
        inputs: usize,
        classes: usize,
        separation: f64,
        seed: u64,
    },
    /// IDX files. Without test files, accuracy is measured on the training set.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub round: RoundConfig,
    /// I
    pub clients: usize,
    pub data: DataSource,
    /// R, run with seeds `seed, seed + 1, ...`.
    pub repetitions: usize,
    pub transport: TransportKind,
    /// Reject schedules that fail the validity report.
    pub schedule_strict: bool,
    /// Record wall-clock time per round; off keeps output byte-deterministic.
    pub timing: bool,
    /// Final server state of every repetition, as JSON.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            round: RoundConfig {
                algorithm: Algorithm::SscaSampleUncon,
                batch: 100,
                rounds: 300,
                hidden: 16,
                tau: 0.1,
                lambda: 1e-5,
                ubound: 0.13,
                penalty: 1e5,
                penalty_stages: Vec::new(),
                rho: StepsizeSchedule::power(0.9, 0.3),
                gamma: StepsizeSchedule::power(0.3, 0.3),
                solver: SolverChoice::ClosedForm,
                sgd: SgdConfig::sgd(),
                seed: 1,
                init_scale: 0.05,
            },
            clients: 4,
            data: DataSource::Synthetic {
                samples: 2000,
                inputs: 20,
                classes: 4,
                separation: 3.0,
                seed: 7,
            },
            repetitions: 1,
            transport: TransportKind::InProcess,
            schedule_strict: false,
            timing: false,
            checkpoint: None,
        }
    }
}

const KEYS: &[&str] = &[
    "algorithm",
    "clients",
    "batch",
    "rounds",
    "hidden",
    "tau",
    "lambda",
    "ubound",
    "penalty",
    "penalty.schedule",
    "rho.a",
    "rho.alpha",
    "gamma.a",
    "gamma.alpha",
    "schedule.strict",
    "solver",
    "solver.tol",
    "baseline.E",
    "baseline.lr.a",
    "baseline.lr.alpha",
    "baseline.momentum",
    "seed",
    "init.scale",
    "repetitions",
    "transport",
    "data",
    "synthetic.n",
    "synthetic.inputs",
    "synthetic.classes",
    "synthetic.separation",
    "synthetic.seed",
    "data.train_images",
    "data.train_labels",
    "data.test_images",
    "data.test_labels",
    "metrics.timing",
    "checkpoint",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

/// Exponent 0 reads as a constant schedule.
fn schedule(a: f64, alpha: f64) -> StepsizeSchedule {
    if alpha == 0.0 {
        StepsizeSchedule::constant(a)
    } else {
        StepsizeSchedule::power(a, alpha)
    }
}

#[derive(Default)]
struct Pending {
    data_kind: Option<String>,
    synth: [Option<String>; 5],
    idx: [Option<String>; 4],
    solver: Option<String>,
    tol: Option<f64>,
    schedules: [Option<f64>; 6],
}

impl RunConfig {
    /// Parses a configuration file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", k + 1)))?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(pairs)?;
        Ok(cfg)
    }

    /// Applies `key = value` overrides in order.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut seen = HashSet::new();
        let mut p = Pending::default();
        let r = &mut self.round;
        for (key, v) in pairs {
            let key = key.as_str();
            if !KEYS.contains(&key) {
                return Err(Error::config(format!("unknown key {key:?}")));
            }
            if !seen.insert(key) {
                return Err(Error::config(format!("duplicate key {key:?}")));
            }
            match key {
                "algorithm" => r.algorithm = v.parse()?,
                "clients" => self.clients = parse_num(key, v)?,
                "batch" => r.batch = parse_num(key, v)?,
                "rounds" => r.rounds = parse_num(key, v)?,
                "hidden" => r.hidden = parse_num(key, v)?,
                "tau" => r.tau = parse_num(key, v)?,
                "lambda" => r.lambda = parse_num(key, v)?,
                "ubound" => r.ubound = parse_num(key, v)?,
                "penalty" => r.penalty = parse_num(key, v)?,
                "penalty.schedule" => r.penalty_stages = parse_list(key, v)?,
                "rho.a" => p.schedules[0] = Some(parse_num(key, v)?),
                "rho.alpha" => p.schedules[1] = Some(parse_num(key, v)?),
                "gamma.a" => p.schedules[2] = Some(parse_num(key, v)?),
                "gamma.alpha" => p.schedules[3] = Some(parse_num(key, v)?),
                "baseline.lr.a" => p.schedules[4] = Some(parse_num(key, v)?),
                "baseline.lr.alpha" => p.schedules[5] = Some(parse_num(key, v)?),
                "schedule.strict" => self.schedule_strict = parse_bool(key, v)?,
                "solver" => p.solver = Some(v.clone()),
                "solver.tol" => p.tol = Some(parse_num(key, v)?),
                "baseline.E" => r.sgd.local_steps = parse_num(key, v)?,
                "baseline.momentum" => r.sgd.momentum = parse_num(key, v)?,
                "seed" => r.seed = parse_num(key, v)?,
                "init.scale" => r.init_scale = parse_num(key, v)?,
                "repetitions" => self.repetitions = parse_num(key, v)?,
                "transport" => self.transport = v.parse()?,
                "data" => p.data_kind = Some(v.clone()),
                "synthetic.n" => p.synth[0] = Some(v.clone()),
                "synthetic.inputs" => p.synth[1] = Some(v.clone()),
                "synthetic.classes" => p.synth[2] = Some(v.clone()),
                "synthetic.separation" => p.synth[3] = Some(v.clone()),
                "synthetic.seed" => p.synth[4] = Some(v.clone()),
                "data.train_images" => p.idx[0] = Some(v.clone()),
                "data.train_labels" => p.idx[1] = Some(v.clone()),
                "data.test_images" => p.idx[2] = Some(v.clone()),
                "data.test_labels" => p.idx[3] = Some(v.clone()),
                "metrics.timing" => self.timing = parse_bool(key, v)?,
                "checkpoint" => self.checkpoint = opt_path(v),
                _ => unreachable!("key list and match arms agree"),
            }
        }
        self.apply_schedules(&p);
        self.apply_solver(&p)?;
        self.apply_data(&p)
    }

    fn apply_schedules(&mut self, p: &Pending) {
        let r = &mut self.round;
        let merge = |s: &mut StepsizeSchedule, a: Option<f64>, alpha: Option<f64>| {
            if a.is_some() || alpha.is_some() {
                *s = schedule(a.unwrap_or(s.coefficient), alpha.unwrap_or(s.decay()));
            }
        };
        merge(&mut r.rho, p.schedules[0], p.schedules[1]);
        merge(&mut r.gamma, p.schedules[2], p.schedules[3]);
        merge(&mut r.sgd.lr, p.schedules[4], p.schedules[5]);
    }

    fn apply_solver(&mut self, p: &Pending) -> Result<()> {
        let current_tol = match self.round.solver {
            SolverChoice::Barrier { tol } => tol,
            SolverChoice::ClosedForm => 1e-8,
        };
        let tol = p.tol.unwrap_or(current_tol);
        let name = match (&p.solver, self.round.solver) {
            (Some(s), _) => s.as_str(),
            (None, SolverChoice::ClosedForm) => "closed-form",
            (None, SolverChoice::Barrier { .. }) => "barrier",
        };
        self.round.solver = match name {
            "closed-form" => SolverChoice::ClosedForm,
            "barrier" => SolverChoice::Barrier { tol },
            other => {
                return Err(Error::config(format!(
                    "unknown solver {other:?} (closed-form | barrier)"
                )))
            }
        };
        Ok(())
    }

    fn apply_data(&mut self, p: &Pending) -> Result<()> {
        let kind = match (&p.data_kind, &self.data) {
            (Some(k), _) => k.as_str(),
            (None, DataSource::Synthetic { .. }) => "synthetic",
            (None, DataSource::Idx { .. }) => "idx",
        };
        match kind {
            "synthetic" => {
                let (mut samples, mut inputs, mut classes, mut separation, mut seed) =
                    match &self.data {
                        DataSource::Synthetic {
                            samples,
                            inputs,
                            classes,
                            separation,
                            seed,
                        } => (*samples, *inputs, *classes, *separation, *seed),
                        DataSource::Idx { .. } => (2000, 20, 4, 3.0, 7),
                    };
                let s = &p.synth;
                if let Some(v) = &s[0] {
                    samples = parse_num("synthetic.n", v)?;
                }
                if let Some(v) = &s[1] {
                    inputs = parse_num("synthetic.inputs", v)?;
                }
                if let Some(v) = &s[2] {
                    classes = parse_num("synthetic.classes", v)?;
                }
                if let Some(v) = &s[3] {
                    separation = parse_num("synthetic.separation", v)?;
                }
                if let Some(v) = &s[4] {
                    seed = parse_num("synthetic.seed", v)?;
                }
                if p.idx
                    .iter()
                    .any(|x| x.as_deref().is_some_and(|v| !v.is_empty()))
                {
                    return Err(Error::config("data.* file keys need data = idx"));
                }
                self.data = DataSource::Synthetic {
                    samples,
                    inputs,
                    classes,
                    separation,
                    seed,
                };
            }
            "idx" => {
                let (mut a, mut b, mut c, mut d) = match &self.data {
                    DataSource::Idx {
                        train_images,
                        train_labels,
                        test_images,
                        test_labels,
                    } => (
                        Some(train_images.clone()),
                        Some(train_labels.clone()),
                        test_images.clone(),
                        test_labels.clone(),
                    ),
                    DataSource::Synthetic { .. } => (None, None, None, None),
                };
                if let Some(v) = &p.idx[0] {
                    a = opt_path(v);
                }
                if let Some(v) = &p.idx[1] {
                    b = opt_path(v);
                }
                if let Some(v) = &p.idx[2] {
                    c = opt_path(v);
                }
                if let Some(v) = &p.idx[3] {
                    d = opt_path(v);
                }
                if p.synth.iter().any(Option::is_some) {
                    return Err(Error::config("synthetic.* keys need data = synthetic"));
                }
                let (Some(train_images), Some(train_labels)) = (a, b) else {
                    return Err(Error::config(
                        "data = idx needs data.train_images and data.train_labels",
                    ));
                };
                if c.is_some() != d.is_some() {
                    return Err(Error::config(
                        "data.test_images and data.test_labels go together",
                    ));
                }
                self.data = DataSource::Idx {
                    train_images,
                    train_labels,
                    test_images: c,
                    test_labels: d,
                };
            }
            other => {
                return Err(Error::config(format!(
                    "unknown data source {other:?} (synthetic | idx)"
                )))
            }
        }
        Ok(())
    }

    /// Every key except `transport` with its value, in a fixed order. The
    /// transport cannot change results, so it stays out of the echo.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let r = &self.round;
        let (solver, tol) = match r.solver {
            SolverChoice::ClosedForm => ("closed-form", 1e-8),
            SolverChoice::Barrier { tol } => ("barrier", tol),
        };
        let mut out = vec![
            ("algorithm", r.algorithm.to_string()),
            ("clients", self.clients.to_string()),
            ("batch", r.batch.to_string()),
            ("rounds", r.rounds.to_string()),
            ("hidden", r.hidden.to_string()),
            ("tau", r.tau.to_string()),
            ("lambda", r.lambda.to_string()),
            ("ubound", r.ubound.to_string()),
            ("penalty", r.penalty.to_string()),
            ("penalty.schedule", fmt_list(&r.penalty_stages)),
            ("rho.a", r.rho.coefficient.to_string()),
            ("rho.alpha", r.rho.decay().to_string()),
            ("gamma.a", r.gamma.coefficient.to_string()),
            ("gamma.alpha", r.gamma.decay().to_string()),
            ("schedule.strict", self.schedule_strict.to_string()),
            ("solver", solver.to_string()),
            ("solver.tol", tol.to_string()),
            ("baseline.E", r.sgd.local_steps.to_string()),
            ("baseline.lr.a", r.sgd.lr.coefficient.to_string()),
            ("baseline.lr.alpha", r.sgd.lr.decay().to_string()),
            ("baseline.momentum", r.sgd.momentum.to_string()),
            ("seed", r.seed.to_string()),
            ("init.scale", r.init_scale.to_string()),
            ("repetitions", self.repetitions.to_string()),
        ];
        match &self.data {
            DataSource::Synthetic {
                samples,
                inputs,
                classes,
                separation,
                seed,
            } => out.extend([
                ("data", "synthetic".to_string()),
                ("synthetic.n", samples.to_string()),
                ("synthetic.inputs", inputs.to_string()),
                ("synthetic.classes", classes.to_string()),
                ("synthetic.separation", separation.to_string()),
                ("synthetic.seed", seed.to_string()),
            ]),
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => out.extend([
                ("data", "idx".to_string()),
                ("data.train_images", train_images.display().to_string()),
                ("data.train_labels", train_labels.display().to_string()),
                ("data.test_images", path_str(test_images)),
                ("data.test_labels", path_str(test_labels)),
            ]),
        }
        out.push(("metrics.timing", self.timing.to_string()));
        out.push(("checkpoint", path_str(&self.checkpoint)));
        out
    }

    pub fn to_text(&self) -> String {
        self.echo()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Checks the settings that do not depend on the loaded data.
    pub fn validate_static(&self) -> Result<()> {
        if self.clients == 0 || self.clients > u16::MAX as usize - 1 {
            return Err(Error::config(format!(
                "clients = {} out of range",
                self.clients
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions must be at least 1"));
        }
        if self
            .round
            .seed
            .checked_add(self.repetitions as u64 - 1)
            .is_none()
        {
            return Err(Error::config("seed + repetitions overflows"));
        }
        if let DataSource::Synthetic {
            samples,
            inputs,
            classes,
            separation,
            ..
        } = &self.data
        {
            if *samples == 0 || *inputs == 0 || *classes < 2 || !separation.is_finite() {
                return Err(Error::config(
                    "synthetic data needs n >= 1, inputs >= 1, classes >= 2 and a finite separation",
                ));
            }
        }
        if self.schedule_strict && self.round.algorithm.is_ssca() {
            let report = validate_pair(&self.round.rho, &self.round.gamma);
            if !report.all_ok() {
                return Err(Error::config(format!(
                    "schedule.strict: rho/gamma pair fails the validity check: {report:?}"
                )));
            }
        }
        Ok(())
    }

    /// Schedule of the given kind, for display.
    pub fn describe_schedule(s: &StepsizeSchedule) -> String {
        match s.kind {
            ScheduleKind::Constant => format!("{}", s.coefficient),
            ScheduleKind::PowerDecay => format!("{}/t^{}", s.coefficient, s.exponent),
        }
    }
}
