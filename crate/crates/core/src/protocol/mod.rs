//! Round orchestration between one server and `I` clients.
//!
//! Every client runs on its own thread and talks to the server through a
//! [`transport::Link`]. In feature-partitioned rounds clients exchange their
//! partial hidden pre-activations through the server, which relays them in
//! client-id order. All reductions happen in client-id order, so results do
//! not depend on thread scheduling or on the transport.

pub mod client;
pub mod message;
pub mod server;
pub mod transport;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::baselines::SgdConfig;
use crate::data::{partition_features, partition_samples, RawDataset};
use crate::error::{Error, Result};
use crate::model::NnShape;
use crate::schedules::StepsizeSchedule;

pub use client::Client;
pub use server::{RoundReport, Server};
pub use transport::{Link, TransportKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    SscaSampleUncon,
    SscaSampleCon,
    SscaFeatureUncon,
    SscaFeatureCon,
    SgdSample,
    SgdmSample,
    SgdFeature,
    SgdmFeature,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::SscaSampleUncon,
        Algorithm::SscaSampleCon,
        Algorithm::SscaFeatureUncon,
        Algorithm::SscaFeatureCon,
        Algorithm::SgdSample,
        Algorithm::SgdmSample,
        Algorithm::SgdFeature,
        Algorithm::SgdmFeature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SscaSampleUncon => "ssca-sample-uncon",
            Algorithm::SscaSampleCon => "ssca-sample-con",
            Algorithm::SscaFeatureUncon => "ssca-feature-uncon",
            Algorithm::SscaFeatureCon => "ssca-feature-con",
            Algorithm::SgdSample => "sgd-sample",
            Algorithm::SgdmSample => "sgdm-sample",
            Algorithm::SgdFeature => "sgd-feature",
            Algorithm::SgdmFeature => "sgdm-feature",
        }
    }

    pub fn is_feature(self) -> bool {
        matches!(
            self,
            Algorithm::SscaFeatureUncon
                | Algorithm::SscaFeatureCon
                | Algorithm::SgdFeature
                | Algorithm::SgdmFeature
        )
    }

    pub fn is_constrained(self) -> bool {
        matches!(self, Algorithm::SscaSampleCon | Algorithm::SscaFeatureCon)
    }

    pub fn is_ssca(self) -> bool {
        matches!(
            self,
            Algorithm::SscaSampleUncon
                | Algorithm::SscaSampleCon
                | Algorithm::SscaFeatureUncon
                | Algorithm::SscaFeatureCon
        )
    }

    pub fn uses_momentum(self) -> bool {
        matches!(self, Algorithm::SgdmSample | Algorithm::SgdmFeature)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown algorithm {s:?}")))
    }
}

/// Subproblem solver for the constrained algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SolverChoice {
    ClosedForm,
    Barrier { tol: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub algorithm: Algorithm,
    /// B
    pub batch: usize,
    /// T
    pub rounds: u32,
    /// J
    pub hidden: usize,
    pub tau: f64,
    pub lambda: f64,
    pub ubound: f64,
    /// c
    pub penalty: f64,
    /// Increasing penalties applied in equal-length stages over the run;
    /// empty means the fixed `penalty`.
    pub penalty_stages: Vec<f64>,
    pub rho: StepsizeSchedule,
    pub gamma: StepsizeSchedule,
    pub solver: SolverChoice,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub init_scale: f64,
}

impl RoundConfig {
    pub fn penalty_at(&self, t: u32) -> f64 {
        if self.penalty_stages.is_empty() {
            return self.penalty;
        }
        let k = self.penalty_stages.len();
        let stage = ((t.saturating_sub(1)) as usize * k / self.rounds.max(1) as usize).min(k - 1);
        self.penalty_stages[stage]
    }

    /// Checks everything that can be checked before any computation.
    pub fn validate(&self, data: &PartitionedDataset) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.batch == 0 {
            return fail("batch must be at least 1".into());
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if self.hidden == 0 {
            return fail("hidden must be at least 1".into());
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return fail(format!("tau = {} must be positive", self.tau));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return fail(format!("lambda = {} must be nonnegative", self.lambda));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return fail(format!(
                "init.scale = {} must be nonnegative",
                self.init_scale
            ));
        }
        if self.algorithm.is_constrained() {
            if !self.ubound.is_finite() {
                return fail(format!("ubound = {} must be finite", self.ubound));
            }
            if !(self.penalty > 0.0) || !self.penalty.is_finite() {
                return fail(format!("penalty = {} must be positive", self.penalty));
            }
            if self
                .penalty_stages
                .iter()
                .any(|c| !(*c > 0.0) || !c.is_finite())
                || self.penalty_stages.windows(2).any(|w| w[1] <= w[0])
            {
                return fail(format!(
                    "penalty.schedule {:?} must be positive and increasing",
                    self.penalty_stages
                ));
            }
            if let SolverChoice::Barrier { tol } = self.solver {
                if !(tol > 0.0) {
                    return fail(format!("solver.tol = {tol} must be positive"));
                }
            }
        }
        if self.algorithm.is_ssca() {
            for (name, s) in [("rho", &self.rho), ("gamma", &self.gamma)] {
                if !(s.coefficient > 0.0 && s.coefficient <= 1.0) || !(s.exponent >= 0.0) {
                    return fail(format!(
                        "{name} schedule {}/t^{} must have coefficient in (0, 1] and a nonnegative exponent",
                        s.coefficient, s.exponent
                    ));
                }
            }
        } else {
            self.sgd.validate()?;
        }

        let n = data.data.len();
        match &data.partition {
            Partition::Samples(blocks) => {
                if self.algorithm.is_feature() {
                    return fail(format!("{} needs a feature partition", self.algorithm));
                }
                let min = blocks.iter().map(|r| r.len()).min().unwrap_or(0);
                let need = if self.algorithm.is_ssca() {
                    self.batch
                } else {
                    self.batch * self.sgd.local_steps
                };
                if need > min {
                    return fail(format!(
                        "per-round local sample budget {need} exceeds the smallest client block ({min})"
                    ));
                }
            }
            Partition::Features(_) => {
                if !self.algorithm.is_feature() {
                    return fail(format!("{} needs a sample partition", self.algorithm));
                }
                if self.batch > n {
                    return fail(format!("batch {} exceeds the {n} samples", self.batch));
                }
            }
        }
        if n > u32::MAX as usize {
            return fail(format!("{n} samples exceed the u32 index range"));
        }
        Ok(())
    }

    pub fn shape(&self, data: &RawDataset) -> Result<NnShape> {
        NnShape::new(data.inputs, self.hidden, data.classes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Partition {
    /// Sample index blocks `N_i`.
    Samples(Vec<Range<usize>>),
    /// Feature index blocks `P_i`; every client also holds all labels.
    Features(Vec<Range<usize>>),
}

#[derive(Clone, Debug)]
pub struct PartitionedDataset {
    pub data: Arc<RawDataset>,
    pub partition: Partition,
}

impl PartitionedDataset {
    pub fn sample_based(data: Arc<RawDataset>, clients: usize) -> Result<Self> {
        let blocks = partition_samples(data.len(), clients, None)?;
        Ok(Self {
            data,
            partition: Partition::Samples(blocks),
        })
    }

    pub fn feature_based(data: Arc<RawDataset>, clients: usize) -> Result<Self> {
        let blocks = partition_features(data.inputs, clients)?;
        Ok(Self {
            data,
            partition: Partition::Features(blocks),
        })
    }

    /// Partition matching the algorithm's mode.
    pub fn for_algorithm(
        data: Arc<RawDataset>,
        clients: usize,
        algorithm: Algorithm,
    ) -> Result<Self> {
        if algorithm.is_feature() {
            Self::feature_based(data, clients)
        } else {
            Self::sample_based(data, clients)
        }
    }

    pub fn clients(&self) -> usize {
        match &self.partition {
            Partition::Samples(b) | Partition::Features(b) => b.len(),
        }
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        match &self.partition {
            Partition::Samples(b) | Partition::Features(b) => b,
        }
    }
}

/// A running federation: the server plus one worker thread per client.
pub struct Federation {
    server: Server,
    links: Vec<Box<dyn Link>>,
    workers: Vec<JoinHandle<Result<()>>>,
    failed: bool,
}

impl Federation {
    pub fn start(
        cfg: &RoundConfig,
        data: &PartitionedDataset,
        transport: TransportKind,
    ) -> Result<Self> {
        cfg.validate(data)?;
        let server = Server::new(cfg.clone(), data)?;
        let (links, client_links) = transport::connect(transport, data.clients())?;
        let mut workers = Vec::with_capacity(client_links.len());
        for (id, mut link) in client_links.into_iter().enumerate() {
            let client = Client::new(id, cfg.clone(), data)?;
            let handle = std::thread::Builder::new()
                .name(format!("client-{id}"))
                .spawn(move || client.serve(link.as_mut()))?;
            workers.push(handle);
        }
        Ok(Self {
            server,
            links,
            workers,
            failed: false,
        })
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    /// Runs the next round. A failed round stops every client; the error
    /// names the round and, when known, the failing client's error.
    pub fn step(&mut self) -> Result<RoundReport> {
        if self.failed {
            return Err(Error::Protocol("federation already aborted".into()));
        }
        match self.server.run_round(&mut self.links) {
            Ok(r) => Ok(r),
            Err(e) => {
                self.failed = true;
                let round = self.server.round() + 1;
                self.links.clear();
                let mut detail = e.to_string();
                for (id, h) in self.workers.drain(..).enumerate() {
                    match h.join() {
                        Ok(Err(ce)) => detail.push_str(&format!("; client {id}: {ce}")),
                        Err(_) => detail.push_str(&format!("; client {id} panicked")),
                        Ok(Ok(())) => {}
                    }
                }
                Err(Error::RoundAbort {
                    round,
                    reason: detail,
                })
            }
        }
    }

    /// Closes every link and waits for the clients to exit.
    pub fn shutdown(mut self) -> Result<Server> {
        self.links.clear();
        for (id, h) in self.workers.drain(..).enumerate() {
            h.join()
                .map_err(|_| Error::Protocol(format!("client {id} panicked")))??;
        }
        Ok(self.server)
    }
}
