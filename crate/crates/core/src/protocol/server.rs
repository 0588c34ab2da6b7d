//! The server role: broadcasts the model, gathers client statistics,
//! updates the surrogate state and moves the global model.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::message::{MessageKind, RoundMessage, SERVER_ID};
use super::transport::Link;
use super::{Partition, PartitionedDataset, RoundConfig, SolverChoice};
use crate::baselines::heavy_ball_step;
use crate::error::{Error, Result};
use crate::model::{
    solve_constrained_app, solve_unconstrained_app, update_app_surrogate, AppSurrogateState,
    NnParams, NnShape, SampleStats,
};
use crate::numerics::{sample_minibatch, streams, SeededRng};
use crate::solvers::solve_qcqp_barrier;

/// Per-round bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    /// Samples each client evaluates this round.
    pub samples: usize,
    /// Scalars sent by the server to each client.
    pub downlink: Vec<usize>,
    /// Scalars each client sent to the server (statistics or local models).
    pub uplink: Vec<usize>,
    /// Scalars each client sent towards the other clients.
    pub exchange: Vec<usize>,
    /// Slack of the constrained subproblem, when one was solved.
    pub slack: Option<f64>,
    pub dual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerSnapshot {
    pub round: u32,
    pub omega: Vec<f64>,
    pub surrogate: AppSurrogateState,
    pub velocity: Vec<f64>,
}

pub struct Server {
    cfg: RoundConfig,
    shape: NnShape,
    partition: Partition,
    total: usize,
    omega: Vec<f64>,
    surrogate: AppSurrogateState,
    velocity: Vec<f64>,
    batch_rng: SeededRng,
    round: u32,
}

/// Receives the next message from client `id`, checking kind, round, sender
/// and element count.
pub(crate) fn expect(
    link: &mut dyn Link,
    kind: MessageKind,
    round: u32,
    sender: u16,
    elements: Option<usize>,
) -> Result<RoundMessage> {
    let msg = link.recv()?.ok_or_else(|| Error::RoundAbort {
        round,
        reason: format!("peer {sender} closed the link while {kind:?} was expected"),
    })?;
    if msg.kind != kind || msg.round != round || msg.sender != sender {
        return Err(Error::Protocol(format!(
            "expected {kind:?} for round {round} from {sender}, got {:?} for round {} from {}",
            msg.kind, msg.round, msg.sender
        )));
    }
    if let Some(n) = elements {
        if msg.payload.len() != n {
            return Err(Error::Protocol(format!(
                "{kind:?} from {sender} carries {} values, expected {n}",
                msg.payload.len()
            )));
        }
    }
    Ok(msg)
}

fn send(link: &mut dyn Link, msg: &RoundMessage, round: u32) -> Result<()> {
    link.send(msg).map_err(|e| Error::RoundAbort {
        round,
        reason: format!("send failed: {e}"),
    })
}

/// `[omega0 | omega1 restricted to columns `cols`]`, the model slice client
/// `i` needs in feature-partitioned rounds.
pub fn feature_block_model(shape: &NnShape, omega: &[f64], cols: &Range<usize>) -> Vec<f64> {
    let n0 = shape.omega0_len();
    let mut v = omega[..n0].to_vec();
    for j in 0..shape.hidden {
        let row = n0 + j * shape.inputs;
        v.extend_from_slice(&omega[row + cols.start..row + cols.end]);
    }
    v
}

impl Server {
    pub fn new(cfg: RoundConfig, data: &PartitionedDataset) -> Result<Self> {
        let shape = cfg.shape(&data.data)?;
        let omega = NnParams::random(
            shape,
            &mut SeededRng::new(cfg.seed, streams::INIT),
            cfg.init_scale,
        )
        .to_flat();
        Ok(Self {
            shape,
            partition: data.partition.clone(),
            total: data.data.len(),
            omega,
            surrogate: AppSurrogateState::new(shape),
            velocity: vec![0.0; shape.dim()],
            batch_rng: SeededRng::new(cfg.seed, 0),
            round: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &RoundConfig {
        &self.cfg
    }

    pub fn shape(&self) -> NnShape {
        self.shape
    }

    /// Current global model (after the last completed round).
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn params(&self) -> NnParams {
        NnParams::from_flat(self.shape, &self.omega).expect("server model matches its shape")
    }

    pub fn surrogate(&self) -> &AppSurrogateState {
        &self.surrogate
    }

    /// Number of completed rounds.
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn snapshot(&self) -> ServerSnapshot {
        ServerSnapshot {
            round: self.round,
            omega: self.omega.clone(),
            surrogate: self.surrogate.clone(),
            velocity: self.velocity.clone(),
        }
    }

    /// Runs round `t = round() + 1` over `links` (one per client, id order).
    pub fn run_round(&mut self, links: &mut [Box<dyn Link>]) -> Result<RoundReport> {
        let t = self.round + 1;
        let mut report = RoundReport {
            round: t,
            samples: self.cfg.batch,
            downlink: vec![0; links.len()],
            uplink: vec![0; links.len()],
            exchange: vec![0; links.len()],
            slack: None,
            dual: None,
        };
        match self.partition.clone() {
            Partition::Samples(blocks) => {
                if self.cfg.algorithm.is_ssca() {
                    let avg = self.gather_sample_stats(links, t, &blocks, &mut report)?;
                    self.ssca_update(t, &avg, &mut report)?;
                } else {
                    report.samples = self.cfg.batch * self.cfg.sgd.local_steps;
                    self.average_local_models(links, t, &blocks, &mut report)?;
                }
            }
            Partition::Features(blocks) => {
                let avg = self.gather_feature_stats(links, t, &blocks, &mut report)?;
                if self.cfg.algorithm.is_ssca() {
                    self.ssca_update(t, &avg, &mut report)?;
                } else {
                    let mut grad = avg.stacked();
                    for (g, w) in grad.iter_mut().zip(&self.omega) {
                        *g += 2.0 * self.cfg.lambda * w;
                    }
                    let rate = self.cfg.sgd.lr.raw(t)?;
                    heavy_ball_step(
                        &mut self.omega,
                        &mut self.velocity,
                        &grad,
                        rate,
                        self.cfg.sgd.momentum,
                    );
                }
            }
        }
        if let Some(k) = self.omega.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                coordinate: k,
                detail: format!("model diverged in round {t}"),
            });
        }
        self.round = t;
        Ok(report)
    }

    fn broadcast_model(
        &self,
        links: &mut [Box<dyn Link>],
        t: u32,
        report: &mut RoundReport,
    ) -> Result<()> {
        let msg = RoundMessage::reals(
            MessageKind::ModelBroadcast,
            t,
            SERVER_ID,
            vec![self.omega.len() as u32],
            self.omega.clone(),
        )?;
        for (i, link) in links.iter_mut().enumerate() {
            send(link.as_mut(), &msg, t)?;
            report.downlink[i] += msg.scalars();
        }
        Ok(())
    }

    fn gather_sample_stats(
        &mut self,
        links: &mut [Box<dyn Link>],
        t: u32,
        blocks: &[Range<usize>],
        report: &mut RoundReport,
    ) -> Result<SampleStats> {
        self.broadcast_model(links, t, report)?;
        let d = self.shape.dim();
        let n0 = self.shape.omega0_len();
        let denom = self.cfg.batch as f64 * self.total as f64;
        let mut avg = SampleStats::zeros(&self.shape);
        for (i, link) in links.iter_mut().enumerate() {
            let w = blocks[i].len() as f64 / denom;
            let q = expect(link.as_mut(), MessageKind::QObjective, t, i as u16, Some(d))?;
            report.uplink[i] += q.scalars();
            let q = q.into_reals()?;
            for (a, x) in avg.a_bar.iter_mut().zip(&q[..n0]) {
                *a += w * x;
            }
            for (b, x) in avg.b_bar.iter_mut().zip(&q[n0..]) {
                *b += w * x;
            }
            if self.cfg.algorithm.is_constrained() {
                let c = expect(
                    link.as_mut(),
                    MessageKind::QConstraint,
                    t,
                    i as u16,
                    Some(1),
                )?;
                report.uplink[i] += c.scalars();
                avg.c_bar += w * c.as_reals()?[0];
            }
        }
        Ok(avg)
    }

    fn average_local_models(
        &mut self,
        links: &mut [Box<dyn Link>],
        t: u32,
        blocks: &[Range<usize>],
        report: &mut RoundReport,
    ) -> Result<()> {
        self.broadcast_model(links, t, report)?;
        let d = self.shape.dim();
        let mut next = vec![0.0; d];
        for (i, link) in links.iter_mut().enumerate() {
            let w = blocks[i].len() as f64 / self.total as f64;
            let m = expect(
                link.as_mut(),
                MessageKind::ModelBroadcast,
                t,
                i as u16,
                Some(d),
            )?;
            report.uplink[i] += m.scalars();
            for (acc, x) in next.iter_mut().zip(m.as_reals()?) {
                *acc += w * x;
            }
        }
        self.omega = next;
        Ok(())
    }

    fn gather_feature_stats(
        &mut self,
        links: &mut [Box<dyn Link>],
        t: u32,
        blocks: &[Range<usize>],
        report: &mut RoundReport,
    ) -> Result<SampleStats> {
        let shape = self.shape;
        let (hidden, classes) = (shape.hidden, shape.classes);
        let b = self.cfg.batch;
        let batch: Vec<u32> = sample_minibatch(&mut self.batch_rng, self.total, b)?
            .into_iter()
            .map(|n| n as u32)
            .collect();
        let announce = RoundMessage::batch(t, SERVER_ID, batch)?;
        for (i, link) in links.iter_mut().enumerate() {
            send(link.as_mut(), &announce, t)?;
            report.downlink[i] += announce.scalars();
            let block = feature_block_model(&shape, &self.omega, &blocks[i]);
            let msg = RoundMessage::reals(
                MessageKind::ModelBroadcast,
                t,
                SERVER_ID,
                vec![block.len() as u32],
                block,
            )?;
            send(link.as_mut(), &msg, t)?;
            report.downlink[i] += msg.scalars();
        }

        // Relay partial pre-activations: every client receives the others'
        // in id order.
        let mut exchanged = Vec::with_capacity(links.len());
        for (i, link) in links.iter_mut().enumerate() {
            let h = expect(
                link.as_mut(),
                MessageKind::HExchange,
                t,
                i as u16,
                Some(b * hidden),
            )?;
            report.exchange[i] += h.scalars();
            exchanged.push(h);
        }
        for (i, link) in links.iter_mut().enumerate() {
            for (k, h) in exchanged.iter().enumerate() {
                if k != i {
                    send(link.as_mut(), h, t)?;
                }
            }
        }

        let inv_b = 1.0 / b as f64;
        let mut avg = SampleStats::zeros(&shape);
        for (i, link) in links.iter_mut().enumerate() {
            if i == 0 {
                let q0 = expect(
                    link.as_mut(),
                    MessageKind::QAggregate,
                    t,
                    0,
                    Some(classes * hidden),
                )?;
                report.uplink[0] += q0.scalars();
                for (a, x) in avg.a_bar.iter_mut().zip(q0.as_reals()?) {
                    *a = inv_b * x;
                }
                if self.cfg.algorithm.is_constrained() {
                    let c = expect(link.as_mut(), MessageKind::QConstraint, t, 0, Some(1))?;
                    report.uplink[0] += c.scalars();
                    avg.c_bar = inv_b * c.as_reals()?[0];
                }
            }
            let cols = &blocks[i];
            let q = expect(
                link.as_mut(),
                MessageKind::QObjective,
                t,
                i as u16,
                Some(hidden * cols.len()),
            )?;
            report.uplink[i] += q.scalars();
            let q = q.as_reals()?;
            for j in 0..hidden {
                for (k, p) in cols.clone().enumerate() {
                    avg.b_bar[j * shape.inputs + p] = inv_b * q[j * cols.len() + k];
                }
            }
        }
        Ok(avg)
    }

    fn ssca_update(&mut self, t: u32, avg: &SampleStats, report: &mut RoundReport) -> Result<()> {
        let cfg = &self.cfg;
        let rho = cfg.rho.value(t)?;
        let gamma = cfg.gamma.value(t)?;
        update_app_surrogate(&mut self.surrogate, rho, cfg.tau, &self.omega, avg)?;
        let target = if cfg.algorithm.is_constrained() {
            let c = cfg.penalty_at(t);
            let sol = match cfg.solver {
                SolverChoice::ClosedForm => {
                    solve_constrained_app(&self.surrogate, cfg.ubound, cfg.tau, c)?
                }
                SolverChoice::Barrier { tol } => {
                    let (obj, con) = self.surrogate.constrained_qcqp(cfg.ubound, cfg.tau);
                    solve_qcqp_barrier(&obj, &[con], c, tol)?
                }
            };
            report.slack = Some(sol.slack[0]);
            report.dual = Some(sol.dual[0]);
            sol.omega_bar
        } else {
            solve_unconstrained_app(&self.surrogate, cfg.lambda, cfg.tau)
        };
        for (w, bar) in self.omega.iter_mut().zip(&target) {
            *w = (1.0 - gamma) * *w + gamma * bar;
        }
        Ok(())
    }
}
