//! The client role: reacts to server messages with local statistics or a
//! locally trained model.

use std::ops::Range;
use std::sync::Arc;

use super::message::{MessageKind, Payload, RoundMessage, SERVER_ID};
use super::server::expect;
use super::transport::Link;
use super::{Partition, PartitionedDataset, RoundConfig};
use crate::baselines::local_sgd;
use crate::data::RawDataset;
use crate::error::{Error, Result};
use crate::model::{
    add_a_bar, add_b_bar, add_sample_stats, output_residual, partial_pre_activations, NnParams,
    NnShape, SampleStats,
};
use crate::numerics::{sample_minibatch, sample_minibatches, SeededRng};

enum Holding {
    Samples(Range<usize>),
    Features { cols: Range<usize>, clients: usize },
}

pub struct Client {
    id: usize,
    cfg: RoundConfig,
    shape: NnShape,
    data: Arc<RawDataset>,
    holding: Holding,
    rng: SeededRng,
    velocity: Vec<f64>,
}

impl Client {
    pub fn new(id: usize, cfg: RoundConfig, data: &PartitionedDataset) -> Result<Self> {
        let shape = cfg.shape(&data.data)?;
        let holding = match &data.partition {
            Partition::Samples(b) => Holding::Samples(b[id].clone()),
            Partition::Features(b) => Holding::Features {
                cols: b[id].clone(),
                clients: b.len(),
            },
        };
        Ok(Self {
            id,
            rng: SeededRng::new(cfg.seed, id as u64),
            velocity: vec![0.0; shape.dim()],
            cfg,
            shape,
            data: Arc::clone(&data.data),
            holding,
        })
    }

    fn sender(&self) -> u16 {
        self.id as u16
    }

    /// Serves rounds until the server closes the link.
    pub fn serve(mut self, link: &mut dyn Link) -> Result<()> {
        while let Some(msg) = link.recv()? {
            match &self.holding {
                Holding::Samples(_) if self.cfg.algorithm.is_ssca() => {
                    self.sample_stats_round(link, msg)?
                }
                Holding::Samples(_) => self.local_sgd_round(link, msg)?,
                Holding::Features { .. } => self.feature_round(link, msg)?,
            }
        }
        Ok(())
    }

    fn model_from(&self, msg: RoundMessage) -> Result<(u32, Vec<f64>)> {
        if msg.kind != MessageKind::ModelBroadcast || msg.sender != SERVER_ID {
            return Err(Error::Protocol(format!(
                "client {} expected a model broadcast, got {:?} from {}",
                self.id, msg.kind, msg.sender
            )));
        }
        let t = msg.round;
        let omega = msg.into_reals()?;
        if omega.len() != self.shape.dim() {
            return Err(Error::Protocol(format!(
                "model of {} values, expected {}",
                omega.len(),
                self.shape.dim()
            )));
        }
        Ok((t, omega))
    }

    fn local_indices(&mut self, count: usize) -> Result<Vec<Vec<usize>>> {
        let Holding::Samples(block) = &self.holding else {
            unreachable!("sample rounds only run on sample partitions")
        };
        let start = block.start;
        let len = block.len();
        let batches = if count == 1 {
            vec![sample_minibatch(&mut self.rng, len, self.cfg.batch)?]
        } else {
            sample_minibatches(&mut self.rng, len, self.cfg.batch, count)?
        };
        Ok(batches
            .into_iter()
            .map(|b| b.into_iter().map(|k| start + k).collect())
            .collect())
    }

    fn sample_stats_round(&mut self, link: &mut dyn Link, msg: RoundMessage) -> Result<()> {
        let (t, omega) = self.model_from(msg)?;
        let params = NnParams::from_flat(self.shape, &omega)?;
        let batch = self.local_indices(1)?.remove(0);
        let mut sums = SampleStats::zeros(&self.shape);
        for &n in &batch {
            add_sample_stats(&mut sums, &params, self.data.sample(n), 1.0)?;
        }
        let d = self.shape.dim() as u32;
        link.send(&RoundMessage::reals(
            MessageKind::QObjective,
            t,
            self.sender(),
            vec![d],
            sums.stacked(),
        )?)?;
        if self.cfg.algorithm.is_constrained() {
            link.send(&RoundMessage::reals(
                MessageKind::QConstraint,
                t,
                self.sender(),
                vec![1],
                vec![sums.c_bar],
            )?)?;
        }
        Ok(())
    }

    fn local_sgd_round(&mut self, link: &mut dyn Link, msg: RoundMessage) -> Result<()> {
        let (t, mut omega) = self.model_from(msg)?;
        let batches = self.local_indices(self.cfg.sgd.local_steps)?;
        let rate = self.cfg.sgd.lr.raw(t)?;
        local_sgd(
            &self.shape,
            &self.data,
            &mut omega,
            &mut self.velocity,
            &batches,
            self.cfg.lambda,
            rate,
            self.cfg.sgd.momentum,
        )?;
        let d = self.shape.dim() as u32;
        link.send(&RoundMessage::reals(
            MessageKind::ModelBroadcast,
            t,
            self.sender(),
            vec![d],
            omega,
        )?)
    }

    fn feature_round(&mut self, link: &mut dyn Link, announce: RoundMessage) -> Result<()> {
        let Holding::Features { cols, clients } = &self.holding else {
            unreachable!("feature rounds only run on feature partitions")
        };
        let (cols, clients) = (cols.clone(), *clients);
        if announce.kind != MessageKind::BatchAnnounce || announce.sender != SERVER_ID {
            return Err(Error::Protocol(format!(
                "client {} expected a batch announcement, got {:?}",
                self.id, announce.kind
            )));
        }
        let t = announce.round;
        let batch: Vec<usize> = match &announce.payload {
            Payload::Indices(v) => v.iter().map(|&n| n as usize).collect(),
            Payload::Reals(_) => unreachable!("decoded BatchAnnounce always carries indices"),
        };
        if let Some(&bad) = batch.iter().find(|&&n| n >= self.data.len()) {
            return Err(Error::Protocol(format!(
                "batch index {bad} outside the {} samples",
                self.data.len()
            )));
        }
        let shape = self.shape;
        let (hidden, n0, p_i) = (shape.hidden, shape.omega0_len(), cols.len());
        let block = expect(
            link,
            MessageKind::ModelBroadcast,
            t,
            SERVER_ID,
            Some(n0 + hidden * p_i),
        )?
        .into_reals()?;
        let (omega0, omega_i) = block.split_at(n0);

        // Partial pre-activations of every batch sample, B x J.
        let mut own = Vec::with_capacity(batch.len() * hidden);
        for &n in &batch {
            own.extend(partial_pre_activations(
                omega_i,
                hidden,
                &self.data.z(n)[cols.clone()],
            )?);
        }
        let dims = vec![batch.len() as u32, hidden as u32];
        link.send(&RoundMessage::reals(
            MessageKind::HExchange,
            t,
            self.sender(),
            dims,
            own.clone(),
        )?)?;

        let mut parts: Vec<Option<Vec<f64>>> = vec![None; clients];
        parts[self.id] = Some(own);
        for k in (0..clients).filter(|&k| k != self.id) {
            let h = expect(
                link,
                MessageKind::HExchange,
                t,
                k as u16,
                Some(batch.len() * hidden),
            )?;
            parts[k] = Some(h.into_reals()?);
        }
        let mut u = vec![0.0; batch.len() * hidden];
        for part in parts.into_iter().flatten() {
            for (acc, x) in u.iter_mut().zip(part) {
                *acc += x;
            }
        }

        let aggregator = self.id == 0;
        let mut a_sum = vec![0.0; if aggregator { n0 } else { 0 }];
        let mut c_sum = 0.0;
        let mut b_sum = vec![0.0; hidden * p_i];
        for (k, &n) in batch.iter().enumerate() {
            let u_n = &u[k * hidden..(k + 1) * hidden];
            let (resid, c) = output_residual(omega0, &shape, u_n, self.data.y(n))?;
            if aggregator {
                add_a_bar(&mut a_sum, &resid, u_n, 1.0);
                c_sum += c;
            }
            add_b_bar(
                &mut b_sum,
                omega0,
                &resid,
                u_n,
                &self.data.z(n)[cols.clone()],
                1.0,
            );
        }
        if aggregator {
            let dims = vec![shape.classes as u32, hidden as u32];
            link.send(&RoundMessage::reals(
                MessageKind::QAggregate,
                t,
                0,
                dims,
                a_sum,
            )?)?;
            if self.cfg.algorithm.is_constrained() {
                link.send(&RoundMessage::reals(
                    MessageKind::QConstraint,
                    t,
                    0,
                    vec![1],
                    vec![c_sum],
                )?)?;
            }
        }
        let dims = vec![hidden as u32, p_i as u32];
        link.send(&RoundMessage::reals(
            MessageKind::QObjective,
            t,
            self.sender(),
            dims,
            b_sum,
        )?)
    }
}
