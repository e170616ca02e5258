//! Federated state machines: client local training, server aggregation,
//! the synchronous round protocol, and the semi-asynchronous event loop.
//!
//! The two aggregation strategies are deliberately asymmetric, as defined:
//! gradient aggregation takes the *unweighted* mean of cumulative gradients
//! and applies one server-rate step; weight aggregation takes the
//! *sample-count-weighted* mean of client weights and adopts it outright.
//!
//! Reproducibility: every random choice draws from a sub-stream derived from
//! `(run_seed, purpose, client, round)`, and every reduction runs in a fixed
//! documented order, so a run's `MetricsLog` is bit-identical across repeats,
//! platforms, and worker counts.

mod event;
mod safl;
mod sfl;

pub use event::{Event, EventQueue, QueuedEvent};

use crate::data::{sample_lognormal, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{transmission_bytes, MetricsLog, PayloadKind};
use crate::model::{backward, clip_gradient, Batch, ModelSpec, ParamVector};
use crate::partition::ClientShard;
use crate::rng::SeededRng;

/// Aggregation strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Clients upload cumulative gradients; the server steps on their mean.
    FedSgd,
    /// Clients upload trained weights; the server adopts the weighted mean.
    FedAvg,
}

/// Protocol mode selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    /// Round-synchronous: the server waits for every activated client.
    #[serde(rename = "sfl")]
    Synchronous,
    /// Semi-asynchronous: clients train continuously, the server aggregates
    /// whenever K updates are buffered.
    #[serde(rename = "safl")]
    SemiAsynchronous,
}

/// What a client uploads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Gradient,
    Weights,
}

impl UpdateKind {
    fn payload_kind(self) -> PayloadKind {
        match self {
            UpdateKind::Gradient => PayloadKind::Gradient,
            UpdateKind::Weights => PayloadKind::Weights,
        }
    }
}

/// One client upload sitting in (or consumed from) the server buffer.
#[derive(Debug, Clone)]
pub struct Update {
    pub client_id: usize,
    pub kind: UpdateKind,
    pub payload: ParamVector,
    /// |D_i|: the uploading client's shard size.
    pub sample_count: usize,
    /// Round of the global model the client trained from (t_0).
    pub base_round: usize,
    /// Simulated second at which the upload reaches the server.
    pub arrival_time: f64,
    pub upload_bytes: u64,
}

/// Heterogeneous client timing: positive per-epoch base cost, log-normal
/// jitter, and a one-way network delay.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatencyProfile {
    pub base_seconds_per_epoch: f64,
    pub jitter_sigma: f64,
    pub network_delay_seconds: f64,
}

impl LatencyProfile {
    pub fn validate(&self, field: &str) -> Result<()> {
        if !self.base_seconds_per_epoch.is_finite() || self.base_seconds_per_epoch <= 0.0 {
            return Err(Error::invalid_config(field, "base seconds/epoch must be > 0"));
        }
        if self.jitter_sigma < 0.0 {
            return Err(Error::invalid_config(field, "jitter sigma must be >= 0"));
        }
        if self.network_delay_seconds < 0.0 {
            return Err(Error::invalid_config(field, "network delay must be >= 0"));
        }
        Ok(())
    }
}

/// One simulated local-training duration for one epoch: base x jitter.
///
/// `jitter_sigma = 0` consumes no randomness and returns exactly the base.
pub fn draw_epoch_duration(profile: &LatencyProfile, rng: &mut SeededRng) -> f64 {
    profile.base_seconds_per_epoch * sample_lognormal(profile.jitter_sigma, rng)
}

/// Static per-client training configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClientParams {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub latency: LatencyProfile,
}

/// A client's mutable protocol state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub shard: ClientShard,
    /// Current local weights w_i.
    pub params: ParamVector,
    /// Round of the last adopted global model; monotone non-decreasing.
    pub base_round: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub speed: LatencyProfile,
    /// Freshest broadcast global model not yet adopted, with its round.
    pub pending_model: Option<(ParamVector, usize)>,
    /// 1-based counter of local rounds, used for RNG stream derivation.
    pub local_round: u64,
}

impl ClientState {
    pub fn new(client_id: usize, shard: ClientShard, params: ParamVector, cfg: ClientParams) -> Self {
        ClientState {
            client_id,
            shard,
            params,
            base_round: 0,
            local_epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            eta: cfg.eta,
            speed: cfg.latency,
            pending_model: None,
            local_round: 1,
        }
    }

    /// Adopt the pending global model, if any, at a local-round boundary.
    fn adopt_pending(&mut self) {
        if let Some((params, round)) = self.pending_model.take() {
            debug_assert!(round >= self.base_round);
            self.params = params;
            self.base_round = round;
        }
    }

    /// Record a broadcast; a fresher model replaces a staler pending one.
    fn receive_broadcast(&mut self, params: ParamVector, round: usize) {
        let newer = match &self.pending_model {
            Some((_, pending_round)) => round >= *pending_round,
            None => true,
        };
        if newer {
            self.pending_model = Some((params, round));
        }
    }
}

/// The server's mutable protocol state.
#[derive(Debug, Clone)]
pub struct ServerState {
    /// Global model w_g.
    pub w_g: ParamVector,
    /// Completed aggregations (round counter t).
    pub round: usize,
    /// Pending-update buffer S, in arrival order.
    pub buffer: Vec<Update>,
    /// Aggregation trigger threshold / activation count.
    pub k: usize,
    /// Server learning rate (gradient strategy only).
    pub eta: f64,
    pub strategy: Strategy,
    pub mode: Mode,
}

impl ServerState {
    pub fn new(w_g: ParamVector, k: usize, eta: f64, strategy: Strategy, mode: Mode) -> Self {
        ServerState {
            w_g,
            round: 0,
            buffer: Vec::new(),
            k,
            eta,
            strategy,
            mode,
        }
    }

    /// Buffer an arrived update.
    pub fn push_update(&mut self, update: Update) {
        self.buffer.push(update);
    }

    /// True when the buffer can fuel an aggregation.
    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.k
    }

    /// Remove and return the K earliest-arrived updates (ties by client id),
    /// in consumption order. Later arrivals stay buffered.
    pub fn consume_earliest(&mut self) -> Vec<Update> {
        let k = self.k.min(self.buffer.len());
        let mut order: Vec<usize> = (0..self.buffer.len()).collect();
        order.sort_by(|&a, &b| {
            self.buffer[a]
                .arrival_time
                .total_cmp(&self.buffer[b].arrival_time)
                .then(self.buffer[a].client_id.cmp(&self.buffer[b].client_id))
        });
        order.truncate(k);
        let mut slots: Vec<Option<Update>> = self.buffer.drain(..).map(Some).collect();
        let consumed: Vec<Update> = order
            .iter()
            .map(|&i| slots[i].take().expect("consumption indices are unique"))
            .collect();
        self.buffer = slots.into_iter().flatten().collect();
        consumed
    }

    /// Aggregate the consumed updates into a new global model and advance t.
    pub fn apply(&mut self, consumed: &[Update]) -> Result<()> {
        self.w_g = match self.strategy {
            Strategy::FedSgd => aggregate_fedsgd(consumed, &self.w_g, self.eta)?,
            Strategy::FedAvg => aggregate_fedavg(consumed)?,
        };
        self.round += 1;
        Ok(())
    }
}

/// Immutable context shared by every local-training call of a run.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub data: &'a Dataset,
    pub strategy: Strategy,
    pub clip_norm: Option<f64>,
    /// Accumulate payload gradients at the round's start parameters instead of
    /// along the trajectory (alternative reading; off by default).
    pub fedsgd_at_start: bool,
    /// Extra metadata bytes charged to weights uploads.
    pub weights_overhead: u64,
}

/// Run E local epochs of mini-batch SGD on the client's shard.
///
/// Each batch applies `w -= eta * (|B|/|D_i|) * meanGrad(w, B)`; the gradient
/// strategy accumulates those same scaled gradients into the payload, the
/// weights strategy uploads the final w_{i,E}. The client's `params` advance
/// to w_{i,E} in place; `arrival_time` is left at 0 for the scheduler to fill.
///
/// Non-finite parameters do not abort training; they propagate and are handled
/// by the evaluation layer's loss sentinel.
pub fn local_train(client: &mut ClientState, ctx: &TrainContext, rng: &mut SeededRng) -> Result<Update> {
    if client.shard.is_empty() {
        return Err(Error::Protocol(format!(
            "client {} has an empty shard",
            client.client_id
        )));
    }
    let shard_size = client.shard.len();
    let inv_shard = 1.0 / shard_size as f64;
    let start = if ctx.strategy == Strategy::FedSgd && ctx.fedsgd_at_start {
        Some(client.params.clone())
    } else {
        None
    };
    let mut cumulative = match ctx.strategy {
        Strategy::FedSgd => Some(ParamVector::zeros(client.params.spec)),
        Strategy::FedAvg => None,
    };
    let mut rows = client.shard.indices.clone();
    for _epoch in 0..client.local_epochs {
        rng.shuffle(&mut rows);
        for chunk in rows.chunks(client.batch_size.max(1)) {
            let batch = gather_batch(ctx.data, chunk)?;
            let scale = chunk.len() as f64 * inv_shard;
            let grad = backward(&client.params, &batch)?;
            if let Some(cum) = cumulative.as_mut() {
                match &start {
                    Some(w0) => {
                        let g0 = backward(w0, &batch)?;
                        cum.add_scaled(&g0, scale)?;
                    }
                    None => cum.add_scaled(&grad, scale)?,
                }
            }
            client.params.add_scaled(&grad, -client.eta * scale)?;
        }
    }
    let (kind, payload) = match ctx.strategy {
        Strategy::FedSgd => {
            let mut g = cumulative.expect("gradient strategy accumulates");
            if let Some(max_norm) = ctx.clip_norm {
                g = clip_gradient(&g, max_norm);
            }
            (UpdateKind::Gradient, g)
        }
        Strategy::FedAvg => (UpdateKind::Weights, client.params.clone()),
    };
    let upload_bytes = transmission_bytes(payload.len(), kind.payload_kind(), ctx.weights_overhead);
    Ok(Update {
        client_id: client.client_id,
        kind,
        payload,
        sample_count: shard_size,
        base_round: client.base_round,
        arrival_time: 0.0,
        upload_bytes,
    })
}

fn gather_batch(data: &Dataset, rows: &[usize], ) -> Result<Batch> {
    let mut features = Vec::with_capacity(rows.len() * data.dim);
    let mut labels = Vec::with_capacity(rows.len());
    for &i in rows {
        features.extend_from_slice(data.row(i));
        labels.push(data.labels[i]);
    }
    Batch::new(features, labels, data.dim)
}

/// Gradient aggregation: `w_g - eta * mean(payloads)`, mean unweighted.
///
/// Payloads are summed in list order then scaled, so K gradients summing to
/// the exact zero vector leave the global model bitwise unchanged.
pub fn aggregate_fedsgd(updates: &[Update], w_g: &ParamVector, eta: f64) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::Protocol("gradient aggregation over an empty set".into()));
    }
    let mut sum = ParamVector::zeros(w_g.spec);
    for u in updates {
        if u.kind != UpdateKind::Gradient {
            return Err(Error::Protocol(format!(
                "client {} uploaded weights into a gradient aggregation",
                u.client_id
            )));
        }
        sum.add_assign(&u.payload)?;
    }
    sum.scale(1.0 / updates.len() as f64);
    let mut out = w_g.clone();
    out.add_scaled(&sum, -eta)?;
    Ok(out)
}

/// Weight aggregation: sample-count-weighted mean of the uploaded models.
pub fn aggregate_fedavg(updates: &[Update]) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::Protocol("weight aggregation over an empty set".into()));
    }
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    let mut out = ParamVector::zeros(updates[0].payload.spec);
    for u in updates {
        if u.kind != UpdateKind::Weights {
            return Err(Error::Protocol(format!(
                "client {} uploaded a gradient into a weight aggregation",
                u.client_id
            )));
        }
        out.add_scaled(&u.payload, u.sample_count as f64 / total as f64)?;
    }
    Ok(out)
}

/// Staleness of one update consumed at aggregation `t`: `t - t_0 - 1`.
pub fn staleness(update: &Update, t: usize) -> Result<u64> {
    if t < update.base_round + 1 {
        return Err(Error::Protocol(format!(
            "update from client {} consumed at t={t} before its base round {} completed",
            update.client_id, update.base_round
        )));
    }
    Ok((t - update.base_round - 1) as u64)
}

/// Sum of per-update staleness over a consumed set.
pub fn accumulated_staleness(consumed: &[Update], t: usize) -> Result<u64> {
    let mut total = 0u64;
    for u in consumed {
        total += staleness(u, t)?;
    }
    Ok(total)
}

/// Uniform K-subset of clients, ascending, deterministic in the rng state.
pub fn select_active(num_clients: usize, k: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if k == 0 || k > num_clients {
        return Err(Error::invalid_config(
            "run.active",
            format!("K={k} must satisfy 1 <= K <= {num_clients}"),
        ));
    }
    Ok(rng.choose_subset(num_clients, k))
}

/// Fully resolved simulation inputs; the executable form of a run config.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub model: ModelSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub shards: Vec<ClientShard>,
    pub clients: Vec<ClientParams>,
    pub strategy: Strategy,
    pub mode: Mode,
    /// Server learning rate (gradient strategy only).
    pub server_eta: f64,
    pub k: usize,
    /// Number of aggregations to run (T).
    pub rounds: usize,
    pub run_seed: u64,
    pub clip_norm: Option<f64>,
    pub fedsgd_at_start: bool,
    pub weights_overhead: u64,
    /// Digest echoed into the metrics log.
    pub config_digest: String,
}

impl RunPlan {
    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.shards.len() < 2 {
            return Err(Error::invalid_config("run.clients", "need at least 2 clients"));
        }
        if self.clients.len() != self.shards.len() {
            return Err(Error::invalid_config(
                "client",
                format!(
                    "{} client parameter sets for {} shards",
                    self.clients.len(),
                    self.shards.len()
                ),
            ));
        }
        if self.k == 0 || self.k > self.shards.len() {
            return Err(Error::invalid_config(
                "run.active",
                format!("K={} must satisfy 1 <= K <= {}", self.k, self.shards.len()),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::invalid_config("run.rounds", "must be >= 1"));
        }
        if self.strategy == Strategy::FedSgd
            && (!self.server_eta.is_finite() || self.server_eta <= 0.0)
        {
            return Err(Error::invalid_config(
                "run.eta",
                "gradient aggregation needs a positive server learning rate",
            ));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.local_epochs == 0 {
                return Err(Error::invalid_config("client.epochs", format!("client {i}: must be >= 1")));
            }
            if c.batch_size == 0 {
                return Err(Error::invalid_config("client.batch_size", format!("client {i}: must be >= 1")));
            }
            if !c.eta.is_finite() || c.eta <= 0.0 {
                return Err(Error::invalid_config("client.eta", format!("client {i}: must be > 0")));
            }
            c.latency.validate("latency")?;
        }
        if self.train.dim != self.model.input_dim || self.train.num_classes != self.model.num_classes {
            return Err(Error::DimensionMismatch(format!(
                "training data is {}d/{} classes, model wants {}d/{}",
                self.train.dim, self.train.num_classes, self.model.input_dim, self.model.num_classes
            )));
        }
        Ok(())
    }

    /// Execute the run under the configured protocol mode.
    pub fn run(&self) -> Result<MetricsLog> {
        self.validate()?;
        match self.mode {
            Mode::Synchronous => sfl::run_sfl(self),
            Mode::SemiAsynchronous => safl::run_safl(self),
        }
    }

    pub(crate) fn train_context(&self) -> TrainContext<'_> {
        TrainContext {
            data: &self.train,
            strategy: self.strategy,
            clip_norm: self.clip_norm,
            fedsgd_at_start: self.fedsgd_at_start,
            weights_overhead: self.weights_overhead,
        }
    }
}

pub use safl::run_safl;
pub use sfl::run_sfl;

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::model::{init_model, sgd_step};
    use crate::rng::Stream;

    fn shard_of(ds: &Dataset, indices: Vec<usize>) -> ClientShard {
        let _ = ds;
        ClientShard { client_id: 0, indices }
    }

    fn gradient_update(values: Vec<f64>, spec: ModelSpec) -> Update {
        Update {
            client_id: 0,
            kind: UpdateKind::Gradient,
            payload: ParamVector { spec, values },
            sample_count: 1,
            base_round: 0,
            arrival_time: 0.0,
            upload_bytes: 0,
        }
    }

    #[test]
    fn fedsgd_aggregation_arithmetic() {
        let spec = ModelSpec::softmax_linear(1, 2);
        let w = ParamVector { spec, values: vec![0.0; 4] };
        let a = gradient_update(vec![1.0, 0.0, 0.0, 0.0], spec);
        let b = gradient_update(vec![0.0, 1.0, 0.0, 0.0], spec);
        let out = aggregate_fedsgd(&[a, b], &w, 1.0).unwrap();
        assert_eq!(out.values, vec![-0.5, -0.5, 0.0, 0.0]);
    }

    #[test]
    fn fedsgd_cancellation_is_bitwise() {
        let spec = ModelSpec::mlp(3, 4, 2);
        let w = init_model(spec, 3);
        let g = backward(
            &w,
            &Batch::new(vec![0.1, 0.2, -0.4, 0.9, -0.3, 0.5], vec![0, 1], 3).unwrap(),
        )
        .unwrap();
        let mut neg = g.clone();
        neg.scale(-1.0);
        let mut u1 = gradient_update(g.values, spec);
        let mut u2 = gradient_update(neg.values, spec);
        u1.client_id = 0;
        u2.client_id = 1;
        let out = aggregate_fedsgd(&[u1, u2], &w, 0.7).unwrap();
        let same = out
            .values
            .iter()
            .zip(&w.values)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "zero-sum gradients must leave w_g bitwise unchanged");
    }

    #[test]
    fn fedsgd_single_update_is_plain_step() {
        let spec = ModelSpec::softmax_linear(2, 2);
        let w = init_model(spec, 1);
        let g = ParamVector {
            spec,
            values: vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.5],
        };
        let u = gradient_update(g.values.clone(), spec);
        let out = aggregate_fedsgd(&[u], &w, 0.25).unwrap();
        let direct = sgd_step(&w, &g, 0.25).unwrap();
        assert_eq!(out.values, direct.values);
    }

    #[test]
    fn fedavg_weighted_mean() {
        let spec = ModelSpec::softmax_linear(1, 2);
        let mk = |v: f64, n: usize| Update {
            client_id: 0,
            kind: UpdateKind::Weights,
            payload: ParamVector { spec, values: vec![v; 4] },
            sample_count: n,
            base_round: 0,
            arrival_time: 0.0,
            upload_bytes: 0,
        };
        let out = aggregate_fedavg(&[mk(0.0, 1), mk(2.0, 1)]).unwrap();
        assert_eq!(out.values, vec![1.0; 4]);
        let out = aggregate_fedavg(&[mk(2.0, 3), mk(6.0, 1)]).unwrap();
        assert_eq!(out.values, vec![3.0; 4]);
        let solo = aggregate_fedavg(&[mk(7.5, 4)]).unwrap();
        assert_eq!(solo.values, vec![7.5; 4]);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let spec = ModelSpec::softmax_linear(1, 2);
        let w = ParamVector::zeros(spec);
        let mut u = gradient_update(vec![0.0; 4], spec);
        u.kind = UpdateKind::Weights;
        assert!(aggregate_fedsgd(&[u.clone()], &w, 1.0).is_err());
        u.kind = UpdateKind::Gradient;
        assert!(aggregate_fedavg(&[u]).is_err());
    }

    #[test]
    fn staleness_formula() {
        let spec = ModelSpec::softmax_linear(1, 2);
        let mut u = gradient_update(vec![0.0; 4], spec);
        u.base_round = 3;
        assert_eq!(staleness(&u, 4).unwrap(), 0);
        u.base_round = 2;
        assert_eq!(staleness(&u, 5).unwrap(), 2);
        u.base_round = 9;
        assert_eq!(staleness(&u, 10).unwrap(), 0);
        assert!(staleness(&u, 9).is_err());
        let mut a = gradient_update(vec![0.0; 4], spec);
        let mut b = gradient_update(vec![0.0; 4], spec);
        let mut c = gradient_update(vec![0.0; 4], spec);
        a.base_round = 4; // tau 0
        b.base_round = 2; // tau 2
        c.base_round = 3; // tau 1
        assert_eq!(accumulated_staleness(&[a, b, c], 5).unwrap(), 3);
    }

    #[test]
    fn select_active_bounds_and_monte_carlo() {
        let mut rng = SeededRng::derive(3, Stream::Select, 0, 0);
        assert_eq!(select_active(4, 4, &mut rng).unwrap(), vec![0, 1, 2, 3]);
        assert!(select_active(4, 0, &mut rng).is_err());
        assert!(select_active(4, 5, &mut rng).is_err());
        let mut chosen0 = 0usize;
        let trials = 10_000;
        for _ in 0..trials {
            if select_active(2, 1, &mut rng).unwrap()[0] == 0 {
                chosen0 += 1;
            }
        }
        let frac = chosen0 as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.02, "frac {frac}");
    }

    #[test]
    fn local_train_full_batch_single_epoch_matches_backward() {
        let ds = generate_synthetic(3, 4, 20, 0.3, 5).unwrap();
        let spec = ModelSpec::softmax_linear(4, 3);
        let w0 = init_model(spec, 2);
        let shard = shard_of(&ds, (0..ds.len()).collect());
        let cfg = ClientParams {
            local_epochs: 1,
            batch_size: ds.len(),
            eta: 0.3,
            latency: LatencyProfile {
                base_seconds_per_epoch: 1.0,
                jitter_sigma: 0.0,
                network_delay_seconds: 0.0,
            },
        };
        let full = Batch::new(ds.features.clone(), ds.labels.clone(), ds.dim).unwrap();
        let expected_grad = backward(&w0, &full).unwrap();

        // Gradient payload: exactly backward(start, shard).
        let mut client = ClientState::new(0, shard.clone(), w0.clone(), cfg);
        let ctx = TrainContext {
            data: &ds,
            strategy: Strategy::FedSgd,
            clip_norm: None,
            fedsgd_at_start: false,
            weights_overhead: 0,
        };
        let mut rng = SeededRng::derive(9, Stream::Shuffle, 0, 1);
        let up = local_train(&mut client, &ctx, &mut rng).unwrap();
        assert_eq!(up.kind, UpdateKind::Gradient);
        assert_eq!(up.sample_count, ds.len());
        for (a, b) in up.payload.values.iter().zip(&expected_grad.values) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }

        // Weights payload: exactly one full-batch step from the start.
        let mut client = ClientState::new(0, shard, w0.clone(), cfg);
        let ctx = TrainContext { strategy: Strategy::FedAvg, ..ctx };
        let mut rng = SeededRng::derive(9, Stream::Shuffle, 0, 1);
        let up = local_train(&mut client, &ctx, &mut rng).unwrap();
        assert_eq!(up.kind, UpdateKind::Weights);
        let expected = sgd_step(&w0, &expected_grad, 0.3).unwrap();
        for (a, b) in up.payload.values.iter().zip(&expected.values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(client.params.values, up.payload.values);
    }

    #[test]
    fn two_epoch_gradient_payload_follows_the_trajectory() {
        let ds = generate_synthetic(2, 3, 8, 0.4, 7).unwrap();
        let spec = ModelSpec::softmax_linear(3, 2);
        let w0 = init_model(spec, 4);
        let shard = shard_of(&ds, (0..ds.len()).collect());
        let cfg = ClientParams {
            local_epochs: 2,
            batch_size: ds.len(),
            eta: 0.5,
            latency: LatencyProfile {
                base_seconds_per_epoch: 1.0,
                jitter_sigma: 0.0,
                network_delay_seconds: 0.0,
            },
        };
        let mut client = ClientState::new(0, shard, w0.clone(), cfg);
        let ctx = TrainContext {
            data: &ds,
            strategy: Strategy::FedSgd,
            clip_norm: None,
            fedsgd_at_start: false,
            weights_overhead: 0,
        };
        let mut rng = SeededRng::derive(1, Stream::Shuffle, 0, 1);
        let up = local_train(&mut client, &ctx, &mut rng).unwrap();

        // Replay by hand: g1 at w0, step, g2 at w1; payload = g1 + g2.
        let full = Batch::new(ds.features.clone(), ds.labels.clone(), ds.dim).unwrap();
        let g1 = backward(&w0, &full).unwrap();
        let w1 = sgd_step(&w0, &g1, 0.5).unwrap();
        let g2 = backward(&w1, &full).unwrap();
        for ((p, a), b) in up.payload.values.iter().zip(&g1.values).zip(&g2.values) {
            assert!((p - (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn start_point_accumulation_flag_changes_only_the_payload() {
        let ds = generate_synthetic(2, 3, 8, 0.4, 7).unwrap();
        let spec = ModelSpec::softmax_linear(3, 2);
        let w0 = init_model(spec, 4);
        let shard = shard_of(&ds, (0..ds.len()).collect());
        let cfg = ClientParams {
            local_epochs: 2,
            batch_size: ds.len(),
            eta: 0.5,
            latency: LatencyProfile {
                base_seconds_per_epoch: 1.0,
                jitter_sigma: 0.0,
                network_delay_seconds: 0.0,
            },
        };
        let ctx = TrainContext {
            data: &ds,
            strategy: Strategy::FedSgd,
            clip_norm: None,
            fedsgd_at_start: true,
            weights_overhead: 0,
        };
        let mut client = ClientState::new(0, shard, w0.clone(), cfg);
        let mut rng = SeededRng::derive(1, Stream::Shuffle, 0, 1);
        let up = local_train(&mut client, &ctx, &mut rng).unwrap();
        // Payload: both epochs' gradients evaluated at w0 (full batch => 2 g1).
        let full = Batch::new(ds.features.clone(), ds.labels.clone(), ds.dim).unwrap();
        let g1 = backward(&w0, &full).unwrap();
        for (p, a) in up.payload.values.iter().zip(&g1.values) {
            assert!((p - 2.0 * a).abs() < 1e-12);
        }
        // Local weights still advanced along the trajectory.
        let w1 = sgd_step(&w0, &g1, 0.5).unwrap();
        let g2 = backward(&w1, &full).unwrap();
        let w2 = sgd_step(&w1, &g2, 0.5).unwrap();
        for (a, b) in client.params.values.iter().zip(&w2.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_applies_to_gradient_payloads() {
        let ds = generate_synthetic(2, 3, 10, 0.4, 8).unwrap();
        let spec = ModelSpec::softmax_linear(3, 2);
        let shard = shard_of(&ds, (0..ds.len()).collect());
        let cfg = ClientParams {
            local_epochs: 3,
            batch_size: 4,
            eta: 0.5,
            latency: LatencyProfile {
                base_seconds_per_epoch: 1.0,
                jitter_sigma: 0.0,
                network_delay_seconds: 0.0,
            },
        };
        let mut client = ClientState::new(0, shard, init_model(spec, 5), cfg);
        let ctx = TrainContext {
            data: &ds,
            strategy: Strategy::FedSgd,
            clip_norm: Some(1e-3),
            fedsgd_at_start: false,
            weights_overhead: 0,
        };
        let mut rng = SeededRng::derive(2, Stream::Shuffle, 0, 1);
        let up = local_train(&mut client, &ctx, &mut rng).unwrap();
        assert!(up.payload.l2_norm() <= 1e-3 + 1e-15);
    }

    #[test]
    fn consume_earliest_orders_by_arrival_then_id() {
        let spec = ModelSpec::softmax_linear(1, 2);
        let mut server = ServerState::new(ParamVector::zeros(spec), 2, 1.0, Strategy::FedSgd, Mode::SemiAsynchronous);
        let mut mk = |id: usize, at: f64| {
            let mut u = gradient_update(vec![0.0; 4], spec);
            u.client_id = id;
            u.arrival_time = at;
            server.push_update(u);
        };
        mk(5, 2.0);
        mk(1, 1.0);
        mk(3, 1.0);
        let consumed = server.consume_earliest();
        let ids: Vec<usize> = consumed.iter().map(|u| u.client_id).collect();
        assert_eq!(ids, vec![1, 3]);
        assert_eq!(server.buffer.len(), 1);
        assert_eq!(server.buffer[0].client_id, 5);
    }

    #[test]
    fn epoch_duration_zero_jitter_is_exact() {
        let profile = LatencyProfile {
            base_seconds_per_epoch: 2.5,
            jitter_sigma: 0.0,
            network_delay_seconds: 0.0,
        };
        let mut rng = SeededRng::derive(1, Stream::Jitter, 0, 0);
        assert_eq!(draw_epoch_duration(&profile, &mut rng), 2.5);
    }

    #[test]
    fn epoch_duration_median_is_base() {
        let profile = LatencyProfile {
            base_seconds_per_epoch: 2.0,
            jitter_sigma: 1.0,
            network_delay_seconds: 0.0,
        };
        let mut rng = SeededRng::derive(1, Stream::Jitter, 0, 0);
        let mut draws: Vec<f64> = (0..100_000)
            .map(|_| draw_epoch_duration(&profile, &mut rng))
            .collect();
        assert!(draws.iter().all(|&d| d > 0.0));
        draws.sort_by(f64::total_cmp);
        let median = draws[draws.len() / 2];
        assert!((median - 2.0).abs() < 0.06, "median {median}");
    }
}
