//! The U-shaped split-learning engine with optional input noise and
//! k-anonymous grouping, plus plain FedAvg for reference.
//!
//! Every round all clients start from the global head, body and tail with
//! fresh Adam state, train in lockstep for `⌊min shard / batch⌋` steps per
//! local epoch, and the round ends with three separate averages: heads and
//! tails weighted by shard size, bodies weighted by shard size when each
//! client owns one and unweighted across groups otherwise.

mod client;
mod round;
mod server;

pub use client::ClientState;
pub use round::{group_gradients, GroupGradients, Segments};
pub use server::{fingerprint, BodyOwner, Crossing, ServerState};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::loss::cross_entropy;
use crate::metrics::{correct_count, MetricsRecord, RecordKind};
use crate::models::{split, SplitModel, SplitSpec};
use crate::network::{sgd_step, Network, ParamSet};
use crate::privacy::{group_clients, GroupAssignment};
use crate::seed;
use crate::tensor::Tensor;

/// Sample-count-weighted average of congruent parameter sets.
pub fn fedavg(sets: &[ParamSet], counts: &[usize]) -> Result<ParamSet> {
    let first = sets.first().ok_or(Error::Empty("weight sets"))?;
    if sets.len() != counts.len() {
        return Err(Error::Aggregation(format!(
            "{} weight sets but {} sample counts",
            sets.len(),
            counts.len()
        )));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Aggregation("total sample count is zero".into()));
    }
    for (i, set) in sets.iter().enumerate() {
        let congruent = set.len() == first.len()
            && set
                .iter()
                .zip(first.iter())
                .all(|((n, t), (m, u))| n == m && t.shape() == u.shape());
        if !congruent {
            return Err(Error::Aggregation(format!("weight set {i} does not match the layout of set 0")));
        }
    }
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let mut out = ParamSet::new();
    for (name, t) in first.iter() {
        let mut acc = vec![0.0f64; t.len()];
        for (set, &w) in sets.iter().zip(&weights) {
            for (a, &v) in acc.iter_mut().zip(set.get(name).expect("checked above").data()) {
                *a += w * v as f64;
            }
        }
        out.insert(name.clone(), Tensor::new(t.shape().to_vec(), acc.into_iter().map(|v| v as f32).collect())?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalUpdate {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
}

/// Mini-batch gradient descent of a whole network on one shard, in shuffled
/// order with a trailing partial batch.
pub fn local_update(init: &Network, shard: &Dataset, opts: &LocalUpdate, rng: &mut impl Rng) -> Result<Network> {
    if shard.is_empty() {
        return Err(Error::Empty("client shard"));
    }
    if opts.epochs == 0 || opts.batch_size == 0 {
        return Err(Error::Data("local update needs at least one epoch and a positive batch size".into()));
    }
    let mut net = init.clone();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _ in 0..opts.epochs {
        order.shuffle(rng);
        for idx in order.chunks(opts.batch_size) {
            let x = shard.images().select_batch(idx);
            let y: Vec<usize> = idx.iter().map(|&i| shard.labels()[i]).collect();
            let (logits, cache) = net.forward(&x, Mode::Train)?;
            let (_, grad) = cross_entropy(&logits, &y)?;
            let (_, grads) = net.backward(&cache, &grad)?;
            sgd_step(&mut net, &grads, opts.learning_rate)?;
        }
    }
    Ok(net)
}

/// One round of classic FedAvg over unsplit networks.
pub fn run_round_fedavg(
    global: &Network,
    shards: &[Dataset],
    opts: &LocalUpdate,
    master_seed: u64,
    round: usize,
) -> Result<Network> {
    let mut sets = Vec::with_capacity(shards.len());
    for (c, shard) in shards.iter().enumerate() {
        let mut rng = seed::stream(master_seed, "local", &[round as u64, c as u64]);
        sets.push(local_update(global, shard, opts, &mut rng)?.params());
    }
    let counts: Vec<usize> = shards.iter().map(Dataset::len).collect();
    let mut out = global.clone();
    out.load_params(&fedavg(&sets, &counts)?)?;
    Ok(out)
}

/// Client shards and the held-out evaluation split.
#[derive(Clone, Debug)]
pub struct FederatedData {
    pub shards: Vec<Dataset>,
    pub test: Dataset,
}

impl FederatedData {
    pub fn classes(&self) -> usize {
        self.shards.iter().map(Dataset::classes).chain([self.test.classes()]).max().unwrap_or(0)
    }

    pub fn image_shape(&self) -> Result<Vec<usize>> {
        self.shards
            .first()
            .map(|s| s.image_shape().to_vec())
            .ok_or(Error::Empty("client shards"))
    }
}

/// Fraction of `data` classified correctly by the merged model.
pub fn evaluate(model: &SplitModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0;
    for start in (0..data.len()).step_by(256) {
        let end = (start + 256).min(data.len());
        let logits = model.infer(&data.images().slice_batch(start, end))?;
        correct += correct_count(&logits, &data.labels()[start..end])?;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Freshly initialized global model for a config.
pub fn initial_model(config: &ExperimentConfig, image_shape: &[usize], classes: usize) -> Result<SplitModel> {
    let mut net = config.model.build(image_shape, classes)?;
    net.init(&mut seed::stream(config.seed, "init", &[]));
    split(&net, SplitSpec::at(&net, &config.model.cut)?)
}

/// The orchestrator: single writer of all client, server and global state.
#[derive(Clone, Debug)]
pub struct Federation {
    config: ExperimentConfig,
    clients: Vec<ClientState>,
    server: ServerState,
    global: SplitModel,
    shard_sizes: Vec<usize>,
    rounds_done: usize,
    last_groups: Option<GroupAssignment>,
}

impl Federation {
    pub fn new(config: &ExperimentConfig, shards: Vec<Dataset>) -> Result<Self> {
        config.validate_ranges()?;
        if shards.len() != config.clients {
            return Err(Error::config(
                "clients",
                format!("{} clients configured but {} shards supplied", config.clients, shards.len()),
            ));
        }
        let first = shards.first().ok_or(Error::Empty("client shards"))?;
        let image_shape = first.image_shape().to_vec();
        let classes = shards.iter().map(Dataset::classes).max().unwrap_or(0);
        let global = initial_model(config, &image_shape, classes)?;
        Self::with_model(config, shards, global)
    }

    /// Starts from a given global model instead of a fresh initialization.
    pub fn with_model(config: &ExperimentConfig, shards: Vec<Dataset>, global: SplitModel) -> Result<Self> {
        config.validate_ranges()?;
        let shard_sizes = shards.iter().map(Dataset::len).collect();
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| ClientState::new(id, shard, &global, config.learning_rate))
            .collect();
        Ok(Federation {
            config: config.clone(),
            clients,
            server: ServerState::new(false),
            global,
            shard_sizes,
            rounds_done: 0,
            last_groups: None,
        })
    }

    /// Records every tensor that enters a body network.
    pub fn enable_audit(&mut self) {
        self.server = ServerState::new(true);
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn global(&self) -> &SplitModel {
        &self.global
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn rounds_done(&self) -> usize {
        self.rounds_done
    }

    /// Grouping used by the most recent round.
    pub fn last_groups(&self) -> Option<&GroupAssignment> {
        self.last_groups.as_ref()
    }

    fn assign_groups(&self, round: usize) -> Result<GroupAssignment> {
        let ids: Vec<usize> = (0..self.clients.len()).collect();
        if self.config.method.uses_ka() {
            let mut rng = seed::stream(self.config.seed, "groups", &[round as u64]);
            group_clients(&ids, self.config.group_k(), round, &mut rng)
        } else {
            Ok(GroupAssignment::singletons(&ids, round))
        }
    }

    fn aggregate(&mut self) -> Result<()> {
        let heads: Vec<ParamSet> = self.clients.iter().map(|c| c.head.params()).collect();
        let tails: Vec<ParamSet> = self.clients.iter().map(|c| c.tail.params()).collect();
        let bodies: Vec<ParamSet> = self.server.bodies().map(Network::params).collect();
        let body_counts: Vec<usize> = self
            .server
            .owners()
            .map(|o| match o {
                BodyOwner::Client(c) => self.shard_sizes[c],
                BodyOwner::Group(_) => 1,
            })
            .collect();
        self.global.head.load_params(&fedavg(&heads, &self.shard_sizes)?)?;
        self.global.tail.load_params(&fedavg(&tails, &self.shard_sizes)?)?;
        self.global.body.load_params(&fedavg(&bodies, &body_counts)?)?;
        Ok(())
    }

    /// Trains one global round; returns the mean training loss.
    pub fn run_round(&mut self) -> Result<f64> {
        let round = self.rounds_done;
        let loss = self.train_round(round).map_err(|e| e.in_round(round))?;
        self.last_groups = Some(self.assign_groups(round)?);
        self.rounds_done += 1;
        Ok(loss)
    }
}

/// Per-round metrics and the final global model.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    pub losses: Vec<f64>,
    pub model: SplitModel,
    pub federation: Federation,
}

/// Runs `config.rounds` rounds, evaluating the global model on `data.test`
/// after each one.
pub fn train(config: &ExperimentConfig, data: &FederatedData) -> Result<TrainOutcome> {
    let mut fed = Federation::new(config, data.shards.clone())?;
    let config_hash = config.hash();
    let mut records = Vec::with_capacity(config.rounds);
    let mut losses = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let start = Instant::now();
        losses.push(fed.run_round()?);
        let accuracy = evaluate(fed.global(), &data.test).map_err(|e| e.in_round(round))?;
        records.push(MetricsRecord {
            kind: RecordKind::Round(round + 1),
            method: config.method.tag().into(),
            accuracy,
            attack_mse: None,
            attack_ssim: None,
            wall_time_s: if config.timing { start.elapsed().as_secs_f64() } else { 0.0 },
            config_hash: config_hash.clone(),
        });
    }
    Ok(TrainOutcome {
        records,
        losses,
        model: fed.global().clone(),
        federation: fed,
    })
}
