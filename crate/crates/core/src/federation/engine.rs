use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, ClientShard, Dataset, PartitionSpec, SyntheticSpec};
use crate::federation::aggregate::aggregate;
use crate::federation::client::{global_step, shuffled_batches, Batch, ClientOutcome, ClientState};
use crate::federation::messages::{ClientUpload, RepresentationUpload, ServerBroadcast};
use crate::federation::server::ServerState;
use crate::federation::{Algorithm, FederationConfig};
use crate::losses::EmbeddingBatch;
use crate::metrics::{evaluate_all, Metric, MetricValue};
use crate::models::{FrozenExtractor, GlobalModel, LocalModel, ModalityMode, ModelDims, ServerModel, ShareableInput};
use crate::nn::{AdamConfig, AdamState, ModelParams, Tensor};
use crate::rng::{SeedStreams, SimRng, Stream};
use crate::{Error, Result};

// Init stream sub-indices, one per model family.
const INIT_GLOBAL: u64 = 0;
const INIT_SERVER: u64 = 1;
const INIT_LOCAL: u64 = 2;
const INIT_EXTRACTOR: u64 = 3;
// Batching stream second index for non-client consumers.
const SERVER_BATCHES: u64 = 1 << 32;
const CENTRAL_BATCHES: u64 = 1 << 33;

/// Client shards plus the pooled training set and the held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedData {
    pub shards: Vec<ClientShard>,
    pub train: Dataset,
    pub test: Dataset,
}

impl FederatedData {
    /// Generates, splits, partitions, and masks in one go.
    pub fn synthesize(
        spec: &SyntheticSpec,
        partition: &PartitionSpec,
        clients: usize,
        streams: &SeedStreams,
    ) -> Result<Self> {
        let data = generate_synthetic(spec, &mut streams.rng(Stream::Data, 0, 0))?;
        let (train, test) = data.stratified_split(spec.test_fraction, &mut streams.rng(Stream::Data, 1, 0));
        Self::from_split(train, test, partition, clients, streams)
    }

    pub fn from_split(
        train: Dataset,
        test: Dataset,
        partition: &PartitionSpec,
        clients: usize,
        streams: &SeedStreams,
    ) -> Result<Self> {
        if train.num_classes != test.num_classes {
            return Err(Error::Validation("train and test disagree on the class count".into()));
        }
        let mut shards = partition.partition(&train, clients, &mut streams.rng(Stream::Partition, 0, 0))?;
        crate::data::apply_missing_modality(
            &mut shards,
            partition.shareable_fraction,
            &mut streams.rng(Stream::Partition, 1, 0),
        )?;
        Ok(Self { shards, train, test })
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes
    }
}

/// Which metrics to compute, and how often. An interval of 0 evaluates only
/// after the last round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub metrics: Vec<Metric>,
    pub interval: usize,
}

impl Default for EvalPlan {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::TopK(1), Metric::Uar],
            interval: 1,
        }
    }
}

impl EvalPlan {
    fn due(&self, round: usize, rounds: usize) -> bool {
        round + 1 == rounds || (self.interval > 0 && (round + 1).is_multiple_of(self.interval))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Sampled clients in ascending order; `None` for centralized training.
    pub participants: Option<Vec<usize>>,
    pub loss_glob: Option<f64>,
    pub loss_loc: Option<f64>,
    pub loss_server: Option<f64>,
    pub metrics: Option<Vec<MetricValue>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Hooks into the protocol's message flow. All methods default to no-ops.
pub trait RoundObserver {
    fn representations_uploaded(&mut self, _upload: &RepresentationUpload) {}
    fn distributed(&mut self, _round: usize, _client_id: usize, _broadcast: &ServerBroadcast) {}
    fn uploaded(&mut self, _round: usize, _upload: &ClientUpload) {}
    /// Server embeddings after the end-of-round refresh (and once before
    /// round 0, with `round == None`).
    fn server_embeddings_refreshed(&mut self, _round: Option<usize>, _embeddings: &BTreeMap<usize, EmbeddingBatch>) {}
    fn aggregated(&mut self, _round: usize, _global: &ModelParams) {}
}

pub struct NoObserver;

impl RoundObserver for NoObserver {}

/// One participant's training for one round.
pub struct ClientJob<'a> {
    pub client: &'a mut ClientState,
    pub template: &'a GlobalModel,
    pub broadcast: ServerBroadcast,
    pub cfg: &'a FederationConfig,
    pub seed: u64,
}

impl ClientJob<'_> {
    pub fn run(self) -> Result<ClientOutcome> {
        let mut rng = SimRng::seed_from_u64(self.seed);
        self.client.train(self.template, &self.broadcast, self.cfg, &mut rng)
    }
}

/// Runs a round's client jobs. Implementations must return outcomes in job
/// order; jobs share no mutable state, so they may run concurrently.
pub trait ClientExecutor {
    fn execute(&self, jobs: Vec<ClientJob<'_>>) -> Vec<Result<ClientOutcome>>;
}

pub struct Sequential;

impl ClientExecutor for Sequential {
    fn execute(&self, jobs: Vec<ClientJob<'_>>) -> Vec<Result<ClientOutcome>> {
        jobs.into_iter().map(ClientJob::run).collect()
    }
}

/// Uniform sample without replacement of `count` ids from `0..clients`,
/// ascending.
pub fn sample_clients<R: rand::Rng + ?Sized>(clients: usize, count: usize, rng: &mut R) -> Vec<usize> {
    let mut ids = rand::seq::index::sample(rng, clients, count.min(clients)).into_vec();
    ids.sort_unstable();
    ids
}

/// Held-out samples with the inputs the global model needs.
#[derive(Debug, Clone, PartialEq)]
struct EvalSet {
    ids: Vec<u64>,
    labels: Vec<usize>,
    non_shareable: Tensor,
    shareable_repr: Tensor,
}

impl EvalSet {
    fn new(data: &Dataset, extractor: &FrozenExtractor) -> Result<Self> {
        Ok(Self {
            ids: data.ids.clone(),
            labels: data.labels.clone(),
            non_shareable: data.non_shareable.clone(),
            shareable_repr: extractor.extract(&data.shareable)?,
        })
    }

    fn evaluate(&self, model: &GlobalModel, metrics: &[Metric]) -> Result<Vec<MetricValue>> {
        let (_, logits) = model.forward(
            &self.non_shareable,
            ShareableInput::Features(&self.shareable_repr),
            &self.ids,
        )?;
        evaluate_all(metrics, &logits, &self.labels)
    }
}

fn build_models(
    cfg: &FederationConfig,
    dims: &ModelDims,
    data: &FederatedData,
    streams: &SeedStreams,
) -> Result<(FrozenExtractor, GlobalModel)> {
    cfg.validate()?;
    dims.validate()?;
    let extractor = FrozenExtractor::new(
        data.train.shareable.cols(),
        dims.extracted_dim,
        &mut streams.rng(Stream::Init, INIT_EXTRACTOR, 0),
    );
    let global = GlobalModel::new(
        cfg.modality,
        data.train.non_shareable.cols(),
        data.num_classes(),
        dims,
        &mut streams.rng(Stream::Init, INIT_GLOBAL, 0),
    )?;
    Ok((extractor, global))
}

/// Protocol state for the federated algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    cfg: FederationConfig,
    streams: SeedStreams,
    extractor: FrozenExtractor,
    global: GlobalModel,
    server: Option<ServerState>,
    clients: Vec<ClientState>,
    eval: EvalSet,
    round: usize,
    uploaded: bool,
}

impl Federation {
    pub fn new(cfg: &FederationConfig, dims: &ModelDims, data: &FederatedData, streams: &SeedStreams) -> Result<Self> {
        if cfg.algorithm == Algorithm::Centralized {
            return Err(Error::config("algorithm", "centralized training has no federation"));
        }
        if data.shards.len() != cfg.clients {
            return Err(Error::config(
                "clients",
                format!("{} shards for {} clients", data.shards.len(), cfg.clients),
            ));
        }
        let (extractor, global) = build_models(cfg, dims, data, streams)?;
        let partial = cfg.uses_shareable_alignment();
        let mut clients = Vec::with_capacity(cfg.clients);
        for shard in &data.shards {
            let repr = shard.shareable.as_ref().map(|t| extractor.extract(t)).transpose()?;
            let local = if partial && repr.is_some() {
                let mut rng = streams.rng(Stream::Init, INIT_LOCAL, shard.client_id as u64);
                Some(LocalModel::new(data.num_classes(), dims, &mut rng)?)
            } else {
                None
            };
            clients.push(ClientState::new(shard.clone(), repr, local, cfg.learning_rate)?);
        }
        let server = if partial {
            let model = ServerModel::new(dims, &mut streams.rng(Stream::Init, INIT_SERVER, 0))?;
            Some(ServerState::new(model, cfg.learning_rate))
        } else {
            None
        };
        Ok(Self {
            cfg: *cfg,
            streams: *streams,
            eval: EvalSet::new(&data.test, &extractor)?,
            extractor,
            global,
            server,
            clients,
            round: 0,
            uploaded: false,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn global_model(&self) -> &GlobalModel {
        &self.global
    }

    pub fn global_params(&self) -> ModelParams {
        self.global.params()
    }

    pub fn server(&self) -> Option<&ServerState> {
        self.server.as_ref()
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn extractor(&self) -> &FrozenExtractor {
        &self.extractor
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Step 1 of the protocol: clients holding the shareable modality send
    /// its frozen representations, and the server computes its first
    /// embeddings. Runs once; later calls are no-ops.
    pub fn upload_shareable_representations(&mut self, observer: &mut dyn RoundObserver) -> Result<()> {
        if self.uploaded {
            return Ok(());
        }
        self.uploaded = true;
        let Some(server) = self.server.as_mut() else {
            return Ok(());
        };
        for client in &self.clients {
            if let Some(repr) = &client.shareable_repr {
                let upload = RepresentationUpload {
                    client_id: client.client_id,
                    sample_ids: client.shard.sample_ids.clone(),
                    features: repr.clone(),
                };
                observer.representations_uploaded(&upload);
                server.receive(upload)?;
            }
        }
        server.refresh_embeddings()?;
        observer.server_embeddings_refreshed(None, server.embeddings());
        Ok(())
    }

    pub fn evaluate(&self, metrics: &[Metric]) -> Result<Vec<MetricValue>> {
        self.eval.evaluate(&self.global, metrics)
    }

    /// Sample, distribute, train clients, train the server, refresh server
    /// embeddings, aggregate.
    pub fn run_round(
        &mut self,
        executor: &dyn ClientExecutor,
        observer: &mut dyn RoundObserver,
    ) -> Result<RoundReport> {
        self.upload_shareable_representations(observer)?;
        let t = self.round;
        let cfg = self.cfg;
        let participants = sample_clients(
            cfg.clients,
            cfg.participants_per_round(),
            &mut self.streams.rng(Stream::Sampling, t as u64, 0),
        );
        let global_params = self.global.params();
        let mut jobs = Vec::with_capacity(participants.len());
        let mut selected = participants.iter().peekable();
        for client in self.clients.iter_mut() {
            if selected.peek() != Some(&&client.client_id) {
                continue;
            }
            selected.next();
            let broadcast = ServerBroadcast {
                round: t,
                global_params: global_params.clone(),
                server_embeddings: self
                    .server
                    .as_ref()
                    .and_then(|s| s.embeddings_for(client.client_id))
                    .cloned(),
            };
            observer.distributed(t, client.client_id, &broadcast);
            jobs.push(ClientJob {
                seed: self.streams.seed(Stream::Batching, t as u64, client.client_id as u64),
                client,
                template: &self.global,
                broadcast,
                cfg: &self.cfg,
            });
        }
        let outcomes = executor
            .execute(jobs)
            .into_iter()
            .collect::<Result<Vec<ClientOutcome>>>()?;

        let mut warnings = Vec::new();
        let mut uploads = Vec::with_capacity(outcomes.len());
        let (mut glob, mut n_glob, mut loc, mut n_loc) = (0.0, 0usize, 0.0, 0usize);
        for outcome in outcomes {
            warnings.extend(outcome.warnings);
            if let Some(l) = outcome.loss_glob {
                glob += l;
                n_glob += 1;
            }
            if let Some(l) = outcome.loss_loc {
                loc += l;
                n_loc += 1;
            }
            if let Some(upload) = outcome.upload {
                observer.uploaded(t, &upload);
                uploads.push(upload);
            }
        }

        let mut loss_server = None;
        if let Some(server) = self.server.as_mut() {
            let streams = self.streams;
            loss_server = server.train(&uploads, cfg.batch_size, &cfg.contrastive(), |k| {
                streams.rng(Stream::Batching, t as u64, SERVER_BATCHES + k as u64)
            })?;
            server.refresh_embeddings()?;
            observer.server_embeddings_refreshed(Some(t), server.embeddings());
        }

        if !uploads.is_empty() {
            let params: Vec<ModelParams> = uploads.iter().map(|u| u.global_params.clone()).collect();
            let sizes: Vec<usize> = uploads.iter().map(|u| u.num_samples).collect();
            let next = aggregate(&params, &sizes, cfg.aggregation)?;
            self.global.load_params(&next)?;
        }
        observer.aggregated(t, &self.global.params());
        self.round += 1;
        Ok(RoundReport {
            round: t,
            participants: Some(participants),
            loss_glob: (n_glob > 0).then(|| glob / n_glob as f64),
            loss_loc: (n_loc > 0).then(|| loc / n_loc as f64),
            loss_server,
            metrics: None,
            warnings,
        })
    }
}

/// One model trained on the pooled training set, with as many optimizer
/// steps per round as a federated round takes on average.
#[derive(Debug, Clone, PartialEq)]
pub struct Centralized {
    cfg: FederationConfig,
    streams: SeedStreams,
    global: GlobalModel,
    adam: AdamState,
    train: EvalSet,
    eval: EvalSet,
    steps_per_round: usize,
    round: usize,
}

impl Centralized {
    pub fn new(cfg: &FederationConfig, dims: &ModelDims, data: &FederatedData, streams: &SeedStreams) -> Result<Self> {
        let (extractor, global) = build_models(cfg, dims, data, streams)?;
        let n = data.train.len();
        if n == 0 {
            return Err(Error::Validation("empty training set".into()));
        }
        let per_round = cfg.participants_per_round() as f64 * n as f64 / cfg.clients as f64;
        let steps_per_round = cfg.local_epochs * (libm::ceil(per_round / cfg.batch_size as f64) as usize).max(1);
        Ok(Self {
            cfg: *cfg,
            streams: *streams,
            adam: AdamState::new(global.num_params(), AdamConfig::with_learning_rate(cfg.learning_rate)),
            global,
            train: EvalSet::new(&data.train, &extractor)?,
            eval: EvalSet::new(&data.test, &extractor)?,
            steps_per_round,
            round: 0,
        })
    }

    pub fn steps_per_round(&self) -> usize {
        self.steps_per_round
    }

    pub fn global_params(&self) -> ModelParams {
        self.global.params()
    }

    pub fn evaluate(&self, metrics: &[Metric]) -> Result<Vec<MetricValue>> {
        self.eval.evaluate(&self.global, metrics)
    }

    pub fn run_round(&mut self) -> Result<RoundReport> {
        let t = self.round;
        let mut rng = self.streams.rng(Stream::Batching, t as u64, CENTRAL_BATCHES);
        let contrastive = self.cfg.contrastive();
        let mut loss = 0.0;
        let mut done = 0;
        while done < self.steps_per_round {
            for rows in shuffled_batches(self.train.ids.len(), self.cfg.batch_size, &mut rng) {
                if done == self.steps_per_round {
                    break;
                }
                let batch = Batch {
                    ids: rows.iter().map(|&i| self.train.ids[i]).collect(),
                    labels: rows.iter().map(|&i| self.train.labels[i]).collect(),
                    non_shareable: self.train.non_shareable.select_rows(&rows),
                    shareable: match self.global.mode {
                        ModalityMode::MultiModal => Some(self.train.shareable_repr.select_rows(&rows)),
                        ModalityMode::UniModal => None,
                    },
                    reference: None,
                };
                loss += global_step(&mut self.global, &mut self.adam, &batch, &contrastive, None)?;
                done += 1;
            }
        }
        self.round += 1;
        Ok(RoundReport {
            round: t,
            participants: None,
            loss_glob: Some(loss / done as f64),
            loss_loc: None,
            loss_server: None,
            metrics: None,
            warnings: Vec::new(),
        })
    }
}

pub enum Trainer {
    Federated(Federation),
    Centralized(Centralized),
}

impl Trainer {
    pub fn new(cfg: &FederationConfig, dims: &ModelDims, data: &FederatedData, streams: &SeedStreams) -> Result<Self> {
        Ok(match cfg.algorithm {
            Algorithm::Centralized => Trainer::Centralized(Centralized::new(cfg, dims, data, streams)?),
            _ => Trainer::Federated(Federation::new(cfg, dims, data, streams)?),
        })
    }

    pub fn run_round(
        &mut self,
        executor: &dyn ClientExecutor,
        observer: &mut dyn RoundObserver,
    ) -> Result<RoundReport> {
        match self {
            Trainer::Federated(f) => f.run_round(executor, observer),
            Trainer::Centralized(c) => c.run_round(),
        }
    }

    pub fn evaluate(&self, metrics: &[Metric]) -> Result<Vec<MetricValue>> {
        match self {
            Trainer::Federated(f) => f.evaluate(metrics),
            Trainer::Centralized(c) => c.evaluate(metrics),
        }
    }

    pub fn global_params(&self) -> ModelParams {
        match self {
            Trainer::Federated(f) => f.global_params(),
            Trainer::Centralized(c) => c.global_params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub rounds: Vec<RoundReport>,
    pub final_metrics: Vec<MetricValue>,
}

/// Runs `cfg.rounds` rounds and evaluates on the held-out split per `eval`.
pub fn run_experiment(
    cfg: &FederationConfig,
    dims: &ModelDims,
    data: &FederatedData,
    eval: &EvalPlan,
    streams: &SeedStreams,
    executor: &dyn ClientExecutor,
    observer: &mut dyn RoundObserver,
) -> Result<ExperimentOutcome> {
    let mut trainer = Trainer::new(cfg, dims, data, streams)?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut last = None;
    for t in 0..cfg.rounds {
        let mut report = trainer.run_round(executor, observer)?;
        if eval.due(t, cfg.rounds) {
            let m = trainer.evaluate(&eval.metrics)?;
            last = Some(m.clone());
            report.metrics = Some(m);
        }
        rounds.push(report);
    }
    let final_metrics = match last {
        Some(m) => m,
        None => trainer.evaluate(&eval.metrics)?,
    };
    Ok(ExperimentOutcome { rounds, final_metrics })
}
