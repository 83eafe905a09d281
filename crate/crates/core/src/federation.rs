//! The federated training loop.
//!
//! Each round samples a cohort, trains every member from the same broadcast
//! global parameters, records the post-training losses in the ledger,
//! weights the cohort with the configured strategy and aggregates. The loss
//! of the initial model on every client is recorded as round 0 so the
//! derivative term is defined from the first aggregation on.

use std::path::PathBuf;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, compute_weights, AggregationWeights, LossLedger, StrategyConfig};
use crate::data::{self, Dataset, PartitionMode, PartitionPlan};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec, ParamVector};
use crate::seed::{self, purpose};
use crate::trainer::{client_update, TrainerConfig};

/// Where a run's examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Blobs {
        #[serde(default = "default_classes")]
        num_classes: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_input_dim")]
        input_dim: usize,
        #[serde(default = "default_separation")]
        separation: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only the first `limit` examples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

fn default_classes() -> usize {
    10
}
fn default_per_class() -> usize {
    100
}
fn default_input_dim() -> usize {
    20
}
fn default_separation() -> f64 {
    4.0
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Blobs {
            num_classes: default_classes(),
            per_class: default_per_class(),
            input_dim: default_input_dim(),
            separation: default_separation(),
        }
    }
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DataSource::Blobs {
                num_classes,
                per_class,
                input_dim,
                separation,
            } => data::generate_blobs(*num_classes, *per_class, *input_dim, *separation, seed),
            DataSource::Idx { images, labels, limit } => {
                let all = data::read_idx(images, labels)?;
                Ok(match limit {
                    Some(n) => all.truncate(*n),
                    None => all,
                })
            }
        }
    }
}

/// Model family; input and output sizes come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArch {
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden: Vec<usize>,
}

impl Default for ModelArch {
    fn default() -> Self {
        ModelArch {
            kind: ModelKind::Logistic,
            hidden: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub num_clients: usize,
    /// Fraction `C` of clients sampled per round.
    pub participation: f64,
    pub rounds: usize,
    pub trainer: TrainerConfig,
    pub strategy: StrategyConfig,
    pub model: ModelArch,
    pub data: DataSource,
    pub partition: PartitionMode,
    /// Explicit per-client cardinalities; balanced when `None`.
    pub cardinalities: Option<Vec<usize>>,
    /// Stratified fraction of the data held out for global evaluation.
    pub eval_fraction: f64,
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            num_clients: 100,
            participation: 1.0,
            rounds: 100,
            trainer: TrainerConfig::default(),
            strategy: StrategyConfig::fedcontrol(1.0 / 3.0, 1.0 / 3.0, 1.0),
            model: ModelArch::default(),
            data: DataSource::default(),
            partition: PartitionMode::Iid,
            cardinalities: None,
            eval_fraction: 0.1,
            master_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 1 {
            return Err(Error::config("federation.clients", "must be >= 1"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::config("federation.participation", "must lie in (0, 1]"));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::config("data.eval_fraction", "must lie in (0, 1)"));
        }
        if let Some(cards) = &self.cardinalities {
            if cards.len() != self.num_clients {
                return Err(Error::config(
                    "partition.cardinalities",
                    format!("expected {} entries, got {}", self.num_clients, cards.len()),
                ));
            }
            if cards.contains(&0) {
                return Err(Error::config("partition.cardinalities", "entries must be >= 1"));
            }
        }
        if let DataSource::Blobs {
            num_classes,
            per_class,
            input_dim,
            separation,
        } = &self.data
        {
            if *num_classes < 2 || *per_class < 1 || *input_dim < 1 {
                return Err(Error::config(
                    "data",
                    "blobs need num_classes >= 2, per_class >= 1, input_dim >= 1",
                ));
            }
            if separation.is_nan() || *separation <= 0.0 {
                return Err(Error::config("data.separation", "must be > 0"));
            }
        }
        self.trainer.validate()?;
        self.strategy.validate()?;
        let probe = ModelSpec {
            kind: self.model.kind,
            input_dim: 1,
            num_classes: 2,
            hidden: self.model.hidden.clone(),
            init_seed: 0,
        };
        probe.validate()
    }

    pub fn cohort_size(&self) -> usize {
        cohort_size(self.num_clients, self.participation)
    }

    /// Global epoch index reached at the start of `round`.
    pub fn epoch_of_round(&self, round: usize) -> usize {
        round * self.trainer.local_epochs
    }
}

/// `max(floor(C * N), 1)`. The small slack keeps products such as
/// `0.29 * 100` from rounding down a whole client.
pub fn cohort_size(num_clients: usize, participation: f64) -> usize {
    let raw = (participation * num_clients as f64 + 1e-9).floor() as usize;
    raw.clamp(1, num_clients.max(1))
}

/// Uniform sample without replacement, sorted by client id. Deterministic
/// in `(seed, round)`.
pub fn select_clients(round: usize, num_clients: usize, participation: f64, seed: u64) -> Vec<usize> {
    let k = cohort_size(num_clients, participation);
    if k >= num_clients {
        return (0..num_clients).collect();
    }
    let mut rng = seed::derive_rng(seed, &[purpose::SELECTION, round as u64]);
    let mut picked = index::sample(&mut rng, num_clients, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Round-0 ledger: loss of `initial` on every client's data.
pub fn bootstrap_losses(spec: &ModelSpec, initial: &ParamVector, clients: &[Dataset]) -> Result<LossLedger> {
    let losses: Vec<f64> = clients
        .par_iter()
        .map(|data| spec.loss(initial, data))
        .collect::<Result<_>>()?;
    let mut ledger = LossLedger::new(clients.len());
    for (client, loss) in losses.into_iter().enumerate() {
        ledger.record(client, 0, loss)?;
    }
    Ok(ledger)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    /// Completed rounds, starting at 1.
    pub round: usize,
    pub cohort: Vec<usize>,
    /// Post-training local loss of each cohort member, in cohort order.
    pub client_losses: Vec<f64>,
    pub accuracy: f64,
    pub loss: f64,
    pub weights: AggregationWeights,
}

#[derive(Debug)]
pub struct Federation {
    spec: ModelSpec,
    clients: Vec<Dataset>,
    sample_counts: Vec<usize>,
    eval: Dataset,
    global: ParamVector,
    ledger: LossLedger,
    strategy: StrategyConfig,
    trainer: TrainerConfig,
    participation: f64,
    selection_seed: u64,
    completed: usize,
}

/// Seeds of one run, all derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub data: u64,
    pub split: u64,
    pub partition: u64,
    pub init: u64,
    pub selection: u64,
    pub shuffle: u64,
}

impl RunSeeds {
    pub fn from_master(master: u64) -> Self {
        RunSeeds {
            data: seed::derive_seed(master, &[purpose::DATA]),
            split: seed::derive_seed(master, &[purpose::SPLIT]),
            partition: seed::derive_seed(master, &[purpose::PARTITION]),
            init: seed::derive_seed(master, &[purpose::INIT]),
            selection: seed::derive_seed(master, &[purpose::SELECTION]),
            shuffle: seed::derive_seed(master, &[purpose::SHUFFLE]),
        }
    }
}

impl Federation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spec: ModelSpec,
        clients: Vec<Dataset>,
        eval: Dataset,
        initial: ParamVector,
        strategy: StrategyConfig,
        trainer: TrainerConfig,
        participation: f64,
        selection_seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        strategy.validate()?;
        if clients.is_empty() {
            return Err(Error::config("federation.clients", "must be >= 1"));
        }
        if let Some(i) = clients.iter().position(Dataset::is_empty) {
            return Err(Error::Partition(format!("client {i} received no examples")));
        }
        if eval.is_empty() {
            return Err(Error::EmptyData);
        }
        let ledger = bootstrap_losses(&spec, &initial, &clients)?;
        Ok(Federation {
            sample_counts: clients.iter().map(Dataset::len).collect(),
            spec,
            clients,
            eval,
            global: initial,
            ledger,
            strategy,
            trainer,
            participation,
            selection_seed,
            completed: 0,
        })
    }

    /// Load data, hold out the evaluation split, partition and initialize.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let seeds = RunSeeds::from_master(cfg.master_seed);
        let all = cfg.data.load(seeds.data)?;
        let (train, eval) = data::stratified_split(&all, cfg.eval_fraction, seeds.split)?;
        let plan = match &cfg.cardinalities {
            Some(cards) => PartitionPlan::new(cfg.partition, cards.clone(), seeds.partition),
            None => PartitionPlan::balanced(
                cfg.partition,
                cfg.num_clients,
                train.labels(),
                train.num_classes(),
                seeds.partition,
            )?,
        };
        let clients = data::partition(&train, &plan)?;
        let spec = ModelSpec {
            kind: cfg.model.kind,
            input_dim: all.input_dim(),
            num_classes: all.num_classes(),
            hidden: cfg.model.hidden.clone(),
            init_seed: seeds.init,
        };
        let initial = spec.init_params();
        let trainer = TrainerConfig {
            shuffle_seed: seeds.shuffle,
            ..cfg.trainer.clone()
        };
        Federation::new(
            spec,
            clients,
            eval,
            initial,
            cfg.strategy,
            trainer,
            cfg.participation,
            seeds.selection,
        )
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn clients(&self) -> &[Dataset] {
        &self.clients
    }

    pub fn eval_data(&self) -> &Dataset {
        &self.eval
    }

    pub fn global(&self) -> &ParamVector {
        &self.global
    }

    pub fn ledger(&self) -> &LossLedger {
        &self.ledger
    }

    pub fn rounds_completed(&self) -> usize {
        self.completed
    }

    /// The cohort the next round will use.
    pub fn next_cohort(&self) -> Vec<usize> {
        select_clients(self.completed, self.clients.len(), self.participation, self.selection_seed)
    }

    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let round = self.completed;
        let cohort = self.next_cohort();
        let updates = cohort
            .par_iter()
            .map(|&client| {
                client_update(
                    &self.spec,
                    &self.global,
                    &self.clients[client],
                    client,
                    round,
                    &self.trainer,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let ledger_round = round + 1;
        for (&client, update) in cohort.iter().zip(&updates) {
            self.ledger.record(client, ledger_round, update.loss)?;
        }
        let weights = compute_weights(
            &cohort,
            &self.sample_counts,
            &self.ledger,
            ledger_round,
            &self.strategy,
        )?;
        let client_losses = updates.iter().map(|u| u.loss).collect();
        let params: Vec<ParamVector> = updates.into_iter().map(|u| u.params).collect();
        self.global = aggregate(&params, &weights)?;
        self.completed += 1;

        Ok(RoundRecord {
            round: ledger_round,
            cohort,
            client_losses,
            accuracy: self.spec.accuracy(&self.global, &self.eval)?,
            loss: self.spec.loss(&self.global, &self.eval)?,
            weights,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub records: Vec<RoundRecord>,
    pub final_params: ParamVector,
}

impl TrainingOutcome {
    pub fn accuracy_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.accuracy).collect()
    }
}

pub fn run_training(cfg: &RunConfig) -> Result<TrainingOutcome> {
    let mut federation = Federation::from_config(cfg)?;
    let records = (0..cfg.rounds)
        .map(|_| federation.run_round())
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingOutcome {
        records,
        final_params: federation.global,
    })
}
