//! Round orchestration: client sampling, local training, aggregation,
//! server updates, cost accounting and diagnostics.

mod client;
mod server;

pub use client::{local_train, minibatch, sample_clients, LocalJob, LocalUpdate};
pub use server::{aggregate, fedadam_step, ServerKind, ServerOptimizer};

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_rational::Ratio;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compression::{Codec, CostRatio};
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::metrics::{
    alignment_alpha, norm_discrepancy, round_cost, training_step_flops, CostLedger, DiagnosticSample, RoundCost,
};
use crate::nn::{
    accuracy, backward, dice_score, Gradients, Graph, LossKind, ParamId, ParamSource, Sgd, Target, Tensor,
};
use crate::progressive::{
    train_plan, Architecture, Growth, Path, StageSchedule, StagedModel, TrainPlan, UpdateStrategy,
};
use crate::rng::{self, domain};

/// How many local steps each sampled client runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalWork {
    Steps(usize),
    /// Passes over the client's own shard, rounded up to whole batches.
    Epochs(f64),
}

impl LocalWork {
    pub fn steps(self, shard_len: usize, batch_size: usize) -> usize {
        match self {
            LocalWork::Steps(j) => j,
            LocalWork::Epochs(e) => ((e * shard_len as f64 / batch_size as f64).ceil() as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from the base rate toward zero, restarted at every
    /// stage boundary.
    CosineRestart,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepsizeMode {
    #[default]
    Constant,
    /// Scales the client rate by the clamped alignment factor measured at
    /// the start of the round. Only for single-client runs.
    Theory,
}

/// Everything the orchestrator needs beyond the model and data.
#[derive(Debug, Clone, PartialEq)]
pub struct FedOptions {
    pub seed: u64,
    pub strategy: UpdateStrategy,
    pub clients_per_round: usize,
    pub local: LocalWork,
    pub batch_size: usize,
    pub sgd: Sgd,
    pub mu: f64,
    pub lr_schedule: LrSchedule,
    pub stepsize: StepsizeMode,
    pub server: ServerKind,
    pub codec: Codec,
    pub downlink_codec: bool,
    pub index_overhead: bool,
    /// Encode each parameter tensor as its own message instead of the whole
    /// delta vector.
    pub per_tensor_codec: bool,
    pub eval_interval: usize,
    pub diag_interval: usize,
    pub probe_batch: usize,
    pub parallel: bool,
}

impl FedOptions {
    pub fn new(seed: u64, strategy: UpdateStrategy) -> Self {
        Self {
            seed,
            strategy,
            clients_per_round: 1,
            local: LocalWork::Steps(1),
            batch_size: 32,
            sgd: Sgd::new(0.1),
            mu: 0.0,
            lr_schedule: LrSchedule::Constant,
            stepsize: StepsizeMode::Constant,
            server: ServerKind::Fedavg,
            codec: Codec::identity(),
            downlink_codec: false,
            index_overhead: false,
            per_tensor_codec: false,
            eval_interval: 1,
            diag_interval: 0,
            probe_batch: 64,
            parallel: true,
        }
    }

    fn up_ratio(&self) -> CostRatio {
        self.codec.accounted_ratio(self.index_overhead)
    }

    fn down_ratio(&self) -> CostRatio {
        if self.downlink_codec {
            self.up_ratio()
        } else {
            Ratio::from_integer(1)
        }
    }
}

/// Observables of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub stage: usize,
    pub clients: Vec<usize>,
    /// Mean over clients of their mean local minibatch loss.
    pub loss: f64,
    /// Test accuracy or Dice, on evaluation rounds only.
    pub metric: Option<f64>,
    pub cost: RoundCost,
    pub cumulative: RoundCost,
    pub diagnostics: Option<DiagnosticSample>,
    /// Scalars sent to each client.
    pub shipped: usize,
}

pub struct Federation {
    opts: FedOptions,
    model: StagedModel,
    schedule: StageSchedule,
    train: Dataset,
    test: Dataset,
    shards: Vec<Vec<usize>>,
    server: ServerOptimizer,
    ledger: CostLedger,
    probe: Vec<usize>,
    loss: LossKind,
    round: usize,
}

fn flatten_grads(g: &Gradients, ids: &[ParamId]) -> Vec<f64> {
    ids.iter().flat_map(|id| g[id].data().iter().copied()).collect()
}

impl Federation {
    pub fn new(
        opts: FedOptions,
        arch: &Architecture,
        growth: Growth,
        schedule: StageSchedule,
        train: Dataset,
        test: Dataset,
        shards: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let stages = arch.stages();
        if schedule.stages() != stages {
            return Err(Error::Schedule(format!(
                "schedule has {} stages, model has {stages}",
                schedule.stages()
            )));
        }
        if shards.is_empty() || shards.iter().any(Vec::is_empty) {
            return Err(Error::Partition("every client needs a non-empty shard".into()));
        }
        if let Some(bad) = shards.iter().flatten().find(|&&i| i >= train.len()) {
            return Err(Error::Partition(format!("shard index {bad} outside the training set")));
        }
        if opts.clients_per_round == 0 || opts.clients_per_round > shards.len() {
            return Err(Error::InvalidArgument(format!(
                "{} clients per round with {} clients",
                opts.clients_per_round,
                shards.len()
            )));
        }
        if opts.batch_size == 0 || opts.eval_interval == 0 {
            return Err(Error::InvalidArgument(
                "batch size and eval interval must be positive".into(),
            ));
        }
        if opts.stepsize == StepsizeMode::Theory && !(shards.len() == 1 && opts.clients_per_round == 1) {
            return Err(Error::InvalidArgument(
                "theory stepsize needs a single client sampled every round".into(),
            ));
        }
        let loss = match train.task() {
            Task::Classification { .. } => LossKind::CrossEntropy,
            Task::Segmentation1d => LossKind::SoftDice,
        };
        let mut model = StagedModel::new(arch, growth, &mut rng::stream(opts.seed, domain::MODEL_INIT, 0))?;
        let mut head_rng = rng::stream(opts.seed, domain::GROWTH, 0);
        match opts.strategy {
            UpdateStrategy::EndToEnd => {
                while model.active_stage() < stages {
                    model.advance(false, &mut head_rng)?;
                }
            }
            UpdateStrategy::RandomStage => {
                for s in 1..=stages {
                    model.ensure_head(s, &mut head_rng)?;
                }
            }
            _ => {}
        }
        let probe = {
            let mut order: Vec<usize> = (0..train.len()).collect();
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng::stream(opts.seed, domain::PROBE, 0));
            order.truncate(opts.probe_batch.clamp(1, train.len()));
            order.sort_unstable();
            order
        };
        Ok(Self {
            server: ServerOptimizer::new(opts.server),
            opts,
            model,
            schedule,
            train,
            test,
            shards,
            ledger: CostLedger::default(),
            probe,
            loss,
            round: 0,
        })
    }

    pub fn model(&self) -> &StagedModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut StagedModel {
        &mut self.model
    }

    pub fn schedule(&self) -> &StageSchedule {
        &self.schedule
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn server(&self) -> &ServerOptimizer {
        &self.server
    }

    pub fn options(&self) -> &FedOptions {
        &self.opts
    }

    pub fn train_data(&self) -> &Dataset {
        &self.train
    }

    pub fn test_data(&self) -> &Dataset {
        &self.test
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    /// Stage used for round `t`, applying growth or head swaps first.
    fn enter_round(&mut self, t: usize) -> Result<usize> {
        let stages = self.model.stages();
        match self.opts.strategy {
            UpdateStrategy::EndToEnd => Ok(stages),
            UpdateStrategy::RandomStage => {
                let s = rng::stream(self.opts.seed, domain::STAGE_DRAW, t as u64).random_range(1..=stages);
                self.model.set_active_stage(s)?;
                Ok(s)
            }
            strategy => {
                let target = self.schedule.active_stage(t)?;
                while self.model.active_stage() < target {
                    let next = self.model.active_stage() + 1;
                    let mut grow_rng = rng::stream(self.opts.seed, domain::GROWTH, next as u64);
                    if strategy.grows() {
                        self.model.grow(&mut grow_rng)?;
                        self.server.reset(&self.model.block_params(next));
                        if next == stages && self.model.uses_aux_heads() {
                            self.server.reset(&self.model.final_head_params());
                        }
                    } else {
                        self.model.advance(strategy.needs_stage_head(), &mut grow_rng)?;
                    }
                    self.server.retain_live(self.model.store());
                }
                Ok(target)
            }
        }
    }

    fn lr_factor(&self, t: usize) -> Result<f64> {
        Ok(match self.opts.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::CosineRestart => {
                let (offset, len) = if self.opts.strategy.follows_schedule() {
                    self.schedule.stage_offset(t)?
                } else {
                    (t - 1, self.schedule.total())
                };
                0.5 * (1.0 + (PI * offset as f64 / len as f64).cos())
            }
        })
    }

    /// Plan for stage `s` at round `t`, honoring warm-up windows.
    pub fn plan(&self, t: usize, s: usize) -> Result<TrainPlan> {
        let warm = self.opts.strategy.follows_schedule() && self.schedule.in_warmup(t)?;
        train_plan(&self.model, self.opts.strategy, s, warm)
    }

    /// Alignment and norm discrepancy on the probe batch at stage `s`.
    pub fn diagnose(&self, t: usize, s: usize) -> Result<DiagnosticSample> {
        let (x, y) = self.train.batch(&self.probe);
        let full = self.model.graph(Path::Full)?;
        let (_, g_full) = backward(&full, self.model.store(), &x, &y, self.loss)?;
        let sub_path = if self.model.head_params(s).is_ok() {
            Path::Sub(s)
        } else {
            Path::Full
        };
        let (_, g_sub) = if sub_path == Path::Full {
            (0.0, g_full.clone())
        } else {
            backward(&self.model.graph(sub_path)?, self.model.store(), &x, &y, self.loss)?
        };
        let restricted = self.model.restriction_params(s)?;
        let full_r = flatten_grads(&g_full, &restricted);
        let sub_r = flatten_grads(&g_sub, &restricted);
        let full_all = flatten_grads(&g_full, &full.param_ids());
        let alignment = alignment_alpha(&full_r, &sub_r)?;
        let q = alignment.and_then(|a| norm_discrepancy(&full_all, &sub_r, a.alpha));
        Ok(DiagnosticSample {
            round: t,
            stage: s,
            alignment,
            q,
        })
    }

    /// Test metric (accuracy or Dice) of the model on `path`.
    pub fn evaluate(&self, path: Path) -> Result<f64> {
        evaluate(&self.model.graph(path)?, self.model.store(), &self.test)
    }

    /// Test metric on the path the strategy evaluates at stage `s`.
    pub fn evaluate_stage(&self, s: usize) -> Result<f64> {
        self.evaluate(self.opts.strategy.eval_path(s))
    }

    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let t = self.round + 1;
        if t > self.schedule.total() {
            return Err(Error::Stage(format!(
                "all {} rounds already ran",
                self.schedule.total()
            )));
        }
        let s = self.enter_round(t)?;
        let plan = self.plan(t, s)?;
        let graph = self.model.graph(plan.path)?;
        let theory = self.opts.stepsize == StepsizeMode::Theory;
        let diag_due = self.opts.diag_interval > 0 && t.is_multiple_of(self.opts.diag_interval);
        let diagnostics = if diag_due || theory {
            Some(self.diagnose(t, s)?)
        } else {
            None
        };
        let mut lr = self.opts.sgd.lr * self.lr_factor(t)?;
        if theory {
            lr *= diagnostics.and_then(|d| d.alignment).map_or(0.0, |a| a.clamped);
        }
        let clients = sample_clients(self.opts.seed, t, self.shards.len(), self.opts.clients_per_round)?;
        let seg_lens: Vec<usize> = plan
            .shipped
            .iter()
            .map(|&id| self.model.store().param(id).numel())
            .collect();

        let broadcast: Option<BTreeMap<ParamId, Tensor>> = if self.opts.downlink_codec && !self.opts.codec.is_identity()
        {
            let flat = self.model.store().flatten(&plan.shipped);
            let decoded = self.roundtrip(&flat, &seg_lens)?;
            let mut map = BTreeMap::new();
            let mut offset = 0;
            for (&id, &n) in plan.shipped.iter().zip(&seg_lens) {
                let shape = self.model.store().param(id).shape().to_vec();
                map.insert(id, Tensor::new(shape, decoded[offset..offset + n].to_vec())?);
                offset += n;
            }
            Some(map)
        } else {
            None
        };

        let job = LocalJob {
            graph: &graph,
            shipped: &plan.shipped,
            trainable: &plan.trainable,
            steps: 0,
            batch_size: self.opts.batch_size,
            sgd: Sgd { lr, ..self.opts.sgd },
            mu: self.opts.mu,
            loss: self.loss,
        };
        let run_client = |&c: &usize| -> Result<(LocalUpdate, Vec<f64>, usize)> {
            let shard = &self.shards[c];
            let job = LocalJob {
                steps: self.opts.local.steps(shard.len(), self.opts.batch_size),
                ..job.clone()
            };
            let mut rng = rng::stream2(self.opts.seed, domain::CLIENT, t as u64, c as u64);
            let update = match &broadcast {
                Some(map) => local_train(&job, map, &self.train, shard, &mut rng)?,
                None => local_train(&job, self.model.store(), &self.train, shard, &mut rng)?,
            };
            let decoded = self.roundtrip(&update.delta, &seg_lens)?;
            Ok((update, decoded, job.steps))
        };
        let results: Vec<(LocalUpdate, Vec<f64>, usize)> = if self.opts.parallel {
            clients.par_iter().map(run_client).collect::<Result<_>>()?
        } else {
            clients.iter().map(run_client).collect::<Result<_>>()?
        };

        let decoded: Vec<Vec<f64>> = results.iter().map(|(_, d, _)| d.clone()).collect();
        let mean = aggregate(&decoded)?;
        self.server
            .apply(self.model.store_mut(), &plan.shipped, &plan.trainable, &mean)?;

        let shipped = seg_lens.iter().sum::<usize>();
        let step_flops = training_step_flops(&graph, self.opts.batch_size);
        let mut cost = RoundCost::default();
        for (_, _, steps) in &results {
            let c = round_cost(
                step_flops,
                1,
                *steps,
                shipped,
                self.opts.down_ratio(),
                self.opts.up_ratio(),
            );
            cost.flops += c.flops;
            cost.bytes_down += c.bytes_down;
            cost.bytes_up += c.bytes_up;
        }
        self.ledger.record(cost);
        let loss = results.iter().map(|(u, _, _)| u.loss).sum::<f64>() / results.len() as f64;
        self.round = t;

        let metric = if t.is_multiple_of(self.opts.eval_interval) || t == self.schedule.total() {
            Some(self.evaluate_stage(s)?)
        } else {
            None
        };
        Ok(RoundMetrics {
            round: t,
            stage: s,
            clients,
            loss,
            metric,
            cost,
            cumulative: self.ledger.total(),
            diagnostics,
            shipped,
        })
    }

    fn roundtrip(&self, values: &[f64], seg_lens: &[usize]) -> Result<Vec<f64>> {
        if self.opts.codec.is_identity() {
            return Ok(values.to_vec());
        }
        if self.opts.per_tensor_codec {
            let msgs = self.opts.codec.encode_segments(values, seg_lens)?;
            Ok(msgs.iter().flat_map(|m| m.decode()).collect())
        } else {
            Ok(self.opts.codec.encode(values)?.decode())
        }
    }

    /// Runs every remaining round.
    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        let mut out = Vec::with_capacity(self.schedule.total() - self.round);
        while self.round < self.schedule.total() {
            out.push(self.run_round()?);
        }
        Ok(out)
    }
}

const EVAL_CHUNK: usize = 256;

/// Accuracy or mean Dice of `graph`'s first output over `data`.
pub fn evaluate<P: ParamSource + ?Sized>(graph: &Graph, params: &P, data: &Dataset) -> Result<f64> {
    let n = data.len();
    let mut total = 0.0;
    let rows: Vec<usize> = (0..n).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk);
        let acts = graph.forward(params, &x)?;
        let out = acts.output(0);
        let score = match &y {
            Target::Classes(c) => accuracy(out, c),
            Target::Masks(m) => dice_score(out, m),
        };
        total += score * chunk.len() as f64;
    }
    Ok(total / n as f64)
}
