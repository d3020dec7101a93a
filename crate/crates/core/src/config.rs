//! Experiment configuration: a TOML document, `key=value` overrides,
//! cross-field validation and assembly of a ready-to-run [`Federation`].

use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compression::Codec;
use crate::data::{gen_blobs, gen_seg1d, load_csv, partition, Dataset, PartitionKind};
use crate::error::{Error, Issue, Result};
use crate::federation::{FedOptions, Federation, LocalWork, LrSchedule, ServerKind, StepsizeMode};
use crate::nn::{LayerKind, Sgd};
use crate::progressive::{make_schedule, Architecture, Growth, StageSchedule, UNetSpec, UpdateStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Total rounds `T`.
    pub rounds: usize,
    /// Stage count `S`.
    pub stages: usize,
    /// Explicit per-stage round counts; defaults to the halving rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<usize>>,
    /// Warm-up rounds per stage; empty disables warm-up.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warmup: Vec<usize>,
    #[serde(default = "default_strategy")]
    pub strategy: UpdateStrategy,
    #[serde(default)]
    pub codec: Codec,
    #[serde(default)]
    pub downlink_codec: bool,
    #[serde(default)]
    pub index_overhead: bool,
    #[serde(default)]
    pub per_tensor_codec: bool,
    #[serde(default = "one")]
    pub eval_interval: usize,
    #[serde(default)]
    pub diag_interval: usize,
    #[serde(default = "default_probe")]
    pub probe_batch: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub server: ServerKind,
}

fn default_strategy() -> UpdateStrategy {
    UpdateStrategy::Progressive
}
fn one() -> usize {
    1
}
fn default_probe() -> usize {
    64
}
fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
    },
    Seg1d {
        length: usize,
        samples: usize,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionName {
    #[default]
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(default)]
    pub kind: PartitionName,
    /// Concentration of the Dirichlet split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "one")]
    pub clients: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            kind: PartitionName::Iid,
            beta: None,
            clients: 1,
        }
    }
}

impl PartitionConfig {
    pub fn kind(&self) -> PartitionKind {
        match self.kind {
            PartitionName::Iid => PartitionKind::Iid,
            PartitionName::Dirichlet => PartitionKind::Dirichlet {
                beta: self.beta.unwrap_or(f64::NAN),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    FeedForward {
        input: Vec<usize>,
        blocks: Vec<Vec<LayerKind>>,
        head: Vec<LayerKind>,
    },
    /// 1-D U-net; input length and channels come from the dataset.
    EncoderDecoder {
        growth: Growth,
        channels: Vec<usize>,
        bottleneck: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
    },
}

fn default_kernel() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "one")]
    pub clients_per_round: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_epochs: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub stepsize: StepsizeMode,
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    0.1
}
fn yes() -> bool {
    true
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            clients_per_round: 1,
            local_steps: None,
            local_epochs: None,
            batch_size: default_batch(),
            lr: default_lr(),
            momentum: 0.0,
            weight_decay: 0.0,
            mu: 0.0,
            lr_schedule: LrSchedule::Constant,
            stepsize: StepsizeMode::Constant,
            parallel: true,
        }
    }
}

impl TrainingConfig {
    pub fn local_work(&self) -> LocalWork {
        match (self.local_steps, self.local_epochs) {
            (_, Some(e)) => LocalWork::Epochs(e),
            (Some(j), None) => LocalWork::Steps(j),
            (None, None) => LocalWork::Steps(1),
        }
    }
}

impl DatasetConfig {
    /// Sample count, or `None` when it is only known after loading a file.
    fn size(&self) -> Option<usize> {
        match self {
            DatasetConfig::Blobs { classes, per_class, .. } => Some(classes * per_class),
            DatasetConfig::Seg1d { samples, .. } => Some(*samples),
            DatasetConfig::Csv { .. } => None,
        }
    }

    pub fn load(&self, seed: u64, base: Option<&FsPath>) -> Result<Dataset> {
        match self {
            DatasetConfig::Blobs {
                classes,
                dim,
                per_class,
                spread,
            } => gen_blobs(*classes, *dim, *per_class, *spread, seed),
            DatasetConfig::Seg1d { length, samples } => gen_seg1d(*length, *samples, seed),
            DatasetConfig::Csv { path } => match base {
                Some(dir) if path.is_relative() => load_csv(dir.join(path)),
                _ => load_csv(path),
            },
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document, applies `key=value` overrides and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_error(text, e))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Parse {
            path: PathBuf::from("<config>"),
            line: 0,
            message: e.message().to_string(),
        })?;
        let issues = cfg.validate();
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn load(path: impl AsRef<FsPath>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    /// TOML text that [`ExperimentConfig::parse`] maps back to `self`.
    pub fn emit(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("cannot serialize config: {e}")))
    }

    pub fn architecture(&self) -> Architecture {
        match &self.model {
            ModelConfig::FeedForward { input, blocks, head } => Architecture::FeedForward {
                input: input.clone(),
                blocks: blocks.clone(),
                head: head.clone(),
            },
            ModelConfig::EncoderDecoder {
                channels,
                bottleneck,
                kernel,
                ..
            } => {
                let length = match self.dataset {
                    DatasetConfig::Seg1d { length, .. } => length,
                    _ => 0,
                };
                Architecture::EncoderDecoder(UNetSpec {
                    in_channels: 1,
                    length,
                    channels: channels.clone(),
                    bottleneck: *bottleneck,
                    kernel: *kernel,
                    out_channels: 1,
                })
            }
        }
    }

    pub fn growth(&self) -> Growth {
        match self.model {
            ModelConfig::FeedForward { .. } => Growth::Prefix,
            ModelConfig::EncoderDecoder { growth, .. } => growth,
        }
    }

    pub fn make_schedule(&self) -> Result<StageSchedule> {
        make_schedule(self.rounds, self.stages, self.schedule.as_deref(), &self.warmup)
    }

    pub fn fed_options(&self) -> FedOptions {
        let t = &self.training;
        FedOptions {
            seed: self.seed,
            strategy: self.strategy,
            clients_per_round: t.clients_per_round,
            local: t.local_work(),
            batch_size: t.batch_size,
            sgd: Sgd {
                lr: t.lr,
                momentum: t.momentum,
                weight_decay: t.weight_decay,
            },
            mu: t.mu,
            lr_schedule: t.lr_schedule,
            stepsize: t.stepsize,
            server: self.server,
            codec: self.codec.clone(),
            downlink_codec: self.downlink_codec,
            index_overhead: self.index_overhead,
            per_tensor_codec: self.per_tensor_codec,
            eval_interval: self.eval_interval,
            diag_interval: self.diag_interval,
            probe_batch: self.probe_batch,
            parallel: t.parallel,
        }
    }

    /// Every failed cross-field rule, each naming its field path.
    pub fn validate(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let mut bad = |path: &str, msg: String| issues.push(Issue::new(path, msg));
        if self.rounds == 0 {
            bad("rounds", "must be at least 1".into());
        }
        if self.stages == 0 {
            bad("stages", "must be at least 1".into());
        }
        match &self.model {
            ModelConfig::FeedForward { input, blocks, head } => {
                if blocks.len() != self.stages {
                    bad(
                        "model.blocks",
                        format!("{} blocks given for {} stages", blocks.len(), self.stages),
                    );
                }
                match self.dataset {
                    DatasetConfig::Blobs { dim, classes, .. } => {
                        if input.as_slice() != [dim] {
                            bad(
                                "model.input",
                                format!("{input:?} does not match dataset dimension {dim}"),
                            );
                        }
                        if let Some(out) = head_output(input, blocks, head, &mut bad) {
                            if out != [classes] {
                                bad("model.head", format!("produces {out:?}, dataset has {classes} classes"));
                            }
                        }
                    }
                    DatasetConfig::Csv { .. } => {
                        head_output(input, blocks, head, &mut bad);
                    }
                    DatasetConfig::Seg1d { .. } => {
                        bad(
                            "model.topology",
                            "segmentation data needs an encoder-decoder model".into(),
                        );
                    }
                }
            }
            ModelConfig::EncoderDecoder { growth, channels, .. } => {
                if channels.len() + 1 != self.stages {
                    bad(
                        "model.channels",
                        format!(
                            "{} levels give {} stages, expected {}",
                            channels.len(),
                            channels.len() + 1,
                            self.stages
                        ),
                    );
                }
                if *growth == Growth::Prefix {
                    bad(
                        "model.growth",
                        "encoder-decoder growth is symmetric or asymmetric".into(),
                    );
                }
                if !matches!(self.dataset, DatasetConfig::Seg1d { .. }) {
                    bad("model.topology", "encoder-decoder models need seg1d data".into());
                } else if let Architecture::EncoderDecoder(spec) = self.architecture() {
                    if let Err(msg) = spec.validate() {
                        bad("model", msg);
                    }
                }
            }
        }
        if self.rounds > 0 && self.stages > 0 {
            if let Err(e) = self.make_schedule() {
                let path = if self.schedule.is_some() {
                    "schedule"
                } else if !self.warmup.is_empty() {
                    "warmup"
                } else {
                    "rounds"
                };
                bad(path, e.to_string());
            }
        }
        match &self.dataset {
            DatasetConfig::Blobs {
                classes,
                dim,
                per_class,
                spread,
            } => {
                if *classes == 0 || *dim == 0 || *per_class == 0 {
                    bad("dataset", "classes, dim and per_class must be positive".into());
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    bad("dataset.spread", format!("{spread} must be finite and non-negative"));
                }
            }
            DatasetConfig::Seg1d { length, samples } => {
                if *length < 16 {
                    bad("dataset.length", format!("{length} is below 16"));
                }
                if *samples == 0 {
                    bad("dataset.samples", "must be positive".into());
                }
            }
            DatasetConfig::Csv { .. } => {}
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            bad("test_fraction", format!("{} outside (0, 1)", self.test_fraction));
        }
        let p = &self.partition;
        if p.clients == 0 {
            bad("partition.clients", "must be at least 1".into());
        }
        match (p.kind, p.beta) {
            (PartitionName::Dirichlet, None) => bad("partition.beta", "required for dirichlet".into()),
            (PartitionName::Dirichlet, Some(beta)) if !(beta > 0.0 && beta.is_finite()) => {
                bad("partition.beta", format!("{beta} must be positive"))
            }
            (PartitionName::Iid, Some(_)) => bad("partition.beta", "only used by dirichlet".into()),
            _ => {}
        }
        if let Some(n) = self.dataset.size() {
            let n_test = ((n as f64 * self.test_fraction).round() as usize).clamp(1, n.max(2) - 1);
            let n_train = n.saturating_sub(n_test);
            if p.clients > n_train {
                bad(
                    "partition.clients",
                    format!("{} clients for {n_train} training samples", p.clients),
                );
            }
        }
        let t = &self.training;
        if t.clients_per_round == 0 || t.clients_per_round > p.clients {
            bad(
                "training.clients_per_round",
                format!("{} outside [1, {}]", t.clients_per_round, p.clients),
            );
        }
        if t.local_steps.is_some() && t.local_epochs.is_some() {
            bad("training.local_epochs", "set either local_steps or local_epochs".into());
        }
        if t.local_steps == Some(0) {
            bad("training.local_steps", "must be at least 1".into());
        }
        if let Some(e) = t.local_epochs {
            if !(e > 0.0 && e.is_finite()) {
                bad("training.local_epochs", format!("{e} must be positive"));
            }
        }
        if t.batch_size == 0 {
            bad("training.batch_size", "must be positive".into());
        }
        for (name, v) in [
            ("lr", t.lr),
            ("momentum", t.momentum),
            ("weight_decay", t.weight_decay),
            ("mu", t.mu),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad(
                    &format!("training.{name}"),
                    format!("{v} must be finite and non-negative"),
                );
            }
        }
        if t.momentum >= 1.0 {
            bad("training.momentum", "must be below 1".into());
        }
        if t.stepsize == StepsizeMode::Theory && (p.clients != 1 || t.clients_per_round != 1) {
            bad("training.stepsize", "theory stepsize needs exactly one client".into());
        }
        if let ServerKind::Fedadam { lr, beta1, beta2, tau } = self.server {
            if !(lr > 0.0 && lr.is_finite()) {
                bad("server.lr", format!("{lr} must be positive"));
            }
            for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                if !(0.0..1.0).contains(&b) {
                    bad(&format!("server.{name}"), format!("{b} outside [0, 1)"));
                }
            }
            if !(tau > 0.0 && tau.is_finite()) {
                bad("server.tau", format!("{tau} must be positive"));
            }
        }
        if self.eval_interval == 0 {
            bad("eval_interval", "must be at least 1".into());
        }
        if self.probe_batch == 0 {
            bad("probe_batch", "must be at least 1".into());
        }
        issues
    }

    /// Generates or loads the data, splits and partitions it and builds the
    /// federation. Relative CSV paths resolve against `base`.
    pub fn build(&self, base: Option<&FsPath>) -> Result<Federation> {
        let issues = self.validate();
        if !issues.is_empty() {
            return Err(Error::Config(issues));
        }
        let data = self.dataset.load(self.seed, base)?;
        let (train, test) = data.split(self.test_fraction, self.seed)?;
        let shards = partition(&train, self.partition.kind(), self.partition.clients, self.seed)?;
        Federation::new(
            self.fed_options(),
            &self.architecture(),
            self.growth(),
            self.make_schedule()?,
            train,
            test,
            shards,
        )
    }
}

fn head_output(
    input: &[usize],
    blocks: &[Vec<LayerKind>],
    head: &[LayerKind],
    bad: &mut impl FnMut(&str, String),
) -> Option<Vec<usize>> {
    let mut shape = input.to_vec();
    for (b, block) in blocks.iter().enumerate() {
        if block.is_empty() {
            bad("model.blocks", format!("block {} is empty", b + 1));
            return None;
        }
        for layer in block {
            match layer.output_shape(&shape) {
                Ok(s) => shape = s,
                Err(msg) => {
                    bad("model.blocks", format!("block {}: {msg}", b + 1));
                    return None;
                }
            }
        }
    }
    for layer in head {
        match layer.output_shape(&shape) {
            Ok(s) => shape = s,
            Err(msg) => {
                bad("model.head", msg);
                return None;
            }
        }
    }
    Some(shape)
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map_or(0, |span| text[..span.start.min(text.len())].matches('\n').count() + 1);
    Error::Parse {
        path: PathBuf::from("<config>"),
        line,
        message: e.message().to_string(),
    }
}

/// Sets a dotted `key=value` in the document. The value is read as a TOML
/// value when possible and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::InvalidArgument(format!("bad override key '{key}'")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidArgument(format!("override '{key}': '{part}' is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
rounds = 20
stages = 2

[dataset]
kind = "blobs"
classes = 3
dim = 4
per_class = 20
spread = 0.5

[model]
topology = "feed-forward"
input = [4]
blocks = [["dense(4,8)", "relu"], ["dense(8,8)", "relu"]]
head = ["dense(8,3)"]
"#;

    #[test]
    fn minimal_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.strategy, UpdateStrategy::Progressive);
        assert!(cfg.codec.is_identity());
        assert_eq!(cfg.eval_interval, 1);
        assert_eq!(cfg.partition.clients, 1);
        assert_eq!(cfg.server, ServerKind::Fedavg);
    }

    #[test]
    fn stage_block_mismatch_names_blocks() {
        let err = ExperimentConfig::parse(MINIMAL, &["stages=3".into()]).unwrap_err();
        assert!(err.issue_paths().contains(&"model.blocks"), "{err}");
    }

    #[test]
    fn too_many_sampled_clients() {
        let err = ExperimentConfig::parse(
            MINIMAL,
            &["partition.clients=4".into(), "training.clients_per_round=5".into()],
        )
        .unwrap_err();
        assert!(err.issue_paths().contains(&"training.clients_per_round"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::parse(&format!("{MINIMAL}\nbogus = 1\n"), &[]).is_err());
        assert!(ExperimentConfig::parse(MINIMAL, &["training.lrr=0.1".into()]).is_err());
    }

    #[test]
    fn overrides_parse_values() {
        let cfg = ExperimentConfig::parse(
            MINIMAL,
            &[
                "codec=lq8+sp25".into(),
                "strategy=\"layerwise\"".into(),
                "training.lr=0.05".into(),
                "server.kind=fedadam".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.codec.to_string(), "lq8+sp25");
        assert_eq!(cfg.strategy, UpdateStrategy::Layerwise);
        assert_eq!(cfg.training.lr, 0.05);
        assert_eq!(cfg.server, ServerKind::fedadam());
    }

    #[test]
    fn emit_round_trip() {
        let cfg = ExperimentConfig::parse(
            MINIMAL,
            &[
                "codec=lq8".into(),
                "warmup=[0, 2]".into(),
                "training.local_epochs=1.5".into(),
                "partition.kind=dirichlet".into(),
                "partition.beta=0.5".into(),
                "partition.clients=3".into(),
            ],
        )
        .unwrap();
        let text = cfg.emit().unwrap();
        assert_eq!(ExperimentConfig::parse(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn parse_error_reports_line() {
        match ExperimentConfig::parse("seed = 1\nrounds = = 2\n", &[]).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn builds_a_federation() {
        let cfg = ExperimentConfig::parse(MINIMAL, &[]).unwrap();
        let fed = cfg.build(None).unwrap();
        assert_eq!(fed.schedule().lengths(), &[5, 15]);
    }
}
