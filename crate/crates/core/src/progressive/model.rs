//! Networks split into growable stages.
//!
//! A [`StagedModel`] owns every parameter of the complete network from the
//! start (so full-model forward passes are always possible) and tracks which
//! stage is active. Stage `s` trains the sub-model made of blocks `1..=s`
//! plus the supervision head of stage `s`.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, GraphBuilder, Layer, LayerKind, NodeId, ParamId, ParamSource, ParamSourceMut, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Growth {
    /// Feed-forward: stage `s` holds the first `s` blocks.
    Prefix,
    /// Encoder-decoder, outer levels first.
    Symmetric,
    /// Encoder-decoder, full encoder first, then decoder levels inward-out.
    Asymmetric,
}

/// Encoder-decoder over 1-D signals shaped `(in_channels, length)`.
///
/// Level `i` has an encoder `conv(k) + relu` producing `channels[i]`
/// channels and a decoder `conv(k) + relu` reading the concatenation of the
/// level's skip features with the upsampled output of the level below. The
/// bottleneck is two `conv(k) + relu` layers; the output head is a 1x1 conv.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub length: usize,
    pub channels: Vec<usize>,
    pub bottleneck: usize,
    pub kernel: usize,
    pub out_channels: usize,
}

impl UNetSpec {
    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.channels.is_empty() {
            return Err("at least one encoder level is required".into());
        }
        if self.channels.contains(&0) || self.bottleneck == 0 {
            return Err("channel widths must be positive".into());
        }
        if self.kernel.is_multiple_of(2) {
            return Err(format!("kernel {} must be odd", self.kernel));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err("input and output channels must be positive".into());
        }
        let factor = 1usize << self.depth();
        if self.length == 0 || !self.length.is_multiple_of(factor) {
            return Err(format!(
                "length {} must be a positive multiple of {factor}",
                self.length
            ));
        }
        Ok(())
    }

    fn conv(&self, c_in: usize, c_out: usize) -> LayerKind {
        LayerKind::conv1d(c_in, c_out, self.kernel, self.kernel / 2)
    }

    /// Channels arriving from below into decoder level `lvl` (1-based).
    fn inner_channels(&self, lvl: usize) -> usize {
        if lvl == self.depth() {
            self.bottleneck
        } else {
            self.channels[lvl]
        }
    }

    fn enc_kinds(&self, lvl: usize) -> Vec<LayerKind> {
        let c_in = if lvl == 1 {
            self.in_channels
        } else {
            self.channels[lvl - 2]
        };
        vec![self.conv(c_in, self.channels[lvl - 1]), LayerKind::Relu]
    }

    fn dec_kinds(&self, lvl: usize) -> Vec<LayerKind> {
        let c = self.channels[lvl - 1];
        vec![self.conv(c + self.inner_channels(lvl), c), LayerKind::Relu]
    }

    fn bottleneck_kinds(&self) -> Vec<LayerKind> {
        let b = self.bottleneck;
        vec![
            self.conv(self.channels[self.depth() - 1], b),
            LayerKind::Relu,
            self.conv(b, b),
            LayerKind::Relu,
        ]
    }

    fn final_head_kinds(&self) -> Vec<LayerKind> {
        vec![LayerKind::conv1d(self.channels[0], self.out_channels, 1, 0)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    FeedForward {
        input: Vec<usize>,
        blocks: Vec<Vec<LayerKind>>,
        head: Vec<LayerKind>,
    },
    EncoderDecoder(UNetSpec),
}

impl Architecture {
    /// Stage count implied by the architecture.
    pub fn stages(&self) -> usize {
        match self {
            Architecture::FeedForward { blocks, .. } => blocks.len(),
            Architecture::EncoderDecoder(spec) => spec.depth() + 1,
        }
    }
}

/// Which part of the network a forward pass runs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    /// Sub-model `M^s`: blocks `1..=s` and the head of stage `s`.
    Sub(usize),
    /// The complete network with its final head.
    Full,
    /// The complete network plus a second output from the head of stage `s`.
    Mixed(usize),
}

/// Slot-based parameter storage; freed slots stay empty so ids are stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    slots: Vec<Option<Tensor>>,
}

impl ParamStore {
    pub fn alloc(&mut self, t: Tensor) -> ParamId {
        self.slots.push(Some(t));
        ParamId(self.slots.len() - 1)
    }

    pub fn free(&mut self, id: ParamId) {
        self.slots[id.0] = None;
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn set(&mut self, id: ParamId, t: Tensor) {
        self.slots[id.0] = Some(t);
    }

    /// Ids of live parameters, ascending.
    pub fn ids(&self) -> Vec<ParamId> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.param(id).numel()).sum()
    }

    /// Concatenated values of `ids` in the given order.
    pub fn flatten(&self, ids: &[ParamId]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count(ids));
        for &id in ids {
            out.extend_from_slice(self.param(id).data());
        }
        out
    }
}

impl ParamSource for ParamStore {
    fn param(&self, id: ParamId) -> &Tensor {
        self.slots[id.0]
            .as_ref()
            .unwrap_or_else(|| panic!("parameter {} was discarded", id.0))
    }
}

impl ParamSourceMut for ParamStore {
    fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.slots[id.0]
            .as_mut()
            .unwrap_or_else(|| panic!("parameter {} was discarded", id.0))
    }
}

type Seq = Vec<Layer>;

#[derive(Debug, Clone, PartialEq)]
enum Body {
    FeedForward {
        input: Vec<usize>,
        blocks: Vec<Seq>,
        /// Per-sample output shape of each block.
        block_shapes: Vec<Vec<usize>>,
    },
    UNet {
        spec: UNetSpec,
        enc: Vec<Seq>,
        bottleneck: Seq,
        dec: Vec<Seq>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagedModel {
    growth: Growth,
    stages: usize,
    active: usize,
    store: ParamStore,
    body: Body,
    final_head: Seq,
    /// Intermediate heads `G_1..G_{S-1}`; `None` when absent or discarded.
    aux_heads: Vec<Option<Seq>>,
}

fn instantiate<R: Rng + ?Sized>(store: &mut ParamStore, kinds: &[LayerKind], rng: &mut R) -> Seq {
    kinds
        .iter()
        .map(|kind| Layer {
            kind: *kind,
            params: kind.init_params(rng).into_iter().map(|t| store.alloc(t)).collect(),
        })
        .collect()
}

fn seq_ids(seq: &Seq) -> impl Iterator<Item = ParamId> + '_ {
    seq.iter().flat_map(|l| l.params.iter().copied())
}

fn seq_count(kinds: &[LayerKind]) -> usize {
    kinds.iter().map(LayerKind::param_count).sum()
}

fn apply(b: &mut GraphBuilder, mut x: NodeId, seq: &Seq) -> Result<NodeId> {
    for layer in seq {
        x = b.layer(x, layer.clone())?;
    }
    Ok(x)
}

impl StagedModel {
    /// Initializes every block and the final head from `rng`, plus the
    /// stage-1 head when the growth order uses intermediate heads. The model
    /// starts at stage 1.
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, growth: Growth, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::default();
        let (body, final_head) = match (arch, growth) {
            (Architecture::FeedForward { input, blocks, head }, Growth::Prefix) => {
                if blocks.is_empty() {
                    return Err(Error::InvalidArgument("at least one block is required".into()));
                }
                if blocks.iter().any(Vec::is_empty) {
                    return Err(Error::InvalidArgument("blocks must not be empty".into()));
                }
                let mut shape = input.clone();
                let mut block_shapes = Vec::new();
                let mut seqs = Vec::new();
                for kinds in blocks {
                    for k in kinds {
                        shape = k.output_shape(&shape).map_err(Error::InvalidArgument)?;
                    }
                    block_shapes.push(shape.clone());
                    seqs.push(instantiate(&mut store, kinds, rng));
                }
                let mut out = shape.clone();
                for k in head {
                    out = k.output_shape(&out).map_err(Error::InvalidArgument)?;
                }
                if out.len() != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "final head must produce flat logits, got {out:?}"
                    )));
                }
                let final_head = instantiate(&mut store, head, rng);
                (
                    Body::FeedForward {
                        input: input.clone(),
                        blocks: seqs,
                        block_shapes,
                    },
                    final_head,
                )
            }
            (Architecture::EncoderDecoder(spec), Growth::Symmetric | Growth::Asymmetric) => {
                spec.validate().map_err(Error::InvalidArgument)?;
                let d = spec.depth();
                let enc = (1..=d)
                    .map(|l| instantiate(&mut store, &spec.enc_kinds(l), rng))
                    .collect();
                let bottleneck = instantiate(&mut store, &spec.bottleneck_kinds(), rng);
                let dec = (1..=d)
                    .map(|l| instantiate(&mut store, &spec.dec_kinds(l), rng))
                    .collect();
                let final_head = instantiate(&mut store, &spec.final_head_kinds(), rng);
                (
                    Body::UNet {
                        spec: spec.clone(),
                        enc,
                        bottleneck,
                        dec,
                    },
                    final_head,
                )
            }
            (_, g) => {
                return Err(Error::InvalidArgument(format!(
                    "growth {g:?} does not fit this topology"
                )))
            }
        };
        let stages = arch.stages();
        let mut model = Self {
            growth,
            stages,
            active: 1,
            store,
            body,
            final_head,
            aux_heads: vec![None; stages - 1],
        };
        if stages > 1 && model.uses_aux_heads() {
            model.create_aux_head(1, rng)?;
        }
        Ok(model)
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn active_stage(&self) -> usize {
        self.active
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Whether stages before the last supervise through their own head.
    pub fn uses_aux_heads(&self) -> bool {
        self.growth != Growth::Symmetric
    }

    fn check_stage(&self, s: usize) -> Result<()> {
        if s == 0 || s > self.stages {
            return Err(Error::Stage(format!("stage {s} outside [1, {}]", self.stages)));
        }
        Ok(())
    }

    /// Layer kinds of the head that supervises stage `s`.
    pub fn head_kinds(&self, s: usize) -> Result<Vec<LayerKind>> {
        self.check_stage(s)?;
        if s == self.stages || !self.uses_aux_heads() {
            return Ok(self.final_head.iter().map(|l| l.kind).collect());
        }
        Ok(match &self.body {
            Body::FeedForward { block_shapes, .. } => {
                let shape = &block_shapes[s - 1];
                let mut kinds = Vec::new();
                if shape.len() > 1 {
                    kinds.push(LayerKind::AvgPoolGlobal);
                }
                kinds.push(LayerKind::dense(shape[0], self.classes()));
                kinds
            }
            Body::UNet { spec, .. } => {
                // Stage s < S taps the bottleneck (s = 1) or decoder level
                // D - s + 2, then upsamples back to full resolution.
                let d = spec.depth();
                let (channels, level) = if s == 1 {
                    (spec.bottleneck, d + 1)
                } else {
                    let lvl = d + 2 - s;
                    (spec.channels[lvl - 1], lvl)
                };
                let mut kinds = vec![LayerKind::conv1d(channels, spec.out_channels, 1, 0)];
                let factor = 1usize << (level - 1);
                if factor > 1 {
                    kinds.push(LayerKind::Upsample { factor });
                }
                kinds
            }
        })
    }

    /// Number of output logits (classes) of the final head.
    fn classes(&self) -> usize {
        match &self.body {
            Body::FeedForward { block_shapes, .. } => {
                let mut shape = block_shapes.last().cloned().unwrap_or_default();
                for l in &self.final_head {
                    shape = l.kind.output_shape(&shape).expect("validated at construction");
                }
                shape[0]
            }
            Body::UNet { spec, .. } => spec.out_channels,
        }
    }

    fn block_kinds(&self, i: usize) -> Vec<Vec<LayerKind>> {
        self.block_seqs(i)
            .into_iter()
            .map(|seq| seq.iter().map(|l| l.kind).collect())
            .collect()
    }

    /// Layer sequences making up block `i` (1-based).
    fn block_seqs(&self, i: usize) -> Vec<&Seq> {
        match (&self.body, self.growth) {
            (Body::FeedForward { blocks, .. }, _) => vec![&blocks[i - 1]],
            (
                Body::UNet {
                    enc,
                    bottleneck,
                    dec,
                    spec,
                },
                Growth::Symmetric,
            ) => {
                if i <= spec.depth() {
                    vec![&enc[i - 1], &dec[i - 1]]
                } else {
                    vec![bottleneck]
                }
            }
            (
                Body::UNet {
                    enc,
                    bottleneck,
                    dec,
                    spec,
                },
                _,
            ) => {
                if i == 1 {
                    enc.iter().chain(std::iter::once(bottleneck)).collect()
                } else {
                    vec![&dec[spec.depth() + 1 - i]]
                }
            }
        }
    }

    /// Parameter ids of block `i` (1-based).
    pub fn block_params(&self, i: usize) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.block_seqs(i).into_iter().flat_map(seq_ids).collect();
        ids.sort_unstable();
        ids
    }

    /// Parameter ids of blocks `1..=s`.
    pub fn prefix_params(&self, s: usize) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = (1..=s).flat_map(|i| self.block_params(i)).collect();
        ids.sort_unstable();
        ids
    }

    fn head_seq(&self, s: usize) -> Result<&Seq> {
        if s == self.stages || !self.uses_aux_heads() {
            return Ok(&self.final_head);
        }
        self.aux_heads[s - 1]
            .as_ref()
            .ok_or_else(|| Error::Stage(format!("head of stage {s} is not available")))
    }

    /// Parameter ids of the head supervising stage `s`.
    pub fn head_params(&self, s: usize) -> Result<Vec<ParamId>> {
        self.check_stage(s)?;
        Ok(seq_ids(self.head_seq(s)?).collect())
    }

    pub fn final_head_params(&self) -> Vec<ParamId> {
        seq_ids(&self.final_head).collect()
    }

    /// Parameter ids of every intermediate head currently alive.
    pub fn live_aux_heads(&self) -> Vec<usize> {
        (1..self.stages).filter(|&s| self.aux_heads[s - 1].is_some()).collect()
    }

    /// Exact count of scalars in sub-model `M^s` (blocks `1..=s` plus the
    /// head of stage `s`), computed from layer shapes alone.
    pub fn submodel_param_count(&self, s: usize) -> Result<usize> {
        self.check_stage(s)?;
        let blocks: usize = (1..=s)
            .flat_map(|i| self.block_kinds(i))
            .map(|kinds| seq_count(&kinds))
            .sum();
        Ok(blocks + seq_count(&self.head_kinds(s)?))
    }

    /// Scalars in the complete network with its final head.
    pub fn full_param_count(&self) -> usize {
        let blocks: usize = (1..=self.stages)
            .flat_map(|i| self.block_kinds(i))
            .map(|kinds| seq_count(&kinds))
            .sum();
        blocks + seq_count(&self.final_head.iter().map(|l| l.kind).collect::<Vec<_>>())
    }

    fn create_aux_head<R: Rng + ?Sized>(&mut self, s: usize, rng: &mut R) -> Result<()> {
        let kinds = self.head_kinds(s)?;
        let seq = instantiate(&mut self.store, &kinds, rng);
        self.aux_heads[s - 1] = Some(seq);
        Ok(())
    }

    fn discard_aux_head(&mut self, s: usize) {
        if let Some(seq) = self.aux_heads[s - 1].take() {
            for id in seq_ids(&seq) {
                self.store.free(id);
            }
        }
    }

    /// Creates the head of stage `s` if it does not exist yet.
    pub fn ensure_head<R: Rng + ?Sized>(&mut self, s: usize, rng: &mut R) -> Result<()> {
        self.check_stage(s)?;
        if s < self.stages && self.uses_aux_heads() && self.aux_heads[s - 1].is_none() {
            self.create_aux_head(s, rng)?;
        }
        Ok(())
    }

    fn reinit_seq<R: Rng + ?Sized>(&mut self, seqs: Vec<Seq>, rng: &mut R) {
        for seq in seqs {
            for layer in seq {
                for (id, t) in layer.params.iter().zip(layer.kind.init_params(rng)) {
                    self.store.set(*id, t);
                }
            }
        }
    }

    /// Moves from stage `s` to `s + 1` as in progressive training: blocks
    /// `1..=s` keep their values, block `s + 1` and the next head are freshly
    /// initialized from `rng`, and the head of stage `s` is discarded.
    pub fn grow<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let s = self.active;
        if s >= self.stages {
            return Err(Error::Stage(format!(
                "cannot grow past the final stage {}",
                self.stages
            )));
        }
        let next_block: Vec<Seq> = self.block_seqs(s + 1).into_iter().cloned().collect();
        self.reinit_seq(next_block, rng);
        if self.uses_aux_heads() {
            self.discard_aux_head(s);
            if s + 1 < self.stages {
                self.create_aux_head(s + 1, rng)?;
            } else {
                let head = self.final_head.clone();
                self.reinit_seq(vec![head], rng);
            }
        }
        self.active = s + 1;
        Ok(())
    }

    /// Moves to stage `s + 1` without touching any existing parameter.
    /// Used by strategies that always run the complete network. The head of
    /// stage `s` is discarded; a head for the new stage is created only when
    /// `with_head` is set.
    pub fn advance<R: Rng + ?Sized>(&mut self, with_head: bool, rng: &mut R) -> Result<()> {
        let s = self.active;
        if s >= self.stages {
            return Err(Error::Stage(format!(
                "cannot advance past the final stage {}",
                self.stages
            )));
        }
        if self.uses_aux_heads() {
            self.discard_aux_head(s);
            if with_head && s + 1 < self.stages {
                self.create_aux_head(s + 1, rng)?;
            }
        }
        self.active = s + 1;
        Ok(())
    }

    /// Jumps to stage `s`; its head must already exist.
    pub fn set_active_stage(&mut self, s: usize) -> Result<()> {
        self.check_stage(s)?;
        self.head_seq(s)?;
        self.active = s;
        Ok(())
    }

    /// Forward graph for the requested path. Stage heads must exist.
    pub fn graph(&self, path: Path) -> Result<Graph> {
        match path {
            Path::Sub(s) | Path::Mixed(s) => self.check_stage(s)?,
            Path::Full => {}
        }
        match &self.body {
            Body::FeedForward { input, blocks, .. } => {
                let (mut b, x) = GraphBuilder::new(input.clone());
                let depth = match path {
                    Path::Sub(s) => s,
                    _ => self.stages,
                };
                let mut h = x;
                let mut tap = None;
                for (i, block) in blocks.iter().take(depth).enumerate() {
                    h = apply(&mut b, h, block)?;
                    if let Path::Mixed(s) = path {
                        if i + 1 == s {
                            tap = Some(h);
                        }
                    }
                }
                let mut outputs = Vec::new();
                match path {
                    Path::Sub(s) => outputs.push(apply(&mut b, h, self.head_seq(s)?)?),
                    Path::Full => outputs.push(apply(&mut b, h, &self.final_head)?),
                    Path::Mixed(s) => {
                        outputs.push(apply(&mut b, h, &self.final_head)?);
                        if s < self.stages {
                            let t = tap.expect("tap recorded for s <= S");
                            outputs.push(apply(&mut b, t, self.head_seq(s)?)?);
                        }
                    }
                }
                Ok(b.finish(outputs))
            }
            Body::UNet {
                spec,
                enc,
                bottleneck,
                dec,
            } => self.unet_graph(path, spec, enc, bottleneck, dec),
        }
    }

    fn unet_graph(&self, path: Path, spec: &UNetSpec, enc: &[Seq], bottleneck: &Seq, dec: &[Seq]) -> Result<Graph> {
        let d = spec.depth();
        let pool = Layer {
            kind: LayerKind::MaxPool { kernel: 2 },
            params: Vec::new(),
        };
        let up = Layer {
            kind: LayerKind::Upsample { factor: 2 },
            params: Vec::new(),
        };
        // Which encoder levels, whether the bottleneck, and the lowest
        // decoder level to build.
        let (enc_levels, with_bottleneck, dec_stop) = match (self.growth, path) {
            (_, Path::Full) => (d, true, 1),
            (Growth::Symmetric, Path::Sub(s) | Path::Mixed(s)) if s <= d => (s, false, 1),
            (Growth::Symmetric, _) => (d, true, 1),
            (_, Path::Sub(s)) if s < self.stages => (d, true, d + 2 - s),
            (_, _) => (d, true, 1),
        };
        let (mut b, x) = GraphBuilder::new(vec![spec.in_channels, spec.length]);
        let mut skips = Vec::with_capacity(enc_levels);
        let mut h = x;
        for (i, seq) in enc.iter().take(enc_levels).enumerate() {
            if i > 0 {
                h = b.layer(h, pool.clone())?;
            }
            h = apply(&mut b, h, seq)?;
            skips.push(h);
        }
        // taps[lvl] = output at decoder level lvl; taps[d + 1] = bottleneck.
        let mut taps = vec![None; d + 2];
        let mut inner = None;
        if with_bottleneck {
            h = b.layer(h, pool.clone())?;
            h = apply(&mut b, h, bottleneck)?;
            taps[d + 1] = Some(h);
            inner = Some(h);
        }
        for lvl in (dec_stop..=enc_levels).rev() {
            let skip = skips[lvl - 1];
            let below = match inner {
                Some(n) => b.layer(n, up.clone())?,
                None => b.zeros_like(skip, spec.inner_channels(lvl)),
            };
            let cat = b.concat(skip, below)?;
            h = apply(&mut b, cat, &dec[lvl - 1])?;
            taps[lvl] = Some(h);
            inner = Some(h);
        }
        let tap_for = |s: usize| -> NodeId {
            let lvl = if s == 1 { d + 1 } else { d + 2 - s };
            taps[lvl].expect("tap level built")
        };
        let mut outputs = Vec::new();
        match (self.growth, path) {
            (Growth::Symmetric, _) | (_, Path::Full) => {
                outputs.push(apply(&mut b, h, &self.final_head)?);
            }
            (_, Path::Sub(s)) => {
                let head = self.head_seq(s)?;
                let src = if s == self.stages { h } else { tap_for(s) };
                outputs.push(apply(&mut b, src, head)?);
            }
            (_, Path::Mixed(s)) => {
                outputs.push(apply(&mut b, h, &self.final_head)?);
                if s < self.stages {
                    outputs.push(apply(&mut b, tap_for(s), self.head_seq(s)?)?);
                }
            }
        }
        Ok(b.finish(outputs))
    }

    /// Ids of every parameter reachable on `path`, ascending.
    pub fn path_params(&self, path: Path) -> Result<Vec<ParamId>> {
        Ok(self.graph(path)?.param_ids())
    }

    /// Coordinates of the restriction used by the convergence diagnostics:
    /// blocks `1..=s` for `s < S`, every full-model parameter at `s = S`.
    pub fn restriction_params(&self, s: usize) -> Result<Vec<ParamId>> {
        self.check_stage(s)?;
        if s == self.stages {
            self.path_params(Path::Full)
        } else {
            Ok(self.prefix_params(s))
        }
    }

    pub fn all_block_params(&self) -> BTreeSet<ParamId> {
        (1..=self.stages).flat_map(|i| self.block_params(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn toy_mlp() -> Architecture {
        Architecture::FeedForward {
            input: vec![4],
            blocks: vec![
                vec![LayerKind::dense(4, 8), LayerKind::Relu],
                vec![LayerKind::dense(8, 8), LayerKind::Relu],
            ],
            head: vec![LayerKind::dense(8, 3)],
        }
    }

    fn unet(growth: Growth) -> StagedModel {
        let spec = UNetSpec {
            in_channels: 1,
            length: 16,
            channels: vec![4, 8],
            bottleneck: 16,
            kernel: 3,
            out_channels: 1,
        };
        StagedModel::new(
            &Architecture::EncoderDecoder(spec),
            growth,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap()
    }

    #[test]
    fn stage_one_count_of_toy_mlp() {
        let m = StagedModel::new(&toy_mlp(), Growth::Prefix, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // dense(4,8) = 40, head dense(8,3) = 27.
        assert_eq!(m.submodel_param_count(1).unwrap(), 67);
        // 40 + 72 + 27
        assert_eq!(m.submodel_param_count(2).unwrap(), 139);
        assert_eq!(m.submodel_param_count(2).unwrap(), m.full_param_count());
        let g = m.graph(Path::Sub(1)).unwrap();
        assert_eq!(m.store().count(&g.param_ids()), 67);
    }

    #[test]
    fn grow_copies_shared_blocks() {
        let mut m = StagedModel::new(&toy_mlp(), Growth::Prefix, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before: Vec<u64> = m
            .store()
            .flatten(&m.block_params(1))
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let old_head = m.head_params(1).unwrap();
        m.grow(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let after: Vec<u64> = m
            .store()
            .flatten(&m.block_params(1))
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(before, after);
        assert!(old_head.iter().all(|&id| m.store().get(id).is_none()));
        assert_eq!(m.active_stage(), 2);
        assert!(m.grow(&mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn grow_is_deterministic_per_seed() {
        let arch = toy_mlp();
        let mut a = StagedModel::new(&arch, Growth::Prefix, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut b = StagedModel::new(&arch, Growth::Prefix, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        a.grow(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        b.grow(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixed_path_has_two_outputs() {
        let m = StagedModel::new(&toy_mlp(), Growth::Prefix, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.graph(Path::Mixed(1)).unwrap().num_outputs(), 2);
        assert_eq!(m.graph(Path::Mixed(2)).unwrap().num_outputs(), 1);
        assert_eq!(m.graph(Path::Full).unwrap().num_outputs(), 1);
    }

    #[test]
    fn unet_graphs_are_shape_valid_at_every_stage() {
        for growth in [Growth::Symmetric, Growth::Asymmetric] {
            let mut m = unet(growth);
            for s in 1..=m.stages() {
                let g = m.graph(Path::Sub(s)).unwrap();
                assert_eq!(g.output_shapes(), vec![&[1usize, 16][..]], "{growth:?} stage {s}");
                assert_eq!(m.store().count(&g.param_ids()), m.submodel_param_count(s).unwrap());
                if s < m.stages() {
                    m.grow(&mut ChaCha8Rng::seed_from_u64(s as u64)).unwrap();
                }
            }
        }
    }

    #[test]
    fn symmetric_starts_smaller_than_asymmetric() {
        let sym = unet(Growth::Symmetric);
        let asym = unet(Growth::Asymmetric);
        // enc1 conv(1->4) = 16, dec1 conv(12->4) = 148, head conv1x1(4->1) = 5.
        assert_eq!(sym.submodel_param_count(1).unwrap(), 16 + 148 + 5);
        assert!(sym.submodel_param_count(1).unwrap() < asym.submodel_param_count(1).unwrap());
        assert_eq!(sym.full_param_count(), asym.full_param_count());
    }

    #[test]
    fn topology_growth_mismatch_rejected() {
        assert!(StagedModel::new(&toy_mlp(), Growth::Symmetric, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
