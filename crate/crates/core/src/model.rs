//! Minimal CTR model: per-field (masked) embeddings, concatenation, an MLP
//! head and a sigmoid output, trained with plain mini-batch SGD on the
//! logistic loss.
//!
//! Every field follows its configured [`Policy`]. Masked embeddings keep
//! their full length `D` (zeros past the kept prefix), so the head input
//! width is always the sum of the field dimensions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::amtl::{prefix_mask, AmtlGrads, AmtlParams, MaskForward, SelectionMode};
use crate::checkpoint::{Checkpoint, ParamSection, WarmParts};
use crate::config::{ModelConfig, Policy};
use crate::embedding::{EmbeddingTable, RowGradients};
use crate::error::{Error, Result};
use crate::freq::{FrequencyStats, FREQ_FEATURES};
use crate::linalg::{add_scaled, sigmoid};
use crate::mlp::{Mlp, MlpGrads};

/// Probability clamp used by [`loss`].
pub const LOSS_CLAMP: f64 = 1e-12;

/// One labelled example: a feature-value id per configured field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub label: u8,
    pub ids: Vec<usize>,
}

impl TrainingExample {
    pub fn new(label: u8, ids: Vec<usize>) -> Self {
        Self { label, ids }
    }
}

/// Binary cross-entropy with `p` clamped to `[1e-12, 1 - 1e-12]`.
pub fn loss(p: f64, label: u8) -> f64 {
    let p = p.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
    if label == 1 {
        -libm::log(p)
    } else {
        -libm::log(1.0 - p)
    }
}

/// Source of wall time for epoch summaries.
pub trait Clock {
    /// Seconds since an arbitrary origin.
    fn now(&self) -> f64;
}

/// Clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub mean_loss: f64,
    pub seconds: f64,
}

/// Which selection path feeds the mask while computing gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientPath {
    /// The field policy's own training path.
    Policy,
    /// Relaxed selection on every adaptive field (the differentiable surrogate).
    Surrogate,
}

/// Frequency features and mixing weight for every id of an adaptive field.
#[derive(Debug, Clone, PartialEq)]
struct SelectorInputs {
    features: Vec<[f64; FREQ_FEATURES]>,
    alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct FieldState {
    policy: Policy,
    table: EmbeddingTable,
    selector: Option<AmtlParams>,
    inputs: Option<SelectorInputs>,
    /// Static per-id dimensions for the rule-based policy.
    static_dims: Option<Vec<usize>>,
}

impl FieldState {
    fn dim(&self) -> usize {
        self.table.dim()
    }

    fn features(&self, id: usize) -> (&[f64], f64) {
        let inputs = self.inputs.as_ref().expect("adaptive field has selector inputs");
        (&inputs.features[id], inputs.alpha[id])
    }

    fn training_mode(&self, path: GradientPath) -> SelectionMode {
        match (path, self.policy) {
            (GradientPath::Surrogate, _) | (_, Policy::AmtlNste) => SelectionMode::Relaxed,
            _ => SelectionMode::StraightThrough,
        }
    }

    /// Hard-path selected index for `id`.
    fn selected_k(&self, id: usize) -> Result<usize> {
        match self.policy {
            Policy::Fbe => Ok(self.dim() - 1),
            Policy::Mde => Ok(self.static_dims.as_ref().expect("mde dims")[id] - 1),
            _ => {
                let (f, a) = self.features(id);
                self.selector.as_ref().expect("adaptive field has a selector").select_hard(f, a)
            }
        }
    }
}

/// Gradients of the mean loss over a batch, grouped like the parameters.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub head: MlpGrads,
    pub fields: Vec<FieldGrads>,
}

#[derive(Debug, Clone)]
pub struct FieldGrads {
    pub embedding: RowGradients,
    pub selector: Option<AmtlGrads>,
}

impl ModelGrads {
    /// Dense gradients laid out exactly like [`CtrModel::sections`].
    pub fn to_sections(&self, model: &CtrModel) -> Vec<ParamSection> {
        let mut out = Vec::new();
        for (f, g) in model.fields.iter().zip(&self.fields) {
            let name = f.table.field_name();
            let (rows, dim) = (f.table.vocab_size(), f.dim());
            let mut dense = vec![0.0; rows * dim];
            for (id, row) in g.embedding.iter() {
                dense[id * dim..(id + 1) * dim].copy_from_slice(row);
            }
            out.push(ParamSection::new(format!("field.{name}.embedding"), vec![rows as u64, dim as u64], dense));
            if let Some(sel) = &g.selector {
                push_grads(&mut out, &format!("field.{name}.amtl.h"), &sel.high);
                push_grads(&mut out, &format!("field.{name}.amtl.l"), &sel.low);
            }
        }
        push_grads(&mut out, "head", &self.head);
        out
    }
}

fn push_grads(out: &mut Vec<ParamSection>, prefix: &str, grads: &MlpGrads) {
    for (l, g) in grads.layers.iter().enumerate() {
        let w = &g.weights;
        out.push(ParamSection::new(
            format!("{prefix}.{l}.W"),
            vec![w.rows() as u64, w.cols() as u64],
            w.as_slice().to_vec(),
        ));
        out.push(ParamSection::new(format!("{prefix}.{l}.b"), vec![g.bias.len() as u64], g.bias.to_vec()));
    }
}

/// Rule-based dimensions: ids split by rank into `n_blocks` equal blocks;
/// the most frequent block keeps `dim`, each later block halves, never
/// below `base_dim` (or 1). Indexed by id.
pub fn mde_assign_dims(stats: &FrequencyStats, n_blocks: usize, base_dim: usize, dim: usize) -> Result<Vec<usize>> {
    if n_blocks == 0 || base_dim == 0 || dim == 0 {
        return Err(Error::Parameter("blocks, base dimension and dimension must be positive"));
    }
    if n_blocks > 64 || base_dim.checked_shl((n_blocks - 1) as u32).is_none_or(|v| v > dim) {
        return Err(Error::Parameter("base_dim * 2^(n_blocks-1) must not exceed the dimension"));
    }
    let n = stats.vocab_size();
    let mut dims = vec![dim; n];
    for (rank, &id) in stats.ids_by_rank().iter().enumerate() {
        let block = rank * n_blocks / n;
        dims[id as usize] = (dim >> block).max(base_dim).max(1);
    }
    Ok(dims)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const HEAD_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

fn embedding_stream(field: usize) -> u64 {
    16 + 4 * field as u64
}

fn high_stream(field: usize) -> u64 {
    17 + 4 * field as u64
}

fn low_stream(field: usize) -> u64 {
    18 + 4 * field as u64
}

/// Trainable CTR model.
#[derive(Debug, Clone)]
pub struct CtrModel {
    config: ModelConfig,
    fields: Vec<FieldState>,
    head: Mlp,
    stats: Vec<FrequencyStats>,
    rng: ChaCha8Rng,
}

impl CtrModel {
    /// Fresh model. `stats` must hold one snapshot per configured field, in order.
    pub fn new(config: ModelConfig, stats: Vec<FrequencyStats>) -> Result<Self> {
        config.validate()?;
        if stats.len() != config.fields.len() {
            return Err(Error::Config(format!(
                "{} frequency snapshots for {} fields",
                stats.len(),
                config.fields.len()
            )));
        }
        let mut fields = Vec::with_capacity(config.fields.len());
        for (i, (fc, st)) in config.fields.iter().zip(&stats).enumerate() {
            if fc.name != st.field_name() || fc.vocab_size != st.vocab_size() {
                return Err(Error::Config(format!(
                    "field `{}` (|F| = {}) does not match statistics for `{}` (|F| = {})",
                    fc.name,
                    fc.vocab_size,
                    st.field_name(),
                    st.vocab_size()
                )));
            }
            let table = EmbeddingTable::init(&fc.name, fc.vocab_size, fc.dim, &mut stream_rng(config.seed, embedding_stream(i)));
            let (selector, inputs) = if fc.policy.is_adaptive() {
                let params = AmtlParams::init(
                    FREQ_FEATURES,
                    &config.aml_hidden,
                    fc.dim,
                    config.temperature,
                    &mut stream_rng(config.seed, high_stream(i)),
                    &mut stream_rng(config.seed, low_stream(i)),
                )?;
                (Some(params), Some(selector_inputs(st, fc.policy)?))
            } else {
                (None, None)
            };
            let static_dims = match fc.policy {
                Policy::Mde => Some(mde_assign_dims(st, config.mde_blocks, config.mde_base_dim, fc.dim)?),
                _ => None,
            };
            fields.push(FieldState { policy: fc.policy, table, selector, inputs, static_dims });
        }
        let mut widths = Vec::with_capacity(config.head_hidden.len() + 2);
        widths.push(config.fields.iter().map(|f| f.dim).sum());
        widths.extend_from_slice(&config.head_hidden);
        widths.push(1);
        let head = Mlp::init_uniform(&widths, &mut stream_rng(config.seed, HEAD_STREAM));
        let rng = stream_rng(config.seed, SHUFFLE_STREAM);
        Ok(Self { config, fields, head, stats, rng })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stats(&self) -> &[FrequencyStats] {
        &self.stats
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Mlp {
        &mut self.head
    }

    pub fn field_index(&self, name: &str) -> Result<usize> {
        self.config
            .fields
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownField(name.into()))
    }

    pub fn table(&self, field: usize) -> &EmbeddingTable {
        &self.fields[field].table
    }

    pub fn table_mut(&mut self, field: usize) -> &mut EmbeddingTable {
        &mut self.fields[field].table
    }

    pub fn selector(&self, field: usize) -> Option<&AmtlParams> {
        self.fields[field].selector.as_ref()
    }

    pub fn selector_mut(&mut self, field: usize) -> Option<&mut AmtlParams> {
        self.fields[field].selector.as_mut()
    }

    fn check_example(&self, ex: &TrainingExample) -> Result<()> {
        if ex.ids.len() != self.fields.len() {
            return Err(Error::Shape { what: "example fields", expected: self.fields.len(), actual: ex.ids.len() });
        }
        if ex.label > 1 {
            return Err(Error::Config(format!("label {} is not binary", ex.label)));
        }
        for (f, &id) in self.fields.iter().zip(&ex.ids) {
            f.table.row(id)?;
        }
        Ok(())
    }

    /// Hard-path selected index for every id of `field` (kept prefix is `k+1`).
    pub fn field_selections(&self, field: usize) -> Result<Vec<usize>> {
        let f = &self.fields[field];
        (0..f.table.vocab_size()).map(|id| f.selected_k(id)).collect()
    }

    fn all_selections(&self) -> Result<Vec<Vec<usize>>> {
        (0..self.fields.len()).map(|f| self.field_selections(f)).collect()
    }

    /// Concatenated masked embeddings; `ks[f]` is the kept index for field `f`.
    fn head_input(&self, ex: &TrainingExample, ks: &[usize]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.head.input_dim());
        for ((f, &id), &k) in self.fields.iter().zip(&ex.ids).zip(ks) {
            let row = f.table.weights().row(id);
            x.extend(row.iter().enumerate().map(|(j, v)| if j <= k { *v } else { 0.0 }));
        }
        x
    }

    /// Click probability for `ex` on the inference (hard) path.
    pub fn predict(&self, ex: &TrainingExample) -> Result<f64> {
        self.check_example(ex)?;
        let ks = self
            .fields
            .iter()
            .zip(&ex.ids)
            .map(|(f, &id)| f.selected_k(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(sigmoid(self.head.forward(&self.head_input(ex, &ks))?[0]))
    }

    /// [`predict`](Self::predict) for many examples, sharing per-id selections.
    pub fn predict_batch(&self, examples: &[TrainingExample]) -> Result<Vec<f64>> {
        let selections = self.all_selections()?;
        let mut ks = vec![0; self.fields.len()];
        examples
            .iter()
            .map(|ex| {
                self.check_example(ex)?;
                for (fi, &id) in ex.ids.iter().enumerate() {
                    ks[fi] = selections[fi][id];
                }
                Ok(sigmoid(self.head.forward(&self.head_input(ex, &ks))?[0]))
            })
            .collect()
    }

    /// Mean loss and mean gradients over `batch`, with all parameters fixed.
    pub fn loss_and_gradients(&self, batch: &[&TrainingExample], path: GradientPath) -> Result<(f64, ModelGrads)> {
        let n_fields = self.fields.len();
        // Selection layers depend on the id only, so run them once per distinct id.
        let mut forwards: Vec<BTreeMap<usize, MaskForward>> = vec![BTreeMap::new(); n_fields];
        for ex in batch {
            self.check_example(ex)?;
            for (fi, (f, &id)) in self.fields.iter().zip(&ex.ids).enumerate() {
                if let (Some(sel), false) = (&f.selector, forwards[fi].contains_key(&id)) {
                    let (feat, alpha) = f.features(id);
                    forwards[fi].insert(id, sel.forward_mask(feat, alpha, f.training_mode(path))?);
                }
            }
        }

        let mut head_grads = MlpGrads::zeros_like(&self.head);
        let mut emb_grads: Vec<RowGradients> = (0..n_fields).map(|_| RowGradients::new()).collect();
        let mut mask_grads: Vec<BTreeMap<usize, Vec<f64>>> = vec![BTreeMap::new(); n_fields];
        let mut total_loss = 0.0;
        let mut masks: Vec<Vec<f64>> = self.fields.iter().map(|f| vec![0.0; f.dim()]).collect();

        for (index, ex) in batch.iter().enumerate() {
            let mut x = Vec::with_capacity(self.head.input_dim());
            for (fi, (f, &id)) in self.fields.iter().zip(&ex.ids).enumerate() {
                let m = &mut masks[fi];
                match f.policy {
                    Policy::Fbe => m.fill(1.0),
                    Policy::Mde => m.copy_from_slice(&prefix_mask(f.dim(), f.selected_k(id)?)),
                    _ => m.copy_from_slice(&forwards[fi][&id].mask),
                }
                x.extend(f.table.weights().row(id).iter().zip(m.iter()).map(|(e, m)| e * m));
            }
            let cache = self.head.forward_cached(&x)?;
            let p = sigmoid(cache.output()[0]);
            let l = loss(p, ex.label);
            if !l.is_finite() || !p.is_finite() {
                return Err(Error::NonFiniteLoss { index, p, label: ex.label });
            }
            total_loss += l;
            let (grad_x, g) = self.head.backward(&cache, &[p - ex.label as f64])?;
            head_grads.add_scaled(&g, 1.0);

            let mut offset = 0;
            for (fi, (f, &id)) in self.fields.iter().zip(&ex.ids).enumerate() {
                let d = f.dim();
                let g_field = &grad_x[offset..offset + d];
                offset += d;
                let m = &masks[fi];
                let g_emb: Vec<f64> = g_field.iter().zip(m).map(|(g, m)| g * m).collect();
                emb_grads[fi].add(id, &g_emb);
                if f.selector.is_some() {
                    let row = f.table.weights().row(id);
                    let g_mask: Vec<f64> = g_field.iter().zip(row).map(|(g, e)| g * e).collect();
                    let acc = mask_grads[fi].entry(id).or_insert_with(|| vec![0.0; d]);
                    add_scaled(acc, &g_mask, 1.0);
                }
            }
        }

        let scale = 1.0 / batch.len().max(1) as f64;
        head_grads.scale(scale);
        let mut fields = Vec::with_capacity(n_fields);
        for (fi, (f, emb)) in self.fields.iter().zip(emb_grads).enumerate() {
            let mut embedding = RowGradients::new();
            for (id, g) in emb.iter() {
                let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
                embedding.add(id, &scaled);
            }
            let selector = match &f.selector {
                Some(sel) => {
                    let mut acc = AmtlGrads::zeros_like(sel);
                    for (id, g_mask) in &mask_grads[fi] {
                        let grads = sel.backward_mask(&forwards[fi][id], g_mask)?;
                        acc.add_scaled(&grads, scale);
                    }
                    Some(acc)
                }
                None => None,
            };
            fields.push(FieldGrads { embedding, selector });
        }
        Ok((total_loss * scale, ModelGrads { head: head_grads, fields }))
    }

    /// One SGD step on the mean gradient of `batch`; returns the mean loss.
    pub fn train_batch(&mut self, batch: &[&TrainingExample]) -> Result<f64> {
        let (mean_loss, grads) = self.loss_and_gradients(batch, GradientPath::Policy)?;
        self.apply_gradients(&grads)?;
        Ok(mean_loss)
    }

    pub fn apply_gradients(&mut self, grads: &ModelGrads) -> Result<()> {
        let lr = self.config.lr;
        let sel_lr = lr * self.config.amtl_lr_scale;
        self.head.apply(&grads.head, lr);
        for (f, g) in self.fields.iter_mut().zip(&grads.fields) {
            g.embedding.apply(&mut f.table, lr, 1.0)?;
            if let (Some(sel), Some(gs)) = (f.selector.as_mut(), g.selector.as_ref()) {
                sel.high.apply(&gs.high, sel_lr);
                sel.low.apply(&gs.low, sel_lr);
            }
        }
        Ok(())
    }

    /// One pass over `data` in a freshly shuffled order.
    pub fn train_epoch(&mut self, data: &[TrainingExample], clock: &dyn Clock) -> Result<EpochSummary> {
        let start = clock.now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batch: Vec<&TrainingExample> = Vec::with_capacity(self.config.batch_size);
        for chunk in order.chunks(self.config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &data[i]));
            total += self.train_batch(&batch)? * batch.len() as f64;
        }
        let mean_loss = if data.is_empty() { 0.0 } else { total / data.len() as f64 };
        Ok(EpochSummary { mean_loss, seconds: clock.now() - start })
    }

    /// Runs `config.epochs` epochs.
    pub fn fit(&mut self, data: &[TrainingExample], clock: &dyn Clock) -> Result<Vec<EpochSummary>> {
        (0..self.config.epochs).map(|_| self.train_epoch(data, clock)).collect()
    }

    /// Every parameter group with its checkpoint section name and shape.
    pub fn sections(&self) -> Vec<ParamSection> {
        let mut out = Vec::new();
        for f in &self.fields {
            let name = f.table.field_name();
            let w = f.table.weights();
            out.push(ParamSection::new(
                format!("field.{name}.embedding"),
                vec![w.rows() as u64, w.cols() as u64],
                w.as_slice().to_vec(),
            ));
            if let Some(sel) = &f.selector {
                push_mlp(&mut out, &format!("field.{name}.amtl.h"), &sel.high);
                push_mlp(&mut out, &format!("field.{name}.amtl.l"), &sel.low);
            }
        }
        push_mlp(&mut out, "head", &self.head);
        out
    }

    /// Mutable views of every parameter group, in [`sections`](Self::sections) order.
    pub fn parameter_groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for f in &mut self.fields {
            let name = String::from(f.table.field_name());
            out.push((format!("field.{name}.embedding"), f.table.weights_mut().as_mut_slice()));
            if let Some(sel) = &mut f.selector {
                push_mlp_mut(&mut out, &format!("field.{name}.amtl.h"), &mut sel.high);
                push_mlp_mut(&mut out, &format!("field.{name}.amtl.l"), &mut sel.low);
            }
        }
        push_mlp_mut(&mut out, "head", &mut self.head);
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { config: self.config.clone(), sections: self.sections() }
    }

    /// Rebuilds a model from a checkpoint; every parameter section must be present.
    pub fn from_checkpoint(ckpt: &Checkpoint, stats: Vec<FrequencyStats>) -> Result<Self> {
        let mut model = Self::new(ckpt.config.clone(), stats)?;
        model.warm_start(ckpt, WarmParts::ALL)?;
        Ok(model)
    }

    /// Overwrites the requested parameter groups from `ckpt`.
    ///
    /// Shapes must match exactly. Nothing is written unless every requested
    /// section is present and conforms.
    pub fn warm_start(&mut self, ckpt: &Checkpoint, parts: WarmParts) -> Result<()> {
        let mut updates: Vec<(usize, &[f64])> = Vec::new();
        for (i, section) in self.sections().iter().enumerate() {
            if !parts.includes(&section.name) {
                continue;
            }
            let src = ckpt.section(&section.name).ok_or_else(|| Error::MissingSection(section.name.clone()))?;
            if src.shape != section.shape || src.values.len() != section.values.len() {
                return Err(Error::SectionShape {
                    name: section.name.clone(),
                    expected: section.shape.clone(),
                    actual: src.shape.clone(),
                });
            }
            if let Some(j) = src.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "checkpoint value", index: j });
            }
            updates.push((i, &src.values));
        }
        let mut groups = self.parameter_groups_mut();
        for (i, values) in updates {
            groups[i].1.copy_from_slice(values);
        }
        Ok(())
    }
}

fn selector_inputs(stats: &FrequencyStats, policy: Policy) -> Result<SelectorInputs> {
    let n = stats.vocab_size();
    let mut features = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    for id in 0..n {
        let fv = stats.feature_vector(id)?;
        features.push([fv[0], fv[1]]);
        // The single-branch variant routes everything through the high branch.
        alpha.push(if policy == Policy::Aml { 1.0 } else { stats.alpha(id)? });
    }
    Ok(SelectorInputs { features, alpha })
}

fn push_mlp(out: &mut Vec<ParamSection>, prefix: &str, mlp: &Mlp) {
    for (l, layer) in mlp.layers.iter().enumerate() {
        let w = &layer.weights;
        out.push(ParamSection::new(
            format!("{prefix}.{l}.W"),
            vec![w.rows() as u64, w.cols() as u64],
            w.as_slice().to_vec(),
        ));
        out.push(ParamSection::new(format!("{prefix}.{l}.b"), vec![layer.bias.len() as u64], layer.bias.to_vec()));
    }
}

fn push_mlp_mut<'a>(out: &mut Vec<(String, &'a mut [f64])>, prefix: &str, mlp: &'a mut Mlp) {
    for (l, layer) in mlp.layers.iter_mut().enumerate() {
        out.push((format!("{prefix}.{l}.W"), layer.weights.as_mut_slice()));
        out.push((format!("{prefix}.{l}.b"), layer.bias.as_mut_slice()));
    }
}
