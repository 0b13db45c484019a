//! Dual-stage modal fusion network.
//!
//! Stage 1 concatenates original text tokens onto the visual patch
//! sequence ("pseudo-patches"). Stage 2 runs bidirectional cross-attention
//! between that enriched visual sequence and the concatenated enhanced-text
//! sequence; each direction is attention output → output projection →
//! residual add, with no normalization or feed-forward sublayers. The two
//! mean-pooled sequences concatenate into the meme embedding, classified
//! by a linear layer + softmax.
//!
//! Alternative second-stage strategies (add / concat / one-way
//! cross-attention) and the no-dual-stage ablation are selected via
//! [`FusionVariant`].

pub mod backward;
pub mod checkpoint;

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encode::{FeatureBundle, FeatureSequence, SequenceKind};
use crate::enhance::EnhancementStep;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Second-stage fusion strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    /// Default: both attention directions (text→visual and visual→text).
    BidirectionalXattn,
    /// Mean-pool each side to d, sum; classifier takes width d.
    Add,
    /// Classifier takes [mean(H_v'); mean(H_tau')], no attention.
    Concat,
    /// Only the text-queries→visual-keys direction runs; v_tilde = H_v'.
    OnewayXattn,
    /// Skip both stages: classifier takes [mean(H_v); mean(H_tau')].
    NoDualstage,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 5] = [
        FusionVariant::BidirectionalXattn,
        FusionVariant::Add,
        FusionVariant::Concat,
        FusionVariant::OnewayXattn,
        FusionVariant::NoDualstage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionVariant::BidirectionalXattn => "bidirectional_xattn",
            FusionVariant::Add => "add",
            FusionVariant::Concat => "concat",
            FusionVariant::OnewayXattn => "oneway_xattn",
            FusionVariant::NoDualstage => "no_dualstage",
        }
    }
}

impl std::fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FusionVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bidirectional_xattn" => Ok(FusionVariant::BidirectionalXattn),
            "add" => Ok(FusionVariant::Add),
            "concat" => Ok(FusionVariant::Concat),
            "oneway_xattn" => Ok(FusionVariant::OnewayXattn),
            "no_dualstage" => Ok(FusionVariant::NoDualstage),
            other => Err(format!("unknown fusion variant `{other}`")),
        }
    }
}

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    /// Common feature width (text side).
    pub d: usize,
    /// Visual input width; differs from `d` only when the vision backend
    /// disagrees, in which case a learned projection maps it to `d`.
    pub d_v: usize,
    /// Per-head key width; equals `d / heads` (single head: `d`).
    pub d_k: usize,
    pub heads: usize,
    /// Emotion class count.
    pub classes: usize,
}

impl FusionDims {
    /// Single-head dims with d_k = d.
    pub fn single_head(d: usize, classes: usize) -> Self {
        Self {
            d,
            d_v: d,
            d_k: d,
            heads: 1,
            classes,
        }
    }
}

/// Projections for one attention direction.
#[derive(Debug, Clone)]
pub struct AttnParams<F: Scalar> {
    /// d × (heads · d_k)
    pub w_q: Array2<F>,
    pub w_k: Array2<F>,
    pub w_v: Array2<F>,
    /// (heads · d_k) × d
    pub w_o: Array2<F>,
}

impl<F: Scalar> AttnParams<F> {
    pub fn zeros(d: usize, d_k_total: usize) -> Self {
        Self {
            w_q: Array2::zeros((d, d_k_total)),
            w_k: Array2::zeros((d, d_k_total)),
            w_v: Array2::zeros((d, d_k_total)),
            w_o: Array2::zeros((d_k_total, d)),
        }
    }

    fn xavier(rng: &mut SplitMix64, d: usize, d_k_total: usize) -> Self {
        Self {
            w_q: xavier_matrix(rng, d, d_k_total),
            w_k: xavier_matrix(rng, d, d_k_total),
            w_v: xavier_matrix(rng, d, d_k_total),
            w_o: xavier_matrix(rng, d_k_total, d),
        }
    }

    pub fn count(&self) -> usize {
        self.w_q.len() + self.w_k.len() + self.w_v.len() + self.w_o.len()
    }
}

fn xavier_matrix<F: Scalar>(rng: &mut SplitMix64, rows: usize, cols: usize) -> Array2<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        F::from_f64(rng.next_uniform(-limit, limit))
    })
}

/// Every trainable tensor. Doubles as the gradient container.
#[derive(Debug, Clone)]
pub struct ParamSet<F: Scalar> {
    /// Text-queries → visual-keys direction (produces tau_tilde).
    pub fwd: Option<AttnParams<F>>,
    /// Visual-queries → text-keys direction (produces v_tilde).
    pub bwd: Option<AttnParams<F>>,
    /// d_v × d, present only when the visual width differs from d.
    pub visual_proj: Option<Array2<F>>,
    /// classes × embedding width
    pub classifier_w: Array2<F>,
    pub classifier_b: Array1<F>,
}

/// Borrowed view of one named tensor.
pub enum TensorRef<'a, F: Scalar> {
    Mat(&'a Array2<F>),
    Vec1(&'a Array1<F>),
}

impl<F: Scalar> ParamSet<F> {
    pub fn zeros_like(&self) -> Self {
        let zero_attn = |p: &AttnParams<F>| AttnParams {
            w_q: Array2::zeros(p.w_q.raw_dim()),
            w_k: Array2::zeros(p.w_k.raw_dim()),
            w_v: Array2::zeros(p.w_v.raw_dim()),
            w_o: Array2::zeros(p.w_o.raw_dim()),
        };
        Self {
            fwd: self.fwd.as_ref().map(zero_attn),
            bwd: self.bwd.as_ref().map(zero_attn),
            visual_proj: self
                .visual_proj
                .as_ref()
                .map(|p| Array2::zeros(p.raw_dim())),
            classifier_w: Array2::zeros(self.classifier_w.raw_dim()),
            classifier_b: Array1::zeros(self.classifier_b.raw_dim()),
        }
    }

    /// Canonical (name, tensor) pairs, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, TensorRef<'_, F>)> {
        let mut out: Vec<(String, TensorRef<'_, F>)> = Vec::new();
        for (dir, params) in [("fwd", &self.fwd), ("bwd", &self.bwd)] {
            if let Some(p) = params {
                out.push((format!("fusion.{dir}.W_Q"), TensorRef::Mat(&p.w_q)));
                out.push((format!("fusion.{dir}.W_K"), TensorRef::Mat(&p.w_k)));
                out.push((format!("fusion.{dir}.W_V"), TensorRef::Mat(&p.w_v)));
                out.push((format!("fusion.{dir}.W_O"), TensorRef::Mat(&p.w_o)));
            }
        }
        if let Some(p) = &self.visual_proj {
            out.push(("proj.visual".to_string(), TensorRef::Mat(p)));
        }
        out.push(("classifier.W".to_string(), TensorRef::Mat(&self.classifier_w)));
        out.push(("classifier.b".to_string(), TensorRef::Vec1(&self.classifier_b)));
        out
    }

    /// Flat read-only slices in the same order as [`Self::named_tensors`].
    pub fn named_slices(&self) -> Vec<(String, &[F])> {
        let mut out: Vec<(String, &[F])> = Vec::new();
        for (dir, params) in [("fwd", &self.fwd), ("bwd", &self.bwd)] {
            if let Some(p) = params {
                out.push((format!("fusion.{dir}.W_Q"), p.w_q.as_slice().expect("contiguous")));
                out.push((format!("fusion.{dir}.W_K"), p.w_k.as_slice().expect("contiguous")));
                out.push((format!("fusion.{dir}.W_V"), p.w_v.as_slice().expect("contiguous")));
                out.push((format!("fusion.{dir}.W_O"), p.w_o.as_slice().expect("contiguous")));
            }
        }
        if let Some(p) = &self.visual_proj {
            out.push(("proj.visual".to_string(), p.as_slice().expect("contiguous")));
        }
        out.push((
            "classifier.W".to_string(),
            self.classifier_w.as_slice().expect("contiguous"),
        ));
        out.push((
            "classifier.b".to_string(),
            self.classifier_b.as_slice().expect("contiguous"),
        ));
        out
    }

    /// Flat mutable slices in the same order as [`Self::named_tensors`].
    pub fn named_slices_mut(&mut self) -> Vec<(String, &mut [F])> {
        let mut out: Vec<(String, &mut [F])> = Vec::new();
        for (dir, params) in [("fwd", &mut self.fwd), ("bwd", &mut self.bwd)] {
            if let Some(p) = params {
                out.push((
                    format!("fusion.{dir}.W_Q"),
                    p.w_q.as_slice_mut().expect("contiguous"),
                ));
                out.push((
                    format!("fusion.{dir}.W_K"),
                    p.w_k.as_slice_mut().expect("contiguous"),
                ));
                out.push((
                    format!("fusion.{dir}.W_V"),
                    p.w_v.as_slice_mut().expect("contiguous"),
                ));
                out.push((
                    format!("fusion.{dir}.W_O"),
                    p.w_o.as_slice_mut().expect("contiguous"),
                ));
            }
        }
        if let Some(p) = &mut self.visual_proj {
            out.push((
                "proj.visual".to_string(),
                p.as_slice_mut().expect("contiguous"),
            ));
        }
        out.push((
            "classifier.W".to_string(),
            self.classifier_w.as_slice_mut().expect("contiguous"),
        ));
        out.push((
            "classifier.b".to_string(),
            self.classifier_b.as_slice_mut().expect("contiguous"),
        ));
        out
    }

    pub fn param_count(&self) -> usize {
        let attn = |p: &Option<AttnParams<F>>| p.as_ref().map_or(0, AttnParams::count);
        attn(&self.fwd)
            + attn(&self.bwd)
            + self.visual_proj.as_ref().map_or(0, Array2::len)
            + self.classifier_w.len()
            + self.classifier_b.len()
    }

    /// grads += other (matching structure required).
    pub fn add_assign(&mut self, other: &Self) {
        let add_attn = |a: &mut Option<AttnParams<F>>, b: &Option<AttnParams<F>>| {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.w_q += &b.w_q;
                a.w_k += &b.w_k;
                a.w_v += &b.w_v;
                a.w_o += &b.w_o;
            }
        };
        add_attn(&mut self.fwd, &other.fwd);
        add_attn(&mut self.bwd, &other.bwd);
        if let (Some(a), Some(b)) = (self.visual_proj.as_mut(), other.visual_proj.as_ref()) {
            *a += b;
        }
        self.classifier_w += &other.classifier_w;
        self.classifier_b += &other.classifier_b;
    }

    pub fn scale(&mut self, factor: F) {
        for (_, slice) in self.named_slices_mut() {
            for x in slice {
                *x *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| match t {
            TensorRef::Mat(m) => m.iter().all(|x| x.is_finite()),
            TensorRef::Vec1(v) => v.iter().all(|x| x.is_finite()),
        })
    }
}

/// The dual-stage fusion model.
#[derive(Debug, Clone)]
pub struct FusionModel<F: Scalar> {
    pub variant: FusionVariant,
    /// For the no-dual-stage ablation only: keep stage-1 concatenation
    /// while still dropping stage-2 attention.
    pub keep_stage1: bool,
    pub dims: FusionDims,
    pub params: ParamSet<F>,
}

impl<F: Scalar> FusionModel<F> {
    /// Build a model with Xavier-uniform projections and zero biases,
    /// fully determined by `seed`.
    pub fn new(
        variant: FusionVariant,
        keep_stage1: bool,
        dims: FusionDims,
        seed: u64,
    ) -> Result<Self, FusionError> {
        if dims.d == 0 || dims.classes < 2 || dims.heads == 0 || dims.d_k == 0 {
            return Err(FusionError::Config(format!(
                "invalid dims: d={} classes={} heads={} d_k={}",
                dims.d, dims.classes, dims.heads, dims.d_k
            )));
        }
        let mut rng = SplitMix64::new(crate::rng::derive_seed(&[seed, 0x66_75_73_65]));
        let d_k_total = dims.heads * dims.d_k;
        let uses_attention = matches!(
            variant,
            FusionVariant::BidirectionalXattn | FusionVariant::OnewayXattn
        );
        let fwd = uses_attention.then(|| AttnParams::xavier(&mut rng, dims.d, d_k_total));
        let bwd = matches!(variant, FusionVariant::BidirectionalXattn)
            .then(|| AttnParams::xavier(&mut rng, dims.d, d_k_total));
        let visual_proj =
            (dims.d_v != dims.d).then(|| xavier_matrix(&mut rng, dims.d_v, dims.d));
        let embed = embedding_width(variant, dims.d);
        let classifier_w = xavier_matrix(&mut rng, dims.classes, embed);
        let classifier_b = Array1::zeros(dims.classes);
        Ok(Self {
            variant,
            keep_stage1,
            dims,
            params: ParamSet {
                fwd,
                bwd,
                visual_proj,
                classifier_w,
                classifier_b,
            },
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Full forward pass over one meme's feature bundle.
    pub fn forward(
        &self,
        bundle: &FeatureBundle<F>,
    ) -> Result<(FusionOutput<F>, ForwardCache<F>), FusionError> {
        if bundle.visual.dim() != self.dims.d_v {
            return Err(FusionError::Shape(format!(
                "visual width {} != expected {}",
                bundle.visual.dim(),
                self.dims.d_v
            )));
        }
        let order: Vec<EnhancementStep> = bundle.enhanced.keys().copied().collect();
        let t_side = build_enhanced_text(&bundle.enhanced, &order)?;
        if t_side.dim() != self.dims.d {
            return Err(FusionError::Shape(format!(
                "enhanced text width {} != d={}",
                t_side.dim(),
                self.dims.d
            )));
        }

        // visual projection (width plumbing, trainable)
        let visual_raw = bundle.visual.rows.clone();
        let h_v2_rows = match &self.params.visual_proj {
            Some(p) => visual_raw.dot(p),
            None => visual_raw.clone(),
        };
        let h_v2 = FeatureSequence {
            rows: h_v2_rows,
            mask: bundle.visual.mask.clone(),
            kind: SequenceKind::Visual,
        };

        let skip_stage1 = self.variant == FusionVariant::NoDualstage && !self.keep_stage1;
        let v_side = if skip_stage1 {
            h_v2.clone()
        } else {
            stage1_fuse(&h_v2, &bundle.text)?
        };

        if v_side.unmasked_count() == 0 {
            return Err(FusionError::Degenerate("visual side has no content".into()));
        }
        if t_side.unmasked_count() == 0 {
            return Err(FusionError::Degenerate(
                "enhanced-text side has no content".into(),
            ));
        }

        let mut fwd_cache = None;
        let mut bwd_cache = None;
        let (v_tilde, tau_tilde) = match self.variant {
            FusionVariant::BidirectionalXattn => {
                let fwd = self.params.fwd.as_ref().expect("fwd params");
                let bwd = self.params.bwd.as_ref().expect("bwd params");
                let (proj_t, cache_f) = cross_attention(
                    &t_side.rows,
                    &v_side.rows,
                    &v_side.mask,
                    fwd,
                    self.dims.heads,
                    self.dims.d_k,
                )?;
                let (proj_v, cache_b) = cross_attention(
                    &v_side.rows,
                    &t_side.rows,
                    &t_side.mask,
                    bwd,
                    self.dims.heads,
                    self.dims.d_k,
                )?;
                fwd_cache = Some(cache_f);
                bwd_cache = Some(cache_b);
                let tau = FeatureSequence {
                    rows: &t_side.rows + &proj_t,
                    mask: t_side.mask.clone(),
                    kind: SequenceKind::Textual,
                };
                let v = FeatureSequence {
                    rows: &v_side.rows + &proj_v,
                    mask: v_side.mask.clone(),
                    kind: SequenceKind::Visual,
                };
                (v, tau)
            }
            FusionVariant::OnewayXattn => {
                let fwd = self.params.fwd.as_ref().expect("fwd params");
                let (proj_t, cache_f) = cross_attention(
                    &t_side.rows,
                    &v_side.rows,
                    &v_side.mask,
                    fwd,
                    self.dims.heads,
                    self.dims.d_k,
                )?;
                fwd_cache = Some(cache_f);
                let tau = FeatureSequence {
                    rows: &t_side.rows + &proj_t,
                    mask: t_side.mask.clone(),
                    kind: SequenceKind::Textual,
                };
                (v_side.clone(), tau)
            }
            FusionVariant::Add | FusionVariant::Concat | FusionVariant::NoDualstage => {
                (v_side.clone(), t_side.clone())
            }
        };

        let mv = masked_mean(&v_tilde)?;
        let mt = masked_mean(&tau_tilde)?;
        let embedding = match self.variant {
            FusionVariant::Add => &mv + &mt,
            _ => concat_vec(&mv, &mt),
        };
        let (logits, probabilities) = self.classify(&embedding);

        let output = FusionOutput {
            v_tilde,
            tau_tilde,
            meme_embedding: embedding.clone(),
            logits,
            probabilities: probabilities.clone(),
        };
        let cache = ForwardCache {
            visual_raw,
            v_side,
            t_side,
            n_visual: bundle.visual.len(),
            skip_stage1,
            fwd: fwd_cache,
            bwd: bwd_cache,
            embedding,
            probabilities,
        };
        Ok((output, cache))
    }

    fn classify(&self, embedding: &Array1<F>) -> (Array1<F>, Array1<F>) {
        let logits = self.params.classifier_w.dot(embedding) + &self.params.classifier_b;
        let probabilities = softmax(&logits);
        (logits, probabilities)
    }

    /// Predicted class: argmax of probabilities, lowest index on ties.
    pub fn predict(&self, bundle: &FeatureBundle<F>) -> Result<usize, FusionError> {
        let (output, _) = self.forward(bundle)?;
        Ok(argmax(&output.probabilities))
    }
}

/// Lowest-index argmax.
pub fn argmax<F: Scalar>(values: &Array1<F>) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

fn embedding_width(variant: FusionVariant, d: usize) -> usize {
    match variant {
        FusionVariant::Add => d,
        _ => 2 * d,
    }
}

/// Outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct FusionOutput<F: Scalar> {
    pub v_tilde: FeatureSequence<F>,
    pub tau_tilde: FeatureSequence<F>,
    pub meme_embedding: Array1<F>,
    pub logits: Array1<F>,
    pub probabilities: Array1<F>,
}

/// Intermediate activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F: Scalar> {
    pub visual_raw: Array2<F>,
    pub v_side: FeatureSequence<F>,
    pub t_side: FeatureSequence<F>,
    pub n_visual: usize,
    pub skip_stage1: bool,
    pub fwd: Option<AttnCache<F>>,
    pub bwd: Option<AttnCache<F>>,
    pub embedding: Array1<F>,
    pub probabilities: Array1<F>,
}

/// Activations of one attention direction.
#[derive(Debug, Clone)]
pub struct AttnCache<F: Scalar> {
    pub q: Array2<F>,
    pub k: Array2<F>,
    pub v: Array2<F>,
    /// Per-head attention weights, each Mq × Nk; masked keys carry 0.
    pub attn: Vec<Array2<F>>,
    /// Concatenated head outputs, Mq × (heads · d_k).
    pub heads_out: Array2<F>,
}

/// Stage-1 shallow fusion: visual rows first, then the original text
/// tokens as pseudo-patches.
pub fn stage1_fuse<F: Scalar>(
    visual: &FeatureSequence<F>,
    text: &FeatureSequence<F>,
) -> Result<FeatureSequence<F>, FusionError> {
    if !text.is_empty() && visual.dim() != text.dim() {
        return Err(FusionError::Shape(format!(
            "stage-1 width mismatch: visual d={} text d={}",
            visual.dim(),
            text.dim()
        )));
    }
    if text.is_empty() {
        return Ok(FeatureSequence {
            rows: visual.rows.clone(),
            mask: visual.mask.clone(),
            kind: SequenceKind::Visual,
        });
    }
    let rows = ndarray::concatenate(Axis(0), &[visual.rows.view(), text.rows.view()])
        .map_err(|e| FusionError::Shape(e.to_string()))?;
    let mut mask = visual.mask.clone();
    mask.extend_from_slice(&text.mask);
    Ok(FeatureSequence {
        rows,
        mask,
        kind: SequenceKind::Visual,
    })
}

/// Concatenate the enhanced-text sequences present in `map`, following
/// `order` (canonically ID, TM, CIM, CA).
pub fn build_enhanced_text<F: Scalar>(
    map: &BTreeMap<EnhancementStep, FeatureSequence<F>>,
    order: &[EnhancementStep],
) -> Result<FeatureSequence<F>, FusionError> {
    let present: Vec<&FeatureSequence<F>> =
        order.iter().filter_map(|step| map.get(step)).collect();
    if present.is_empty() {
        return Err(FusionError::Config(
            "no enhanced-text sequences to fuse".into(),
        ));
    }
    let dim = present[0].dim();
    if present.iter().any(|s| s.dim() != dim) {
        return Err(FusionError::Shape(
            "enhanced sequences have differing widths".into(),
        ));
    }
    let views: Vec<_> = present.iter().map(|s| s.rows.view()).collect();
    let rows =
        ndarray::concatenate(Axis(0), &views).map_err(|e| FusionError::Shape(e.to_string()))?;
    let mut mask = Vec::with_capacity(rows.nrows());
    for seq in &present {
        mask.extend_from_slice(&seq.mask);
    }
    Ok(FeatureSequence {
        rows,
        mask,
        kind: SequenceKind::Textual,
    })
}

/// One attention direction: softmax(Q K^T / sqrt(d_k)) V, heads
/// concatenated, then the output projection. Returns the projected output
/// (add it to the queries for the residual) plus cached activations.
pub fn cross_attention<F: Scalar>(
    queries: &Array2<F>,
    keys: &Array2<F>,
    key_mask: &[bool],
    params: &AttnParams<F>,
    heads: usize,
    d_k: usize,
) -> Result<(Array2<F>, AttnCache<F>), FusionError> {
    if queries.nrows() == 0 || keys.nrows() == 0 {
        return Err(FusionError::Degenerate(
            "attention requires at least one query and one key".into(),
        ));
    }
    if !key_mask.iter().any(|m| *m) {
        return Err(FusionError::Degenerate("all key positions masked".into()));
    }
    if queries.ncols() != params.w_q.nrows() || keys.ncols() != params.w_k.nrows() {
        return Err(FusionError::Shape(format!(
            "attention width mismatch: queries d={} keys d={} W_Q rows={}",
            queries.ncols(),
            keys.ncols(),
            params.w_q.nrows()
        )));
    }
    let q = queries.dot(&params.w_q);
    let k = keys.dot(&params.w_k);
    let v = keys.dot(&params.w_v);
    let scale = F::from_f64(1.0 / (d_k as f64).sqrt());

    let mq = queries.nrows();
    let mut heads_out = Array2::zeros((mq, heads * d_k));
    let mut attn_per_head = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * d_k..(h + 1) * d_k;
        let q_h = q.slice(s![.., cols.clone()]);
        let k_h = k.slice(s![.., cols.clone()]);
        let v_h = v.slice(s![.., cols.clone()]);
        let mut scores = q_h.dot(&k_h.t());
        scores.mapv_inplace(|x| x * scale);
        let attn = masked_softmax_rows(&scores, key_mask)?;
        let out_h = attn.dot(&v_h);
        heads_out.slice_mut(s![.., cols]).assign(&out_h);
        attn_per_head.push(attn);
    }
    let projected = heads_out.dot(&params.w_o);
    Ok((
        projected,
        AttnCache {
            q,
            k,
            v,
            attn: attn_per_head,
            heads_out,
        },
    ))
}

/// Row-wise softmax over unmasked key positions; masked positions get
/// weight exactly 0.
fn masked_softmax_rows<F: Scalar>(
    scores: &Array2<F>,
    key_mask: &[bool],
) -> Result<Array2<F>, FusionError> {
    let (rows, cols) = scores.dim();
    if key_mask.len() != cols {
        return Err(FusionError::Shape(format!(
            "key mask length {} != key count {cols}",
            key_mask.len()
        )));
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        let mut max = F::neg_infinity();
        for j in 0..cols {
            if key_mask[j] && scores[(i, j)] > max {
                max = scores[(i, j)];
            }
        }
        if !max.is_finite() {
            return Err(FusionError::Numeric(format!(
                "non-finite attention scores in row {i}"
            )));
        }
        let mut sum = F::zero();
        for j in 0..cols {
            if key_mask[j] {
                let w = (scores[(i, j)] - max).exp();
                out[(i, j)] = w;
                sum += w;
            }
        }
        for j in 0..cols {
            if key_mask[j] {
                out[(i, j)] /= sum;
            }
        }
    }
    Ok(out)
}

/// Both attention directions over the same inputs, with residual adds.
/// Returns (v_tilde, tau_tilde).
pub fn bidirectional_xattn<F: Scalar>(
    v_prime: &FeatureSequence<F>,
    tau_prime: &FeatureSequence<F>,
    fwd: &AttnParams<F>,
    bwd: &AttnParams<F>,
    heads: usize,
    d_k: usize,
) -> Result<(FeatureSequence<F>, FeatureSequence<F>), FusionError> {
    let (proj_t, _) = cross_attention(&tau_prime.rows, &v_prime.rows, &v_prime.mask, fwd, heads, d_k)?;
    let (proj_v, _) = cross_attention(&v_prime.rows, &tau_prime.rows, &tau_prime.mask, bwd, heads, d_k)?;
    Ok((
        FeatureSequence {
            rows: &v_prime.rows + &proj_v,
            mask: v_prime.mask.clone(),
            kind: SequenceKind::Visual,
        },
        FeatureSequence {
            rows: &tau_prime.rows + &proj_t,
            mask: tau_prime.mask.clone(),
            kind: SequenceKind::Textual,
        },
    ))
}

/// Mean over unmasked rows.
pub fn masked_mean<F: Scalar>(seq: &FeatureSequence<F>) -> Result<Array1<F>, FusionError> {
    let count = seq.unmasked_count();
    if count == 0 {
        return Err(FusionError::Degenerate(
            "mean pooling over an all-masked sequence".into(),
        ));
    }
    let mut sum = Array1::zeros(seq.dim());
    for (i, &keep) in seq.mask.iter().enumerate() {
        if keep {
            sum += &seq.rows.row(i);
        }
    }
    let inv = F::from_f64(1.0 / count as f64);
    Ok(sum * inv)
}

/// Pool both sequences, concatenate, classify. The meme embedding is
/// [mean(v_tilde); mean(tau_tilde)].
pub fn pool_and_classify<F: Scalar>(
    v_tilde: &FeatureSequence<F>,
    tau_tilde: &FeatureSequence<F>,
    classifier_w: &Array2<F>,
    classifier_b: &Array1<F>,
) -> Result<FusionOutput<F>, FusionError> {
    let mv = masked_mean(v_tilde)?;
    let mt = masked_mean(tau_tilde)?;
    let embedding = concat_vec(&mv, &mt);
    if classifier_w.ncols() != embedding.len() {
        return Err(FusionError::Shape(format!(
            "classifier expects width {}, embedding has {}",
            classifier_w.ncols(),
            embedding.len()
        )));
    }
    let logits = classifier_w.dot(&embedding) + classifier_b;
    let probabilities = softmax(&logits);
    Ok(FusionOutput {
        v_tilde: v_tilde.clone(),
        tau_tilde: tau_tilde.clone(),
        meme_embedding: embedding,
        logits,
        probabilities,
    })
}

fn concat_vec<F: Scalar>(a: &Array1<F>, b: &Array1<F>) -> Array1<F> {
    let mut out = Array1::zeros(a.len() + b.len());
    out.slice_mut(s![..a.len()]).assign(a);
    out.slice_mut(s![a.len()..]).assign(b);
    out
}

/// Max-subtracted softmax.
pub fn softmax<F: Scalar>(logits: &Array1<F>) -> Array1<F> {
    let mut max = F::neg_infinity();
    for &x in logits {
        if x > max {
            max = x;
        }
    }
    let mut out = logits.mapv(|x| (x - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|x| x / sum);
    out
}
