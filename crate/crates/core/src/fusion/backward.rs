//! Analytic gradients of the cross-entropy loss through pooling, both
//! attention directions, stage-1 concatenation and the visual projection.
//! Verified against central finite differences in the test suite.

use ndarray::{s, Array1, Array2};

use crate::scalar::Scalar;

use super::{AttnCache, AttnParams, ForwardCache, FusionModel, FusionVariant, ParamSet};

/// Loss-value floor: -ln(p) is clamped at p = 1e-12.
pub const LOG_EPSILON: f64 = 1e-12;

/// Gradients for one attention direction.
struct AttnGrads<F: Scalar> {
    w_q: Array2<F>,
    w_k: Array2<F>,
    w_v: Array2<F>,
    w_o: Array2<F>,
}

/// Backward through one attention direction.
///
/// `d_projected` is the upstream gradient w.r.t. the projected attention
/// output (the term added to the queries by the residual connection).
/// Returns gradients w.r.t. the query rows, the key rows, and the four
/// projection matrices.
fn attention_backward<F: Scalar>(
    d_projected: &Array2<F>,
    queries: &Array2<F>,
    keys: &Array2<F>,
    params: &AttnParams<F>,
    cache: &AttnCache<F>,
    heads: usize,
    d_k: usize,
) -> (Array2<F>, Array2<F>, AttnGrads<F>) {
    let scale = F::from_f64(1.0 / (d_k as f64).sqrt());

    let d_w_o = cache.heads_out.t().dot(d_projected);
    let d_heads_out = d_projected.dot(&params.w_o.t());

    let mq = queries.nrows();
    let nk = keys.nrows();
    let d_k_total = heads * d_k;
    let mut d_q = Array2::zeros((mq, d_k_total));
    let mut d_k_mat = Array2::zeros((nk, d_k_total));
    let mut d_v_mat = Array2::zeros((nk, d_k_total));

    for h in 0..heads {
        let cols = h * d_k..(h + 1) * d_k;
        let q_h = cache.q.slice(s![.., cols.clone()]);
        let k_h = cache.k.slice(s![.., cols.clone()]);
        let v_h = cache.v.slice(s![.., cols.clone()]);
        let attn = &cache.attn[h];
        let d_out_h = d_heads_out.slice(s![.., cols.clone()]);

        let d_attn = d_out_h.dot(&v_h.t());
        d_v_mat
            .slice_mut(s![.., cols.clone()])
            .assign(&attn.t().dot(&d_out_h));

        // softmax backward per row; masked keys have weight 0, so their
        // score gradient vanishes automatically
        let mut d_scores = Array2::zeros((mq, nk));
        for i in 0..mq {
            let mut row_dot = F::zero();
            for j in 0..nk {
                row_dot += attn[(i, j)] * d_attn[(i, j)];
            }
            for j in 0..nk {
                d_scores[(i, j)] = attn[(i, j)] * (d_attn[(i, j)] - row_dot);
            }
        }
        d_scores.mapv_inplace(|x| x * scale);

        d_q.slice_mut(s![.., cols.clone()])
            .assign(&d_scores.dot(&k_h));
        d_k_mat
            .slice_mut(s![.., cols])
            .assign(&d_scores.t().dot(&q_h));
    }

    let grads = AttnGrads {
        w_q: queries.t().dot(&d_q),
        w_k: keys.t().dot(&d_k_mat),
        w_v: keys.t().dot(&d_v_mat),
        w_o: d_w_o,
    };
    let d_queries = d_q.dot(&params.w_q.t());
    let d_keys = d_k_mat.dot(&params.w_k.t()) + d_v_mat.dot(&params.w_v.t());
    (d_queries, d_keys, grads)
}

/// Spread a pooled-mean gradient back over the unmasked rows.
fn unpool<F: Scalar>(d_mean: &Array1<F>, mask: &[bool], rows: usize, d: usize) -> Array2<F> {
    let count = mask.iter().filter(|m| **m).count();
    let inv = F::from_f64(1.0 / count as f64);
    let mut out = Array2::zeros((rows, d));
    for (i, &keep) in mask.iter().enumerate() {
        if keep {
            for j in 0..d {
                out[(i, j)] = d_mean[j] * inv;
            }
        }
    }
    out
}

impl<F: Scalar> FusionModel<F> {
    /// Loss and parameter gradients for one sample, from a forward cache.
    ///
    /// Loss is `-ln p[label]` with p clamped at [`LOG_EPSILON`].
    pub fn backward(&self, cache: &ForwardCache<F>, label: usize) -> (F, ParamSet<F>) {
        let p = &cache.probabilities;
        assert!(label < p.len(), "label {} out of range {}", label, p.len());
        let eps = F::from_f64(LOG_EPSILON);
        let loss = -(p[label].max(eps)).ln();

        // d loss / d logits = p - onehot(label)
        let mut d_logits = p.clone();
        d_logits[label] -= F::one();

        let embedding = &cache.embedding;
        let d_classifier_w = Array2::from_shape_fn(
            (d_logits.len(), embedding.len()),
            |(i, j)| d_logits[i] * embedding[j],
        );
        let d_classifier_b = d_logits.clone();
        let d_embedding = self.params.classifier_w.t().dot(&d_logits);

        let d = self.dims.d;
        let (d_mv, d_mt): (Array1<F>, Array1<F>) = match self.variant {
            FusionVariant::Add => (d_embedding.clone(), d_embedding),
            _ => (
                d_embedding.slice(s![..d]).to_owned(),
                d_embedding.slice(s![d..]).to_owned(),
            ),
        };

        let v_rows = cache.v_side.len();
        let t_rows = cache.t_side.len();
        let d_v_tilde = unpool(&d_mv, &cache.v_side.mask, v_rows, d);
        let d_t_tilde = unpool(&d_mt, &cache.t_side.mask, t_rows, d);

        let mut grads = self.params.zeros_like();
        let d_v_side = match self.variant {
            FusionVariant::BidirectionalXattn => {
                let fwd = self.params.fwd.as_ref().expect("fwd params");
                let bwd = self.params.bwd.as_ref().expect("bwd params");
                let fwd_cache = cache.fwd.as_ref().expect("fwd cache");
                let bwd_cache = cache.bwd.as_ref().expect("bwd cache");
                let (d_q_text, d_k_visual, g_fwd) = attention_backward(
                    &d_t_tilde,
                    &cache.t_side.rows,
                    &cache.v_side.rows,
                    fwd,
                    fwd_cache,
                    self.dims.heads,
                    self.dims.d_k,
                );
                let (d_q_visual, _d_k_text, g_bwd) = attention_backward(
                    &d_v_tilde,
                    &cache.v_side.rows,
                    &cache.t_side.rows,
                    bwd,
                    bwd_cache,
                    self.dims.heads,
                    self.dims.d_k,
                );
                let _ = d_q_text; // enhanced texts are frozen inputs
                store_attn(&mut grads.fwd, g_fwd);
                store_attn(&mut grads.bwd, g_bwd);
                d_v_tilde + d_q_visual + d_k_visual
            }
            FusionVariant::OnewayXattn => {
                let fwd = self.params.fwd.as_ref().expect("fwd params");
                let fwd_cache = cache.fwd.as_ref().expect("fwd cache");
                let (_d_q_text, d_k_visual, g_fwd) = attention_backward(
                    &d_t_tilde,
                    &cache.t_side.rows,
                    &cache.v_side.rows,
                    fwd,
                    fwd_cache,
                    self.dims.heads,
                    self.dims.d_k,
                );
                store_attn(&mut grads.fwd, g_fwd);
                d_v_tilde + d_k_visual
            }
            FusionVariant::Add | FusionVariant::Concat | FusionVariant::NoDualstage => d_v_tilde,
        };

        if self.params.visual_proj.is_some() {
            let n = cache.n_visual;
            let d_h_v2 = if cache.skip_stage1 {
                d_v_side.view()
            } else {
                d_v_side.slice(s![..n, ..])
            };
            grads.visual_proj = Some(cache.visual_raw.t().dot(&d_h_v2));
        }

        grads.classifier_w = d_classifier_w;
        grads.classifier_b = d_classifier_b;
        (loss, grads)
    }
}

fn store_attn<F: Scalar>(slot: &mut Option<AttnParams<F>>, grads: AttnGrads<F>) {
    *slot = Some(AttnParams {
        w_q: grads.w_q,
        w_k: grads.w_k,
        w_v: grads.w_v,
        w_o: grads.w_o,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{FeatureBundle, FeatureSequence, SequenceKind};
    use crate::enhance::EnhancementStep;
    use crate::fusion::FusionDims;
    use crate::rng::SplitMix64;
    use std::collections::BTreeMap;

    fn random_seq(rng: &mut SplitMix64, n: usize, d: usize, kind: SequenceKind) -> FeatureSequence<f64> {
        let rows = Array2::from_shape_fn((n, d), |_| rng.next_uniform(-1.0, 1.0));
        FeatureSequence::dense(rows, kind).unwrap()
    }

    fn toy_bundle(rng: &mut SplitMix64, d: usize) -> FeatureBundle<f64> {
        let mut enhanced = BTreeMap::new();
        enhanced.insert(
            EnhancementStep::Id,
            random_seq(rng, 2, d, SequenceKind::Textual),
        );
        enhanced.insert(
            EnhancementStep::Tm,
            random_seq(rng, 3, d, SequenceKind::Textual),
        );
        FeatureBundle {
            visual: random_seq(rng, 3, d, SequenceKind::Visual),
            text: random_seq(rng, 2, d, SequenceKind::Textual),
            enhanced,
        }
    }

    /// Central-difference gradient check over every tensor, all variants.
    #[test]
    #[allow(clippy::needless_range_loop)]
    fn gradients_match_finite_differences_per_variant() {
        let d = 3;
        let classes = 3;
        for variant in crate::fusion::FusionVariant::ALL {
            let mut rng = SplitMix64::new(31);
            let bundle = toy_bundle(&mut rng, d);
            let label = 1usize;
            let dims = FusionDims::single_head(d, classes);
            let mut model = FusionModel::<f64>::new(variant, false, dims, 5).unwrap();

            let (_, cache) = model.forward(&bundle).unwrap();
            let (_, grads) = model.backward(&cache, label);
            let analytic: Vec<(String, Vec<f64>)> = {
                let mut g = grads.clone();
                g.named_slices_mut()
                    .into_iter()
                    .map(|(n, s)| (n, s.to_vec()))
                    .collect()
            };

            let eps = 1e-6;
            for (t_idx, (name, values)) in analytic.iter().enumerate() {
                for idx in 0..values.len() {
                    let orig = {
                        let mut slices = model.params.named_slices_mut();
                        let v = slices[t_idx].1[idx];
                        slices[t_idx].1[idx] = v + eps;
                        v
                    };
                    let (_, c) = model.forward(&bundle).unwrap();
                    let (loss_plus, _) = model.backward(&c, label);
                    {
                        let mut slices = model.params.named_slices_mut();
                        slices[t_idx].1[idx] = orig - eps;
                    }
                    let (_, c) = model.forward(&bundle).unwrap();
                    let (loss_minus, _) = model.backward(&c, label);
                    {
                        let mut slices = model.params.named_slices_mut();
                        slices[t_idx].1[idx] = orig;
                    }
                    let fd = (loss_plus - loss_minus) / (2.0 * eps);
                    let a = values[idx];
                    let denom = a.abs().max(fd.abs()).max(1e-8);
                    let rel = (a - fd).abs() / denom;
                    assert!(
                        rel < 1e-4 || (a - fd).abs() < 1e-9,
                        "{variant:?} {name}[{idx}]: analytic {a} vs fd {fd} (rel {rel})"
                    );
                }
            }
        }
    }

    #[test]
    fn visual_projection_gradient_checks() {
        let d = 3;
        let d_v = 5;
        let mut rng = SplitMix64::new(77);
        let mut bundle = toy_bundle(&mut rng, d);
        bundle.visual = random_seq(&mut rng, 3, d_v, SequenceKind::Visual);
        let dims = FusionDims {
            d,
            d_v,
            d_k: d,
            heads: 1,
            classes: 3,
        };
        let mut model = FusionModel::<f64>::new(
            crate::fusion::FusionVariant::BidirectionalXattn,
            false,
            dims,
            5,
        )
        .unwrap();
        assert!(model.params.visual_proj.is_some());

        let (_, cache) = model.forward(&bundle).unwrap();
        let (_, grads) = model.backward(&cache, 2);
        let g_proj = grads.visual_proj.as_ref().unwrap().clone();

        let eps = 1e-6;
        for i in 0..d_v {
            for j in 0..d {
                let orig = model.params.visual_proj.as_ref().unwrap()[(i, j)];
                model.params.visual_proj.as_mut().unwrap()[(i, j)] = orig + eps;
                let (_, c) = model.forward(&bundle).unwrap();
                let (lp, _) = model.backward(&c, 2);
                model.params.visual_proj.as_mut().unwrap()[(i, j)] = orig - eps;
                let (_, c) = model.forward(&bundle).unwrap();
                let (lm, _) = model.backward(&c, 2);
                model.params.visual_proj.as_mut().unwrap()[(i, j)] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let a = g_proj[(i, j)];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "proj[{i},{j}]: {a} vs {fd}");
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn multihead_gradients_check() {
        let d = 4;
        let mut rng = SplitMix64::new(13);
        let bundle = toy_bundle(&mut rng, d);
        let dims = FusionDims {
            d,
            d_v: d,
            d_k: 2,
            heads: 2,
            classes: 3,
        };
        let mut model = FusionModel::<f64>::new(
            crate::fusion::FusionVariant::BidirectionalXattn,
            false,
            dims,
            9,
        )
        .unwrap();
        let (_, cache) = model.forward(&bundle).unwrap();
        let (_, grads) = model.backward(&cache, 0);
        let analytic: Vec<(String, Vec<f64>)> = {
            let mut g = grads.clone();
            g.named_slices_mut()
                .into_iter()
                .map(|(n, s)| (n, s.to_vec()))
                .collect()
        };
        let eps = 1e-6;
        for (t_idx, (name, values)) in analytic.iter().enumerate() {
            for idx in 0..values.len() {
                let orig = model.params.named_slices_mut()[t_idx].1[idx];
                model.params.named_slices_mut()[t_idx].1[idx] = orig + eps;
                let (_, c) = model.forward(&bundle).unwrap();
                let (lp, _) = model.backward(&c, 0);
                model.params.named_slices_mut()[t_idx].1[idx] = orig - eps;
                let (_, c) = model.forward(&bundle).unwrap();
                let (lm, _) = model.backward(&c, 0);
                model.params.named_slices_mut()[t_idx].1[idx] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let a = values[idx];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "{name}[{idx}]: {a} vs {fd}");
            }
        }
    }
}
