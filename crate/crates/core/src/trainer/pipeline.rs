//! The composed forward pass and its hand-written backward pass.
//!
//! Stages: prompted text → text graph encoder → prompted image → prototype
//! graph encoder → attention fusion → pooling → λ-weighted logits. Disabled
//! toggles turn their stage into an identity, and λ2 = 0 skips the fusion
//! branch altogether.
//!
//! Everything that depends only on the parameters (encoded text, encoded
//! prototypes) is computed once per batch in [`Prepared`]; the per-image work
//! is independent across samples and its gradients are reduced pairwise in
//! sample order, so results do not depend on thread count.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use super::{ModelState, Params, TrainConfig};
use crate::embedding_store::{append_rows, ImageFeatures, PrototypeTable, TextTable};
use crate::error::{shape_err, HgtError, Result};
use crate::fusion::{self, LogitsBundle};
use crate::graph_encoder::EncoderPass;
use crate::hierarchy::{HierGraph, Taxonomy};
use crate::linalg;
use crate::objective::{self, LossOutput};

/// Read-only context shared by every forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Pipeline<'a> {
    pub taxonomy: &'a Taxonomy,
    pub graph: &'a HierGraph,
    pub text: &'a TextTable,
    pub cfg: &'a TrainConfig,
}

/// Parameter-only intermediates for one batch.
pub struct Prepared<'a> {
    pipeline: Pipeline<'a>,
    params: &'a Params,
    /// Prompted, normalized text rows fed to the text encoder.
    text_tilde: Array2<f64>,
    text_tilde_norms: Array1<f64>,
    text_pass: Option<EncoderPass<'a>>,
    text_hat: Array2<f64>,
    text_hat_norms: Array1<f64>,
    proto: Option<ProtoBranch<'a>>,
}

struct ProtoBranch<'a> {
    pass: Option<EncoderPass<'a>>,
    hat: Array2<f64>,
    hat_norms: Array1<f64>,
}

/// Per-image activations kept for backward.
pub struct SampleCache {
    rows: usize,
    g1: Array1<f64>,
    n1: f64,
    fused: Option<FusedCache>,
}

struct FusedCache {
    spatial_unit: Array2<f64>,
    spatial_norms: Array1<f64>,
    weights: Array2<f64>,
    g2: Array1<f64>,
    n2: f64,
}

/// Gradients that flow out of one image's forward pass.
#[derive(Debug, Clone)]
pub struct SampleGrads {
    pub text_hat: Array2<f64>,
    pub proto_hat: Option<Array2<f64>>,
    pub prompts: Option<Array2<f64>>,
}

impl SampleGrads {
    fn add(&self, other: &SampleGrads) -> SampleGrads {
        let sum = |a: &Option<Array2<f64>>, b: &Option<Array2<f64>>| match (a, b) {
            (Some(a), Some(b)) => Some(a + b),
            (a, _) => a.clone(),
        };
        SampleGrads {
            text_hat: &self.text_hat + &other.text_hat,
            proto_hat: sum(&self.proto_hat, &other.proto_hat),
            prompts: sum(&self.prompts, &other.prompts),
        }
    }
}

impl<'a> Pipeline<'a> {
    pub fn new(
        taxonomy: &'a Taxonomy,
        graph: &'a HierGraph,
        text: &'a TextTable,
        cfg: &'a TrainConfig,
    ) -> Result<Self> {
        if text.len() != graph.node_count() {
            return Err(shape_err(format!(
                "text table has {} rows for {} hierarchy nodes",
                text.len(),
                graph.node_count()
            )));
        }
        cfg.validate(taxonomy.levels())?;
        Ok(Pipeline {
            taxonomy,
            graph,
            text,
            cfg,
        })
    }

    pub fn dim(&self) -> usize {
        self.text.dim()
    }

    fn fusion_active(&self) -> bool {
        self.cfg.fusion.lambda2 != 0.0
    }

    /// Runs the parameter-only stages for `params`.
    pub fn prepare(
        &self,
        params: &'a Params,
        prototypes: Option<&PrototypeTable>,
    ) -> Result<Prepared<'a>> {
        let t = &self.cfg.toggles;
        let k = self.graph.node_count();
        if params.text_offsets.dim() != (k, self.dim()) || params.text_encoder.dim() != self.dim() {
            return Err(shape_err(format!(
                "parameters are {:?} wide, data is {k}x{}",
                params.text_offsets.dim(),
                self.dim()
            )));
        }

        let raw = if t.text_prompt {
            &self.text.base + &params.text_offsets
        } else {
            self.text.base.clone()
        };
        let (text_tilde, text_tilde_norms) = linalg::normalize_rows(raw.view())?;
        let (text_pass, text_hat, text_hat_norms) = if t.text_graph {
            let mut pass = EncoderPass::new(self.graph.neighbors(), &params.text_encoder);
            let encoded = pass.forward(text_tilde.view())?;
            let (hat, norms) = linalg::normalize_rows(encoded.view())?;
            (Some(pass), hat, norms)
        } else {
            (None, text_tilde.clone(), Array1::ones(k))
        };

        let proto = if self.fusion_active() {
            let table = prototypes.ok_or_else(|| {
                HgtError::State("fusion branch needs prototypes; compute them first".into())
            })?;
            if table.values.dim() != (k, self.dim()) {
                return Err(shape_err(format!(
                    "prototype table {:?} vs {k}x{}",
                    table.values.dim(),
                    self.dim()
                )));
            }
            let (unit, _) = linalg::normalize_rows(table.values.view())?;
            if t.visual_graph {
                let enc = if self.cfg.share_encoders {
                    &params.text_encoder
                } else {
                    params.visual_encoder.as_ref().ok_or_else(|| {
                        HgtError::State("visual encoder missing from parameters".into())
                    })?
                };
                let mut pass = EncoderPass::new(self.graph.neighbors(), enc);
                let encoded = pass.forward(unit.view())?;
                let (hat, hat_norms) = linalg::normalize_rows(encoded.view())?;
                Some(ProtoBranch {
                    pass: Some(pass),
                    hat,
                    hat_norms,
                })
            } else {
                Some(ProtoBranch {
                    pass: None,
                    hat: unit,
                    hat_norms: Array1::ones(k),
                })
            }
        } else {
            None
        };

        Ok(Prepared {
            pipeline: *self,
            params,
            text_tilde,
            text_tilde_norms,
            text_pass,
            text_hat,
            text_hat_norms,
            proto,
        })
    }

    /// Logits for one image under the current state.
    pub fn forward(&self, state: &ModelState, image: &ImageFeatures) -> Result<LogitsBundle> {
        let prepared = self.prepare(&state.params, state.prototypes.as_ref())?;
        Ok(prepared.forward_sample(image)?.0)
    }

    /// Global feature of an image after the visual prompt stage.
    pub fn prompted_global(&self, params: &Params, image: &ImageFeatures) -> Result<Array1<f64>> {
        if self.cfg.toggles.visual_prompt {
            linalg::mean_rows(
                append_rows(image.spatial.view(), params.visual_prompts.view())?.view(),
            )
        } else {
            Ok(image.global.clone())
        }
    }

    /// Mean loss over `batch` and its gradient w.r.t. every parameter.
    pub fn loss_and_grad(
        &self,
        state: &ModelState,
        batch: &[&ImageFeatures],
    ) -> Result<(f64, Params)> {
        if batch.is_empty() {
            return Err(HgtError::Data("empty batch".into()));
        }
        let prepared = self.prepare(&state.params, state.prototypes.as_ref())?;
        let per_sample: Vec<(f64, SampleGrads)> = batch
            .par_iter()
            .map(|img| {
                let (bundle, cache) = prepared.forward_sample(img)?;
                let LossOutput { loss, grad, .. } =
                    objective::hier_loss(&bundle, &img.label_path, self.taxonomy, &self.cfg.loss)?;
                Ok((loss, prepared.backward_sample(&cache, grad.view())))
            })
            .collect::<Result<_>>()?;
        let losses: Vec<f64> = per_sample.iter().map(|(l, _)| *l).collect();
        let grads: Vec<SampleGrads> = per_sample.into_iter().map(|(_, g)| g).collect();
        let total = linalg::pairwise_reduce(&grads, &SampleGrads::add).expect("nonempty batch");
        let n = batch.len() as f64;
        let mut g = prepared.backward(&total)?;
        g.scale(1.0 / n);
        Ok((linalg::pairwise_sum(&losses) / n, g))
    }

    /// Mean loss over `batch` without gradients.
    pub fn loss(&self, state: &ModelState, batch: &[&ImageFeatures]) -> Result<f64> {
        self.loss_with_params(&state.params, state.prototypes.as_ref(), batch)
    }

    /// Mean loss over `batch` for arbitrary parameters and prototypes.
    pub fn loss_with_params(
        &self,
        params: &Params,
        prototypes: Option<&PrototypeTable>,
        batch: &[&ImageFeatures],
    ) -> Result<f64> {
        let prepared = self.prepare(params, prototypes)?;
        let losses: Vec<f64> = batch
            .iter()
            .map(|img| {
                let (bundle, _) = prepared.forward_sample(img)?;
                Ok(
                    objective::hier_loss(&bundle, &img.label_path, self.taxonomy, &self.cfg.loss)?
                        .loss,
                )
            })
            .collect::<Result<_>>()?;
        Ok(linalg::pairwise_sum(&losses) / batch.len() as f64)
    }
}

impl<'a> Prepared<'a> {
    /// Text rows after prompts and (optionally) the text graph encoder, unit norm.
    pub fn text_hat(&self) -> &Array2<f64> {
        &self.text_hat
    }

    /// Prototype rows after the visual graph encoder, unit norm; `None` when λ2 = 0.
    pub fn proto_hat(&self) -> Option<&Array2<f64>> {
        self.proto.as_ref().map(|p| &p.hat)
    }

    pub fn forward_sample(&self, image: &ImageFeatures) -> Result<(LogitsBundle, SampleCache)> {
        let p = self.pipeline;
        let cfg = &p.cfg.fusion;
        if image.spatial.ncols() != p.dim() {
            return Err(shape_err(format!(
                "image width {} vs model width {}",
                image.spatial.ncols(),
                p.dim()
            )));
        }
        let spatial = if p.cfg.toggles.visual_prompt {
            append_rows(image.spatial.view(), self.params.visual_prompts.view())?
        } else {
            image.spatial.clone()
        };
        let global = linalg::mean_rows(spatial.view())?;
        let (g1, n1) = linalg::normalize(global.view())?;

        let fused = match &self.proto {
            Some(proto) => {
                let (spatial_unit, spatial_norms) = linalg::normalize_rows(spatial.view())?;
                let psi = fusion::attention_map(spatial_unit.view(), proto.hat.view())?;
                let weights = fusion::attention_weights(psi.view(), cfg.alpha);
                let fused_map = weights.dot(&proto.hat);
                let fused_global = linalg::mean_rows(fused_map.view())?;
                let (g2, n2) = linalg::normalize(fused_global.view())?;
                Some(FusedCache {
                    spatial_unit,
                    spatial_norms,
                    weights,
                    g2,
                    n2,
                })
            }
            None => None,
        };

        let bundle = fusion::combine_logits(
            g1.view(),
            fused.as_ref().map(|f| f.g2.view()),
            self.text_hat.view(),
            cfg,
            p.graph.level_ranges(),
            p.cfg.loss.strategy,
        )?;
        Ok((
            bundle,
            SampleCache {
                rows: spatial.nrows(),
                g1,
                n1,
                fused,
            },
        ))
    }

    /// Pushes `dL/dscores` back to the batch-level intermediates.
    pub fn backward_sample(&self, cache: &SampleCache, dscores: ArrayView1<f64>) -> SampleGrads {
        let p = self.pipeline;
        let cfg = &p.cfg.fusion;
        let d = p.dim();
        let prompt_rows = if p.cfg.toggles.visual_prompt {
            self.params.visual_prompts.nrows()
        } else {
            0
        };
        let first_prompt = cache.rows - prompt_rows;

        let ds1 = &dscores * cfg.lambda1;
        let mut d_text_hat = outer(ds1.view(), cache.g1.view());
        let dg1 = self.text_hat.t().dot(&ds1);
        let dglobal = linalg::normalize_backward(cache.g1.view(), cache.n1, dg1.view());
        // every spatial row (prompt rows included) receives dglobal / rows
        let mut d_prompts = Array2::zeros((prompt_rows, d));
        for mut row in d_prompts.axis_iter_mut(Axis(0)) {
            row.scaled_add(1.0 / cache.rows as f64, &dglobal);
        }

        let mut d_proto_hat = None;
        if let (Some(fc), Some(proto)) = (&cache.fused, &self.proto) {
            let ds2 = &dscores * cfg.lambda2;
            d_text_hat.scaled_add(1.0, &outer(ds2.view(), fc.g2.view()));
            let dg2 = self.text_hat.t().dot(&ds2);
            let dfg = linalg::normalize_backward(fc.g2.view(), fc.n2, dg2.view());
            let dfused =
                Array2::from_shape_fn((cache.rows, d), |(_, j)| dfg[j] / cache.rows as f64);
            let (dpsi, mut dproto) = fusion::attend_backward(
                fc.weights.view(),
                proto.hat.view(),
                cfg.alpha,
                dfused.view(),
            );
            let (_, dproto_b) = fusion::attention_map_backward(
                fc.spatial_unit.view(),
                proto.hat.view(),
                dpsi.view(),
            );
            dproto += &dproto_b;
            if prompt_rows > 0 {
                let dpsi_p = dpsi.slice(s![first_prompt.., ..]);
                let dunit = dpsi_p.dot(&proto.hat);
                let dp = linalg::normalize_rows_backward(
                    fc.spatial_unit.slice(s![first_prompt.., ..]),
                    fc.spatial_norms.slice(s![first_prompt..]),
                    dunit.view(),
                );
                d_prompts += &dp;
            }
            d_proto_hat = Some(dproto);
        }

        SampleGrads {
            text_hat: d_text_hat,
            proto_hat: d_proto_hat,
            prompts: (prompt_rows > 0).then_some(d_prompts),
        }
    }

    /// Turns accumulated intermediate gradients into parameter gradients.
    pub fn backward(&self, g: &SampleGrads) -> Result<Params> {
        let p = self.pipeline;
        let t = &p.cfg.toggles;
        let mut out = self.params.zeros_like();

        let d_text_tilde = match &self.text_pass {
            Some(pass) => {
                let d_enc = linalg::normalize_rows_backward(
                    self.text_hat.view(),
                    self.text_hat_norms.view(),
                    g.text_hat.view(),
                );
                let (dx, denc) = pass.backward(d_enc.view())?;
                out.text_encoder.add_assign(&denc);
                dx
            }
            None => g.text_hat.clone(),
        };
        if t.text_prompt {
            out.text_offsets = linalg::normalize_rows_backward(
                self.text_tilde.view(),
                self.text_tilde_norms.view(),
                d_text_tilde.view(),
            );
        }

        if let (Some(proto), Some(dhat)) = (&self.proto, &g.proto_hat) {
            if let Some(pass) = &proto.pass {
                let d_enc = linalg::normalize_rows_backward(
                    proto.hat.view(),
                    proto.hat_norms.view(),
                    dhat.view(),
                );
                let (_, denc) = pass.backward(d_enc.view())?;
                match out.visual_encoder.as_mut() {
                    Some(v) if !p.cfg.share_encoders => v.add_assign(&denc),
                    _ => out.text_encoder.add_assign(&denc),
                }
            }
        }
        if let Some(dp) = &g.prompts {
            out.visual_prompts = dp.clone();
        }
        Ok(out)
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}
