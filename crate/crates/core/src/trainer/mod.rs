//! Training: configuration, model state, SGD with cosine annealing, the fit
//! loop, gradient checking and checkpoints.

mod checkpoint;
mod gradcheck;
mod params;
mod pipeline;

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, state_from_blocks, write_checkpoint,
    NamedBlock, CHECKPOINT_MAGIC,
};
pub use gradcheck::{
    compare_gradients, gradcheck, numeric_gradient, rel_err, BlockReport, GradReport, DEFAULT_STEP,
    FLAG_THRESHOLD,
};
pub use params::{Block, BlockMut, Params};
pub use pipeline::{Pipeline, Prepared, SampleCache, SampleGrads};

use crate::embedding_store::{
    prototypes_from_globals, ImageFeatures, PrototypeTable, DEFAULT_VISUAL_PROMPTS,
};
use crate::error::{shape_err, HgtError, Result};
use crate::fusion::FusionConfig;
use crate::graph_encoder::{Activation, EncoderParams, Init, Variant};
use crate::hierarchy::Taxonomy;
use crate::linalg;
use crate::objective::LossConfig;

/// Ablation switches: text prompt, text graph, visual prompt, visual graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Toggles {
    pub text_prompt: bool,
    pub text_graph: bool,
    pub visual_prompt: bool,
    pub visual_graph: bool,
}

impl Toggles {
    pub const ALL_ON: Toggles = Toggles::new(true, true, true, true);
    pub const ALL_OFF: Toggles = Toggles::new(false, false, false, false);

    pub const fn new(tp: bool, tg: bool, vp: bool, vg: bool) -> Self {
        Toggles {
            text_prompt: tp,
            text_graph: tg,
            visual_prompt: vp,
            visual_graph: vg,
        }
    }

    /// The nine component combinations of the ablation grid, baseline first.
    pub fn ablation_grid() -> [Toggles; 9] {
        [
            Toggles::new(false, false, false, false),
            Toggles::new(true, false, false, false),
            Toggles::new(false, false, true, false),
            Toggles::new(true, true, false, false),
            Toggles::new(false, false, true, true),
            Toggles::new(true, false, true, false),
            Toggles::new(true, false, true, true),
            Toggles::new(true, true, true, false),
            Toggles::new(true, true, true, true),
        ]
    }

    /// Compact label such as `TP+VP`, or `none`.
    pub fn label(&self) -> String {
        let names: Vec<&str> = [
            (self.text_prompt, "TP"),
            (self.text_graph, "TG"),
            (self.visual_prompt, "VP"),
            (self.visual_graph, "VG"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        if names.is_empty() {
            "none".into()
        } else {
            names.join("+")
        }
    }
}

impl FromStr for Toggles {
    type Err = HgtError;

    /// Accepts the enabled components as a list (`TP,TG,VP,VG`, `TP+VP`),
    /// a 4-digit mask (`1010`), or `none` / `all`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "" | "none" => return Ok(Toggles::ALL_OFF),
            "all" => return Ok(Toggles::ALL_ON),
            _ => {}
        }
        if s.len() == 4 && s.chars().all(|c| c == '0' || c == '1') {
            let b: Vec<bool> = s.chars().map(|c| c == '1').collect();
            return Ok(Toggles::new(b[0], b[1], b[2], b[3]));
        }
        let mut t = Toggles::ALL_OFF;
        for part in s.split([',', '+']) {
            match part.trim().to_ascii_uppercase().as_str() {
                "TP" => t.text_prompt = true,
                "TG" => t.text_graph = true,
                "VP" => t.visual_prompt = true,
                "VG" => t.visual_graph = true,
                "" => {}
                other => return Err(HgtError::Range(format!("unknown toggle {other:?}"))),
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub variant: Variant,
    pub depth: usize,
    pub activation: Activation,
    pub init: Init,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: Variant::Gat,
            depth: 3,
            activation: Activation::Identity,
            init: Init::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub toggles: Toggles,
    pub text_encoder: EncoderConfig,
    pub visual_encoder: EncoderConfig,
    /// One encoder for both modalities instead of two.
    pub share_encoders: bool,
    pub fusion: FusionConfig,
    pub loss: LossConfig,
    pub visual_prompt_rows: usize,
    pub prompt_init_std: f64,
}

impl TrainConfig {
    pub const DEFAULT_LR: f64 = 3e-4;
    pub const DEFAULT_EPOCHS: usize = 50;
    pub const DEFAULT_BATCH: usize = 64;

    pub fn defaults(dim: usize, levels: usize) -> Self {
        TrainConfig {
            lr0: Self::DEFAULT_LR,
            lr_min: 0.0,
            epochs: Self::DEFAULT_EPOCHS,
            batch_size: Self::DEFAULT_BATCH,
            seed: 0,
            toggles: Toggles::ALL_ON,
            text_encoder: EncoderConfig::default(),
            visual_encoder: EncoderConfig::default(),
            share_encoders: false,
            fusion: FusionConfig::for_dim(dim),
            loss: LossConfig::default_for_levels(levels),
            visual_prompt_rows: DEFAULT_VISUAL_PROMPTS,
            prompt_init_std: 0.02,
        }
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(HgtError::Range(format!(
                "lr0 must be nonnegative, got {}",
                self.lr0
            )));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return Err(HgtError::Range("lr_min must lie in [0, lr0]".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HgtError::Range("epochs and batch size must be >= 1".into()));
        }
        if self.text_encoder.depth == 0 || self.visual_encoder.depth == 0 {
            return Err(HgtError::Range("encoder depth must be >= 1".into()));
        }
        self.fusion.validate()?;
        self.loss.validate(levels)
    }
}

/// Trainable parameters plus the prototype table they were last paired with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: Params,
    pub prototypes: Option<PrototypeTable>,
    pub step: u64,
}

impl ModelState {
    /// Seeded initialization; parameters start on the `f32` grid.
    pub fn init(cfg: &TrainConfig, nodes: usize, dim: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let text_encoder = EncoderParams::init(
            cfg.text_encoder.variant,
            cfg.text_encoder.depth,
            dim,
            cfg.text_encoder.activation,
            cfg.text_encoder.init,
            &mut rng,
        );
        let visual_encoder = (!cfg.share_encoders).then(|| {
            EncoderParams::init(
                cfg.visual_encoder.variant,
                cfg.visual_encoder.depth,
                dim,
                cfg.visual_encoder.activation,
                cfg.visual_encoder.init,
                &mut rng,
            )
        });
        let mut params = Params::init(
            nodes,
            cfg.visual_prompt_rows,
            cfg.prompt_init_std,
            text_encoder,
            visual_encoder,
            &mut rng,
        )?;
        params.round_to_f32();
        Ok(ModelState {
            params,
            prototypes: None,
            step: 0,
        })
    }
}

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π t / T))`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if total == 0 || t > total {
        return Err(HgtError::Range(format!("step {t} outside 0..={total}")));
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}

/// Plain SGD: `p ← p − lr · g` on every trainable block.
pub fn sgd_step(state: &mut ModelState, grads: &Params, lr: f64) -> Result<()> {
    state.params.check_same_layout(grads)?;
    if !grads.all_finite() {
        return Err(HgtError::NaN("gradients".into()));
    }
    state.params.add_scaled(-lr, grads);
    if !state.params.all_finite() {
        return Err(HgtError::NaN(format!(
            "parameters after step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    Ok(())
}

/// Recomputes prototypes from the current prompted global features of `train`.
pub fn refresh_prototypes(
    pipeline: &Pipeline<'_>,
    state: &mut ModelState,
    train: &[ImageFeatures],
) -> Result<()> {
    let globals = train
        .iter()
        .map(|img| pipeline.prompted_global(&state.params, img))
        .collect::<Result<Vec<_>>>()?;
    let mut table = prototypes_from_globals(
        pipeline.taxonomy,
        pipeline.dim(),
        train.iter().zip(&globals).map(|(img, g)| (img.leaf(), g)),
    )?;
    table.values.mapv_inplace(|v| f64::from(v as f32));
    state.prototypes = Some(table);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: ModelState,
    pub log: Vec<EpochMetrics>,
}

pub fn check_dataset(taxonomy: &Taxonomy, dim: usize, images: &[ImageFeatures]) -> Result<()> {
    if images.is_empty() {
        return Err(HgtError::Data("dataset is empty".into()));
    }
    for (i, img) in images.iter().enumerate() {
        if img.spatial.ncols() != dim {
            return Err(shape_err(format!(
                "image {i} has width {}, model width is {dim}",
                img.spatial.ncols()
            )));
        }
        if !taxonomy.is_consistent_path(&img.label_path) {
            return Err(HgtError::Data(format!(
                "image {i} label path {:?} does not follow the taxonomy",
                img.label_path
            )));
        }
    }
    Ok(())
}

/// Trains from a fresh seeded state.
pub fn fit(pipeline: &Pipeline<'_>, train: &[ImageFeatures]) -> Result<FitResult> {
    let state = ModelState::init(pipeline.cfg, pipeline.graph.node_count(), pipeline.dim())?;
    fit_from(pipeline, state, train)
}

/// Runs `cfg.epochs` epochs of minibatch SGD starting from `state`.
///
/// The learning rate follows the cosine schedule per epoch; prototypes are
/// refreshed at the start of every epoch and held constant within it.
pub fn fit_from(
    pipeline: &Pipeline<'_>,
    mut state: ModelState,
    train: &[ImageFeatures],
) -> Result<FitResult> {
    let cfg = pipeline.cfg;
    check_dataset(pipeline.taxonomy, pipeline.dim(), train)?;
    // offset so the shuffle stream differs from the init stream
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min)?;
        if cfg.fusion.lambda2 != 0.0 {
            refresh_prototypes(pipeline, &mut state, train)?;
        }
        order.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ImageFeatures> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = pipeline.loss_and_grad(&state, &batch)?;
            if !loss.is_finite() {
                return Err(HgtError::NaN(format!("loss at epoch {epoch}")));
            }
            sgd_step(&mut state, &grads, lr)?;
            state.params.round_to_f32();
            batch_losses.push(loss * batch.len() as f64);
        }
        log.push(EpochMetrics {
            epoch,
            lr,
            mean_loss: linalg::pairwise_sum(&batch_losses) / train.len() as f64,
        });
    }
    if cfg.fusion.lambda2 != 0.0 {
        refresh_prototypes(pipeline, &mut state, train)?;
    }
    Ok(FitResult { state, log })
}
