//! Per-level accuracy, cross-level consistency, sweeps and their reports.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::embedding_store::{ImageFeatures, TextTable};
use crate::error::{shape_err, HgtError, Result};
use crate::graph_encoder::Variant;
use crate::hierarchy::{HierGraph, Taxonomy};
use crate::objective;
use crate::trainer::{self, ModelState, Pipeline, Toggles, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub per_level_top1: Vec<f64>,
    pub consistency_rate: f64,
    pub n_samples: usize,
}

/// Fraction of samples whose prediction matches the label, per level.
pub fn top1_per_level(predictions: &[Vec<usize>], labels: &[Vec<usize>]) -> Result<Vec<f64>> {
    if predictions.len() != labels.len() {
        return Err(shape_err(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(HgtError::EmptyInput("no samples to score".into()));
    }
    let h = labels[0].len();
    let mut hits = vec![0usize; h];
    for (p, l) in predictions.iter().zip(labels) {
        if p.len() != h || l.len() != h {
            return Err(shape_err("prediction and label paths differ in length"));
        }
        for i in 0..h {
            hits[i] += usize::from(p[i] == l[i]);
        }
    }
    let n = predictions.len() as f64;
    Ok(hits.into_iter().map(|c| c as f64 / n).collect())
}

/// Fraction of samples whose per-level predictions form a parent chain.
pub fn consistency(predictions: &[Vec<usize>], taxonomy: &Taxonomy) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let ok = predictions
        .iter()
        .filter(|p| taxonomy.is_consistent_path(p))
        .count();
    ok as f64 / predictions.len() as f64
}

/// Per-level argmax predictions for every image.
pub fn predict_all(
    pipeline: &Pipeline<'_>,
    state: &ModelState,
    images: &[ImageFeatures],
) -> Result<Vec<Vec<usize>>> {
    let prepared = pipeline.prepare(&state.params, state.prototypes.as_ref())?;
    images
        .par_iter()
        .map(|img| {
            let (bundle, _) = prepared.forward_sample(img)?;
            objective::predict(&bundle, pipeline.taxonomy)
        })
        .collect()
}

pub fn evaluate(
    pipeline: &Pipeline<'_>,
    state: &ModelState,
    images: &[ImageFeatures],
) -> Result<EvalResult> {
    trainer::check_dataset(pipeline.taxonomy, pipeline.dim(), images)?;
    let preds = predict_all(pipeline, state, images)?;
    let labels: Vec<Vec<usize>> = images.iter().map(|i| i.label_path.clone()).collect();
    Ok(EvalResult {
        per_level_top1: top1_per_level(&preds, &labels)?,
        consistency_rate: consistency(&preds, pipeline.taxonomy),
        n_samples: images.len(),
    })
}

/// Which configuration knob a sweep varies.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Depth(Vec<usize>),
    Variant(Vec<Variant>),
    Toggles(Vec<Toggles>),
}

impl SweepAxis {
    pub fn depth() -> Self {
        SweepAxis::Depth((1..=5).collect())
    }

    pub fn variant() -> Self {
        SweepAxis::Variant(Variant::ALL.to_vec())
    }

    pub fn toggles() -> Self {
        SweepAxis::Toggles(Toggles::ablation_grid().to_vec())
    }

    fn settings(&self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        match self {
            SweepAxis::Depth(ds) => ds
                .iter()
                .map(|&d| {
                    let mut c = base.clone();
                    c.text_encoder.depth = d;
                    c.visual_encoder.depth = d;
                    (format!("depth={d}"), c)
                })
                .collect(),
            SweepAxis::Variant(vs) => vs
                .iter()
                .map(|&v| {
                    let mut c = base.clone();
                    c.text_encoder.variant = v;
                    c.visual_encoder.variant = v;
                    (format!("variant={}", v.name()), c)
                })
                .collect(),
            SweepAxis::Toggles(ts) => ts
                .iter()
                .map(|&t| {
                    let mut c = base.clone();
                    c.toggles = t;
                    (format!("toggles={}", t.label()), c)
                })
                .collect(),
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = HgtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(SweepAxis::depth()),
            "variant" => Ok(SweepAxis::variant()),
            "toggles" => Ok(SweepAxis::toggles()),
            other => Err(HgtError::Range(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub setting: String,
    pub result: EvalResult,
    pub seed: u64,
    pub wall_time_s: f64,
}

/// Borrowed training and evaluation data.
#[derive(Debug, Clone, Copy)]
pub struct DataRefs<'a> {
    pub taxonomy: &'a Taxonomy,
    pub graph: &'a HierGraph,
    pub text: &'a TextTable,
    pub train: &'a [ImageFeatures],
    pub test: &'a [ImageFeatures],
}

/// Trains and evaluates one model.
pub fn run_setting(setting: &str, cfg: &TrainConfig, data: DataRefs<'_>) -> Result<SweepRow> {
    let start = Instant::now();
    let pipeline = Pipeline::new(data.taxonomy, data.graph, data.text, cfg)?;
    let fitted = trainer::fit(&pipeline, data.train)?;
    let result = evaluate(&pipeline, &fitted.state, data.test)?;
    Ok(SweepRow {
        setting: setting.to_string(),
        result,
        seed: cfg.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// One trained model per axis value, all sharing `base.seed`.
pub fn sweep(axis: &SweepAxis, base: &TrainConfig, data: DataRefs<'_>) -> Result<Vec<SweepRow>> {
    axis.settings(base)
        .iter()
        .map(|(name, cfg)| run_setting(name, cfg, data))
        .collect()
}

pub const CSV_HEADER: &str = "setting,level,top1,consistency,n,seed,wall_time_s";

/// One CSV line per (setting, level).
pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        for (l, acc) in r.result.per_level_top1.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{},{},{:.3}",
                r.setting,
                l + 1,
                acc,
                r.result.consistency_rate,
                r.result.n_samples,
                r.seed,
                r.wall_time_s
            );
        }
    }
    out
}

/// Aligned plain-text table, one row per setting, accuracies in percent.
pub fn render_table(rows: &[SweepRow]) -> String {
    let h = rows.first().map_or(0, |r| r.result.per_level_top1.len());
    let width = rows
        .iter()
        .map(|r| r.setting.len())
        .max()
        .unwrap_or(7)
        .max(7);
    let mut out = format!("{:<width$}", "setting");
    for l in 1..=h {
        let _ = write!(out, " {:>8}", format!("l{l}"));
    }
    let _ = writeln!(out, " {:>11} {:>6}", "consistency", "n");
    for r in rows {
        let _ = write!(out, "{:<width$}", r.setting);
        for acc in &r.result.per_level_top1 {
            let _ = write!(out, " {:>8.2}", acc * 100.0);
        }
        let _ = writeln!(
            out,
            " {:>11.2} {:>6}",
            r.result.consistency_rate * 100.0,
            r.result.n_samples
        );
    }
    out
}
