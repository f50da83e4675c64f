use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, HgtError, Result};
use crate::graph_encoder::EncoderParams;

/// Every trainable tensor of the model.
///
/// The same struct doubles as the gradient container, so optimizer and
/// gradient-check code can walk parameters and gradients in lockstep through
/// [`Params::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// K×D offsets added to the frozen text table before normalization.
    pub text_offsets: Array2<f64>,
    /// v×D rows appended to every spatial map.
    pub visual_prompts: Array2<f64>,
    pub text_encoder: EncoderParams,
    /// `None` when both modalities share `text_encoder`.
    pub visual_encoder: Option<EncoderParams>,
}

/// A named, flattened view of one parameter tensor.
#[derive(Debug)]
pub struct Block<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

#[derive(Debug)]
pub struct BlockMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a mut [f64],
}

impl Params {
    pub(crate) fn init(
        nodes: usize,
        prompt_rows: usize,
        prompt_std: f64,
        text_encoder: EncoderParams,
        visual_encoder: Option<EncoderParams>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let dim = text_encoder.dim();
        let normal = Normal::new(0.0, prompt_std)
            .map_err(|e| HgtError::Range(format!("prompt init std: {e}")))?;
        let visual_prompts =
            Array2::from_shape_simple_fn((prompt_rows, dim), || normal.sample(rng));
        Ok(Params {
            text_offsets: Array2::zeros((nodes, dim)),
            visual_prompts,
            text_encoder,
            visual_encoder,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            text_offsets: Array2::zeros(self.text_offsets.raw_dim()),
            visual_prompts: Array2::zeros(self.visual_prompts.raw_dim()),
            text_encoder: self.text_encoder.zeros_like(),
            visual_encoder: self.visual_encoder.as_ref().map(EncoderParams::zeros_like),
        }
    }

    pub fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = vec![
            Block {
                name: "text_offsets".into(),
                shape: self.text_offsets.shape().to_vec(),
                values: self.text_offsets.as_slice().expect("standard layout"),
            },
            Block {
                name: "visual_prompts".into(),
                shape: self.visual_prompts.shape().to_vec(),
                values: self.visual_prompts.as_slice().expect("standard layout"),
            },
        ];
        let encoders = [
            ("text_encoder", Some(&self.text_encoder)),
            ("visual_encoder", self.visual_encoder.as_ref()),
        ];
        for (prefix, enc) in encoders {
            let Some(enc) = enc else { continue };
            let tag = enc.variant().name();
            for (i, layer) in enc.layers.iter().enumerate() {
                for ((name, values), shape) in layer.blocks().into_iter().zip(layer.shapes()) {
                    out.push(Block {
                        name: format!("{prefix}.{i}.{tag}.{name}"),
                        shape,
                        values,
                    });
                }
            }
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = vec![
            BlockMut {
                name: "text_offsets".into(),
                shape: self.text_offsets.shape().to_vec(),
                values: self.text_offsets.as_slice_mut().expect("standard layout"),
            },
            BlockMut {
                name: "visual_prompts".into(),
                shape: self.visual_prompts.shape().to_vec(),
                values: self.visual_prompts.as_slice_mut().expect("standard layout"),
            },
        ];
        let encoders = [
            ("text_encoder", Some(&mut self.text_encoder)),
            ("visual_encoder", self.visual_encoder.as_mut()),
        ];
        for (prefix, enc) in encoders {
            let Some(enc) = enc else { continue };
            let tag = enc.variant().name();
            for (i, layer) in enc.layers.iter_mut().enumerate() {
                let shapes = layer.shapes();
                for ((name, values), shape) in layer.blocks_mut().into_iter().zip(shapes) {
                    out.push(BlockMut {
                        name: format!("{prefix}.{i}.{tag}.{name}"),
                        shape,
                        values,
                    });
                }
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    /// Errors unless both sets have identical block names and shapes.
    pub fn check_same_layout(&self, other: &Params) -> Result<()> {
        let a = self.blocks();
        let b = other.blocks();
        if a.len() != b.len() {
            return Err(shape_err(format!(
                "{} parameter blocks vs {}",
                a.len(),
                b.len()
            )));
        }
        for (x, y) in a.iter().zip(&b) {
            if x.name != y.name || x.shape != y.shape {
                return Err(shape_err(format!(
                    "block {} {:?} vs {} {:?}",
                    x.name, x.shape, y.name, y.shape
                )));
            }
        }
        Ok(())
    }

    /// `self += scale * other` over every block.
    pub fn add_scaled(&mut self, scale: f64, other: &Params) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.values.iter_mut().zip(b.values) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.blocks_mut() {
            b.values.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.values.iter().all(|v| v.is_finite()))
    }

    /// Rounds every value to the nearest `f32`, the precision checkpoints store.
    pub fn round_to_f32(&mut self) {
        for b in self.blocks_mut() {
            for v in b.values.iter_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }
}
