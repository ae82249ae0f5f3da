use super::config::TaggerConfig;
use crate::data::{random_embeddings, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::rng::Rng;

/// Positions of the tagger's arrays in [`TaggerParams::tensors`].
pub mod slot {
    pub const WORD_EMB: usize = 0;
    pub const CHAR_EMB: usize = 1;
    pub const CONV_KERNEL: usize = 2;
    pub const CONV_BIAS: usize = 3;
    pub const FWD_INPUT: usize = 4;
    pub const FWD_HIDDEN: usize = 5;
    pub const FWD_BIAS: usize = 6;
    pub const BWD_INPUT: usize = 7;
    pub const BWD_HIDDEN: usize = 8;
    pub const BWD_BIAS: usize = 9;
    pub const EMIT_W: usize = 10;
    pub const EMIT_B: usize = 11;
    pub const TRANSITIONS: usize = 12;
}

/// All learnable arrays of one tagger.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerParams<F> {
    tensors: Vec<Tensor<F>>,
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f32> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols)
        .map(|_| rng.uniform_range(-bound, bound) as f32)
        .collect()
}

impl<F: Real> TaggerParams<F> {
    /// Random initialisation. When `pretrained` is given its vectors seed
    /// the word embedding table.
    pub fn init(config: &TaggerConfig, rng: &mut Rng, pretrained: Option<&EmbeddingTable>) -> Result<Self> {
        config.validate()?;
        let h = config.lstm_hidden;
        let mut arrays: Vec<Vec<f32>> = Vec::new();
        for (name, shape) in config.param_shapes() {
            let (rows, cols) = match shape.len() {
                1 => (1, shape[0]),
                _ => (shape[0], shape[1]),
            };
            let values = match name {
                "word_embeddings" => match pretrained {
                    Some(table) => {
                        if table.dim != config.word_dim || table.vectors.len() != rows * cols {
                            return Err(Error::dims(
                                "pretrained embeddings",
                                &shape,
                                &[table.vectors.len() / table.dim.max(1), table.dim],
                            ));
                        }
                        table.vectors.clone()
                    }
                    None => random_embeddings(rows, cols, rng),
                },
                "char_embeddings" => random_embeddings(rows, cols, rng),
                "lstm_fwd_bias" | "lstm_bwd_bias" => {
                    // Forget gate starts open.
                    let mut b = vec![0.0; 4 * h];
                    b[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
                    b
                }
                "char_conv_bias" | "emission_bias" | "crf_transitions" => vec![0.0; rows * cols],
                _ => glorot(rows, cols, rng),
            };
            arrays.push(values);
        }
        Self::from_arrays(config, arrays)
    }

    /// Wraps raw arrays (in [`TaggerConfig::param_shapes`] order).
    pub fn from_arrays(config: &TaggerConfig, arrays: Vec<Vec<f32>>) -> Result<Self> {
        let shapes = config.param_shapes();
        if arrays.len() != shapes.len() {
            return Err(Error::dims("tagger params", &[shapes.len()], &[arrays.len()]));
        }
        let tensors = shapes
            .into_iter()
            .zip(arrays)
            .map(|((_, shape), values)| {
                let values = values.into_iter().map(|v| F::of(v as f64)).collect();
                Tensor::param(shape, values)
            })
            .collect::<Result<Vec<_>>>()?;
        let p = Self { tensors };
        if !p.is_finite() {
            return Err(Error::NonFinite("tagger params".into()));
        }
        Ok(p)
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn count_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<G: Real>(&self) -> TaggerParams<G> {
        TaggerParams {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }
}
