use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_data(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Convolution of one branch. `kernel` has shape `[width, input_dims, filters]`:
/// tap `w` is a `input_dims x filters` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// One LSTM layer. Gate blocks are laid out `[input, forget, cell, output]`
/// along the `4 * units` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_input: Tensor,
    pub w_recurrent: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    pub conv: Vec<ConvParams>,
    pub lstm: Vec<LstmParams>,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl ModelParams {
    /// All-zero parameters shaped by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.lstm_units;
        let conv = config
            .branches
            .iter()
            .map(|b| ConvParams {
                kernel: Tensor::zeros(&[b.conv_width, b.input_dims, b.conv_filters]),
                bias: Tensor::zeros(&[b.conv_filters]),
            })
            .collect();
        let lstm = (0..config.lstm_layers)
            .map(|l| {
                let input = if l == 0 { config.lstm_input_dims() } else { h };
                LstmParams {
                    w_input: Tensor::zeros(&[input, 4 * h]),
                    w_recurrent: Tensor::zeros(&[h, 4 * h]),
                    bias: Tensor::zeros(&[4 * h]),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            conv,
            lstm,
            embed_w: Tensor::zeros(&[h, config.embed_units]),
            embed_b: Tensor::zeros(&[config.embed_units]),
            head_w: Tensor::zeros(&[config.embed_units]),
            head_b: Tensor::zeros(&[1]),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Tensors in declaration order: per branch kernel and bias, per LSTM
    /// layer input weights, recurrent weights and bias, then the embedding
    /// and head weights and biases.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.conv {
            out.push(&c.kernel);
            out.push(&c.bias);
        }
        for l in &self.lstm {
            out.push(&l.w_input);
            out.push(&l.w_recurrent);
            out.push(&l.bias);
        }
        out.extend([&self.embed_w, &self.embed_b, &self.head_w, &self.head_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.kernel);
            out.push(&mut c.bias);
        }
        for l in &mut self.lstm {
            out.push(&mut l.w_input);
            out.push(&mut l.w_recurrent);
            out.push(&mut l.bias);
        }
        out.extend([
            &mut self.embed_w,
            &mut self.embed_b,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }

    /// Human-readable names, parallel to [`ModelParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for b in 0..self.conv.len() {
            out.push(format!("conv{b}.kernel"));
            out.push(format!("conv{b}.bias"));
        }
        for l in 0..self.lstm.len() {
            out.push(format!("lstm{l}.w_input"));
            out.push(format!("lstm{l}.w_recurrent"));
            out.push(format!("lstm{l}.bias"));
        }
        out.extend(["embed.w", "embed.b", "head.w", "head.b"].map(String::from));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    pub(crate) fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    /// Flat copy of every scalar in declaration order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// Uniform `(-s, s)` weights with `s = sqrt(1 / fan_in)`, zero biases except
/// the LSTM forget gate, which starts at 1. Fully determined by `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fill = |t: &mut Tensor, fan_in: usize| {
        let s = (1.0 / fan_in as f64).sqrt();
        for v in t.data_mut() {
            *v = rng.random_range(-s..s);
        }
    };
    let h = config.lstm_units;
    for (c, b) in params.conv.iter_mut().zip(&config.branches) {
        fill(&mut c.kernel, b.input_dims * b.conv_width);
    }
    for (l, layer) in params.lstm.iter_mut().enumerate() {
        let input = if l == 0 { config.lstm_input_dims() } else { h };
        fill(&mut layer.w_input, input);
        fill(&mut layer.w_recurrent, h);
        layer.bias.data_mut()[h..2 * h].fill(1.0);
    }
    fill(&mut params.embed_w, h);
    fill(&mut params.head_w, config.embed_units);
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::param_count;

    #[test]
    fn deterministic_from_seed() {
        let c = ModelConfig::new(&[6], 42);
        assert_eq!(init_params(&c).unwrap(), init_params(&c).unwrap());
        let other = ModelConfig::new(&[6], 43);
        assert_ne!(init_params(&c).unwrap(), init_params(&other).unwrap());
    }

    #[test]
    fn forget_bias_is_one() {
        let c = ModelConfig::new(&[6], 1);
        let p = init_params(&c).unwrap();
        for layer in &p.lstm {
            let b = layer.bias.data();
            assert!(b[128..256].iter().all(|&v| v == 1.0));
            assert!(b[..128].iter().chain(&b[256..]).all(|&v| v == 0.0));
        }
        assert!(p.conv[0].bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mfb_kernel_shape() {
        let p = init_params(&ModelConfig::new(&[40], 0)).unwrap();
        assert_eq!(p.conv[0].kernel.shape(), &[5, 40, 40]);
        let s = (1.0f64 / 200.0).sqrt();
        assert!(p.conv[0].kernel.data().iter().all(|v| v.abs() < s));
    }

    #[test]
    fn count_matches_instantiated_tensors() {
        for dims in [&[1][..], &[40], &[768], &[7, 3]] {
            let c = ModelConfig::new(dims, 0);
            assert_eq!(ModelParams::zeros(&c).unwrap().num_scalars(), param_count(&c));
        }
    }
}
