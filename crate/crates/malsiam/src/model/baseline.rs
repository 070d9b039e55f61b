//! An independently coded plain Siamese network.
//!
//! This is a from-scratch reimplementation of the unconditioned twin
//! network — direct six-deep convolution loops, no im2col, no autograd, no
//! shared forward code — used as an oracle: with no generated layers and
//! the auxiliary loss weights at zero, the full engine must reproduce this
//! network's forward pass and loss on identical parameters. It is
//! deliberately slow and simple.

use crate::tensor::Tensor;

use super::{ModelParams, CONV_KERNEL, CONV_PAD, CONV_STRIDE, POOL_KERNELS};

struct NaiveConv {
    weight: Vec<f64>, // [out][in][k][k]
    bias: Vec<f64>,
    out_ch: usize,
    in_ch: usize,
    pool: usize,
}

struct NaiveLinear {
    weight: Vec<f64>, // [out][in]
    bias: Vec<f64>,
    out_dim: usize,
    in_dim: usize,
}

/// Plain twin network: conv stack → FC head → L2 distance →
/// `sigmoid(shift − d)` → binary cross-entropy.
pub struct GenericSnn {
    convs: Vec<NaiveConv>,
    fc1: NaiveLinear,
    fc2: NaiveLinear,
    shift: f64,
    input_side: usize,
}

impl GenericSnn {
    /// Copy the shared parameters out of a trained/initialized parameter
    /// store. Meta-learner and classifier tensors, if present, are ignored:
    /// this network has no task conditioning.
    pub fn from_params(params: &ModelParams, input_side: usize) -> Self {
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for (i, &out_ch) in params.config.conv_channels.iter().enumerate() {
            convs.push(NaiveConv {
                weight: params.get(&format!("conv{i}.w")).data.clone(),
                bias: params.get(&format!("conv{i}.b")).data.clone(),
                out_ch,
                in_ch,
                pool: POOL_KERNELS[i],
            });
            in_ch = out_ch;
        }
        let linear = |w: &Tensor, b: &Tensor| NaiveLinear {
            weight: w.data.clone(),
            bias: b.data.clone(),
            out_dim: w.shape[0],
            in_dim: w.shape[1],
        };
        GenericSnn {
            convs,
            fc1: linear(params.get("fc1.w"), params.get("fc1.b")),
            fc2: linear(params.get("fc2.w"), params.get("fc2.b")),
            shift: params.shift(),
            input_side,
        }
    }

    /// Embed one single-channel `side × side` input (already rescaled).
    pub fn embed(&self, input: &[f64]) -> Vec<f64> {
        let mut act = input.to_vec();
        let mut side = self.input_side;
        for conv in &self.convs {
            let out_side = (side + 2 * CONV_PAD - CONV_KERNEL) / CONV_STRIDE + 1;
            let mut conved = vec![0.0; conv.out_ch * out_side * out_side];
            for f in 0..conv.out_ch {
                for oy in 0..out_side {
                    for ox in 0..out_side {
                        let mut acc = 0.0;
                        for c in 0..conv.in_ch {
                            for ky in 0..CONV_KERNEL {
                                for kx in 0..CONV_KERNEL {
                                    let iy = (oy * CONV_STRIDE + ky) as isize - CONV_PAD as isize;
                                    let ix = (ox * CONV_STRIDE + kx) as isize - CONV_PAD as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= side as isize
                                        || ix >= side as isize
                                    {
                                        continue;
                                    }
                                    let w = conv.weight[((f * conv.in_ch + c) * CONV_KERNEL + ky)
                                        * CONV_KERNEL
                                        + kx];
                                    let x =
                                        act[(c * side + iy as usize) * side + ix as usize];
                                    acc += w * x;
                                }
                            }
                        }
                        let v = acc + conv.bias[f];
                        conved[(f * out_side + oy) * out_side + ox] = if v > 0.0 { v } else { 0.0 };
                    }
                }
            }
            let pooled_side = out_side / conv.pool;
            let mut pooled = vec![0.0; conv.out_ch * pooled_side * pooled_side];
            for f in 0..conv.out_ch {
                for py in 0..pooled_side {
                    for px in 0..pooled_side {
                        let mut best = f64::NEG_INFINITY;
                        for wy in 0..conv.pool {
                            for wx in 0..conv.pool {
                                let y = py * conv.pool + wy;
                                let x = px * conv.pool + wx;
                                let v = conved[(f * out_side + y) * out_side + x];
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        pooled[(f * pooled_side + py) * pooled_side + px] = best;
                    }
                }
            }
            act = pooled;
            side = pooled_side;
        }

        let mut hidden = vec![0.0; self.fc1.out_dim];
        for (o, h) in hidden.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..self.fc1.in_dim {
                acc += self.fc1.weight[o * self.fc1.in_dim + i] * act[i];
            }
            let v = acc + self.fc1.bias[o];
            *h = if v > 0.0 { v } else { 0.0 };
        }
        let mut out = vec![0.0; self.fc2.out_dim];
        for (o, e) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..self.fc2.in_dim {
                acc += self.fc2.weight[o * self.fc2.in_dim + i] * hidden[i];
            }
            *e = acc + self.fc2.bias[o];
        }
        out
    }

    /// Distance and similarity probability for one pair of rescaled inputs.
    pub fn pair_forward(&self, x1: &[f64], x2: &[f64]) -> (f64, f64) {
        let h1 = self.embed(x1);
        let h2 = self.embed(x2);
        let mut sq = 0.0;
        for (a, b) in h1.iter().zip(&h2) {
            sq += (a - b) * (a - b);
        }
        let d = sq.sqrt();
        let p = 1.0 / (1.0 + (d - self.shift).exp());
        (d, p.clamp(1e-7, 1.0 - 1e-7))
    }

    /// Mean binary cross-entropy over a batch of pairs.
    pub fn batch_bce(&self, pairs: &[(&[f64], &[f64])], labels: &[f64]) -> f64 {
        assert_eq!(pairs.len(), labels.len());
        let mut total = 0.0;
        for ((x1, x2), &y) in pairs.iter().zip(labels) {
            let (_, p) = self.pair_forward(x1, x2);
            total += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        }
        total / pairs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::derive;

    #[test]
    fn embeds_and_scores_a_small_input() {
        let cfg = ModelConfig {
            conv_channels: vec![3, 4],
            fc_hidden: 8,
            task_input_dim: 4,
            embedding_dim: 5,
            n_families: 2,
            generated_layers: 0,
            ..ModelConfig::default()
        };
        // Build on a 21×21 input: 21 →(pool3) 7 →(pool2) 3.
        let side = 21;
        let mut params = ModelParams::init(&cfg, 5).unwrap();
        let flat = 4 * 3 * 3;
        let mut rng = derive(5, "baseline/test", 0);
        params
            .tensors
            .insert("fc1.w".into(), Tensor::uniform(&mut rng, &[8, flat], -0.1, 0.1));
        let x1 = Tensor::uniform(&mut rng, &[side * side], 0.0, 1.0).data;
        let x2 = Tensor::uniform(&mut rng, &[side * side], 0.0, 1.0).data;

        let snn = GenericSnn::from_params(&params, side);
        let h = snn.embed(&x1);
        assert_eq!(h.len(), 5);
        let (d, p) = snn.pair_forward(&x1, &x2);
        assert!(d >= 0.0 && p > 0.0 && p < 1.0);
        let (d_same, p_same) = snn.pair_forward(&x1, &x1);
        assert_eq!(d_same, 0.0);
        assert!(p_same > 0.5, "identical inputs must look similar");
        let loss = snn.batch_bce(&[(&x1, &x2), (&x1, &x1)], &[0.0, 1.0]);
        assert!(loss.is_finite() && loss > 0.0);
    }
}
