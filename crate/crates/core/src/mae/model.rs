use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, ConvGeom};
use super::{MaeConfig, MaskedBatch};
use crate::error::{Result, SafeError};
use crate::rng;

const ENC1_CH: usize = 8;
const ENC2_CH: usize = 16;

/// Parameter tensors in storage order.
pub const PARAM_NAMES: [&str; 12] = [
    "enc.conv1.weight",
    "enc.conv1.bias",
    "enc.conv2.weight",
    "enc.conv2.bias",
    "enc.fc.weight",
    "enc.fc.bias",
    "dec.fc.weight",
    "dec.fc.bias",
    "dec.tconv.weight",
    "dec.tconv.bias",
    "dec.conv.weight",
    "dec.conv.bias",
];

const ENC_C1_W: usize = 0;
const ENC_C1_B: usize = 1;
const ENC_C2_W: usize = 2;
const ENC_C2_B: usize = 3;
const ENC_FC_W: usize = 4;
const ENC_FC_B: usize = 5;
const DEC_FC_W: usize = 6;
const DEC_FC_B: usize = 7;
const DEC_TC_W: usize = 8;
const DEC_TC_B: usize = 9;
const DEC_C_W: usize = 10;
const DEC_C_B: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }
}

/// Layer geometry derived from the grid size.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    conv1: ConvGeom,
    conv2: ConvGeom,
    tconv: ConvGeom,
    conv_out: ConvGeom,
    /// Flattened size of the stride-2 feature map.
    bottleneck_in: usize,
}

impl Geometry {
    fn new(g: usize) -> Self {
        let half = g / 2;
        let conv = |in_c, out_c, h, stride, output_pad| ConvGeom {
            in_c,
            out_c,
            in_h: h,
            in_w: h,
            kernel: 3,
            stride,
            pad: 1,
            output_pad,
        };
        Geometry {
            conv1: conv(1, ENC1_CH, g, 1, 0),
            conv2: conv(ENC1_CH, ENC2_CH, g, 2, 0),
            tconv: conv(ENC2_CH, ENC1_CH, half, 2, 1),
            conv_out: conv(ENC1_CH, 1, g, 1, 0),
            bottleneck_in: ENC2_CH * half * half,
        }
    }
}

/// Encoder/decoder weights plus Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct MaeModel {
    pub config: MaeConfig,
    pub params: Vec<Tensor>,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
    pub step: u64,
}

/// One gradient buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    fn zeros_like(params: &[Tensor]) -> Self {
        Gradients(params.iter().map(|t| vec![0.0; t.data.len()]).collect())
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
struct Trace {
    input: Vec<f64>,
    a1: Vec<f64>,
    r1: Vec<f64>,
    a2: Vec<f64>,
    r2: Vec<f64>,
    latent: Vec<f64>,
    a3: Vec<f64>,
    r3: Vec<f64>,
    a4: Vec<f64>,
    r4: Vec<f64>,
    output: Vec<f64>,
}

impl MaeModel {
    /// Glorot-uniform weights, zero biases, fresh optimizer state.
    pub fn new(config: MaeConfig) -> Result<Self> {
        config.validate()?;
        let geo = Geometry::new(config.grid_size);
        let d = config.latent_dim;
        let shapes: [Vec<usize>; 12] = [
            vec![ENC1_CH, 1, 3, 3],
            vec![ENC1_CH],
            vec![ENC2_CH, ENC1_CH, 3, 3],
            vec![ENC2_CH],
            vec![d, geo.bottleneck_in],
            vec![d],
            vec![geo.bottleneck_in, d],
            vec![geo.bottleneck_in],
            vec![ENC2_CH, ENC1_CH, 3, 3],
            vec![ENC1_CH],
            vec![1, ENC1_CH, 3, 3],
            vec![1],
        ];
        let fan_sums = [
            geo.conv1.fan_sum(),
            0,
            geo.conv2.fan_sum(),
            0,
            d + geo.bottleneck_in,
            0,
            d + geo.bottleneck_in,
            0,
            geo.tconv.fan_sum(),
            0,
            geo.conv_out.fan_sum(),
            0,
        ];
        let mut rng = rng::derive(config.seed, 0x1217);
        let params: Vec<Tensor> = shapes
            .iter()
            .zip(fan_sums)
            .map(|(shape, fan)| {
                let mut t = Tensor::zeros(shape);
                if fan > 0 {
                    let limit = (6.0 / fan as f64).sqrt();
                    for w in &mut t.data {
                        *w = rng.random_range(-limit..limit);
                    }
                }
                t
            })
            .collect();
        let zeros: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Ok(MaeModel {
            config,
            params,
            adam_m: zeros.clone(),
            adam_v: zeros,
            step: 0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn n_cells(&self) -> usize {
        self.config.n_cells()
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    fn p(&self, i: usize) -> &[f64] {
        &self.params[i].data
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_cells() {
            return Err(SafeError::InvalidArgument(format!(
                "image of {} cells for a {}x{} model",
                x.len(),
                self.config.grid_size,
                self.config.grid_size
            )));
        }
        Ok(())
    }

    fn encode_trace(&self, x: &[f64], t: &mut Trace) {
        let geo = Geometry::new(self.config.grid_size);
        let g = self.config.grid_size;
        t.input.clear();
        t.input.extend_from_slice(x);
        t.a1.resize(ENC1_CH * g * g, 0.0);
        layers::conv_forward(&geo.conv1, x, self.p(ENC_C1_W), self.p(ENC_C1_B), &mut t.a1);
        t.r1.clone_from(&t.a1);
        layers::relu_inplace(&mut t.r1);
        t.a2.resize(geo.bottleneck_in, 0.0);
        layers::conv_forward(&geo.conv2, &t.r1, self.p(ENC_C2_W), self.p(ENC_C2_B), &mut t.a2);
        t.r2.clone_from(&t.a2);
        layers::relu_inplace(&mut t.r2);
        t.latent.resize(self.config.latent_dim, 0.0);
        layers::dense_forward(&t.r2, self.p(ENC_FC_W), self.p(ENC_FC_B), &mut t.latent);
    }

    fn forward_trace(&self, x: &[f64], t: &mut Trace) {
        let geo = Geometry::new(self.config.grid_size);
        let g = self.config.grid_size;
        self.encode_trace(x, t);
        t.a3.resize(geo.bottleneck_in, 0.0);
        layers::dense_forward(&t.latent, self.p(DEC_FC_W), self.p(DEC_FC_B), &mut t.a3);
        t.r3.clone_from(&t.a3);
        layers::relu_inplace(&mut t.r3);
        t.a4.resize(ENC1_CH * g * g, 0.0);
        layers::conv_transpose_forward(&geo.tconv, &t.r3, self.p(DEC_TC_W), self.p(DEC_TC_B), &mut t.a4);
        t.r4.clone_from(&t.a4);
        layers::relu_inplace(&mut t.r4);
        t.output.resize(g * g, 0.0);
        layers::conv_forward(&geo.conv_out, &t.r4, self.p(DEC_C_W), self.p(DEC_C_B), &mut t.output);
    }

    /// Reconstruction and latent code of one (already masked) image in [0, 1].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        let mut t = Trace::empty();
        self.forward_trace(x, &mut t);
        Ok((t.output, t.latent))
    }

    /// Latent code of an unmasked image in [0, 1].
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut t = Trace::empty();
        self.encode_trace(x, &mut t);
        Ok(t.latent)
    }

    /// Smallest absolute pre-activation over every ReLU unit for input `x`,
    /// i.e. how far the forward pass is from a point where the network is
    /// not differentiable.
    pub fn relu_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut t = Trace::empty();
        self.forward_trace(x, &mut t);
        Ok([&t.a1, &t.a2, &t.a3, &t.a4]
            .into_iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    /// Mean over the batch of each sample's masked MSE.
    pub fn batch_loss(&self, batch: &MaskedBatch) -> Result<f64> {
        let mut t = Trace::empty();
        let mut total = 0.0;
        for i in 0..batch.len() {
            let (input, original, mask) = batch.sample(i);
            self.check_input(input)?;
            self.forward_trace(input, &mut t);
            total += super::masked_mse(&t.output, original, mask)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Adds the gradient of `scale * masked_mse` for one sample into `grads`
    /// and returns the sample's loss.
    fn accumulate_sample(
        &self,
        input: &[f64],
        original: &[f64],
        mask: &[u8],
        scale: f64,
        t: &mut Trace,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let geo = Geometry::new(self.config.grid_size);
        let g = self.config.grid_size;
        self.forward_trace(input, t);
        let loss = super::masked_mse(&t.output, original, mask)?;
        let count = mask.iter().filter(|&&m| m == 1).count() as f64;

        let d_out: Vec<f64> = t
            .output
            .iter()
            .zip(original)
            .zip(mask)
            .map(|((r, o), &m)| if m == 1 { scale * 2.0 * (r - o) / count } else { 0.0 })
            .collect();

        let gr = &mut grads.0;
        let mut d_r4 = vec![0.0; ENC1_CH * g * g];
        {
            let (w, rest) = gr.split_at_mut(DEC_C_B);
            layers::conv_backward(
                &geo.conv_out,
                &t.r4,
                self.p(DEC_C_W),
                &d_out,
                &mut w[DEC_C_W],
                &mut rest[0],
                Some(&mut d_r4),
            );
        }
        layers::relu_backward_inplace(&mut d_r4, &t.a4);
        let mut d_r3 = vec![0.0; geo.bottleneck_in];
        {
            let (w, rest) = gr.split_at_mut(DEC_TC_B);
            layers::conv_transpose_backward(
                &geo.tconv,
                &t.r3,
                self.p(DEC_TC_W),
                &d_r4,
                &mut w[DEC_TC_W],
                &mut rest[0],
                &mut d_r3,
            );
        }
        layers::relu_backward_inplace(&mut d_r3, &t.a3);
        let mut d_latent = vec![0.0; self.config.latent_dim];
        {
            let (w, rest) = gr.split_at_mut(DEC_FC_B);
            layers::dense_backward(
                &t.latent,
                self.p(DEC_FC_W),
                &d_r3,
                &mut w[DEC_FC_W],
                &mut rest[0],
                Some(&mut d_latent),
            );
        }
        let mut d_r2 = vec![0.0; geo.bottleneck_in];
        {
            let (w, rest) = gr.split_at_mut(ENC_FC_B);
            layers::dense_backward(&t.r2, self.p(ENC_FC_W), &d_latent, &mut w[ENC_FC_W], &mut rest[0], Some(&mut d_r2));
        }
        layers::relu_backward_inplace(&mut d_r2, &t.a2);
        let mut d_r1 = vec![0.0; ENC1_CH * g * g];
        {
            let (w, rest) = gr.split_at_mut(ENC_C2_B);
            layers::conv_backward(&geo.conv2, &t.r1, self.p(ENC_C2_W), &d_r2, &mut w[ENC_C2_W], &mut rest[0], Some(&mut d_r1));
        }
        layers::relu_backward_inplace(&mut d_r1, &t.a1);
        {
            let (w, rest) = gr.split_at_mut(ENC_C1_B);
            layers::conv_backward(&geo.conv1, &t.input, self.p(ENC_C1_W), &d_r1, &mut w[ENC_C1_W], &mut rest[0], None);
        }
        Ok(loss)
    }

    /// Loss and analytic gradient of [`MaeModel::batch_loss`].
    ///
    /// Samples are processed in fixed-size chunks whose partial sums are
    /// reduced in chunk order, so the result does not depend on how many
    /// threads run the chunks.
    pub fn gradients(&self, batch: &MaskedBatch) -> Result<(f64, Gradients)> {
        use rayon::prelude::*;
        const CHUNK: usize = 16;
        let n = batch.len();
        if n == 0 {
            return Err(SafeError::InvalidArgument("empty batch".into()));
        }
        let scale = 1.0 / n as f64;
        let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
        let partials: Vec<Result<(f64, Gradients)>> = starts
            .par_iter()
            .map(|&start| {
                let mut grads = Gradients::zeros_like(&self.params);
                let mut t = Trace::empty();
                let mut loss = 0.0;
                for i in start..(start + CHUNK).min(n) {
                    let (input, original, mask) = batch.sample(i);
                    self.check_input(input)?;
                    loss += self.accumulate_sample(input, original, mask, scale, &mut t, &mut grads)?;
                }
                Ok((loss, grads))
            })
            .collect();
        let mut total_loss = 0.0;
        let mut total = Gradients::zeros_like(&self.params);
        for part in partials {
            let (loss, grads) = part?;
            total_loss += loss;
            total.add(&grads);
        }
        Ok((total_loss * scale, total))
    }

    /// One Adam step (with bias correction) along `grads`.
    pub fn apply_adam(&mut self, grads: &Gradients) -> Result<()> {
        for (i, g) in grads.0.iter().enumerate() {
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(SafeError::Numerical(format!(
                    "non-finite gradient in {}[{j}] at step {}",
                    PARAM_NAMES[i], self.step
                )));
            }
        }
        self.step += 1;
        let cfg = &self.config;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((param, g), (m, v)) in self
            .params
            .iter_mut()
            .zip(&grads.0)
            .zip(self.adam_m.iter_mut().zip(self.adam_v.iter_mut()))
        {
            for (((p, &g), m), v) in param.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_epsilon);
            }
        }
        Ok(())
    }

    /// Computes the batch gradient, takes one Adam step and returns the
    /// loss measured before the step.
    pub fn backward_and_step(&mut self, batch: &MaskedBatch) -> Result<f64> {
        let (loss, grads) = self.gradients(batch)?;
        if !loss.is_finite() {
            return Err(SafeError::Numerical(format!("non-finite loss at step {}", self.step)));
        }
        self.apply_adam(&grads)?;
        Ok(loss)
    }

    /// Flat view of every parameter, in [`PARAM_NAMES`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat_param(&mut self, index: usize, value: f64) {
        let mut offset = index;
        for t in &mut self.params {
            if offset < t.data.len() {
                t.data[offset] = value;
                return;
            }
            offset -= t.data.len();
        }
        panic!("parameter index {index} out of range");
    }

    const MAGIC: &'static [u8; 8] = b"SAFEMAE1";
    const FORMAT_VERSION: u32 = 1;

    /// Binary layout (little endian): magic, format version (u32), config
    /// JSON length (u64) and bytes, Adam step (u64), tensor count (u32); per
    /// tensor: name length (u32), name, rank (u32), dims (u64 each), then the
    /// values, first moments and second moments as f64.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let config = serde_json::to_vec(&self.config).map_err(std::io::Error::other)?;
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(config.len() as u64).to_le_bytes())?;
        w.write_all(&config)?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (i, t) in self.params.iter().enumerate() {
            let name = PARAM_NAMES[i].as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for buf in [&t.data, &self.adam_m[i], &self.adam_v[i]] {
                for v in buf {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        fn bad(what: &str) -> SafeError {
            SafeError::Data(format!("malformed model file: {what}"))
        }
        fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf).map_err(|_| bad("truncated"))?;
            Ok(buf)
        }
        if &take::<8>(&mut r)? != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != Self::FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(take(&mut r)?) as usize;
        let mut config = vec![0u8; len];
        r.read_exact(&mut config).map_err(|_| bad("truncated config"))?;
        let config: MaeConfig = serde_json::from_slice(&config)?;
        let mut model = MaeModel::new(config)?;
        model.step = u64::from_le_bytes(take(&mut r)?);
        let count = u32::from_le_bytes(take(&mut r)?) as usize;
        if count != model.params.len() {
            return Err(bad("tensor count"));
        }
        for (i, expected) in PARAM_NAMES.iter().enumerate() {
            let name_len = u32::from_le_bytes(take(&mut r)?) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
            if name != expected.as_bytes() {
                return Err(bad("unexpected tensor name"));
            }
            let rank = u32::from_le_bytes(take(&mut r)?) as usize;
            let shape = (0..rank)
                .map(|_| Ok(u64::from_le_bytes(take(&mut r)?) as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != model.params[i].shape {
                return Err(bad(&format!("shape of {expected} does not match config")));
            }
            for buf in [&mut model.params[i].data, &mut model.adam_m[i], &mut model.adam_v[i]] {
                for v in buf.iter_mut() {
                    *v = f64::from_le_bytes(take(&mut r)?);
                }
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| SafeError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| SafeError::io(path, e))?;
        w.flush().map_err(|e| SafeError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| SafeError::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

impl Trace {
    fn empty() -> Self {
        Trace {
            input: Vec::new(),
            a1: Vec::new(),
            r1: Vec::new(),
            a2: Vec::new(),
            r2: Vec::new(),
            latent: Vec::new(),
            a3: Vec::new(),
            r3: Vec::new(),
            a4: Vec::new(),
            r4: Vec::new(),
            output: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mae::make_mask;

    fn small_config(seed: u64) -> MaeConfig {
        MaeConfig {
            grid_size: 4,
            latent_dim: 3,
            seed,
            ..MaeConfig::default()
        }
    }

    #[test]
    fn init_is_seeded_and_biases_start_at_zero() {
        let a = MaeModel::new(MaeConfig::default()).unwrap();
        let b = MaeModel::new(MaeConfig::default()).unwrap();
        assert_eq!(a, b);
        for i in [ENC_C1_B, ENC_C2_B, ENC_FC_B, DEC_FC_B, DEC_TC_B, DEC_C_B] {
            assert!(a.params[i].data.iter().all(|&v| v == 0.0));
        }
        assert_eq!(a.params[ENC_FC_W].shape, vec![16, 256]);
        let c = MaeModel::new(MaeConfig {
            seed: 1,
            ..MaeConfig::default()
        })
        .unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn zero_input_propagates_to_zero() {
        let m = MaeModel::new(MaeConfig::default()).unwrap();
        let (recon, latent) = m.forward(&[0.0; 64]).unwrap();
        assert!(recon.iter().all(|&v| v == 0.0));
        assert!(latent.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_matches_input_shape() {
        for g in [4, 8, 16] {
            let m = MaeModel::new(MaeConfig {
                grid_size: g,
                ..MaeConfig::default()
            })
            .unwrap();
            let x: Vec<f64> = (0..g * g).map(|i| (i % 7) as f64 / 7.0).collect();
            let (recon, latent) = m.forward(&x).unwrap();
            assert_eq!(recon.len(), g * g);
            assert_eq!(latent.len(), 16);
            assert_eq!(m.forward(&x).unwrap(), (recon, latent.clone()));
            assert_eq!(m.encode(&x).unwrap(), latent);
        }
        let m = MaeModel::new(MaeConfig::default()).unwrap();
        assert!(m.forward(&[0.0; 10]).is_err());
    }

    #[test]
    fn relu_margin_is_zero_on_a_kink() {
        let mut m = MaeModel::new(small_config(1)).unwrap();
        assert_eq!(m.relu_margin(&[0.0; 16]).unwrap(), 0.0);
        for i in [ENC_C1_B, ENC_C2_B, DEC_FC_B, DEC_TC_B] {
            m.params[i].data.fill(0.5);
        }
        assert!(m.relu_margin(&[0.0; 16]).unwrap() > 0.0);
        assert!(m.relu_margin(&[0.0; 3]).is_err());
    }

    #[test]
    fn zero_gradient_step_leaves_parameters_alone() {
        let mut m = MaeModel::new(small_config(2)).unwrap();
        let before = m.params.clone();
        let zero = Gradients::zeros_like(&m.params);
        m.apply_adam(&zero).unwrap();
        assert_eq!(m.params, before);
        assert_eq!(m.step, 1);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut m = MaeModel::new(small_config(2)).unwrap();
        let mut g = Gradients::zeros_like(&m.params);
        g.0[4][1] = f64::NAN;
        let err = m.apply_adam(&g).unwrap_err();
        assert!(err.to_string().contains("enc.fc.weight"));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn spot_check_gradient_against_central_difference() {
        let m = MaeModel::new(small_config(5)).unwrap();
        let mut rng = crate::rng::seeded(5);
        let originals: Vec<f64> = (0..32).map(|_| rng.random::<f64>()).collect();
        let all: Vec<usize> = (0..16).collect();
        let masks: Vec<u8> = (0..2).flat_map(|_| make_mask(16, &all, 0.75, &mut rng)).collect();
        let batch = MaskedBatch::new(16, originals, masks).unwrap();
        let (_, grads) = m.gradients(&batch).unwrap();
        let flat: Vec<f64> = grads.0.iter().flatten().copied().collect();
        let h = 1e-4;
        for idx in [0, 80, 500, flat.len() - 1] {
            let base = m.flat_params()[idx];
            let mut plus = m.clone();
            plus.set_flat_param(idx, base + h);
            let mut minus = m.clone();
            minus.set_flat_param(idx, base - h);
            let fd = (plus.batch_loss(&batch).unwrap() - minus.batch_loss(&batch).unwrap()) / (2.0 * h);
            let err = (fd - flat[idx]).abs();
            assert!(err <= 1e-6 || err / fd.abs().max(flat[idx].abs()) < 1e-3, "param {idx}: fd {fd} vs {}", flat[idx]);
        }
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let mut m = MaeModel::new(small_config(9)).unwrap();
        m.step = 17;
        m.adam_m[3][2] = -0.25;
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = MaeModel::read_from(&buf[..]).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
        assert!(MaeModel::read_from(&buf[..buf.len() - 3]).is_err());
    }
}
