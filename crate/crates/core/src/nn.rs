//! Minimal layer toolkit on top of candle tensors.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names; layers hold
//! tensor handles that share storage (and autograd identity) with the
//! store's variables. Initialization draws from a seeded ChaCha stream so
//! two stores built from the same seed are bit-identical.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Named trainable variables of one network section.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    fn insert(&mut self, name: String, value: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::validation(format!("duplicate parameter `{name}`")));
        }
        let var = Var::from_tensor(&value)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(t)
    }

    /// Snapshot of every parameter as detached tensors, keyed by name.
    pub fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?)))
            .collect()
    }

    /// Overwrites parameters in place from `tensors`; every name must be present.
    pub fn load_tensors(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::validation(format!("checkpoint lacks parameter `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::validation(format!(
                    "parameter `{name}` has shape {:?} in checkpoint, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn save_safetensors(&self, prefix: &str, out: &mut BTreeMap<String, Tensor>) -> Result<()> {
        for (k, t) in self.tensors()? {
            out.insert(format!("{prefix}.{k}"), t);
        }
        Ok(())
    }

    pub fn load_from_file(&self, prefix: &str, path: &Path) -> Result<()> {
        let all = candle_core::safetensors::load(path, &Device::Cpu)?;
        let section: BTreeMap<String, Tensor> = all
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(&format!("{prefix}.")).map(|s| (s.to_string(), v)))
            .collect();
        self.load_tensors(&section)
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Const(f64),
    Normal(f64),
}

/// Builds parameters into a store under a name prefix.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: impl AsRef<str>) -> Builder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Builder {
            store: &mut *self.store,
            rng: &mut *self.rng,
            prefix,
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
            }
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => rng::normal_vec(self.rng, n).into_iter().map(|x| x * std).collect(),
        };
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(self.store.dtype)?;
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.insert(full, t)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(b: &mut Builder, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: b.param("weight", &[out_dim, in_dim], Init::FanIn(in_dim))?,
            bias: b.param("bias", &[out_dim], Init::FanIn(in_dim))?,
        })
    }

    pub fn with_bias_init(b: &mut Builder, in_dim: usize, out_dim: usize, weight_std: f64, bias: f64) -> Result<Self> {
        Ok(Self {
            weight: b.param("weight", &[out_dim, in_dim], Init::Normal(weight_std))?,
            bias: b.param("bias", &[out_dim], Init::Const(bias))?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dim(1).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim(0).unwrap_or(0)
    }

    /// `x` is `(N, in)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, d) = x.dims2()?;
        if d != self.in_dim() {
            return Err(Error::validation(format!(
                "linear layer expects {} inputs, got {d}",
                self.in_dim()
            )));
        }
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }

    pub fn detach(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: Padding,
}

/// Spatial padding of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Symmetric(usize),
    /// `(before, after)` zero padding, used for even kernels at stride 1.
    Asymmetric(usize, usize),
}

impl Padding {
    /// Padding that keeps the spatial size at stride 1.
    pub fn same(kernel: usize) -> Self {
        let total = kernel - 1;
        if total % 2 == 0 {
            Padding::Symmetric(total / 2)
        } else {
            Padding::Asymmetric(total / 2, total - total / 2)
        }
    }
}

impl Conv2d {
    pub fn new(b: &mut Builder, c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: Padding) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        Ok(Self {
            weight: b.param("weight", &[c_out, c_in, kernel, kernel], Init::FanIn(fan_in))?,
            bias: b.param("bias", &[c_out], Init::FanIn(fan_in))?,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0).unwrap_or(0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c_out = self.out_channels();
        let y = match self.padding {
            Padding::Symmetric(p) => x.conv2d(&self.weight, p, self.stride, 1, 1)?,
            Padding::Asymmetric(lo, hi) => {
                let x = x.pad_with_zeros(2, lo, hi)?.pad_with_zeros(3, lo, hi)?;
                x.conv2d(&self.weight, 0, self.stride, 1, 1)?
            }
        };
        Ok(y.broadcast_add(&self.bias.reshape((1, c_out, 1, 1))?)?)
    }

    pub fn detach(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
            ..*self
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        b: &mut Builder,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let fan_in = c_out * kernel * kernel;
        Ok(Self {
            weight: b.param("weight", &[c_in, c_out, kernel, kernel], Init::FanIn(fan_in))?,
            bias: b.param("bias", &[c_out], Init::FanIn(fan_in))?,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c_out = self.weight.dim(1)?;
        let y = x.conv_transpose2d(&self.weight, self.padding, self.output_padding, self.stride, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c_out, 1, 1))?)?)
    }

    pub fn detach(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
            ..*self
        }
    }
}

/// Non-affine instance normalization over the spatial axes of `(N, C, H, W)`.
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, slope)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Identity in the forward pass; scales the gradient by `scale` on the way back.
pub fn grad_gate(x: &Tensor, scale: f64) -> Result<Tensor> {
    if scale >= 1.0 {
        return Ok(x.clone());
    }
    if scale <= 0.0 {
        return Ok(x.detach());
    }
    Ok(((x * scale)? + (x.detach() * (1.0 - scale))?)?)
}

/// Gated recurrent unit cell (PyTorch gate layout).
#[derive(Debug, Clone)]
pub struct GruCell {
    /// `(3H, in)` stacked reset/update/new input weights.
    pub w_ih: Linear,
    /// `(3H, H)` stacked recurrent weights.
    pub w_hh: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(b: &mut Builder, in_dim: usize, hidden: usize) -> Result<Self> {
        let init = Init::FanIn(hidden);
        let w_ih = {
            let mut s = b.sub("ih");
            Linear {
                weight: s.param("weight", &[3 * hidden, in_dim], init)?,
                bias: s.param("bias", &[3 * hidden], init)?,
            }
        };
        let w_hh = {
            let mut s = b.sub("hh");
            Linear {
                weight: s.param("weight", &[3 * hidden, hidden], init)?,
                bias: s.param("bias", &[3 * hidden], init)?,
            }
        };
        Ok(Self { w_ih, w_hh, hidden })
    }

    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let hd = self.hidden;
        let gi = self.w_ih.forward(x)?;
        let gh = self.w_hh.forward(h)?;
        let r = sigmoid(&(gi.narrow(1, 0, hd)? + gh.narrow(1, 0, hd)?)?)?;
        let z = sigmoid(&(gi.narrow(1, hd, hd)? + gh.narrow(1, hd, hd)?)?)?;
        let n = (gi.narrow(1, 2 * hd, hd)? + (&r * gh.narrow(1, 2 * hd, hd)?)?)?.tanh()?;
        // h' = (1 - z) * n + z * h
        let one_minus_z = z.affine(-1.0, 1.0)?;
        Ok(((one_minus_z * n)? + (z * h)?)?)
    }

    pub fn detach(&self) -> Self {
        Self {
            w_ih: self.w_ih.detach(),
            w_hh: self.w_hh.detach(),
            hidden: self.hidden,
        }
    }
}

/// Dense layers with a shared activation between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Elu,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Relu => Ok(x.relu()?),
            Activation::LeakyRelu(s) => leaky_relu(x, s),
            Activation::Elu => Ok(x.elu(1.0)?),
        }
    }
}

impl Mlp {
    /// `widths` lists every layer's width including input and output.
    pub fn new(b: &mut Builder, widths: &[usize], activation: Activation) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&mut b.sub(i.to_string()), w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, activation })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(&h)?;
            }
        }
        Ok(h)
    }

    pub fn detach(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Linear::detach).collect(),
            activation: self.activation,
        }
    }
}

/// Copies a tensor's contents into a flat `f64` vector.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builder_fixture() -> (ParamStore, ChaCha8Rng) {
        (ParamStore::new(DType::F64), rng::stream(7, 0))
    }

    #[test]
    fn deterministic_init() {
        let build = || {
            let (mut store, mut r) = builder_fixture();
            let mut b = Builder::new(&mut store, &mut r);
            let l = Linear::new(&mut b.sub("fc"), 3, 2).unwrap();
            to_f64_vec(&l.weight).unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn names_are_scoped() {
        let (mut store, mut r) = builder_fixture();
        let mut b = Builder::new(&mut store, &mut r);
        let mut enc = b.sub("enc");
        Linear::new(&mut enc.sub("fc"), 2, 2).unwrap();
        assert!(store.get("enc.fc.weight").is_some());
        assert!(store.get("enc.fc.bias").is_some());
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut store, mut r) = builder_fixture();
        let mut b = Builder::new(&mut store, &mut r);
        Linear::new(&mut b.sub("fc"), 2, 2).unwrap();
        assert!(Linear::new(&mut b.sub("fc"), 2, 2).is_err());
    }

    #[test]
    fn same_padding_keeps_size() {
        let (mut store, mut r) = builder_fixture();
        let mut b = Builder::new(&mut store, &mut r);
        for k in [3, 4, 7] {
            let c = Conv2d::new(&mut b.sub(format!("c{k}")), 2, 3, k, 1, Padding::same(k)).unwrap();
            let x = Tensor::zeros((1, 2, 8, 8), DType::F64, &Device::Cpu).unwrap();
            assert_eq!(c.forward(&x).unwrap().dims(), &[1, 3, 8, 8]);
        }
    }

    #[test]
    fn grad_gate_scales_gradient() {
        let x = Var::new(&[1.5f64, -2.0], &Device::Cpu).unwrap();
        for s in [0.0, 0.25, 1.0] {
            let y = grad_gate(x.as_tensor(), s).unwrap();
            assert_eq!(to_f64_vec(&y).unwrap(), vec![1.5, -2.0]);
            let g = y.sum_all().unwrap().backward().unwrap();
            let gx = g.get(x.as_tensor()).map(|t| to_f64_vec(t).unwrap());
            match gx {
                Some(v) => assert_eq!(v, vec![s, s]),
                None => assert_eq!(s, 0.0),
            }
        }
    }

    #[test]
    fn instance_norm_moments() {
        let x = Tensor::new(&[[[[1.0f64, 3.0], [5.0, 7.0]]]], &Device::Cpu).unwrap();
        let y = to_f64_vec(&instance_norm(&x, 0.0).unwrap()).unwrap();
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }
}
