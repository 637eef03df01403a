//! Translation network: a content encoder, residual blocks whose
//! normalization is modulated jointly by the sentence embedding and the
//! text-irrelevant latents, and an upsampling decoder.

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;

use crate::config::{Config, MfmodConfig, NormStatsMode, OdeConfig};
use crate::error::{Error, Result};
use crate::nn::{instance_norm, sigmoid, Activation, Builder, Conv2d, ConvTranspose2d, Init, Linear, Mlp, Padding};
use crate::repnet::{Draw, ObservationBatch, RepNet};
use crate::scenes::{sample_observations, Frame, VideoClip};
use crate::textenc::{TextEmbedding, TextEncoder, EMBED_DIM};

/// Per-channel modulation sources and blend logits of one block.
#[derive(Debug, Clone)]
pub struct ModulatedBlockParams {
    /// Text scale γ and shift ρ.
    pub gamma: Linear,
    pub rho: Linear,
    /// Content scale ψ and shift η.
    pub psi: Linear,
    pub eta: Linear,
    /// Pre-sigmoid blend logits, one scalar each.
    pub a: Tensor,
    pub b: Tensor,
}

impl ModulatedBlockParams {
    pub fn new(b: &mut Builder, channels: usize, desc_dim: usize, cont_dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: Linear::with_bias_init(&mut b.sub("gamma"), desc_dim, channels, 0.02, 1.0)?,
            rho: Linear::with_bias_init(&mut b.sub("rho"), desc_dim, channels, 0.02, 0.0)?,
            psi: Linear::with_bias_init(&mut b.sub("psi"), cont_dim, channels, 0.02, 1.0)?,
            eta: Linear::with_bias_init(&mut b.sub("eta"), cont_dim, channels, 0.02, 0.0)?,
            a: b.param("alpha_logit", &[1], Init::Const(0.0))?,
            b: b.param("beta_logit", &[1], Init::Const(0.0))?,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.out_dim()
    }

    pub fn alpha(&self) -> Result<Tensor> {
        sigmoid(&self.a)
    }

    pub fn beta(&self) -> Result<Tensor> {
        sigmoid(&self.b)
    }

    /// Blended `(scale, shift)`, each `(N, C)`.
    pub fn modulation(&self, w_desc: &Tensor, w_cont: &Tensor) -> Result<(Tensor, Tensor)> {
        let (alpha, beta) = (self.alpha()?, self.beta()?);
        let one_minus = |t: &Tensor| t.affine(-1.0, 1.0);
        let scale = self
            .gamma
            .forward(w_desc)?
            .broadcast_mul(&alpha)?
            .add(&self.psi.forward(w_cont)?.broadcast_mul(&one_minus(&alpha)?)?)?;
        let shift = self
            .rho
            .forward(w_desc)?
            .broadcast_mul(&beta)?
            .add(&self.eta.forward(w_cont)?.broadcast_mul(&one_minus(&beta)?)?)?;
        Ok((scale, shift))
    }
}

/// Per-channel mean and guarded standard deviation of `(N, C, H, W)`.
/// Batch mode pools over `(n, y, x)` and returns `(1, C, 1, 1)`; instance
/// mode pools over `(y, x)` and returns `(N, C, 1, 1)`.
pub fn norm_stats(x: &Tensor, mode: NormStatsMode, eps: f64) -> Result<(Tensor, Tensor)> {
    let mean_nyx = |t: &Tensor| -> Result<Tensor> {
        let m = t.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
        Ok(match mode {
            NormStatsMode::Batch => m.mean_keepdim(0)?,
            NormStatsMode::Instance => m,
        })
    };
    let mu = mean_nyx(x)?;
    let var = mean_nyx(&x.broadcast_sub(&mu)?.sqr()?)?;
    let sigma = var.maximum(eps * eps)?.sqrt()?;
    Ok((mu, sigma))
}

/// Multi-feature modulation of a pre-activation map.
pub fn mfmod(x: &Tensor, w_desc: &Tensor, w_cont: &Tensor, p: &ModulatedBlockParams, cfg: &MfmodConfig) -> Result<Tensor> {
    let c = x.dim(1)?;
    if c != p.channels() {
        return Err(Error::validation(format!(
            "modulation built for {} channels, feature map has {c}",
            p.channels()
        )));
    }
    let (mu, sigma) = norm_stats(x, cfg.stats, cfg.eps)?;
    mfmod_with_stats(x, &mu, &sigma, w_desc, w_cont, p)
}

/// [`mfmod`] with externally supplied statistics.
pub fn mfmod_with_stats(
    x: &Tensor,
    mu: &Tensor,
    sigma: &Tensor,
    w_desc: &Tensor,
    w_cont: &Tensor,
    p: &ModulatedBlockParams,
) -> Result<Tensor> {
    let (n, c, _, _) = x.dims4()?;
    let (scale, shift) = p.modulation(w_desc, w_cont)?;
    let scale = scale.reshape((n, c, 1, 1))?;
    let shift = shift.reshape((n, c, 1, 1))?;
    let normed = x.broadcast_sub(mu)?.broadcast_div(sigma)?;
    Ok(normed.broadcast_mul(&scale)?.broadcast_add(&shift)?)
}

/// `out = in + conv3(mfmod(relu(in)))`.
#[derive(Debug, Clone)]
pub struct MfmodBlock {
    pub params: ModulatedBlockParams,
    pub conv: Conv2d,
}

impl MfmodBlock {
    pub fn new(b: &mut Builder, channels: usize, cont_dim: usize) -> Result<Self> {
        Ok(Self {
            params: ModulatedBlockParams::new(&mut b.sub("mod"), channels, EMBED_DIM, cont_dim)?,
            conv: Conv2d::new(&mut b.sub("conv"), channels, channels, 3, 1, Padding::Symmetric(1))?,
        })
    }

    pub fn forward(&self, x: &Tensor, w_desc: &Tensor, w_cont: &Tensor, cfg: &MfmodConfig) -> Result<Tensor> {
        let m = mfmod(&x.relu()?, w_desc, w_cont, &self.params, cfg)?;
        Ok((x + self.conv.forward(&m)?)?)
    }
}

/// `z_cont = [z_ti, z_dyn]` → `w_cont`.
#[derive(Debug, Clone)]
pub struct MappingNet {
    pub mlp: Mlp,
}

impl MappingNet {
    pub fn new(b: &mut Builder, in_dim: usize, width: usize, layers: usize) -> Result<Self> {
        let mut widths = vec![in_dim];
        widths.extend(std::iter::repeat_n(width, layers));
        Ok(Self {
            mlp: Mlp::new(b, &widths, Activation::LeakyRelu(0.2))?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.layers[0].in_dim()
    }

    pub fn forward(&self, z_cont: &Tensor) -> Result<Tensor> {
        self.mlp.forward(z_cont)
    }
}

/// Parameter-name prefix of the mapping network inside the TraNet store.
pub const MAPPING_PREFIX: &str = "mapping.";

#[derive(Debug, Clone)]
pub struct TraNet {
    pub mapping: MappingNet,
    pub enc_in: Conv2d,
    pub enc_down: Vec<Conv2d>,
    pub blocks: Vec<MfmodBlock>,
    pub dec_up: Vec<ConvTranspose2d>,
    pub dec_out: Conv2d,
    pub mfmod: MfmodConfig,
}

impl TraNet {
    pub fn new(b: &mut Builder, cfg: &Config) -> Result<Self> {
        let t = &cfg.tranet;
        let cont_dim = cfg.latent.dim_ti + cfg.latent.dim_dyn;
        let mapping = MappingNet::new(&mut b.sub("mapping"), cont_dim, t.mapping_width, t.mapping_layers)?;
        let enc_in = Conv2d::new(&mut b.sub("enc.in"), 3, t.ngf, 7, 1, Padding::Symmetric(3))?;
        let mut channels = vec![t.ngf];
        for i in 0..t.n_down {
            channels.push((t.ngf << (i + 1)).min(t.max_channels));
        }
        let enc_down = channels
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(&mut b.sub(format!("enc.down{i}")), w[0], w[1], 3, 2, Padding::Symmetric(1)))
            .collect::<Result<Vec<_>>>()?;
        let c_mid = *channels.last().expect("at least the stem");
        let blocks = (0..cfg.mfmod.blocks)
            .map(|i| MfmodBlock::new(&mut b.sub(format!("block{i}")), c_mid, t.mapping_width))
            .collect::<Result<Vec<_>>>()?;
        let dec_up = channels
            .windows(2)
            .rev()
            .enumerate()
            .map(|(i, w)| ConvTranspose2d::new(&mut b.sub(format!("dec.up{i}")), w[1], w[0], 3, 2, 1, 1))
            .collect::<Result<Vec<_>>>()?;
        let dec_out = Conv2d::new(&mut b.sub("dec.out"), t.ngf, 3, 7, 1, Padding::Symmetric(3))?;
        Ok(Self {
            mapping,
            enc_in,
            enc_down,
            blocks,
            dec_up,
            dec_out,
            mfmod: cfg.mfmod,
        })
    }

    pub fn map_content(&self, z_cont: &Tensor) -> Result<Tensor> {
        let d = z_cont.dim(D::Minus1)?;
        if d != self.mapping.in_dim() {
            return Err(Error::validation(format!(
                "content latent has {d} dims, mapping expects {}",
                self.mapping.in_dim()
            )));
        }
        self.mapping.forward(z_cont)
    }

    /// Frames `(N, 3, R, R)` in `[0, 1]` → manipulated frames in `[0, 1]`.
    pub fn generate(&self, frames: &Tensor, w_desc: &Tensor, w_cont: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = frames.dims4()?;
        let factor = 1 << self.enc_down.len();
        if c != 3 || h != w || h % factor != 0 {
            return Err(Error::validation(format!(
                "frames must be (N, 3, R, R) with R divisible by {factor}, got {:?}",
                frames.dims()
            )));
        }
        if w_desc.dims() != [n, EMBED_DIM] || w_cont.dim(0)? != n {
            return Err(Error::validation("one text and one content condition per frame are required"));
        }
        let eps = self.mfmod.eps;
        let x = frames.affine(2.0, -1.0)?;
        let mut x = instance_norm(&self.enc_in.forward(&x)?, eps)?.relu()?;
        for d in &self.enc_down {
            x = instance_norm(&d.forward(&x)?, eps)?.relu()?;
        }
        for blk in &self.blocks {
            x = blk.forward(&x, w_desc, w_cont, &self.mfmod)?;
        }
        for u in &self.dec_up {
            x = instance_norm(&u.forward(&x)?, eps)?.relu()?;
        }
        Ok(self.dec_out.forward(&x)?.tanh()?.affine(0.5, 0.5)?)
    }
}

/// Edits a whole clip: posterior means from an observation draw, dynamic
/// codes at every frame time, one sentence condition shared by all frames.
#[allow(clippy::too_many_arguments)]
pub fn manipulate_clip<R: Rng>(
    clip: &VideoClip,
    text: &str,
    encoder: &dyn TextEncoder,
    repnet: &RepNet,
    tranet: &TraNet,
    k_random: usize,
    ode: &OdeConfig,
    dtype: DType,
    rng: &mut R,
) -> Result<Vec<Frame>> {
    let obs = sample_observations(clip, k_random, rng)?;
    let batch = ObservationBatch::from_sets(&[obs], dtype)?;
    let code = repnet.encode_clip::<R>(&batch, Draw::Mean, ode)?;
    let z_dyn = repnet.dynamics_at(&code.z_dyn0, &[clip.timestamps.clone()], ode)?; // (1, N, d)
    let n = clip.len();
    let z_ti = code.z_ti.broadcast_as((n, code.z_ti.dim(1)?))?;
    let z_cont = Tensor::cat(&[&z_ti, &z_dyn.squeeze(0)?], 1)?;
    let w_cont = tranet.map_content(&z_cont)?;
    let emb = encoder.encode(text)?;
    let w_desc = TextEmbedding::batch_tensor(&vec![emb; n], dtype)?;
    let frames = Frame::batch_tensor(&clip.frames, dtype)?;
    let out = tranet.generate(&frames, &w_desc, &w_cont)?;
    Frame::from_batch_tensor(&out)
}

/// Convenience for tests and tools: a `(1, C, H, W)` map from nested rows.
pub fn feature_map(rows: &[Vec<f64>], dtype: DType) -> Result<Tensor> {
    let h = rows.len();
    let w = rows.first().map(Vec::len).unwrap_or(0);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (1, 1, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{to_f64_vec, ParamStore};
    use crate::rng;

    fn small_config(res: usize) -> Config {
        let mut cfg = Config::default();
        cfg.data.resolution = res;
        cfg.tranet.ngf = 4;
        cfg.tranet.max_channels = 16;
        cfg.tranet.mapping_width = 8;
        cfg.mfmod.blocks = 2;
        cfg
    }

    fn build(cfg: &Config) -> (TraNet, ParamStore) {
        let mut store = ParamStore::new(DType::F64);
        let mut r = rng::stream(11, 0);
        let net = TraNet::new(&mut Builder::new(&mut store, &mut r), cfg).unwrap();
        (net, store)
    }

    fn set(store: &ParamStore, t: &Tensor, v: Vec<f64>) {
        let var = store.iter().find(|(_, v)| v.as_tensor().id() == t.id()).unwrap().1;
        var.set(&Tensor::from_vec(v, t.shape(), &Device::Cpu).unwrap()).unwrap();
    }

    fn zeros(store: &ParamStore, t: &Tensor) {
        set(store, t, vec![0.0; t.elem_count()]);
    }

    fn single_channel_params(store: &mut ParamStore) -> ModulatedBlockParams {
        let mut r = rng::stream(1, 0);
        ModulatedBlockParams::new(&mut Builder::new(store, &mut r), 1, 2, 2).unwrap()
    }

    fn cond(v: [f64; 2]) -> Tensor {
        Tensor::from_vec(v.to_vec(), (1, 2), &Device::Cpu).unwrap()
    }

    #[test]
    fn spreadsheet_example() {
        // Scale 2 and shift 0.5 built from zero weights and chosen biases;
        // logits at 0 give α = β = 0.5, so γ = ψ = 2 and ρ = η = 0.5.
        let mut store = ParamStore::new(DType::F64);
        let p = single_channel_params(&mut store);
        for l in [&p.gamma, &p.rho, &p.psi, &p.eta] {
            zeros(&store, &l.weight);
        }
        set(&store, &p.gamma.bias, vec![2.0]);
        set(&store, &p.psi.bias, vec![2.0]);
        set(&store, &p.rho.bias, vec![0.5]);
        set(&store, &p.eta.bias, vec![0.5]);
        let x = feature_map(&[vec![1.0, 3.0], vec![5.0, 7.0]], DType::F64).unwrap();
        let out = to_f64_vec(&mfmod(&x, &cond([0.3, 0.1]), &cond([-0.2, 0.4]), &p, &MfmodConfig::default()).unwrap()).unwrap();
        let expected = [-2.18328, -0.39443, 1.39443, 3.18328];
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-5, "{out:?}");
        }
    }

    #[test]
    fn degenerate_blend_is_plain_normalization() {
        let mut store = ParamStore::new(DType::F64);
        let mut r = rng::stream(2, 0);
        let p = ModulatedBlockParams::new(&mut Builder::new(&mut store, &mut r), 3, 2, 2).unwrap();
        set(&store, &p.a, vec![60.0]);
        set(&store, &p.b, vec![60.0]);
        zeros(&store, &p.gamma.weight);
        zeros(&store, &p.rho.weight);
        set(&store, &p.gamma.bias, vec![1.0; 3]);
        zeros(&store, &p.rho.bias);
        let x = rng::normal_tensor(&mut r, &[2, 3, 4, 4], DType::F64).unwrap();
        let y = mfmod(&x, &cond([1.0, 2.0]).repeat((2, 1)).unwrap(), &cond([0.5, 0.5]).repeat((2, 1)).unwrap(), &p, &MfmodConfig::default()).unwrap();
        let v = to_f64_vec(&y.transpose(0, 1).unwrap().contiguous().unwrap()).unwrap();
        for c in 0..3 {
            let ch = &v[c * 32..(c + 1) * 32];
            let m: f64 = ch.iter().sum::<f64>() / 32.0;
            let var: f64 = ch.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 32.0;
            assert!(m.abs() < 1e-10 && (var - 1.0).abs() < 1e-9, "{m} {var}");
        }
    }

    #[test]
    fn constant_map_yields_shift_only() {
        let mut store = ParamStore::new(DType::F64);
        let p = single_channel_params(&mut store);
        let x = feature_map(&[vec![0.75, 0.75], vec![0.75, 0.75]], DType::F64).unwrap();
        let (wd, wc) = (cond([0.3, -1.0]), cond([2.0, 0.5]));
        let out = to_f64_vec(&mfmod(&x, &wd, &wc, &p, &MfmodConfig::default()).unwrap()).unwrap();
        let (_, shift) = p.modulation(&wd, &wc).unwrap();
        let shift = to_f64_vec(&shift).unwrap()[0];
        assert!(out.iter().all(|&o| o == shift), "{out:?} vs {shift}");
    }

    #[test]
    fn stats_match_brute_force() {
        let mut r = rng::stream(3, 0);
        let x = rng::normal_tensor(&mut r, &[3, 2, 5, 5], DType::F64).unwrap();
        let (mu, sigma) = norm_stats(&x, NormStatsMode::Batch, 1e-5).unwrap();
        let v = to_f64_vec(&x).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| v[(n * 2 + c) * 25..(n * 2 + c + 1) * 25].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let ex2 = vals.iter().map(|x| x * x).sum::<f64>() / vals.len() as f64;
            assert!((to_f64_vec(&mu).unwrap()[c] - m).abs() < 1e-6);
            assert!((to_f64_vec(&sigma).unwrap()[c] - (ex2 - m * m).sqrt()).abs() < 1e-6);
        }
        let (mu_i, _) = norm_stats(&x, NormStatsMode::Instance, 1e-5).unwrap();
        assert_eq!(mu_i.dims(), &[3, 2, 1, 1]);
    }

    #[test]
    fn affine_in_preactivation_for_fixed_stats() {
        let mut store = ParamStore::new(DType::F64);
        let mut r = rng::stream(4, 0);
        let p = ModulatedBlockParams::new(&mut Builder::new(&mut store, &mut r), 2, 2, 2).unwrap();
        let x1 = rng::normal_tensor(&mut r, &[1, 2, 3, 3], DType::F64).unwrap();
        let x2 = rng::normal_tensor(&mut r, &[1, 2, 3, 3], DType::F64).unwrap();
        let mu = rng::normal_tensor(&mut r, &[1, 2, 1, 1], DType::F64).unwrap();
        let sigma = Tensor::from_vec(vec![0.7, 1.9], (1, 2, 1, 1), &Device::Cpu).unwrap();
        let (wd, wc) = (cond([0.1, 0.2]), cond([0.3, 0.4]));
        let f = |x: &Tensor| mfmod_with_stats(x, &mu, &sigma, &wd, &wc, &p).unwrap();
        let zero = x1.zeros_like().unwrap();
        // f(x1 + x2) = f(x1) + f(x2) - f(0)
        let lhs = to_f64_vec(&f(&(&x1 + &x2).unwrap())).unwrap();
        let rhs = to_f64_vec(&((f(&x1) + f(&x2)).unwrap() - f(&zero)).unwrap()).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut store = ParamStore::new(DType::F64);
        let p = single_channel_params(&mut store);
        let x = Tensor::zeros((1, 2, 2, 2), DType::F64, &Device::Cpu).unwrap();
        assert!(mfmod(&x, &cond([0.0, 0.0]), &cond([0.0, 0.0]), &p, &MfmodConfig::default()).unwrap_err().is_validation());
    }

    #[test]
    fn mapping_zero_and_oracle() {
        let cfg = small_config(32);
        let (net, store) = build(&cfg);
        let z = Tensor::from_vec(vec![0.3, -0.1, 0.8], (1, 3), &Device::Cpu).unwrap();
        let got = to_f64_vec(&net.map_content(&z).unwrap()).unwrap();
        let mut h = vec![0.3, -0.1, 0.8];
        let n = net.mapping.mlp.layers.len();
        for (i, l) in net.mapping.mlp.layers.iter().enumerate() {
            let (o, d) = l.weight.dims2().unwrap();
            let w = to_f64_vec(&l.weight).unwrap();
            let b = to_f64_vec(&l.bias).unwrap();
            h = (0..o)
                .map(|r| {
                    let s = (0..d).map(|c| w[r * d + c] * h[c]).sum::<f64>() + b[r];
                    if i + 1 < n && s < 0.0 {
                        0.2 * s
                    } else {
                        s
                    }
                })
                .collect();
        }
        for (a, b) in got.iter().zip(&h) {
            assert!((a - b).abs() < 1e-6);
        }
        // Frames differing only in z_dyn get different conditions.
        let z2 = Tensor::from_vec(vec![0.3, -0.1, 0.9], (1, 3), &Device::Cpu).unwrap();
        assert_ne!(got, to_f64_vec(&net.map_content(&z2).unwrap()).unwrap());
        assert!(net.map_content(&Tensor::zeros((1, 4), DType::F64, &Device::Cpu).unwrap()).is_err());

        for (name, v) in store.iter() {
            if name.starts_with(MAPPING_PREFIX) {
                v.set(&v.as_tensor().zeros_like().unwrap()).unwrap();
            }
        }
        assert!(to_f64_vec(&net.map_content(&z).unwrap()).unwrap().iter().all(|&x| x == 0.0));
    }

    fn inputs(n: usize, res: usize, seed: u64) -> (Tensor, Tensor, Tensor) {
        let mut r = rng::stream(seed, 0);
        let frames = rng::normal_tensor(&mut r, &[n, 3, res, res], DType::F64).unwrap().affine(0.2, 0.5).unwrap();
        let wd = rng::normal_tensor(&mut r, &[n, EMBED_DIM], DType::F64).unwrap();
        let wc = rng::normal_tensor(&mut r, &[n, 8], DType::F64).unwrap();
        (frames, wd, wc)
    }

    #[test]
    fn resolution_preserved_and_deterministic() {
        for res in [32, 64] {
            let cfg = small_config(res);
            let (net, _) = build(&cfg);
            let (f, wd, wc) = inputs(2, res, 1);
            let y = net.generate(&f, &wd, &wc).unwrap();
            assert_eq!(y.dims(), &[2, 3, res, res]);
            let v = to_f64_vec(&y).unwrap();
            assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            assert_eq!(v, to_f64_vec(&net.generate(&f, &wd, &wc).unwrap()).unwrap());
        }
        let (net, _) = build(&small_config(32));
        let (f, wd, wc) = inputs(1, 12, 1);
        assert!(net.generate(&f, &wd, &wc).unwrap_err().is_validation());
    }

    #[test]
    fn output_depends_on_both_conditions() {
        let (net, _) = build(&small_config(32));
        let (f, wd, wc) = inputs(2, 32, 2);
        let wd = candle_core::Var::from_tensor(&wd).unwrap();
        let wc = candle_core::Var::from_tensor(&wc).unwrap();
        let y = net.generate(&f, wd.as_tensor(), wc.as_tensor()).unwrap();
        let grads = y.sqr().unwrap().sum_all().unwrap().backward().unwrap();
        for v in [&wd, &wc] {
            let g = to_f64_vec(grads.get(v.as_tensor()).unwrap()).unwrap();
            assert!(g.iter().map(|x| x.abs()).sum::<f64>() > 0.0);
        }
        // Finite-difference probe on one coordinate of each condition.
        let base = to_f64_vec(&y).unwrap();
        for (which, t) in [(0, &wd), (1, &wc)] {
            let mut v = to_f64_vec(t.as_tensor()).unwrap();
            v[3] += 1e-3;
            let bumped = Tensor::from_vec(v, t.shape(), &Device::Cpu).unwrap();
            let y2 = if which == 0 {
                net.generate(&f, &bumped, wc.as_tensor()).unwrap()
            } else {
                net.generate(&f, wd.as_tensor(), &bumped).unwrap()
            };
            assert_ne!(base, to_f64_vec(&y2).unwrap());
        }
    }

    #[test]
    fn blend_weights_start_even() {
        let (net, _) = build(&small_config(32));
        for b in &net.blocks {
            assert_eq!(to_f64_vec(&b.params.alpha().unwrap()).unwrap(), vec![0.5]);
            assert_eq!(to_f64_vec(&b.params.beta().unwrap()).unwrap(), vec![0.5]);
        }
    }
}
