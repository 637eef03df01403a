//! Representation network: per-frame CNN encoder, max-pooled static
//! posterior, reverse-time GRU dynamic posterior rolled forward by a latent
//! ODE, and the training-time image decoder.

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;

use crate::config::{Config, OdeConfig};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Activation, Builder, Conv2d, ConvTranspose2d, GruCell, Linear, Mlp, Padding};
use crate::odeint::{integrate, OdeFunction, TrajectorySolution};
use crate::rng;
use crate::scenes::{Frame, ObservationSet};
use crate::textenc::TextProjector;

/// Sizes of the three latent groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentPartition {
    pub dim_tr: usize,
    pub dim_ti: usize,
    pub dim_dyn: usize,
}

impl LatentPartition {
    pub fn dim_st(&self) -> usize {
        self.dim_tr + self.dim_ti
    }

    pub fn dim_cont(&self) -> usize {
        self.dim_ti + self.dim_dyn
    }

    pub fn total(&self) -> usize {
        self.dim_st() + self.dim_dyn
    }
}

/// Diagonal Gaussian posterior, both tensors `(..., d)`.
#[derive(Debug, Clone)]
pub struct GaussianLatent {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl GaussianLatent {
    /// Splits the last axis of `(..., 2d)` into mean and log-variance.
    pub fn from_head(out: &Tensor) -> Result<Self> {
        let d = out.dim(D::Minus1)? / 2;
        Ok(Self {
            mean: out.narrow(D::Minus1, 0, d)?,
            log_var: out.narrow(D::Minus1, d, d)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.dim(D::Minus1).unwrap_or(0)
    }

    /// `mean + exp(log_var / 2) * eps`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Tensor> {
        let eps = rng::normal_tensor(rng, self.mean.dims(), self.mean.dtype())?;
        Ok((&self.mean + ((&self.log_var * 0.5)?.exp()? * eps)?)?)
    }

    pub fn detach(&self) -> Self {
        Self {
            mean: self.mean.detach(),
            log_var: self.log_var.detach(),
        }
    }
}

/// How latents are drawn from their posteriors.
pub enum Draw<'a, R: Rng> {
    Mean,
    Sample(&'a mut R),
}

/// Frames and observation times of a batch of clips with equal frame count.
#[derive(Debug, Clone)]
pub struct ObservationBatch {
    /// `(B, K, 3, R, R)` in `[0, 1]`.
    pub frames: Tensor,
    /// Per-clip strictly increasing times, all starting at the same value.
    pub times: Vec<Vec<f64>>,
}

impl ObservationBatch {
    pub fn from_sets(sets: &[ObservationSet], dtype: DType) -> Result<Self> {
        let k = sets.first().map(ObservationSet::len).unwrap_or(0);
        if k == 0 || sets.iter().any(|s| s.len() != k) {
            return Err(Error::validation("observation sets must be non-empty and equally long"));
        }
        let per_clip = sets
            .iter()
            .map(|s| Frame::batch_tensor(&s.frames, dtype))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frames: Tensor::stack(&per_clip, 0)?,
            times: sets.iter().map(|s| s.times.clone()).collect(),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.times.len()
    }

    pub fn frames_per_clip(&self) -> usize {
        self.times.first().map(Vec::len).unwrap_or(0)
    }

    /// `(B * K, 3, R, R)`.
    pub fn flat_frames(&self) -> Result<Tensor> {
        Ok(self.frames.flatten_to(1)?)
    }

    fn validate(&self) -> Result<()> {
        let k = self.frames_per_clip();
        if k == 0 || self.times.iter().any(|t| t.len() != k) {
            return Err(Error::validation("every clip needs the same non-zero number of times"));
        }
        let t0 = self.times[0][0];
        for t in &self.times {
            if t.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::validation("observation times must be strictly increasing"));
            }
            if t[0] != t0 {
                return Err(Error::validation("all clips in a batch must share their first time"));
            }
        }
        let dims = self.frames.dims();
        if dims.len() != 5 || dims[0] != self.batch_size() || dims[1] != k || dims[2] != 3 {
            return Err(Error::validation(format!(
                "frames must be (B, K, 3, R, R) matching the times, got {dims:?}"
            )));
        }
        Ok(())
    }
}

/// Per-frame hidden features, `(B, K, hidden)`.
#[derive(Debug, Clone)]
pub struct HiddenFeatureSet {
    pub h: Tensor,
    pub split: usize,
}

impl HiddenFeatureSet {
    pub fn h_static(&self) -> Result<Tensor> {
        Ok(self.h.narrow(2, 0, self.split)?)
    }

    pub fn h_dynamic(&self) -> Result<Tensor> {
        let d = self.h.dim(2)?;
        Ok(self.h.narrow(2, self.split, d - self.split)?)
    }
}

/// Latent codes of a batch of clips.
#[derive(Debug, Clone)]
pub struct LatentCode {
    /// `(B, dim_tr)`, shared by every frame of a clip.
    pub z_tr: Tensor,
    /// `(B, dim_ti)`, shared by every frame of a clip.
    pub z_ti: Tensor,
    /// `(B, dim_dyn)` at the first observation time.
    pub z_dyn0: Tensor,
    /// `(B, K, dim_dyn)` at each clip's observation times.
    pub z_dyn: Tensor,
    /// Text-derived replacement for `z_tr`, `(B, dim_tr)`.
    pub z_desc: Option<Tensor>,
    pub static_post: GaussianLatent,
    pub dyn_post: GaussianLatent,
    pub hidden: HiddenFeatureSet,
}

impl LatentCode {
    /// Per-frame full latents `(B, K, total)` using `z_tr`, or `z_desc` when
    /// `with_desc` is set.
    pub fn frame_latents(&self, with_desc: bool) -> Result<Tensor> {
        let z_text = match (&self.z_desc, with_desc) {
            (Some(d), true) => d,
            (None, true) => return Err(Error::validation("latent code has no text replacement")),
            _ => &self.z_tr,
        };
        let (b, k, _) = self.z_dyn.dims3()?;
        let st = Tensor::cat(&[z_text, &self.z_ti], 1)?
            .unsqueeze(1)?
            .broadcast_as((b, k, z_text.dim(1)? + self.z_ti.dim(1)?))?;
        Ok(Tensor::cat(&[&st, &self.z_dyn], 2)?)
    }

    /// Per-frame content latents `[z_ti, z_dyn_t]`, `(B, K, dim_ti + dim_dyn)`.
    pub fn content_latents(&self) -> Result<Tensor> {
        let (b, k, _) = self.z_dyn.dims3()?;
        let ti = self.z_ti.unsqueeze(1)?.broadcast_as((b, k, self.z_ti.dim(1)?))?;
        Ok(Tensor::cat(&[&ti, &self.z_dyn], 2)?)
    }
}

/// Autonomous ELU MLP driving the dynamic latent.
#[derive(Debug, Clone)]
pub struct OdeNet {
    pub mlp: Mlp,
}

impl OdeFunction for OdeNet {
    fn eval(&self, z: &Tensor, _t: f64) -> Result<Tensor> {
        self.mlp.forward(z)
    }

    fn autonomous(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct RepNet {
    pub partition: LatentPartition,
    pub resolution: usize,
    pub split: usize,
    pub enc_convs: Vec<Conv2d>,
    pub enc_fc: Linear,
    pub static_head: Linear,
    pub gru: GruCell,
    pub dyn_head: Linear,
    pub ode: OdeNet,
    pub dec_fc1: Linear,
    pub dec_fc2: Linear,
    pub dec_base: usize,
    pub dec_deconvs: Vec<ConvTranspose2d>,
    pub text: TextProjector,
}

impl RepNet {
    /// Builds parameters for the config's resolution and widths.
    pub fn new(b: &mut Builder, cfg: &Config) -> Result<Self> {
        let r = &cfg.repnet;
        let res = cfg.data.resolution;
        let n = r.enc_channels.len();
        if n == 0 || n != r.dec_channels.len() || res % (1 << n) != 0 {
            return Err(Error::validation(format!(
                "resolution {res} incompatible with {n} stride-2 encoder layers"
            )));
        }
        let partition = LatentPartition {
            dim_tr: cfg.latent.dim_tr,
            dim_ti: cfg.latent.dim_ti,
            dim_dyn: cfg.latent.dim_dyn,
        };
        let hidden = cfg.hidden.dim;
        let split = cfg.hidden.split;
        let coarse = res >> n;

        let mut enc_convs = Vec::with_capacity(n);
        let mut c_in = 3;
        for (i, &c) in r.enc_channels.iter().enumerate() {
            enc_convs.push(Conv2d::new(&mut b.sub(format!("enc.conv{i}")), c_in, c, 4, 2, Padding::Symmetric(1))?);
            c_in = c;
        }
        let enc_fc = Linear::new(&mut b.sub("enc.fc"), c_in * coarse * coarse, hidden)?;
        let static_head = Linear::new(&mut b.sub("static_head"), split, 2 * partition.dim_st())?;
        let gru = GruCell::new(&mut b.sub("gru"), hidden - split + 1, r.gru_hidden)?;
        let dyn_head = Linear::new(&mut b.sub("dyn_head"), r.gru_hidden, 2 * partition.dim_dyn)?;
        let ode = OdeNet {
            mlp: Mlp::new(
                &mut b.sub("ode"),
                &[partition.dim_dyn, r.ode_hidden, r.ode_hidden, partition.dim_dyn],
                Activation::Elu,
            )?,
        };
        let dec_fc1 = Linear::new(&mut b.sub("dec.fc1"), partition.total(), r.dec_hidden)?;
        let dec_fc2 = Linear::new(&mut b.sub("dec.fc2"), r.dec_hidden, r.dec_base * coarse * coarse)?;
        let mut dec_deconvs = Vec::with_capacity(n);
        let mut c_in = r.dec_base;
        for (i, &c) in r.dec_channels.iter().enumerate() {
            dec_deconvs.push(ConvTranspose2d::new(&mut b.sub(format!("dec.deconv{i}")), c_in, c, 4, 2, 1, 0)?);
            c_in = c;
        }
        let text = TextProjector::new(&mut b.sub("text"), r, &cfg.latent)?;
        Ok(Self {
            partition,
            resolution: res,
            split,
            enc_convs,
            enc_fc,
            static_head,
            gru,
            dyn_head,
            ode,
            dec_fc1,
            dec_fc2,
            dec_base: r.dec_base,
            dec_deconvs,
            text,
        })
    }

    /// `(N, 3, R, R)` → `(N, hidden)`.
    pub fn encode_frames(&self, frames: &Tensor) -> Result<Tensor> {
        let dims = frames.dims();
        if dims.len() != 4 || dims[1] != 3 || dims[2] != self.resolution || dims[3] != self.resolution {
            return Err(Error::validation(format!(
                "expected (N, 3, {r}, {r}) frames, got {dims:?}",
                r = self.resolution
            )));
        }
        let mut x = frames.clone();
        for conv in &self.enc_convs {
            x = conv.forward(&x)?.relu()?;
        }
        Ok(self.enc_fc.forward(&x.flatten_from(1)?)?.relu()?)
    }

    pub fn hidden_features(&self, batch: &ObservationBatch) -> Result<HiddenFeatureSet> {
        let (b, k) = (batch.batch_size(), batch.frames_per_clip());
        let h = self.encode_frames(&batch.flat_frames()?)?;
        Ok(HiddenFeatureSet {
            h: h.reshape((b, k, ()))?,
            split: self.split,
        })
    }

    /// Max over frames of the static features, then the static head.
    pub fn pool_static(&self, hidden: &HiddenFeatureSet) -> Result<GaussianLatent> {
        if hidden.h.dim(1)? == 0 {
            return Err(Error::validation("cannot pool an empty frame set"));
        }
        let pooled = hidden.h_static()?.max(1)?;
        GaussianLatent::from_head(&self.static_head.forward(&pooled)?)
    }

    /// The static head applied to each frame's features, `(B, K, dim_st)`.
    pub fn static_per_frame(&self, hidden: &HiddenFeatureSet) -> Result<GaussianLatent> {
        let hs = hidden.h_static()?;
        let (b, k, s) = hs.dims3()?;
        let out = self.static_head.forward(&hs.reshape((b * k, s))?)?;
        GaussianLatent::from_head(&out.reshape((b, k, ()))?)
    }

    /// GRU over the dynamic features in reverse time order.
    pub fn encode_dynamics(&self, hidden: &HiddenFeatureSet, times: &[Vec<f64>]) -> Result<GaussianLatent> {
        let hd = hidden.h_dynamic()?;
        let (b, k, _) = hd.dims3()?;
        if times.len() != b || times.iter().any(|t| t.len() != k) {
            return Err(Error::validation("times do not match the hidden features"));
        }
        let gaps = times.iter().map(|t| gru_gaps(t)).collect::<Result<Vec<_>>>()?;
        let mut h = Tensor::zeros((b, self.gru.hidden), hd.dtype(), hd.device())?;
        for (step, idx) in (0..k).rev().enumerate() {
            let dt: Vec<f64> = gaps.iter().map(|g| g[step]).collect();
            let dt = Tensor::from_vec(dt, (b, 1), hd.device())?.to_dtype(hd.dtype())?;
            let x = Tensor::cat(&[&hd.narrow(1, idx, 1)?.squeeze(1)?, &dt], 1)?;
            h = self.gru.step(&x, &h)?;
        }
        GaussianLatent::from_head(&self.dyn_head.forward(&h)?)
    }

    /// Integrates the latent ODE from `z_dyn0` (`(B, dim_dyn)`) over `times`.
    pub fn roll_dynamics(&self, z_dyn0: &Tensor, times: &[f64], ode: &OdeConfig) -> Result<TrajectorySolution> {
        integrate(&self.ode, z_dyn0, times, ode)
    }

    /// `(N, total)` → `(N, 3, R, R)` in `[0, 1]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let n = z.dim(0)?;
        let coarse = self.resolution >> self.dec_deconvs.len();
        let h = self.dec_fc1.forward(z)?.relu()?;
        let mut x = self
            .dec_fc2
            .forward(&h)?
            .relu()?
            .reshape((n, self.dec_base, coarse, coarse))?;
        let last = self.dec_deconvs.len() - 1;
        for (i, d) in self.dec_deconvs.iter().enumerate() {
            x = d.forward(&x)?;
            if i < last {
                x = x.relu()?;
            }
        }
        sigmoid(&x)
    }

    /// Full posterior pass. `sample` draws with the reparameterization,
    /// otherwise posterior means are used.
    pub fn encode_clip<R: Rng>(&self, batch: &ObservationBatch, draw: Draw<R>, ode: &OdeConfig) -> Result<LatentCode> {
        batch.validate()?;
        let hidden = self.hidden_features(batch)?;
        let static_post = self.pool_static(&hidden)?;
        let dyn_post = self.encode_dynamics(&hidden, &batch.times)?;
        let (z_st, z_dyn0) = match draw {
            Draw::Mean => (static_post.mean.clone(), dyn_post.mean.clone()),
            Draw::Sample(r) => (static_post.sample(r)?, dyn_post.sample(r)?),
        };
        let z_dyn = self.dynamics_at(&z_dyn0, &batch.times, ode)?;
        let p = self.partition;
        Ok(LatentCode {
            z_tr: z_st.narrow(1, 0, p.dim_tr)?,
            z_ti: z_st.narrow(1, p.dim_tr, p.dim_ti)?,
            z_dyn0,
            z_dyn,
            z_desc: None,
            static_post,
            dyn_post,
            hidden,
        })
    }

    /// One ODE solve over the union of the clips' times, gathered back to
    /// `(B, K, dim_dyn)`.
    pub fn dynamics_at(&self, z_dyn0: &Tensor, times: &[Vec<f64>], ode: &OdeConfig) -> Result<Tensor> {
        let mut grid: Vec<f64> = times.iter().flatten().copied().collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let sol = self.roll_dynamics(z_dyn0, &grid, ode)?;
        let traj = sol.stacked()?; // (U, B, d)
        let per_clip = times
            .iter()
            .enumerate()
            .map(|(b, ts)| {
                let idx: Vec<u32> = ts
                    .iter()
                    .map(|t| grid.binary_search_by(|g| g.total_cmp(t)).expect("time is on the grid") as u32)
                    .collect();
                let idx = Tensor::from_vec(idx, ts.len(), &Device::Cpu)?;
                Ok(traj.narrow(1, b, 1)?.squeeze(1)?.contiguous()?.index_select(&idx, 0)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&per_clip, 0)?)
    }

    /// Copy whose forward passes do not propagate gradients to the parameters.
    pub fn detach(&self) -> Self {
        Self {
            enc_convs: self.enc_convs.iter().map(Conv2d::detach).collect(),
            enc_fc: self.enc_fc.detach(),
            static_head: self.static_head.detach(),
            gru: self.gru.detach(),
            dyn_head: self.dyn_head.detach(),
            ode: OdeNet {
                mlp: self.ode.mlp.detach(),
            },
            dec_fc1: self.dec_fc1.detach(),
            dec_fc2: self.dec_fc2.detach(),
            dec_deconvs: self.dec_deconvs.iter().map(ConvTranspose2d::detach).collect(),
            text: self.text.detach(),
            ..*self
        }
    }
}

/// Time gaps fed to the GRU, in processing (reverse time) order: the first
/// step sees 0, each later step the gap back to the previously processed
/// frame.
pub fn gru_gaps(times: &[f64]) -> Result<Vec<f64>> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("times must be non-empty and strictly increasing"));
    }
    let mut gaps = vec![0.0];
    gaps.extend(times.windows(2).rev().map(|w| w[1] - w[0]));
    Ok(gaps)
}
