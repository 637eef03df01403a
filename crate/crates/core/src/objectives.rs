//! Loss terms and their weighted total.
//!
//! The representation network minimizes a negative evidence lower bound
//! (reconstruction negative log-likelihood plus β times the KL terms). The
//! translation network adds the adversarial, perceptual and latent
//! consistency terms.

use candle_core::{DType, Tensor};
use serde::Serialize;

use crate::config::{LossConfig, PerceptualKind, ReconKind, StaticKlMode};
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv2d, Padding, ParamStore};
use crate::repnet::{GaussianLatent, LatentCode, ObservationBatch, RepNet};
use crate::rng::{self, streams};

/// Pixel probabilities are clamped to `[PIXEL_EPS, 1 - PIXEL_EPS]`.
pub const PIXEL_EPS: f64 = 1e-6;

/// KL to the standard normal per row, summed over the last axis.
pub fn kl_rows(post: &GaussianLatent) -> Result<Tensor> {
    let lv = &post.log_var;
    let terms = ((post.mean.sqr()? + lv.exp()?)? - lv)?.affine(0.5, -0.5)?;
    Ok(terms.sum(candle_core::D::Minus1)?)
}

/// `½ Σ_d (μ² + exp(lv) - lv - 1)`, averaged over all leading axes.
pub fn kl_gaussian(post: &GaussianLatent) -> Result<Tensor> {
    Ok(kl_rows(post)?.flatten_all()?.mean(0)?)
}

/// Static KL: per-frame posteriors averaged over frames (and clips), or the
/// pooled posterior alone.
pub fn kl_static(repnet: &RepNet, code: &LatentCode, mode: StaticKlMode) -> Result<Tensor> {
    match mode {
        StaticKlMode::PerFrame => kl_gaussian(&repnet.static_per_frame(&code.hidden)?),
        StaticKlMode::Pooled => kl_gaussian(&code.static_post),
    }
}

pub fn kl_dynamic(code: &LatentCode) -> Result<Tensor> {
    kl_gaussian(&code.dyn_post)
}

/// Negative log-likelihood of `x` under `decoded`, summed over pixels and
/// averaged over the leading (frame) axis. Both are `(N, C, H, W)`.
pub fn reconstruction_nll(x: &Tensor, decoded: &Tensor, kind: ReconKind) -> Result<Tensor> {
    if x.dims() != decoded.dims() {
        return Err(Error::validation(format!(
            "reconstruction shapes differ: {:?} vs {:?}",
            x.dims(),
            decoded.dims()
        )));
    }
    let per_px = match kind {
        ReconKind::Bernoulli => {
            let p = decoded.clamp(PIXEL_EPS, 1.0 - PIXEL_EPS)?;
            let one_minus_x = x.affine(-1.0, 1.0)?;
            ((x * p.log()?)? + (one_minus_x * p.affine(-1.0, 1.0)?.log()?)?)?.neg()?
        }
        ReconKind::Gaussian => (x - decoded)?.sqr()?.affine(0.5, 0.0)?,
    };
    Ok(per_px.flatten_from(1)?.sum(1)?.mean(0)?)
}

/// `(L_rec, L_rec')`: decoding with the encoder's text-relevant code and
/// with its text-derived replacement.
pub fn twin_reconstruction(batch: &ObservationBatch, code: &LatentCode, repnet: &RepNet, kind: ReconKind) -> Result<(Tensor, Tensor)> {
    let x = batch.flat_frames()?;
    let decode = |with_desc: bool| -> Result<Tensor> {
        let z = code.frame_latents(with_desc)?;
        let (b, k, d) = z.dims3()?;
        repnet.decode(&z.reshape((b * k, d))?)
    };
    let rec = reconstruction_nll(&x, &decode(false)?, kind)?;
    let rec_prime = reconstruction_nll(&x, &decode(true)?, kind)?;
    Ok((rec, rec_prime))
}

/// Frozen image features for the perceptual distance.
pub trait PerceptualExtractor: Send + Sync {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;
}

/// Raw pixels as the single feature map.
pub struct IdentityExtractor;

impl PerceptualExtractor for IdentityExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![x.clone()])
    }
}

/// Randomly initialized three-stage conv pyramid with frozen weights.
pub struct RandomConvExtractor {
    stages: Vec<Conv2d>,
}

impl RandomConvExtractor {
    pub const WIDTHS: [usize; 3] = [16, 32, 64];

    pub fn new(seed: u64, dtype: DType) -> Result<Self> {
        Self::with_widths(seed, streams::PERCEPTUAL_INIT, &Self::WIDTHS, dtype)
    }

    /// A pyramid with the given stage widths drawn from `(seed, stream)`.
    /// The first stage keeps the resolution, later ones halve it.
    pub fn with_widths(seed: u64, stream: u64, widths: &[usize], dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let mut r = rng::stream(seed, stream);
        let mut b = Builder::new(&mut store, &mut r);
        let mut c_in = 3;
        let mut stages = Vec::new();
        for (i, &c) in widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let conv = Conv2d::new(&mut b.sub(format!("stage{i}")), c_in, c, 3, stride, Padding::Symmetric(1))?;
            stages.push(conv.detach());
            c_in = c;
        }
        Ok(Self { stages })
    }
}

impl PerceptualExtractor for RandomConvExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = x.affine(2.0, -1.0)?;
        let mut out = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            h = s.forward(&h)?.relu()?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

pub fn build_extractor(kind: PerceptualKind, seed: u64, dtype: DType) -> Result<Box<dyn PerceptualExtractor>> {
    match kind {
        PerceptualKind::RandomConv => Ok(Box::new(RandomConvExtractor::new(seed, dtype)?)),
        PerceptualKind::Identity => Ok(Box::new(IdentityExtractor)),
        PerceptualKind::VggAdapter => Err(Error::AdapterUnavailable(
            "pretrained VGG features are not bundled; use random_conv or identity".into(),
        )),
    }
}

/// `Σ_l mean |Φ_l(x) - Φ_l(y)|`.
pub fn perceptual_l1(x: &Tensor, y: &Tensor, extractor: &dyn PerceptualExtractor) -> Result<Tensor> {
    let fx = extractor.features(x)?;
    let fy = extractor.features(y)?;
    let mut total: Option<Tensor> = None;
    for (a, b) in fx.iter().zip(&fy) {
        let l = (a - b)?.abs()?.flatten_all()?.mean(0)?;
        total = Some(match total {
            Some(t) => (t + l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::validation("extractor produced no features"))
}

/// Posterior means `[z_ST, z_dyn(t0)]`, `(B, dim_st + dim_dyn)`.
pub fn posterior_means(repnet: &RepNet, batch: &ObservationBatch) -> Result<Tensor> {
    let hidden = repnet.hidden_features(batch)?;
    let st = repnet.pool_static(&hidden)?;
    let dy = repnet.encode_dynamics(&hidden, &batch.times)?;
    Ok(Tensor::cat(&[&st.mean, &dy.mean], 1)?)
}

/// Mean over clips of `||μ(x) - μ(y)||₂` under one encoder.
pub fn latent_consistency(x: &ObservationBatch, y: &ObservationBatch, encoder: &RepNet) -> Result<Tensor> {
    let mx = posterior_means(encoder, x)?;
    let my = posterior_means(encoder, y)?;
    // The floor keeps the gradient finite when the two codes coincide.
    Ok((mx - my)?.sqr()?.sum(1)?.clamp(1e-20, f64::MAX)?.sqrt()?.mean(0)?)
}

/// Scalar loss tensors of one step.
#[derive(Debug, Clone)]
pub struct LossComponents {
    pub rec: Tensor,
    pub rec_prime: Tensor,
    pub kl_static: Tensor,
    pub kl_dynamic: Tensor,
    pub gan: Tensor,
    pub l1: Tensor,
    pub unsup: Tensor,
}

/// Plain numbers for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub rec_prime: f64,
    pub kl_static: f64,
    pub kl_dynamic: f64,
    pub gan_g: f64,
    pub l1: f64,
    pub unsup: f64,
    pub repnet: f64,
    pub tranet: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.rec,
            self.rec_prime,
            self.kl_static,
            self.kl_dynamic,
            self.gan_g,
            self.l1,
            self.unsup,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// `(L_RepNet, L_TraNet, L)` with `L = L_RepNet + λ_T L_TraNet`.
pub fn total_loss(c: &LossComponents, w: &LossConfig) -> Result<(Tensor, Tensor, Tensor)> {
    let rep = (((&c.rec + &c.rec_prime)? * 0.5)? + ((&c.kl_static + &c.kl_dynamic)? * w.beta)?)?;
    let tra = ((&c.gan + (&c.l1 * w.lambda_l1)?)? + (&c.unsup * w.lambda_u)?)?;
    let total = (&rep + (&tra * w.lambda_t)?)?;
    Ok((rep, tra, total))
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

impl LossComponents {
    pub fn breakdown(&self, w: &LossConfig) -> Result<LossBreakdown> {
        let (rep, tra, total) = total_loss(self, w)?;
        Ok(LossBreakdown {
            rec: scalar(&self.rec)?,
            rec_prime: scalar(&self.rec_prime)?,
            kl_static: scalar(&self.kl_static)?,
            kl_dynamic: scalar(&self.kl_dynamic)?,
            gan_g: scalar(&self.gan)?,
            l1: scalar(&self.l1)?,
            unsup: scalar(&self.unsup)?,
            repnet: scalar(&rep)?,
            tranet: scalar(&tra)?,
            total: scalar(&total)?,
        })
    }
}

/// The encoder used by the consistency term: a parameter-frozen copy
/// unless gradients into the encoder are requested.
pub fn consistency_encoder(repnet: &RepNet, to_encoder: bool) -> RepNet {
    if to_encoder {
        repnet.clone()
    } else {
        repnet.detach()
    }
}
