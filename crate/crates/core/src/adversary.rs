//! Multi-scale conditional patch discriminator and the pairing policy that
//! decides which (image, text, content) triples count as real.

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::{Config, GanLossKind, MfmodConfig};
use crate::error::{Error, Result};
use crate::nn::{instance_norm, leaky_relu, Builder, Conv2d, Padding};
use crate::textenc::EMBED_DIM;
use crate::tranet::{mfmod, ModulatedBlockParams};

const SLOPE: f64 = 0.2;

/// Discriminator for one input scale.
#[derive(Debug, Clone)]
pub struct DiscriminatorScale {
    pub convs: Vec<Conv2d>,
    pub modulation: ModulatedBlockParams,
    pub head: Conv2d,
}

impl DiscriminatorScale {
    fn new(b: &mut Builder, cfg: &Config) -> Result<Self> {
        let g = &cfg.gan;
        let mut convs = Vec::with_capacity(g.layers);
        let mut c_in = 3;
        for i in 0..g.layers {
            let c_out = (g.ndf << i).min(g.max_channels);
            let (stride, pad) = if i < g.strided {
                (2, Padding::Symmetric(1))
            } else {
                (1, Padding::same(4))
            };
            convs.push(Conv2d::new(&mut b.sub(format!("conv{i}")), c_in, c_out, 4, stride, pad)?);
            c_in = c_out;
        }
        let modulation = ModulatedBlockParams::new(&mut b.sub("mod"), c_in, EMBED_DIM, cfg.tranet.mapping_width)?;
        let head = Conv2d::new(&mut b.sub("head"), c_in, 1, 4, 1, Padding::same(4))?;
        Ok(Self {
            convs,
            modulation,
            head,
        })
    }

    fn forward(&self, x: &Tensor, w_desc: &Tensor, w_cont: &Tensor, mcfg: &MfmodConfig) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            // The input layer is left unnormalized.
            if i > 0 {
                h = instance_norm(&h, mcfg.eps)?;
            }
            h = leaky_relu(&h, SLOPE)?;
        }
        let h = leaky_relu(&mfmod(&h, w_desc, w_cont, &self.modulation, mcfg)?, SLOPE)?;
        self.head.forward(&h)
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub scales: Vec<DiscriminatorScale>,
    pub mfmod: MfmodConfig,
    min_size: usize,
}

impl Discriminator {
    pub fn new(b: &mut Builder, cfg: &Config) -> Result<Self> {
        let scales = (0..cfg.gan.scales)
            .map(|s| DiscriminatorScale::new(&mut b.sub(format!("scale{s}")), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scales,
            mfmod: cfg.mfmod,
            min_size: 1 << (cfg.gan.strided + cfg.gan.scales - 1),
        })
    }

    /// One patch score map per scale, finest first. Images are in `[0, 1]`.
    pub fn discriminate(&self, image: &Tensor, w_desc: &Tensor, w_cont: &Tensor) -> Result<Vec<Tensor>> {
        let (n, c, h, w) = image.dims4()?;
        if c != 3 || h != w || h % self.min_size != 0 {
            return Err(Error::validation(format!(
                "discriminator input must be (N, 3, R, R) with R divisible by {}, got {:?}",
                self.min_size,
                image.dims()
            )));
        }
        if w_desc.dim(0)? != n || w_cont.dim(0)? != n {
            return Err(Error::validation("one condition per image is required"));
        }
        let mut x = image.affine(2.0, -1.0)?;
        let mut out = Vec::with_capacity(self.scales.len());
        for (i, s) in self.scales.iter().enumerate() {
            if i > 0 {
                x = x.avg_pool2d(2)?;
            }
            out.push(s.forward(&x, w_desc, w_cont, &self.mfmod)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Matched,
    Unmatched,
    Relevant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Real,
    Fake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageSource {
    Real(usize),
    Generated(usize),
}

/// Which sentence conditions a pair: a clip's own description or the
/// target description a generated image was produced for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescSource {
    Own(usize),
    Target(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub image: ImageSource,
    pub desc: DescSource,
    /// Content code index; always the image's own clip.
    pub content: usize,
    pub kind: PairKind,
    pub target: Target,
}

#[derive(Debug, Clone, Default)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
}

impl PairBatch {
    pub fn of_kind(&self, kind: PairKind) -> impl Iterator<Item = &Pair> {
        self.pairs.iter().filter(move |p| p.kind == kind)
    }

    pub fn count(&self, kind: PairKind) -> usize {
        self.of_kind(kind).count()
    }

    /// Stacks the tensors of the selected pairs. Rows of every input
    /// tensor are indexed by clip.
    pub fn gather(
        &self,
        select: &dyn Fn(&Pair) -> bool,
        real: &Tensor,
        generated: &Tensor,
        own_desc: &Tensor,
        target_desc: &Tensor,
        w_cont: &Tensor,
    ) -> Result<Option<(Tensor, Tensor, Tensor)>> {
        let chosen: Vec<&Pair> = self.pairs.iter().filter(|p| select(p)).collect();
        if chosen.is_empty() {
            return Ok(None);
        }
        let row = |t: &Tensor, i: usize| t.narrow(0, i, 1);
        let mut imgs = Vec::new();
        let mut descs = Vec::new();
        let mut conts = Vec::new();
        for p in chosen {
            imgs.push(match p.image {
                ImageSource::Real(i) => row(real, i)?,
                ImageSource::Generated(i) => row(generated, i)?,
            });
            descs.push(match p.desc {
                DescSource::Own(i) => row(own_desc, i)?,
                DescSource::Target(i) => row(target_desc, i)?,
            });
            conts.push(row(w_cont, p.content)?);
        }
        Ok(Some((Tensor::cat(&imgs, 0)?, Tensor::cat(&descs, 0)?, Tensor::cat(&conts, 0)?)))
    }
}

/// Uniformly random permutation without fixed points (rejection sampling).
/// Returns `None` for `n < 2`.
pub fn derangement<R: Rng>(n: usize, rng: &mut R) -> Option<Vec<usize>> {
    if n < 2 {
        return None;
    }
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return Some(p);
        }
    }
}

/// Matched, unmatched and relevant pairs for a batch of `n` clips whose
/// generated counterparts are conditioned on their target descriptions.
pub fn build_pairs<R: Rng>(n: usize, rng: &mut R) -> PairBatch {
    let mut pairs = Vec::with_capacity(3 * n);
    for i in 0..n {
        pairs.push(Pair {
            image: ImageSource::Real(i),
            desc: DescSource::Own(i),
            content: i,
            kind: PairKind::Matched,
            target: Target::Real,
        });
    }
    match derangement(n, rng) {
        Some(perm) => pairs.extend(perm.into_iter().enumerate().map(|(i, j)| Pair {
            image: ImageSource::Real(i),
            desc: DescSource::Own(j),
            content: i,
            kind: PairKind::Unmatched,
            target: Target::Fake,
        })),
        None => log::warn!("batch of {n} clip(s) cannot form unmatched pairs; skipping them"),
    }
    for i in 0..n {
        pairs.push(Pair {
            image: ImageSource::Generated(i),
            desc: DescSource::Target(i),
            content: i,
            kind: PairKind::Relevant,
            target: Target::Fake,
        });
    }
    PairBatch { pairs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Discriminator,
    Generator,
}

fn mean_all(t: &Tensor) -> Result<Tensor> {
    Ok(t.flatten_all()?.mean(0)?)
}

/// Adversarial loss averaged over scales. `real` is ignored on the
/// generator side.
pub fn gan_loss(real: &[Tensor], fake: &[Tensor], side: Side, kind: GanLossKind) -> Result<Tensor> {
    if fake.is_empty() || (side == Side::Discriminator && real.len() != fake.len()) {
        return Err(Error::validation("one real and one fake score map per scale are required"));
    }
    let mut per_scale = Vec::with_capacity(fake.len());
    for (i, f) in fake.iter().enumerate() {
        let l = match (side, kind) {
            (Side::Discriminator, GanLossKind::Lsgan) => {
                (mean_all(&real[i].affine(1.0, -1.0)?.sqr()?)? + mean_all(&f.sqr()?)?)?
            }
            (Side::Generator, GanLossKind::Lsgan) => mean_all(&f.affine(1.0, -1.0)?.sqr()?)?,
            (Side::Discriminator, GanLossKind::Hinge) => {
                (mean_all(&real[i].affine(-1.0, 1.0)?.relu()?)? + mean_all(&f.affine(1.0, 1.0)?.relu()?)?)?
            }
            (Side::Generator, GanLossKind::Hinge) => mean_all(&f.neg()?)?,
        };
        per_scale.push(l);
    }
    Ok(mean_all(&Tensor::stack(&per_scale, 0)?)?)
}

/// Concatenates two per-scale score lists along the batch axis.
pub fn cat_scores(a: &[Tensor], b: &[Tensor]) -> Result<Vec<Tensor>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| Ok(Tensor::cat(&[x, y], 0)?))
        .collect()
}

/// Constant score maps, handy for loss arithmetic.
pub fn constant_scores(value: f64, shape: &[usize], scales: usize) -> Result<Vec<Tensor>> {
    (0..scales)
        .map(|_| Ok(Tensor::full(value, shape, &Device::Cpu)?))
        .collect()
}
