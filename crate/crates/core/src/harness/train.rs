//! Alternating discriminator / generator+RepNet updates, checkpoints and
//! the epoch loop.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{warmup_scale, Adam};
use crate::adversary::{build_pairs, derangement, gan_loss, Discriminator, Pair, PairBatch, Side, Target};
use crate::config::{Config, WarmupMode};
use crate::error::{Error, Result};
use crate::nn::{grad_gate, Builder, ParamStore};
use crate::objectives::{
    build_extractor, consistency_encoder, kl_dynamic, kl_static, latent_consistency, perceptual_l1, total_loss, twin_reconstruction,
    LossBreakdown, LossComponents, PerceptualExtractor,
};
use crate::repnet::{Draw, LatentCode, ObservationBatch, RepNet};
use crate::rng::{self, streams, RngState};
use crate::scenes::{sample_observations, VideoClip};
use crate::textenc::{build_text_encoder, TextEmbedding, TextEncoder};
use crate::tranet::{TraNet, MAPPING_PREFIX};

const WEIGHTS_FILE: &str = "weights.safetensors";
const META_FILE: &str = "meta.json";
const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "train_log.jsonl";

/// The three trained networks and their parameter stores.
pub struct Networks {
    pub repnet: RepNet,
    pub tranet: TraNet,
    pub disc: Discriminator,
    pub repnet_store: ParamStore,
    pub tranet_store: ParamStore,
    pub disc_store: ParamStore,
}

impl Networks {
    pub fn new(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        let dtype = cfg.dtype.dtype();
        let mut repnet_store = ParamStore::new(dtype);
        let mut tranet_store = ParamStore::new(dtype);
        let mut disc_store = ParamStore::new(dtype);
        let repnet = RepNet::new(
            &mut Builder::new(&mut repnet_store, &mut rng::stream(cfg.seed, streams::REPNET_INIT)),
            cfg,
        )?;
        let tranet = TraNet::new(
            &mut Builder::new(&mut tranet_store, &mut rng::stream(cfg.seed, streams::TRANET_INIT)),
            cfg,
        )?;
        let disc = Discriminator::new(
            &mut Builder::new(&mut disc_store, &mut rng::stream(cfg.seed, streams::DISC_INIT)),
            cfg,
        )?;
        Ok(Self {
            repnet,
            tranet,
            disc,
            repnet_store,
            tranet_store,
            disc_store,
        })
    }

    fn sections(&self) -> [(&'static str, &ParamStore); 3] {
        [
            ("repnet", &self.repnet_store),
            ("tranet", &self.tranet_store),
            ("discriminator", &self.disc_store),
        ]
    }

    pub fn weights(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (prefix, store) in self.sections() {
            store.save_safetensors(prefix, &mut out)?;
        }
        Ok(out)
    }

    pub fn load_weights(&self, path: &Path) -> Result<()> {
        for (prefix, store) in self.sections() {
            store.load_from_file(prefix, path)?;
        }
        Ok(())
    }

    /// Networks for `cfg` with the weights of a checkpoint directory.
    pub fn from_checkpoint(cfg: &Config, dir: &Path) -> Result<Self> {
        compatible_meta(cfg, dir)?;
        let nets = Self::new(cfg)?;
        nets.load_weights(&dir.join(WEIGHTS_FILE))?;
        Ok(nets)
    }
}

/// One JSONL log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(rename = "L_rec")]
    pub rec: f64,
    #[serde(rename = "L_rec_prime")]
    pub rec_prime: f64,
    pub kl_st: f64,
    pub kl_dyn: f64,
    #[serde(rename = "L_cgan_d")]
    pub cgan_d: f64,
    #[serde(rename = "L_cgan_g")]
    pub cgan_g: f64,
    #[serde(rename = "L_l1")]
    pub l1: f64,
    #[serde(rename = "L_unsup")]
    pub unsup: f64,
    #[serde(rename = "L_repnet")]
    pub repnet: f64,
    #[serde(rename = "L_tranet")]
    pub tranet: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
    pub warmup: f64,
    pub lr_repnet: f64,
    pub lr_tranet: f64,
    pub lr_mapping: f64,
    pub lr_discriminator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    pub seed: u64,
    pub config_hash: String,
    pub model_hash: String,
    pub warmup_iters: usize,
    pub rng: RngState,
    pub optim_steps: [u64; 3],
}

/// Everything drawn at random for one step.
pub struct PreparedBatch {
    pub batch: ObservationBatch,
    /// Each clip's own description, `(B, 512)`.
    pub w_own: Tensor,
    /// The description each clip is edited towards, `(B, 512)`.
    pub w_target: Tensor,
    pub target_text: Vec<String>,
    pub pairs: PairBatch,
}

/// Generator-side activations shared by the D and G phases.
pub struct GeneratorPass {
    pub code: LatentCode,
    pub rec: Tensor,
    pub rec_prime: Tensor,
    pub kl_static: Tensor,
    pub kl_dynamic: Tensor,
    /// `(B·K, 3, R, R)` inputs and outputs of the translation network.
    pub x: Tensor,
    pub y: Tensor,
    /// `(B·K, w)` content conditions.
    pub w_cont: Tensor,
    /// `(B·K, 512)` target-text conditions.
    pub w_target: Tensor,
}

fn repeat_rows(t: &Tensor, k: usize) -> Result<Tensor> {
    let (b, d) = t.dims2()?;
    Ok(t.unsqueeze(1)?.broadcast_as((b, k, d))?.contiguous()?.reshape((b * k, d))?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn fold_frames(t: &Tensor) -> Result<Tensor> {
    let dims = t.dims();
    let mut shape = vec![dims[0] * dims[1]];
    shape.extend_from_slice(&dims[2..]);
    Ok(t.reshape(shape)?)
}

pub struct Trainer {
    pub cfg: Config,
    pub nets: Networks,
    opt_repnet: Adam,
    opt_tranet: Adam,
    opt_disc: Adam,
    extractor: Box<dyn PerceptualExtractor>,
    text: Box<dyn TextEncoder>,
    pub step: usize,
    pub warmup_iters: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh networks. `steps_per_epoch` sets the default warmup length.
    pub fn new(cfg: &Config, steps_per_epoch: usize) -> Result<Self> {
        let nets = Networks::new(cfg)?;
        let dtype = cfg.dtype.dtype();
        let o = &cfg.optim;
        let warmup_iters = o
            .warmup_iters
            .unwrap_or_else(|| ((steps_per_epoch as f64 * 0.1).ceil() as usize).max(1));
        Ok(Self {
            opt_repnet: Adam::new(&nets.repnet_store, o.repnet, &[]),
            opt_tranet: Adam::new(&nets.tranet_store, o.tranet, &[(MAPPING_PREFIX, o.mapping_lr_scale)]),
            opt_disc: Adam::new(&nets.disc_store, o.discriminator, &[]),
            extractor: build_extractor(cfg.loss.perceptual, cfg.seed, dtype)?,
            text: build_text_encoder(&cfg.text),
            step: 0,
            warmup_iters,
            rng: rng::stream(cfg.seed, streams::TRAINING),
            nets,
            cfg: cfg.clone(),
        })
    }

    pub fn dtype(&self) -> DType {
        self.cfg.dtype.dtype()
    }

    pub fn text_encoder(&self) -> &dyn TextEncoder {
        self.text.as_ref()
    }

    /// Position of the training stream (observation draws, pairing, noise).
    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    pub fn restore_rng(&mut self, state: &RngState) {
        self.rng = state.restore();
    }

    /// Multiplier on the TraNet-to-encoder gradient at the current step.
    pub fn warmup(&self) -> f64 {
        match self.cfg.optim.warmup_mode {
            WarmupMode::Gradient => warmup_scale(self.step, self.warmup_iters),
            WarmupMode::Off => 1.0,
        }
    }

    fn encode_texts(&self, texts: &[String]) -> Result<Tensor> {
        let embs = texts.iter().map(|t| self.text.encode(t)).collect::<Result<Vec<TextEmbedding>>>()?;
        TextEmbedding::batch_tensor(&embs, self.dtype())
    }

    /// Observation draws, descriptions and discriminator pairs for a batch.
    pub fn prepare(&mut self, clips: &[&VideoClip]) -> Result<PreparedBatch> {
        let b = clips.len();
        if b < 2 {
            return Err(Error::validation("a training batch needs at least 2 clips"));
        }
        let k_random = self.cfg.data.k_random;
        let sets = clips
            .iter()
            .map(|c| sample_observations(c, k_random, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        let batch = ObservationBatch::from_sets(&sets, self.dtype())?;
        let own_text = clips.iter().map(|c| pick_description(c, &mut self.rng)).collect::<Result<Vec<_>>>()?;
        let perm = derangement(b, &mut self.rng).expect("b >= 2");
        let target_text = perm
            .iter()
            .map(|&j| pick_description(clips[j], &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        let pairs = build_pairs(b, &mut self.rng);
        Ok(PreparedBatch {
            batch,
            w_own: self.encode_texts(&own_text)?,
            w_target: self.encode_texts(&target_text)?,
            target_text,
            pairs,
        })
    }

    /// Encoding, reconstruction terms and the translated frames.
    pub fn generator_pass(&mut self, prep: &PreparedBatch) -> Result<GeneratorPass> {
        let nets = &self.nets;
        let ode = &self.cfg.ode;
        let mut code = nets.repnet.encode_clip(&prep.batch, Draw::Sample(&mut self.rng), ode)?;
        code.z_desc = Some(nets.repnet.text.project(&prep.w_own)?);
        let (rec, rec_prime) = twin_reconstruction(&prep.batch, &code, &nets.repnet, self.cfg.loss.recon)?;
        let kl_st = kl_static(&nets.repnet, &code, self.cfg.kl.static_mode)?;
        let kl_dyn = kl_dynamic(&code)?;

        let k = prep.batch.frames_per_clip();
        let z_cont = grad_gate(&fold_frames(&code.content_latents()?)?, self.warmup())?;
        let w_cont = nets.tranet.map_content(&z_cont)?;
        let x = prep.batch.flat_frames()?;
        let w_target = repeat_rows(&prep.w_target, k)?;
        let y = nets.tranet.generate(&x, &w_target, &w_cont)?;
        Ok(GeneratorPass {
            code,
            rec,
            rec_prime,
            kl_static: kl_st,
            kl_dynamic: kl_dyn,
            x,
            y,
            w_cont,
            w_target,
        })
    }

    /// LSGAN/hinge discriminator loss over matched (real) versus unmatched
    /// and relevant (fake) pairs. Every input is detached.
    pub fn discriminator_loss(&self, prep: &PreparedBatch, pass: &GeneratorPass) -> Result<Tensor> {
        let b = prep.batch.batch_size();
        let k = prep.batch.frames_per_clip();
        let per_clip = |t: &Tensor| -> Result<Tensor> {
            let dims = t.dims();
            let mut shape = vec![b, k];
            shape.extend_from_slice(&dims[1..]);
            Ok(t.detach().reshape(shape)?)
        };
        let real = prep.batch.frames.detach();
        let generated = per_clip(&pass.y)?;
        let own = per_clip(&repeat_rows(&prep.w_own, k)?)?;
        let target = per_clip(&pass.w_target)?;
        let cont = per_clip(&pass.w_cont)?;
        let scores = |select: &dyn Fn(&Pair) -> bool| -> Result<Vec<Tensor>> {
            let (img, desc, c) = prep
                .pairs
                .gather(select, &real, &generated, &own, &target, &cont)?
                .ok_or_else(|| Error::validation("pair batch lacks a required kind"))?;
            self.nets.disc.discriminate(&fold_frames(&img)?, &fold_frames(&desc)?, &fold_frames(&c)?)
        };
        let real_scores = scores(&|p| p.target == Target::Real)?;
        let fake_scores = scores(&|p| p.target == Target::Fake)?;
        gan_loss(&real_scores, &fake_scores, Side::Discriminator, self.cfg.gan.loss)
    }

    /// Generator-side losses against the current discriminator.
    pub fn generator_losses(&self, prep: &PreparedBatch, pass: &GeneratorPass) -> Result<LossComponents> {
        let nets = &self.nets;
        let scores = nets.disc.discriminate(&pass.y, &pass.w_target, &pass.w_cont)?;
        let gan = gan_loss(&[], &scores, Side::Generator, self.cfg.gan.loss)?;
        let l1 = perceptual_l1(&pass.x, &pass.y, self.extractor.as_ref())?;
        let y_batch = ObservationBatch {
            frames: pass.y.reshape(prep.batch.frames.dims())?,
            times: prep.batch.times.clone(),
        };
        let encoder = consistency_encoder(&nets.repnet, self.cfg.loss.unsup_to_encoder);
        let unsup = latent_consistency(&prep.batch, &y_batch, &encoder)?;
        Ok(LossComponents {
            rec: pass.rec.clone(),
            rec_prime: pass.rec_prime.clone(),
            kl_static: pass.kl_static.clone(),
            kl_dynamic: pass.kl_dynamic.clone(),
            gan,
            l1,
            unsup,
        })
    }

    fn non_finite(&self, bd: &LossBreakdown, d_loss: f64) -> Error {
        let components = format!(
            "L_rec={} L_rec'={} KL_st={} KL_dyn={} L_D={} L_G={} L_L1={} L_unsup={}",
            bd.rec, bd.rec_prime, bd.kl_static, bd.kl_dynamic, d_loss, bd.gan_g, bd.l1, bd.unsup
        );
        log::error!("non-finite loss at step {}: {components}", self.step);
        Error::NonFiniteLoss {
            step: self.step,
            components,
        }
    }

    /// One discriminator update followed by one RepNet + TraNet update.
    pub fn train_step(&mut self, clips: &[&VideoClip]) -> Result<StepRecord> {
        let warmup = self.warmup();
        let prep = self.prepare(clips)?;
        let pass = self.generator_pass(&prep)?;

        let mut d_loss = 0.0;
        for _ in 0..self.cfg.optim.d_steps_per_g {
            let l = self.discriminator_loss(&prep, &pass)?;
            d_loss = scalar(&l)?;
            if !d_loss.is_finite() {
                return Err(self.non_finite(&LossBreakdown::default(), d_loss));
            }
            self.opt_disc.step(&l.backward()?)?;
        }

        let comps = self.generator_losses(&prep, &pass)?;
        let bd = comps.breakdown(&self.cfg.loss)?;
        if !bd.is_finite() {
            return Err(self.non_finite(&bd, d_loss));
        }
        let (_, _, total) = total_loss(&comps, &self.cfg.loss)?;
        let grads = total.backward()?;
        self.opt_repnet.step(&grads)?;
        self.opt_tranet.step(&grads)?;

        let record = StepRecord {
            step: self.step,
            rec: bd.rec,
            rec_prime: bd.rec_prime,
            kl_st: bd.kl_static,
            kl_dyn: bd.kl_dynamic,
            cgan_d: d_loss,
            cgan_g: bd.gan_g,
            l1: bd.l1,
            unsup: bd.unsup,
            repnet: bd.repnet,
            tranet: bd.tranet,
            total: bd.total,
            warmup,
            lr_repnet: self.opt_repnet.lr(),
            lr_tranet: self.opt_tranet.lr(),
            lr_mapping: self.opt_tranet.lr() * self.cfg.optim.mapping_lr_scale,
            lr_discriminator: self.opt_disc.lr(),
        };
        self.step += 1;
        Ok(record)
    }

    /// Writes `<dir>/ckpt_<step>/` and returns its path.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<PathBuf> {
        let ck = dir.join(format!("ckpt_{:06}", self.step));
        fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
        let mut all: HashMap<String, Tensor> = self.nets.weights()?.into_iter().collect();
        for (name, opt) in [
            ("repnet", &self.opt_repnet),
            ("tranet", &self.opt_tranet),
            ("discriminator", &self.opt_disc),
        ] {
            for (k, t) in opt.state_tensors() {
                all.insert(format!("optim.{name}.{k}"), t);
            }
        }
        candle_core::safetensors::save(&all, ck.join(WEIGHTS_FILE))?;
        let meta = CheckpointMeta {
            step: self.step,
            seed: self.cfg.seed,
            config_hash: self.cfg.hash(),
            model_hash: self.cfg.model_hash(),
            warmup_iters: self.warmup_iters,
            rng: RngState::capture(&self.rng),
            optim_steps: [self.opt_repnet.steps(), self.opt_tranet.steps(), self.opt_disc.steps()],
        };
        let meta_path = ck.join(META_FILE);
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
        let cfg_path = ck.join(CONFIG_FILE);
        fs::write(&cfg_path, self.cfg.to_toml_string()).map_err(|e| Error::io(&cfg_path, e))?;
        Ok(ck)
    }

    /// Restores networks, optimizer moments, step counter and RNG position.
    /// The model part of the configuration must match the one saved.
    pub fn load_checkpoint(cfg: &Config, ck: &Path) -> Result<Self> {
        let meta = compatible_meta(cfg, ck)?;
        let mut t = Self::new(cfg, 1)?;
        let path = ck.join(WEIGHTS_FILE);
        t.nets.load_weights(&path)?;
        let all = candle_core::safetensors::load(&path, &Device::Cpu)?;
        for (i, (name, opt)) in [
            ("repnet", &mut t.opt_repnet),
            ("tranet", &mut t.opt_tranet),
            ("discriminator", &mut t.opt_disc),
        ]
        .into_iter()
        .enumerate()
        {
            let prefix = format!("optim.{name}.");
            let state: BTreeMap<String, Tensor> = all
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|s| (s.to_string(), v.clone())))
                .collect();
            opt.load_state(&state, meta.optim_steps[i])?;
        }
        t.step = meta.step;
        t.warmup_iters = meta.warmup_iters;
        t.rng = meta.rng.restore();
        Ok(t)
    }
}

pub fn read_meta(ck: &Path) -> Result<CheckpointMeta> {
    let meta_path = ck.join(META_FILE);
    Ok(serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?)
}

/// Metadata of `ck`, provided it was written under the model part of `cfg`.
fn compatible_meta(cfg: &Config, ck: &Path) -> Result<CheckpointMeta> {
    let meta = read_meta(ck)?;
    if meta.model_hash != cfg.model_hash() {
        return Err(Error::validation(format!(
            "checkpoint {} was written with model config {} but {} is active",
            ck.display(),
            meta.model_hash,
            cfg.model_hash()
        )));
    }
    Ok(meta)
}

fn pick_description(c: &VideoClip, r: &mut impl Rng) -> Result<String> {
    if c.descriptions.is_empty() {
        return Err(Error::validation(format!("clip {} has no description", c.clip_id)));
    }
    Ok(c.descriptions[r.random_range(0..c.descriptions.len())].clone())
}

/// Clips of global step `step`: a per-epoch shuffle (seeded by epoch)
/// sliced into full batches.
pub fn batch_indices(seed: u64, n_clips: usize, batch_size: usize, step: usize) -> Result<Vec<usize>> {
    let per_epoch = n_clips / batch_size.max(1);
    if batch_size < 2 || per_epoch == 0 {
        return Err(Error::validation(format!(
            "{n_clips} clips cannot fill a batch of {batch_size}"
        )));
    }
    let epoch = step / per_epoch;
    let mut order: Vec<usize> = (0..n_clips).collect();
    order.shuffle(&mut rng::stream(seed, streams::EPOCH_BASE + epoch as u64));
    let start = (step % per_epoch) * batch_size;
    Ok(order[start..start + batch_size].to_vec())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<StepRecord>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Runs (or resumes) training on `clips`, logging every step to
/// `<out_dir>/train_log.jsonl` and checkpointing under `out_dir`.
pub fn train(cfg: &Config, clips: &[VideoClip], resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let clips = if cfg.train.max_clips > 0 && cfg.train.max_clips < clips.len() {
        &clips[..cfg.train.max_clips]
    } else {
        clips
    };
    let bs = cfg.train.batch_size;
    let per_epoch = clips.len() / bs;
    if per_epoch == 0 {
        return Err(Error::validation(format!(
            "{} training clips cannot fill a batch of {bs}",
            clips.len()
        )));
    }
    let mut total = cfg.train.epochs * per_epoch;
    if cfg.train.max_steps > 0 {
        total = total.min(cfg.train.max_steps);
    }
    let mut trainer = match resume {
        Some(ck) => Trainer::load_checkpoint(cfg, ck)?,
        None => Trainer::new(cfg, per_epoch)?,
    };
    let out = PathBuf::from(&cfg.train.out_dir);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let log_path = out.join(LOG_FILE);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log_out = BufWriter::new(file);

    let mut records = Vec::new();
    let mut last_ck = None;
    while trainer.step < total {
        let idx = batch_indices(cfg.seed, clips.len(), bs, trainer.step)?;
        let batch: Vec<&VideoClip> = idx.iter().map(|&i| &clips[i]).collect();
        let rec = trainer.train_step(&batch)?;
        serde_json::to_writer(&mut log_out, &rec)?;
        log_out.write_all(b"\n").map_err(|e| Error::io(&log_path, e))?;
        log_out.flush().map_err(|e| Error::io(&log_path, e))?;
        if trainer.step % per_epoch.max(1) == 0 || trainer.step == total {
            log::info!(
                "step {}/{total}: L_rec {:.3} L_G {:.3} L_D {:.3}",
                trainer.step,
                rec.rec,
                rec.cgan_g,
                rec.cgan_d
            );
        }
        records.push(rec);
        let every = cfg.train.checkpoint_every;
        if every > 0 && trainer.step % every == 0 && trainer.step < total {
            last_ck = Some(trainer.save_checkpoint(&out)?);
        }
    }
    let checkpoint = match last_ck {
        Some(p) if p.ends_with(format!("ckpt_{:06}", trainer.step)) => p,
        _ => trainer.save_checkpoint(&out)?,
    };
    Ok(TrainOutcome {
        records,
        checkpoint,
        log: log_path,
    })
}

/// Most recent `ckpt_*` directory under `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<PathBuf> {
    let mut best: Option<PathBuf> = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_ck = p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("ckpt_"));
        if is_ck && p.join(META_FILE).exists() && best.as_ref().is_none_or(|b| p > *b) {
            best = Some(p);
        }
    }
    best.ok_or_else(|| Error::validation(format!("no checkpoint under {}", dir.display())))
}

/// Parses a JSONL training log.
pub fn read_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::config::{PerceptualKind, Precision};
    use crate::repnet::tests::toy_config;
    use crate::scenes::generate_in_memory;

    /// Every network shrunk to run a step in well under a second at 8×8.
    pub(crate) fn tiny_config() -> Config {
        let mut cfg = toy_config();
        cfg.seed = 5;
        cfg.tranet.ngf = 4;
        cfg.tranet.n_down = 1;
        cfg.tranet.max_channels = 8;
        cfg.tranet.mapping_width = 8;
        cfg.tranet.mapping_layers = 2;
        cfg.mfmod.blocks = 1;
        cfg.gan.ndf = 4;
        cfg.gan.max_channels = 8;
        cfg.gan.scales = 2;
        cfg.gan.layers = 2;
        cfg.gan.strided = 1;
        cfg.loss.perceptual = PerceptualKind::Identity;
        cfg.train.batch_size = 2;
        cfg.optim.warmup_iters = Some(4);
        cfg
    }

    fn clips(n: usize) -> Vec<VideoClip> {
        let data = generate_in_memory(9, n, 2, 16).unwrap();
        data.train.iter().map(|c| c.downsampled(2).unwrap()).collect()
    }

    fn snapshot(store: &ParamStore) -> Vec<(String, Vec<f64>)> {
        store
            .iter()
            .map(|(n, v)| {
                let t = v.as_tensor().to_dtype(DType::F64).unwrap().flatten_all().unwrap();
                (n.clone(), t.to_vec1::<f64>().unwrap())
            })
            .collect()
    }

    fn grads_all_zero(store: &ParamStore, grads: &candle_core::backprop::GradStore) -> bool {
        store.iter().all(|(_, v)| match grads.get(v.as_tensor()) {
            None => true,
            Some(g) => g.abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap() == 0.0,
        })
    }

    #[test]
    fn steps_are_deterministic() {
        let cfg = tiny_config();
        let data = clips(4);
        let refs: Vec<&VideoClip> = data.iter().collect();
        let run = || {
            let mut t = Trainer::new(&cfg, 2).unwrap();
            (0..2).map(|_| t.train_step(&refs[..2]).unwrap()).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|r| [r.rec, r.cgan_d, r.cgan_g, r.l1, r.unsup, r.total].iter().all(|v| v.is_finite())));
        assert_eq!(a[0].warmup, 0.0);
        assert_eq!(a[1].warmup, 0.25);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cfg = tiny_config();
        let data = clips(4);
        let refs: Vec<&VideoClip> = data.iter().collect();
        let dir = tempfile::tempdir().unwrap();
        let mut a = Trainer::new(&cfg, 2).unwrap();
        a.train_step(&refs[..2]).unwrap();
        let ck = a.save_checkpoint(dir.path()).unwrap();
        assert!(ck.ends_with("ckpt_000001"));
        let mut b = Trainer::load_checkpoint(&cfg, &ck).unwrap();
        for (sa, sb) in [
            (&a.nets.repnet_store, &b.nets.repnet_store),
            (&a.nets.tranet_store, &b.nets.tranet_store),
            (&a.nets.disc_store, &b.nets.disc_store),
        ] {
            assert_eq!(snapshot(sa), snapshot(sb));
        }
        assert_eq!(b.step, 1);
        // Same forward outputs, then the same continuation.
        let fwd = |t: &Trainer| {
            let batch = ObservationBatch::from_sets(
                &refs[..2].iter().map(|c| sample_observations(c, 3, &mut rng::stream(1, 1)).unwrap()).collect::<Vec<_>>(),
                t.dtype(),
            )
            .unwrap();
            let code = t.nets.repnet.encode_clip::<ChaCha8Rng>(&batch, Draw::Mean, &t.cfg.ode).unwrap();
            code.z_tr.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        };
        assert_eq!(fwd(&a), fwd(&b));
        assert_eq!(a.train_step(&refs[2..4]).unwrap(), b.train_step(&refs[2..4]).unwrap());
        assert_eq!(snapshot(&a.nets.tranet_store), snapshot(&b.nets.tranet_store));

        let mut other = cfg.clone();
        other.loss.beta = 1.0;
        assert!(matches!(Trainer::load_checkpoint(&other, &ck), Err(e) if e.is_validation()));
    }

    #[test]
    fn optimizers_are_isolated() {
        let cfg = tiny_config();
        let data = clips(2);
        let refs: Vec<&VideoClip> = data.iter().collect();
        let mut t = Trainer::new(&cfg, 1).unwrap();
        t.step = 10;
        let prep = t.prepare(&refs).unwrap();
        let pass = t.generator_pass(&prep).unwrap();
        let (rep0, tra0, disc0) = (
            snapshot(&t.nets.repnet_store),
            snapshot(&t.nets.tranet_store),
            snapshot(&t.nets.disc_store),
        );
        let d = t.discriminator_loss(&prep, &pass).unwrap();
        t.opt_disc.step(&d.backward().unwrap()).unwrap();
        assert_eq!(snapshot(&t.nets.repnet_store), rep0);
        assert_eq!(snapshot(&t.nets.tranet_store), tra0);
        let disc1 = snapshot(&t.nets.disc_store);
        assert_ne!(disc1, disc0);

        let comps = t.generator_losses(&prep, &pass).unwrap();
        let grads = total_loss(&comps, &cfg.loss).unwrap().2.backward().unwrap();
        t.opt_repnet.step(&grads).unwrap();
        t.opt_tranet.step(&grads).unwrap();
        assert_eq!(snapshot(&t.nets.disc_store), disc1);
        assert_ne!(snapshot(&t.nets.repnet_store), rep0);
        assert_ne!(snapshot(&t.nets.tranet_store), tra0);
    }

    #[test]
    fn warmup_gate_blocks_tranet_gradient_at_step_zero() {
        let mut cfg = tiny_config();
        cfg.dtype = Precision::F64;
        let data = clips(2);
        let refs: Vec<&VideoClip> = data.iter().collect();
        let tranet_grads_zero = |step: usize| {
            let mut t = Trainer::new(&cfg, 1).unwrap();
            t.step = step;
            let prep = t.prepare(&refs).unwrap();
            let pass = t.generator_pass(&prep).unwrap();
            let comps = t.generator_losses(&prep, &pass).unwrap();
            let grads = total_loss(&comps, &cfg.loss).unwrap().1.backward().unwrap();
            grads_all_zero(&t.nets.repnet_store, &grads)
        };
        assert!(tranet_grads_zero(0));
        assert!(!tranet_grads_zero(100));
    }

    #[test]
    fn reconstruction_only_dataflow() {
        let mut cfg = tiny_config();
        cfg.dtype = Precision::F64;
        cfg.loss.lambda_t = 0.0;
        cfg.loss.beta = 0.0;
        let data = clips(2);
        let refs: Vec<&VideoClip> = data.iter().collect();
        let mut t = Trainer::new(&cfg, 1).unwrap();
        t.step = 100;
        let prep = t.prepare(&refs).unwrap();
        let pass = t.generator_pass(&prep).unwrap();
        let comps = t.generator_losses(&prep, &pass).unwrap();
        let grads = total_loss(&comps, &cfg.loss).unwrap().2.backward().unwrap();
        assert!(grads_all_zero(&t.nets.tranet_store, &grads));
        assert!(!grads_all_zero(&t.nets.repnet_store, &grads));
        let disc0 = snapshot(&t.nets.disc_store);
        t.opt_repnet.step(&grads).unwrap();
        t.opt_tranet.step(&grads).unwrap();
        assert_eq!(snapshot(&t.nets.disc_store), disc0);
    }

    #[test]
    fn batch_composition_is_pure() {
        let a = batch_indices(3, 10, 4, 5).unwrap();
        assert_eq!(a, batch_indices(3, 10, 4, 5).unwrap());
        assert_eq!(a.len(), 4);
        // One epoch covers distinct clips.
        let mut seen: Vec<usize> = (0..2).flat_map(|s| batch_indices(3, 10, 4, s).unwrap()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 8);
        assert_ne!(batch_indices(3, 10, 4, 0).unwrap(), batch_indices(3, 10, 4, 2).unwrap());
        assert!(batch_indices(3, 3, 4, 0).is_err());
    }

    #[test]
    fn train_logs_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.train.out_dir = dir.path().join("run").to_string_lossy().into_owned();
        cfg.train.epochs = 2;
        cfg.train.checkpoint_every = 2;
        let data = clips(4);
        let full = train(&cfg, &data, None).unwrap();
        assert_eq!(full.records.len(), 4);
        assert_eq!(read_log(&full.log).unwrap(), full.records);
        assert!(full.checkpoint.ends_with("ckpt_000004"));
        let first = latest_checkpoint(Path::new(&cfg.train.out_dir)).unwrap();
        assert_eq!(first, full.checkpoint);

        // Resume from the step-2 checkpoint into a fresh directory.
        let mut cfg2 = cfg.clone();
        cfg2.train.out_dir = dir.path().join("run2").to_string_lossy().into_owned();
        let mid = Path::new(&cfg.train.out_dir).join("ckpt_000002");
        let tail = train(&cfg2, &data, Some(&mid)).unwrap();
        assert_eq!(tail.records, full.records[2..]);
        let mut other = cfg.clone();
        other.latent.dim_tr += 1;
        assert!(train(&other, &data, Some(&mid)).unwrap_err().is_validation());
        let json = fs::read_to_string(&full.log).unwrap();
        let first_line: serde_json::Value = serde_json::from_str(json.lines().next().unwrap()).unwrap();
        for key in ["step", "L_rec", "L_rec_prime", "kl_st", "kl_dyn", "L_cgan_d", "L_cgan_g", "L_l1", "L_unsup", "lr_repnet"] {
            assert!(first_line.get(key).is_some(), "{key}");
        }
    }
}
