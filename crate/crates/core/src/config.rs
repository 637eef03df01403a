//! Run configuration.
//!
//! A config is a TOML document with one table per subsystem. Every table
//! is optional; missing keys take the defaults below. Unknown keys are
//! rejected so a typo never silently falls back to a default.

use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// `f32` for training, `f64` for gradient checks.
    pub dtype: Precision,
    pub data: DataConfig,
    pub latent: LatentConfig,
    pub hidden: HiddenConfig,
    pub repnet: RepNetConfig,
    pub text: TextConfig,
    pub ode: OdeConfig,
    pub tranet: TraNetConfig,
    pub mfmod: MfmodConfig,
    pub gan: GanConfig,
    pub loss: LossConfig,
    pub kl: KlConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            dtype: Precision::F32,
            data: DataConfig::default(),
            latent: LatentConfig::default(),
            hidden: HiddenConfig::default(),
            repnet: RepNetConfig::default(),
            text: TextConfig::default(),
            ode: OdeConfig::default(),
            tranet: TraNetConfig::default(),
            mfmod: MfmodConfig::default(),
            gan: GanConfig::default(),
            loss: LossConfig::default(),
            kl: KlConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub root: String,
    pub resolution: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Random frames drawn in addition to the first one.
    pub k_random: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: "data/shapes".into(),
            resolution: 32,
            n_train: 2000,
            n_test: 500,
            k_random: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    pub dim_tr: usize,
    pub dim_ti: usize,
    pub dim_dyn: usize,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            dim_tr: 3,
            dim_ti: 2,
            dim_dyn: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HiddenConfig {
    pub dim: usize,
    /// Boundary between the static (first `split` dims) and dynamic halves.
    pub split: usize,
}

impl Default for HiddenConfig {
    fn default() -> Self {
        Self { dim: 256, split: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepNetConfig {
    /// Output channels of the 4x4 stride-2 encoder convolutions.
    pub enc_channels: Vec<usize>,
    /// Output channels of the 4x4 stride-2 decoder deconvolutions; the last is 3.
    pub dec_channels: Vec<usize>,
    /// Channels of the tensor reshaped from the decoder's dense stem.
    pub dec_base: usize,
    pub dec_hidden: usize,
    pub gru_hidden: usize,
    pub ode_hidden: usize,
    /// Hidden widths of the text projection; its output width is `latent.dim_tr`.
    pub text_proj: Vec<usize>,
}

impl Default for RepNetConfig {
    fn default() -> Self {
        Self {
            enc_channels: vec![32, 32, 64, 128, 128],
            dec_channels: vec![128, 64, 32, 32, 3],
            dec_base: 128,
            dec_hidden: 256,
            gru_hidden: 256,
            ode_hidden: 64,
            text_proj: vec![256, 128, 64],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoderKind {
    Template,
    ClipAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    pub text_encoder: TextEncoderKind,
    pub clip_model_path: String,
    pub seed: u64,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            text_encoder: TextEncoderKind::Template,
            clip_model_path: String::new(),
            seed: 0x7e47,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OdeMethod {
    Dopri5,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    pub method: OdeMethod,
    pub rtol: f64,
    pub atol: f64,
    /// dopri5: hard cap on attempted steps. rk4: steps over the full span.
    pub max_steps: usize,
    pub initial_step: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            method: OdeMethod::Rk4,
            rtol: 1e-7,
            atol: 1e-9,
            max_steps: 20,
            initial_step: 0.0,
        }
    }
}

impl OdeConfig {
    pub fn dopri5() -> Self {
        Self {
            method: OdeMethod::Dopri5,
            max_steps: 100_000,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraNetConfig {
    pub ngf: usize,
    pub n_down: usize,
    pub max_channels: usize,
    pub mapping_width: usize,
    pub mapping_layers: usize,
}

impl Default for TraNetConfig {
    fn default() -> Self {
        Self {
            ngf: 64,
            n_down: 3,
            max_channels: 512,
            mapping_width: 256,
            mapping_layers: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormStatsMode {
    Batch,
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfmodConfig {
    pub blocks: usize,
    pub stats: NormStatsMode,
    pub eps: f64,
}

impl Default for MfmodConfig {
    fn default() -> Self {
        Self {
            blocks: 5,
            stats: NormStatsMode::Batch,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanLossKind {
    Lsgan,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub loss: GanLossKind,
    pub scales: usize,
    pub ndf: usize,
    /// Conv layers before the modulation block.
    pub layers: usize,
    /// How many of those layers use stride 2 (the rest use stride 1).
    pub strided: usize,
    pub max_channels: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            loss: GanLossKind::Lsgan,
            scales: 3,
            ndf: 64,
            layers: 4,
            strided: 2,
            max_channels: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconKind {
    Bernoulli,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptualKind {
    RandomConv,
    VggAdapter,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub lambda_l1: f64,
    pub lambda_u: f64,
    pub lambda_t: f64,
    pub recon: ReconKind,
    pub perceptual: PerceptualKind,
    /// Let the latent-consistency term backpropagate into the RepNet encoder.
    pub unsup_to_encoder: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 32.0,
            lambda_l1: 1.0,
            lambda_u: 0.5,
            lambda_t: 1.0,
            recon: ReconKind::Bernoulli,
            perceptual: PerceptualKind::RandomConv,
            unsup_to_encoder: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticKlMode {
    PerFrame,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlConfig {
    #[serde(rename = "static")]
    pub static_mode: StaticKlMode,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self {
            static_mode: StaticKlMode::PerFrame,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupMode {
    /// Scale TraNet-originated gradients entering the RepNet encoder.
    Gradient,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub repnet: AdamConfig,
    pub tranet: AdamConfig,
    pub discriminator: AdamConfig,
    /// Learning-rate multiplier of the mapping network inside the TraNet optimizer.
    pub mapping_lr_scale: f64,
    /// `None` means 10% of the first epoch's iterations.
    pub warmup_iters: Option<usize>,
    pub warmup_mode: WarmupMode,
    pub d_steps_per_g: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            repnet: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            tranet: AdamConfig::default(),
            discriminator: AdamConfig::default(),
            mapping_lr_scale: 0.01,
            warmup_iters: None,
            warmup_mode: WarmupMode::Gradient,
            d_steps_per_g: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many steps even if epochs remain (0 = no cap).
    pub max_steps: usize,
    pub out_dir: String,
    /// Checkpoint cadence in steps (0 = only the final checkpoint).
    pub checkpoint_every: usize,
    /// Subsample of the training split (0 = use every clip).
    pub max_clips: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            max_steps: 0,
            out_dir: "runs/default".into(),
            checkpoint_every: 0,
            max_clips: 0,
        }
    }
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Applies a `dotted.key=value` override. The value is parsed as a TOML
    /// literal, falling back to a bare string. Cross-field validation is left
    /// to the caller so that dependent keys can change one at a time.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let mut doc = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}` does not name a table entry")))?;
            if i + 1 == parts.len() {
                if !table.contains_key(*part) && !key_is_optional(key) {
                    return Err(Error::Config(format!("unknown config key `{key}`")));
                }
                table.insert((*part).to_string(), value.clone());
                break;
            }
            node = table
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        *self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Every override in order, then validation.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<()> {
        for a in assignments {
            self.apply_override(a.as_ref())?;
        }
        self.validate()
    }

    /// Short stable digest of the full configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config always serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Hash of everything that shapes the networks and their updates,
    /// ignoring run bookkeeping (`train.*`, `data.root`). A checkpoint
    /// resumes under any config with the same model hash.
    pub fn model_hash(&self) -> String {
        let mut c = self.clone();
        c.train = TrainConfig::default();
        c.data.root = DataConfig::default().root;
        c.hash()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let res = self.data.resolution;
        if res == 0 || !res.is_power_of_two() {
            return bad(format!("data.resolution must be a power of two, got {res}"));
        }
        let l = &self.latent;
        if l.dim_tr == 0 || l.dim_ti == 0 || l.dim_dyn == 0 {
            return bad("latent dims must all be >= 1".into());
        }
        if self.hidden.split == 0 || self.hidden.split >= self.hidden.dim {
            return bad(format!(
                "hidden.split must lie in 1..{}, got {}",
                self.hidden.dim, self.hidden.split
            ));
        }
        let r = &self.repnet;
        if r.enc_channels.is_empty() || r.enc_channels.len() != r.dec_channels.len() {
            return bad("repnet.enc_channels and repnet.dec_channels must be non-empty and equally long".into());
        }
        if r.dec_channels.last() != Some(&3) {
            return bad("repnet.dec_channels must end with 3".into());
        }
        if res % (1 << r.enc_channels.len()) != 0 {
            return bad(format!(
                "resolution {res} is not divisible by 2^{} (repnet encoder)",
                r.enc_channels.len()
            ));
        }
        if res % (1 << self.tranet.n_down) != 0 {
            return bad(format!(
                "resolution {res} is not divisible by 2^{} (tranet)",
                self.tranet.n_down
            ));
        }
        let g = &self.gan;
        if g.scales == 0 || g.layers == 0 || g.strided > g.layers {
            return bad("gan.scales, gan.layers must be >= 1 and gan.strided <= gan.layers".into());
        }
        let coarsest = res >> (g.scales - 1);
        if coarsest == 0 || coarsest % (1 << g.strided) != 0 {
            return bad(format!(
                "coarsest discriminator input {coarsest} is not divisible by 2^{}",
                g.strided
            ));
        }
        let o = &self.ode;
        if !(o.rtol > 0.0 && o.atol > 0.0) || o.max_steps == 0 {
            return bad("ode.rtol, ode.atol must be > 0 and ode.max_steps >= 1".into());
        }
        if !(self.mfmod.eps > 0.0) || self.mfmod.blocks == 0 {
            return bad("mfmod.eps must be > 0 and mfmod.blocks >= 1".into());
        }
        let lw = &self.loss;
        if [lw.beta, lw.lambda_l1, lw.lambda_u, lw.lambda_t]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return bad("loss weights must be >= 0".into());
        }
        if self.train.batch_size < 2 {
            return bad("train.batch_size must be >= 2 (unmatched pairs need two clips)".into());
        }
        if self.data.k_random + 1 > crate::scenes::FRAMES_PER_CLIP {
            return bad("data.k_random + 1 exceeds the clip length".into());
        }
        if self.optim.d_steps_per_g == 0 {
            return bad("optim.d_steps_per_g must be >= 1".into());
        }
        Ok(())
    }
}

fn key_is_optional(key: &str) -> bool {
    key == "optim.warmup_iters"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = Config::default();
        let back = Config::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = Config::from_toml_str("[ode]\nmethd = \"rk4\"\n").unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn overrides() {
        let mut cfg = Config::default();
        cfg.apply_override("ode.method=dopri5").unwrap();
        assert_eq!(cfg.ode.method, OdeMethod::Dopri5);
        cfg.apply_override("loss.beta = 4.0").unwrap();
        assert_eq!(cfg.loss.beta, 4.0);
        cfg.apply_override("optim.warmup_iters=7").unwrap();
        assert_eq!(cfg.optim.warmup_iters, Some(7));
        assert!(cfg.apply_override("nope.key=1").is_err());
        assert!(cfg.apply_overrides(&["data.resolution=48"]).is_err());
        cfg.apply_overrides(&["data.resolution=16", "repnet.enc_channels=[4, 4]", "repnet.dec_channels=[4, 3]"])
            .unwrap();
        assert_eq!(cfg.repnet.enc_channels, vec![4, 4]);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = Config::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.train.out_dir = "elsewhere".into();
        c.train.epochs += 1;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.model_hash(), c.model_hash());
        assert_ne!(a.model_hash(), b.model_hash());
    }
}
