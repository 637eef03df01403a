//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any hard criterion fails. Advisory and soft criteria report
//! but never fail the run.
//!
//! Run alone with `cargo test -p videdit-core --test acceptance`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use videdit::config::{MfmodConfig, NormStatsMode, OdeConfig, PerceptualKind, Precision, WarmupMode};
use videdit::harness::{self, Networks, StepRecord, Trainer};
use videdit::metrics::{aam, frechet_from_moments, inception_score, mig, AamMode, CodeFactorTable, GaussianMoments, DEFAULT_BINS};
use videdit::nn::{to_f64_vec, Builder, ParamStore};
use videdit::objectives::{kl_gaussian, total_loss};
use videdit::odeint::{check_gradient, check_gradient_through_solver, integrate, FnOde, GradientCheck};
use videdit::repnet::{GaussianLatent, ObservationBatch, RepNet};
use videdit::rng;
use videdit::scenes::{generate_dataset, generate_in_memory, sample_observations, VideoClip};
use videdit::textenc::{build_text_encoder, EMBED_DIM};
use videdit::tranet::{feature_map, mfmod, norm_stats, MfmodBlock, ModulatedBlockParams};
use videdit::{Config, Result};

#[derive(Clone, Copy, PartialEq)]
enum Level {
    Hard,
    /// Failure calls for investigation, not a red build.
    Soft,
    Advisory,
}

struct Outcome {
    id: &'static str,
    level: Level,
    pass: bool,
    detail: String,
}

/// Writes straight to stdout so the lines survive output capture.
fn report(o: &Outcome) {
    let tag = match (o.pass, o.level) {
        (true, _) => "PASS",
        (false, Level::Hard) => "FAIL",
        (false, Level::Soft) => "FAIL (soft)",
        (false, Level::Advisory) => "FAIL (advisory)",
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{tag} [{}] {}", o.id, o.detail);
    let _ = out.flush();
}

fn smoke_config() -> Config {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    Config::load(&path).expect("configs/smoke.toml parses")
}

/// The 8×8, two-clip configuration of the gradient suite.
fn tiny_config() -> Config {
    let mut cfg = Config::default();
    cfg.seed = 11;
    cfg.dtype = Precision::F64;
    cfg.data.resolution = 8;
    cfg.hidden.dim = 16;
    cfg.hidden.split = 8;
    cfg.repnet.enc_channels = vec![4, 4, 4];
    cfg.repnet.dec_channels = vec![4, 4, 3];
    cfg.repnet.dec_base = 4;
    cfg.repnet.dec_hidden = 16;
    cfg.repnet.gru_hidden = 8;
    cfg.repnet.ode_hidden = 8;
    cfg.repnet.text_proj = vec![8];
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
    cfg.train.batch_size = 2;
    cfg
}

fn tiny_clips(n: usize, seed: u64) -> Vec<VideoClip> {
    generate_in_memory(seed, n, 1, 16)
        .unwrap()
        .train
        .iter()
        .map(|c| c.downsampled(2).unwrap())
        .collect()
}

/// Pins the closure signature so `?` and `Ok` infer.
fn ode<F: Fn(&Tensor, f64) -> Result<Tensor>>(f: F) -> FnOde<F> {
    FnOde(f)
}

fn f64s(v: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
}

// ---------------------------------------------------------------- 1

fn ode_analytic() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = OdeConfig::dopri5();
    let times = [0.0, 0.5, 1.0, PI / 2.0, 2.0, PI, 2.0 * PI];
    let mut worst = 0.0f64;
    let mut check = |name: &str, z0: &[f64], f: &dyn videdit::odeint::OdeFunction, exact: &dyn Fn(f64) -> Vec<f64>| -> Result<()> {
        let sol = integrate(f, &f64s(z0, &[1, z0.len()]), &times, &cfg)?;
        for (t, s) in times.iter().zip(&sol.states) {
            for (got, want) in to_f64_vec(s)?.iter().zip(exact(*t)) {
                let e = (got - want).abs();
                if e > worst {
                    worst = e;
                }
                if e > 1e-6 {
                    eprintln!("{name}: t={t} got {got} want {want}");
                }
            }
        }
        Ok(())
    };
    // Exponential growth scaled so the final value stays O(1).
    let k = 0.3;
    check("exponential", &[1.5], &ode(move |z: &Tensor, _| Ok(z.affine(k, 0.0)?)), &|t| vec![1.5 * (k * t).exp()])?;
    check("constant", &[-2.0], &ode(|z: &Tensor, _| Ok(z.ones_like()?.affine(2.5, 0.0)?)), &|t| vec![-2.0 + 2.5 * t])?;
    check("quadrature", &[0.0], &ode(|z: &Tensor, t: f64| Ok(z.ones_like()?.affine(t.cos(), 0.0)?)), &|t| vec![t.sin()])?;
    let oscillator = ode(|z: &Tensor, _| {
        let x = z.narrow(1, 0, 1)?;
        let v = z.narrow(1, 1, 1)?;
        Ok(Tensor::cat(&[&v, &x.neg()?], 1)?)
    });
    check("harmonic", &[1.0, 0.0], &oscillator, &|t| vec![t.cos(), -t.sin()])?;
    let elapsed = start.elapsed();
    Ok(Outcome {
        id: "1 ode-analytic",
        level: Level::Hard,
        pass: worst <= 1e-6 && elapsed < Duration::from_secs(5),
        detail: format!("max abs error {worst:.2e} (<= 1e-6), {:.2}s (< 5s)", elapsed.as_secs_f64()),
    })
}

// ---------------------------------------------------------------- 2

/// `||g_ad - g_fd|| / ||g_fd||` over every probed coordinate.
fn global_relative_error(c: &GradientCheck) -> f64 {
    let (mut diff, mut norm) = (0.0, 0.0);
    for cmp in &c.comparisons {
        for (a, f) in cmp.autodiff.iter().zip(&cmp.finite_diff) {
            diff += (a - f).powi(2);
            norm += f * f;
        }
    }
    (diff / norm.max(1e-300)).sqrt()
}

fn var_of(store: &ParamStore, name: &str) -> Var {
    store.get(name).unwrap().clone()
}

fn gradient_solver() -> Result<f64> {
    let mut r = rng::stream(21, 0);
    let w = Var::from_tensor(&rng::normal_tensor(&mut r, &[3, 3], DType::F64)?.affine(0.6, 0.0)?)?;
    let b = Var::from_tensor(&rng::normal_tensor(&mut r, &[1, 3], DType::F64)?.affine(0.3, 0.0)?)?;
    let z0 = Var::from_tensor(&rng::normal_tensor(&mut r, &[2, 3], DType::F64)?)?;
    let f = ode(|z: &Tensor, _| Ok(z.matmul(&w.as_tensor().t()?)?.broadcast_add(b.as_tensor())?.tanh()?));
    let target = rng::normal_tensor(&mut r, &[2, 3], DType::F64)?;
    let loss = |z: &Tensor| -> Result<Tensor> { Ok((z - &target)?.sqr()?.sum_all()?) };
    let mut worst = 0.0f64;
    for cfg in [OdeConfig::dopri5(), OdeConfig::default()] {
        let c = check_gradient_through_solver(&f, &[("w", &w), ("b", &b)], &z0, &[0.0, 0.3, 1.2], &cfg, &loss, 16)?;
        worst = worst.max(c.max_relative_error());
    }
    Ok(worst)
}

fn gradient_mfmod() -> Result<f64> {
    let mut store = ParamStore::new(DType::F64);
    let mut r = rng::stream(22, 0);
    let block = MfmodBlock::new(&mut Builder::new(&mut store, &mut r), 4, 6)?;
    let x = Var::from_tensor(&rng::normal_tensor(&mut r, &[2, 4, 4, 4], DType::F64)?)?;
    let wd = rng::normal_tensor(&mut r, &[2, EMBED_DIM], DType::F64)?.affine(0.05, 0.0)?;
    let wc = rng::normal_tensor(&mut r, &[2, 6], DType::F64)?;
    let probe = rng::normal_tensor(&mut r, &[2, 4, 4, 4], DType::F64)?;
    let cfg = MfmodConfig::default();
    let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
    let vars: Vec<Var> = names.iter().map(|n| var_of(&store, n)).collect();
    let mut params: Vec<(&str, &Var)> = names.iter().map(String::as_str).zip(&vars).collect();
    params.push(("x", &x));
    let loss = || -> Result<Tensor> { Ok((block.forward(x.as_tensor(), &wd, &wc, &cfg)? * &probe)?.sum_all()?) };
    Ok(global_relative_error(&check_gradient(&params, &loss, 6)?))
}

/// The full generator objective: reconstruction, KL, adversarial,
/// perceptual and consistency terms on two 8×8 clips. Stop-gradient paths
/// (warmup gate, frozen consistency encoder) are switched off so that the
/// objective is an ordinary function of every RepNet and TraNet parameter.
fn gradient_full_loss() -> Result<(f64, usize)> {
    let mut cfg = tiny_config();
    cfg.optim.warmup_mode = WarmupMode::Off;
    cfg.loss.unsup_to_encoder = true;
    cfg.loss.perceptual = PerceptualKind::RandomConv;
    let clips = tiny_clips(2, 5);
    let refs: Vec<&VideoClip> = clips.iter().collect();
    let mut t = Trainer::new(&cfg, 1)?;
    let prep = t.prepare(&refs)?;
    let noise = t.rng_state();
    let names: Vec<(String, Var)> = t
        .nets
        .repnet_store
        .iter()
        .chain(t.nets.tranet_store.iter())
        .map(|(n, v)| (n.clone(), v.clone()))
        .collect();
    let t = RefCell::new(t);
    let loss = || -> Result<Tensor> {
        let mut t = t.borrow_mut();
        t.restore_rng(&noise);
        let pass = t.generator_pass(&prep)?;
        let comps = t.generator_losses(&prep, &pass)?;
        Ok(total_loss(&comps, &t.cfg.loss)?.2)
    };
    let params: Vec<(&str, &Var)> = names.iter().map(|(n, v)| (n.as_str(), v)).collect();
    let c = check_gradient(&params, &loss, 3)?;
    Ok((global_relative_error(&c), c.comparisons.iter().map(|x| x.coords.len()).sum()))
}

fn gradients() -> Result<Outcome> {
    let start = Instant::now();
    let a = gradient_solver()?;
    let b = gradient_mfmod()?;
    let (c, n) = gradient_full_loss()?;
    let elapsed = start.elapsed();
    Ok(Outcome {
        id: "2 gradients",
        level: Level::Hard,
        pass: a < 1e-4 && b < 1e-4 && c < 1e-4 && elapsed < Duration::from_secs(120),
        detail: format!(
            "rel err solver {a:.1e}, mfmod {b:.1e}, full loss {c:.1e} over {n} coords (< 1e-4); {:.1}s (< 120s)",
            elapsed.as_secs_f64()
        ),
    })
}

// ---------------------------------------------------------------- 3

fn permutation_invariance() -> Result<Outcome> {
    let mut cfg = smoke_config();
    cfg.dtype = Precision::F64;
    let mut store = ParamStore::new(DType::F64);
    let net = RepNet::new(&mut Builder::new(&mut store, &mut rng::stream(31, 0)), &cfg)?;
    let clip = generate_in_memory(31, 1, 1, cfg.data.resolution)?.train.remove(0);
    let base = sample_observations(&clip, 7, &mut rng::stream(31, 1))?;
    let latents = |order: &[usize]| -> Result<Vec<f64>> {
        let mut set = base.clone();
        set.frames = order.iter().map(|&i| base.frames[i].clone()).collect();
        set.times = order.iter().map(|&i| base.times[i]).collect();
        set.indices = order.iter().map(|&i| base.indices[i]).collect();
        let batch = ObservationBatch::from_sets(&[set], DType::F64)?;
        let post = net.pool_static(&net.hidden_features(&batch)?)?;
        Ok([to_f64_vec(&post.mean)?, to_f64_vec(&post.log_var)?].concat())
    };
    let identity: Vec<usize> = (0..base.frames.len()).collect();
    let reference = latents(&identity)?;
    let mut r = rng::stream(31, 2);
    let (mut worst, mut exact) = (0.0f64, true);
    for _ in 0..100 {
        let mut order = identity.clone();
        order.shuffle(&mut r);
        let z = latents(&order)?;
        exact &= z == reference;
        for (a, b) in z.iter().zip(&reference) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(Outcome {
        id: "3 permutation-invariance",
        level: Level::Hard,
        pass: worst <= 1e-6 && exact,
        detail: format!("100 permutations of 8 frames: max |Δz_st| {worst:.1e} (<= 1e-6), bit-identical: {exact}"),
    })
}

// ---------------------------------------------------------------- 4

fn kl_monte_carlo() -> Result<Outcome> {
    let zero = GaussianLatent {
        mean: Tensor::zeros((1, 4), DType::F64, &Device::Cpu)?,
        log_var: Tensor::zeros((1, 4), DType::F64, &Device::Cpu)?,
    };
    let kl0 = kl_gaussian(&zero)?.to_scalar::<f64>()?;
    let mut r = rng::stream(41, 0);
    let mut worst = 0.0f64;
    let cases: [(&[f64], &[f64]); 3] = [
        (&[0.5, -1.0, 2.0], &[0.0, -1.0, 0.7]),
        (&[0.0, 0.0], &[-2.0, 1.5]),
        (&[1.2], &[0.3]),
    ];
    for (mu, lv) in cases {
        let d = mu.len();
        let post = GaussianLatent {
            mean: f64s(mu, &[1, d]),
            log_var: f64s(lv, &[1, d]),
        };
        let closed = kl_gaussian(&post)?.to_scalar::<f64>()?;
        // E_q[log q(z) - log p(z)] with z = μ + σ ε.
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut s = 0.0;
            for j in 0..d {
                let eps: f64 = StandardNormal.sample(&mut r);
                let z = mu[j] + (0.5 * lv[j]).exp() * eps;
                s += -0.5 * lv[j] - 0.5 * eps * eps + 0.5 * z * z;
            }
            acc += s;
        }
        let mc = acc / n as f64;
        worst = worst.max((mc - closed).abs() / closed.abs());
    }
    Ok(Outcome {
        id: "4 kl",
        level: Level::Hard,
        pass: worst < 0.01 && kl0 == 0.0,
        detail: format!("max relative gap to 1e6-sample Monte Carlo {:.3}% (< 1%), kl(0, 0) = {kl0}", worst * 100.0),
    })
}

// ---------------------------------------------------------------- 5

fn metric_oracles() -> Result<Outcome> {
    let mut r = rng::stream(51, 0);
    let n = 10_000;
    let levels = [4usize, 6, 10, 3];
    let factors: Vec<Vec<usize>> = (0..n).map(|_| levels.iter().map(|&l| r.random_range(0..l)).collect()).collect();
    let copy: Vec<Vec<f64>> = factors.iter().map(|f| f.iter().map(|&v| v as f64).collect()).collect();
    let copy_table = CodeFactorTable::new(copy, factors.clone())?;
    let copy_mig = mig(&copy_table, DEFAULT_BINS)?;
    let copy_aam = aam(&copy_table, DEFAULT_BINS, AamMode::SumOthers)?;
    let noise: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| r.random::<f64>()).collect()).collect();
    let noise_mig = mig(&CodeFactorTable::new(noise, factors)?, DEFAULT_BINS)?;

    let d = 6;
    let a = nalgebra::DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
    let cov = &a * a.transpose() + nalgebra::DMatrix::identity(d, d) * 0.2;
    let mut fd_worst = 0.0f64;
    for gap in [0.0, 0.7, 2.5] {
        let mut dir = nalgebra::DVector::from_fn(d, |_, _| r.random_range(-1.0..1.0));
        dir /= dir.norm();
        let ga = GaussianMoments { mean: nalgebra::DVector::zeros(d), cov: cov.clone() };
        let gb = GaussianMoments { mean: dir * gap, cov: cov.clone() };
        fd_worst = fd_worst.max((frechet_from_moments(&ga, &gb)? - gap * gap).abs());
    }
    let is_uniform = inception_score(&vec![vec![0.2; 5]; 50])?;
    let c = 8;
    let onehots: Vec<Vec<f64>> = (0..c).map(|i| (0..c).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let is_onehot = inception_score(&onehots)?;
    let pass = copy_mig >= 0.95
        && copy_aam >= 0.95
        && noise_mig <= 0.05
        && fd_worst <= 1e-6
        && (is_uniform - 1.0).abs() < 1e-12
        && (is_onehot - c as f64).abs() < 1e-12;
    Ok(Outcome {
        id: "5 metric-oracles",
        level: Level::Hard,
        pass,
        detail: format!(
            "copy MIG {copy_mig:.3} AAM {copy_aam:.3} (>= 0.95), noise MIG {noise_mig:.4} (<= 0.05), \
             Fréchet |d² err| {fd_worst:.1e}, IS uniform {is_uniform} one-hot {is_onehot} (C = {c})"
        ),
    })
}

// ---------------------------------------------------------------- 6

fn set_linear(store: &ParamStore, t: &Tensor, v: f64) {
    let var = store.iter().find(|(_, x)| x.as_tensor().id() == t.id()).unwrap().1;
    var.set(&t.ones_like().unwrap().affine(v, 0.0).unwrap()).unwrap();
}

fn mfmod_numerics() -> Result<Outcome> {
    // Statistics against a plain loop.
    let mut r = rng::stream(61, 0);
    let (n, c, h, w) = (3, 4, 5, 6);
    let x = rng::normal_tensor(&mut r, &[n, c, h, w], DType::F64)?;
    let v = to_f64_vec(&x)?;
    let (mu, sigma) = norm_stats(&x, NormStatsMode::Batch, 1e-5)?;
    let (mu, sigma) = (to_f64_vec(&mu)?, to_f64_vec(&sigma)?);
    let mut stats_err = 0.0f64;
    for ch in 0..c {
        let mut vals = Vec::new();
        for b in 0..n {
            let off = (b * c + ch) * h * w;
            vals.extend_from_slice(&v[off..off + h * w]);
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let s = (vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        stats_err = stats_err.max((mu[ch] - m).abs()).max((sigma[ch] - s).abs());
    }

    // The 2×2 worked example: blended scale 2, shift 0.5.
    let mut store = ParamStore::new(DType::F64);
    let p = ModulatedBlockParams::new(&mut Builder::new(&mut store, &mut rng::stream(62, 0)), 1, 2, 2)?;
    for l in [&p.gamma, &p.rho, &p.psi, &p.eta] {
        set_linear(&store, &l.weight, 0.0);
    }
    set_linear(&store, &p.gamma.bias, 2.0);
    set_linear(&store, &p.psi.bias, 2.0);
    set_linear(&store, &p.rho.bias, 0.5);
    set_linear(&store, &p.eta.bias, 0.5);
    let wd = f64s(&[0.3, 0.1], &[1, 2]);
    let wc = f64s(&[-0.2, 0.4], &[1, 2]);
    let cfg = MfmodConfig::default();
    let fm = feature_map(&[vec![1.0, 3.0], vec![5.0, 7.0]], DType::F64)?;
    let out = to_f64_vec(&mfmod(&fm, &wd, &wc, &p, &cfg)?)?;
    let expected = [-2.18328, -0.39443, 1.39443, 3.18328];
    let example_err = out.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    // Zero variance: the normalized map vanishes, leaving the blended shift.
    let mut store = ParamStore::new(DType::F64);
    let p = ModulatedBlockParams::new(&mut Builder::new(&mut store, &mut rng::stream(63, 0)), 3, 2, 2)?;
    let flat = Tensor::ones((2, 3, 4, 4), DType::F64, &Device::Cpu)?.affine(0.0, 0.625)?;
    let wd = rng::normal_tensor(&mut r, &[2, 2], DType::F64)?;
    let wc = rng::normal_tensor(&mut r, &[2, 2], DType::F64)?;
    let got = mfmod(&flat, &wd, &wc, &p, &cfg)?;
    let (_, shift) = p.modulation(&wd, &wc)?;
    let bias = to_f64_vec(&shift.reshape((2, 3, 1, 1))?.broadcast_as((2, 3, 4, 4))?.contiguous()?)?;
    let degenerate = to_f64_vec(&got)? == bias;

    Ok(Outcome {
        id: "6 mfmod-numerics",
        level: Level::Hard,
        pass: stats_err <= 1e-6 && example_err <= 1e-5 && degenerate,
        detail: format!(
            "stats vs loop {stats_err:.1e} (<= 1e-6), 2x2 example {example_err:.1e} (<= 1e-5), zero-variance output equals shift: {degenerate}"
        ),
    })
}

// ---------------------------------------------------------------- 7, 8, 9

struct SeedRun {
    seed: u64,
    finite: bool,
    rec_start: f64,
    rec_end: f64,
    mig_init: f64,
    mig_trained: f64,
    edit_fraction: f64,
    traj_r2: f64,
}

fn mean_rec(records: &[StepRecord]) -> f64 {
    records.iter().map(|r| r.rec).sum::<f64>() / records.len() as f64
}

fn smoke_seed(seed: u64, root: &Path) -> Result<SeedRun> {
    let mut cfg = smoke_config();
    cfg.seed = seed;
    cfg.train.out_dir = root.join(format!("seed{seed}")).to_string_lossy().into_owned();
    let data = generate_in_memory(seed, cfg.data.n_train, cfg.data.n_test, cfg.data.resolution)?;
    let init = Networks::new(&cfg)?;
    let (mig_init, _) = harness::disentanglement(&cfg, &init, &data.test)?;
    let start = Instant::now();
    let outcome = harness::train(&cfg, &data.train, None)?;
    let recs = &outcome.records;
    let finite = recs.iter().all(|r| {
        [r.rec, r.rec_prime, r.kl_st, r.kl_dyn, r.cgan_d, r.cgan_g, r.l1, r.unsup, r.total]
            .iter()
            .all(|v| v.is_finite())
    });
    // L_rec is noisy step to step; compare the first and last tenth.
    let w = (recs.len() / 10).max(1);
    let nets = Networks::from_checkpoint(&cfg, &outcome.checkpoint)?;
    let (mig_trained, _) = harness::disentanglement(&cfg, &nets, &data.test)?;
    let text = build_text_encoder(&cfg.text);
    let edits = harness::edit_clips(&cfg, &nets, &data.test, text.as_ref())?;
    let r2 = harness::trajectory_r2(&cfg, &nets, &data.test, 100)?;
    eprintln!(
        "smoke seed {seed}: {} steps in {:.0}s",
        recs.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(SeedRun {
        seed,
        finite,
        rec_start: mean_rec(&recs[..w]),
        rec_end: mean_rec(&recs[recs.len() - w..]),
        mig_init,
        mig_trained,
        edit_fraction: edits.improved_fraction(),
        traj_r2: harness::median(&r2),
    })
}

fn smoke(root: &Path) -> Result<Vec<Outcome>> {
    let runs = [0u64, 1, 2].iter().map(|&s| smoke_seed(s, root)).collect::<Result<Vec<_>>>()?;
    let per_seed = |f: &dyn Fn(&SeedRun) -> String| runs.iter().map(|r| format!("seed {}: {}", r.seed, f(r))).collect::<Vec<_>>().join("; ");

    let finite = runs.iter().all(|r| r.finite);
    let decreased = runs.iter().all(|r| r.rec_end < r.rec_start);
    let ratio: Vec<f64> = runs.iter().map(|r| r.mig_trained / r.mig_init.max(1e-12)).collect();
    let med_ratio = harness::median(&ratio);
    let med_edit = harness::median(&runs.iter().map(|r| r.edit_fraction).collect::<Vec<_>>());
    let med_r2 = harness::median(&runs.iter().map(|r| r.traj_r2).collect::<Vec<_>>());
    Ok(vec![
        Outcome {
            id: "7a smoke-finite",
            level: Level::Hard,
            pass: finite,
            detail: "every logged loss finite for seeds 0, 1, 2".into(),
        },
        Outcome {
            id: "7b smoke-rec-decreases",
            level: Level::Hard,
            pass: decreased,
            detail: per_seed(&|r| format!("L_rec {:.1} -> {:.1}", r.rec_start, r.rec_end)),
        },
        Outcome {
            id: "7c smoke-mig-ratio",
            level: Level::Soft,
            pass: med_ratio >= 2.0,
            detail: format!(
                "median trained/init MIG {med_ratio:.2} (>= 2); {}",
                per_seed(&|r| format!("{:.3}/{:.3}", r.mig_trained, r.mig_init))
            ),
        },
        Outcome {
            id: "8 edit-diagnostic",
            level: Level::Advisory,
            pass: med_edit >= 0.7,
            detail: format!(
                "median fraction of test clips moved towards the target text {med_edit:.2} (>= 0.70); {}",
                per_seed(&|r| format!("{:.2}", r.edit_fraction))
            ),
        },
        Outcome {
            id: "9 trajectory-r2",
            level: Level::Advisory,
            pass: med_r2 >= 0.9,
            detail: format!(
                "median dominant-dim R² over the final 80% {med_r2:.3} (>= 0.9); {}",
                per_seed(&|r| format!("{:.3}", r.traj_r2))
            ),
        },
    ])
}

// ---------------------------------------------------------------- 10

fn tree_digest(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_path_buf();
                out.insert(rel, Sha256::digest(fs::read(&p).unwrap()).to_vec());
            }
        }
    }
    out
}

fn determinism(root: &Path) -> Result<Outcome> {
    let cfg = smoke_config();
    let gen = |name: &str, seed: u64| {
        let dir = root.join(name);
        generate_dataset(seed, 20, 5, cfg.data.resolution, &dir, false).unwrap();
        tree_digest(&dir)
    };
    let (a, b, c) = (gen("gen_a", 4), gen("gen_b", 4), gen("gen_c", 5));
    let data_ok = a == b && a != c && a.len() > 20;

    let mut tc = tiny_config();
    tc.dtype = Precision::F32;
    tc.train.epochs = 3;
    tc.train.checkpoint_every = 2;
    let clips = tiny_clips(4, 6);
    let with_dir = |dir: &str| {
        let mut cfg = tc.clone();
        cfg.train.out_dir = root.join(dir).to_string_lossy().into_owned();
        cfg
    };
    let (cfg_a, cfg_b) = (with_dir("train_a"), with_dir("train_b"));
    let r1 = harness::train(&cfg_a, &clips, None)?;
    let r2 = harness::train(&cfg_b, &clips, None)?;
    let train_ok = r1.records == r2.records && fs::read(&r1.log).ok() == fs::read(&r2.log).ok();

    // Resuming from a mid-run checkpoint must replay the tail exactly, which
    // needs weights, optimizer moments and RNG state to survive the trip.
    let mid = Path::new(&cfg_a.train.out_dir).join("ckpt_000002");
    let tail = harness::train(&with_dir("train_c"), &clips, Some(&mid))?;
    let resume_ok = tail.records[..] == r1.records[2..];

    // Load, save, load again: tensors bit-identical.
    let loaded = Trainer::load_checkpoint(&cfg_a, &r1.checkpoint)?;
    let again_dir = loaded.save_checkpoint(&root.join("resaved"))?;
    let again = Networks::from_checkpoint(&cfg_a, &again_dir)?;
    let same_weights = |a: &Networks, b: &Networks| -> Result<bool> {
        let (wa, wb) = (a.weights()?, b.weights()?);
        Ok(wa.len() == wb.len()
            && wa.iter().zip(&wb).all(|((na, ta), (nb, tb))| {
                na == nb && to_f64_vec(ta).unwrap() == to_f64_vec(tb).unwrap()
            }))
    };
    let ck_ok = resume_ok && same_weights(&loaded.nets, &again)? && loaded.step == r1.records.len();

    Ok(Outcome {
        id: "10 determinism",
        level: Level::Hard,
        pass: data_ok && train_ok && ck_ok,
        detail: format!(
            "gen-data bit-identical: {data_ok} ({} files), train logs identical: {train_ok}, mid-run resume replays tail: {resume_ok}, checkpoint round-trip exact: {ck_ok}",
            a.len()
        ),
    })
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temp dir");
    let mut outcomes = Vec::new();
    let mut push = |id: &'static str, r: Result<Vec<Outcome>>| {
        let list = r.unwrap_or_else(|e| {
            vec![Outcome {
                id,
                level: Level::Hard,
                pass: false,
                detail: format!("error: {e}"),
            }]
        });
        for o in &list {
            report(o);
        }
        outcomes.extend(list);
    };
    push("1 ode-analytic", ode_analytic().map(|o| vec![o]));
    push("2 gradients", gradients().map(|o| vec![o]));
    push("3 permutation-invariance", permutation_invariance().map(|o| vec![o]));
    push("4 kl", kl_monte_carlo().map(|o| vec![o]));
    push("5 metric-oracles", metric_oracles().map(|o| vec![o]));
    push("6 mfmod-numerics", mfmod_numerics().map(|o| vec![o]));
    push("7-9 smoke", smoke(root.path()));
    push("10 determinism", determinism(root.path()).map(|o| vec![o]));

    let hard_failures = outcomes.iter().filter(|o| o.level == Level::Hard && !o.pass).count();
    let others = outcomes.iter().filter(|o| o.level != Level::Hard && !o.pass).count();
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "acceptance: {} criteria, {hard_failures} hard failures, {others} soft/advisory misses",
        outcomes.len()
    );
    if hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
