//! Explicit Runge–Kutta integration of latent dynamics.
//!
//! Both solvers operate on candle tensors and build an ordinary autograd
//! graph, so gradients flow through the unrolled steps. Step-size
//! decisions are made on plain numbers and are constants of the graph.

use std::path::Path;

use candle_core::{DType, Tensor, Var};

use crate::config::{OdeConfig, OdeMethod};
use crate::error::{Error, Result};
use crate::nn::to_f64_vec;

/// Right-hand side `dz/dt = f(z, t)`.
pub trait OdeFunction {
    fn eval(&self, z: &Tensor, t: f64) -> Result<Tensor>;

    /// Autonomous systems ignore `t`.
    fn autonomous(&self) -> bool {
        false
    }
}

/// Adapts a closure into an [`OdeFunction`].
pub struct FnOde<F>(pub F);

impl<F> OdeFunction for FnOde<F>
where
    F: Fn(&Tensor, f64) -> Result<Tensor>,
{
    fn eval(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        (self.0)(z, t)
    }
}

#[derive(Debug, Clone)]
pub struct TrajectorySolution {
    pub times: Vec<f64>,
    /// One tensor per requested time, each shaped like the initial state.
    pub states: Vec<Tensor>,
    pub steps_taken: usize,
    pub rejected_steps: usize,
}

impl TrajectorySolution {
    pub fn final_state(&self) -> &Tensor {
        self.states.last().expect("a solution always holds the initial state")
    }

    /// States flattened to rows, `len(times) x numel(z0)`.
    pub fn state_rows(&self) -> Result<Vec<Vec<f64>>> {
        self.states.iter().map(to_f64_vec).collect()
    }

    /// Stacks states along a new leading time axis.
    pub fn stacked(&self) -> Result<Tensor> {
        Ok(Tensor::stack(&self.states, 0)?)
    }
}

fn validate(times: &[f64], cfg: &OdeConfig) -> Result<()> {
    if times.is_empty() {
        return Err(Error::validation("at least one time point is required"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::validation("time points must be finite"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("time points must be strictly increasing"));
    }
    if !(cfg.rtol > 0.0 && cfg.atol > 0.0) {
        return Err(Error::validation("ode tolerances must be positive"));
    }
    if cfg.max_steps == 0 {
        return Err(Error::validation("ode.max_steps must be >= 1"));
    }
    Ok(())
}

/// Solves the initial value problem and reports the state at every
/// requested time. `states[0]` is `z0` itself.
pub fn integrate(f: &dyn OdeFunction, z0: &Tensor, times: &[f64], cfg: &OdeConfig) -> Result<TrajectorySolution> {
    validate(times, cfg)?;
    match cfg.method {
        OdeMethod::Dopri5 => dopri5(f, z0, times, cfg),
        OdeMethod::Rk4 => rk4(f, z0, times, cfg),
    }
}

fn eval_checked(f: &dyn OdeFunction, z: &Tensor, t: f64) -> Result<Tensor> {
    let dz = f.eval(z, t)?;
    if dz.shape() != z.shape() {
        return Err(Error::validation(format!(
            "ode function returned shape {:?} for state {:?}",
            dz.dims(),
            z.dims()
        )));
    }
    let s = dz.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !s.is_finite() {
        return Err(Error::NonFiniteDerivative { t });
    }
    Ok(dz)
}

/// `z + h * sum(c_i k_i)` over the non-zero coefficients.
fn combine(z: &Tensor, h: f64, terms: &[(f64, &Tensor)]) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for (c, k) in terms {
        if *c == 0.0 {
            continue;
        }
        let t = (*k * (h * c))?;
        acc = Some(match acc {
            Some(a) => (a + t)?,
            None => t,
        });
    }
    Ok(match acc {
        Some(a) => (z + a)?,
        None => z.clone(),
    })
}

fn rk4(f: &dyn OdeFunction, z0: &Tensor, times: &[f64], cfg: &OdeConfig) -> Result<TrajectorySolution> {
    let span = times[times.len() - 1] - times[0];
    let h_nominal = span / cfg.max_steps as f64;
    let mut states = vec![z0.clone()];
    let mut z = z0.clone();
    let mut steps = 0;
    for w in times.windows(2) {
        let (t_a, t_b) = (w[0], w[1]);
        let n = (((t_b - t_a) / h_nominal) - 1e-9).ceil().max(1.0) as usize;
        let h = (t_b - t_a) / n as f64;
        for i in 0..n {
            let t = t_a + i as f64 * h;
            let k1 = eval_checked(f, &z, t)?;
            let k2 = eval_checked(f, &combine(&z, h, &[(0.5, &k1)])?, t + 0.5 * h)?;
            let k3 = eval_checked(f, &combine(&z, h, &[(0.5, &k2)])?, t + 0.5 * h)?;
            let k4 = eval_checked(f, &combine(&z, h, &[(1.0, &k3)])?, t + h)?;
            z = combine(&z, h, &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)])?;
            steps += 1;
        }
        states.push(z.clone());
    }
    Ok(TrajectorySolution {
        times: times.to_vec(),
        states,
        steps_taken: steps,
        rejected_steps: 0,
    })
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const ORDER: f64 = 5.0;
const PI_BETA: f64 = 0.04;

/// RMS of `v / (atol + rtol * max(|a|, |b|))`.
fn error_norm(v: &[f64], a: &[f64], b: &[f64], cfg: &OdeConfig) -> f64 {
    let n = v.len().max(1) as f64;
    let s: f64 = v
        .iter()
        .zip(a.iter().zip(b))
        .map(|(e, (x, y))| {
            let sc = cfg.atol + cfg.rtol * x.abs().max(y.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Initial step heuristic from the size of `z0` and `f(z0)`.
fn initial_step(f: &dyn OdeFunction, z0: &Tensor, k1: &Tensor, t0: f64, cfg: &OdeConfig) -> Result<f64> {
    let z = to_f64_vec(z0)?;
    let dz = to_f64_vec(k1)?;
    let scale: Vec<f64> = z.iter().map(|x| cfg.atol + cfg.rtol * x.abs()).collect();
    let d0 = rms(&z.iter().zip(&scale).map(|(x, s)| x / s).collect::<Vec<_>>());
    let d1 = rms(&dz.iter().zip(&scale).map(|(x, s)| x / s).collect::<Vec<_>>());
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let z1 = combine(z0, h0, &[(1.0, k1)])?;
    let k2 = to_f64_vec(&eval_checked(f, &z1, t0 + h0)?)?;
    let d2 = rms(
        &k2.iter()
            .zip(&dz)
            .zip(&scale)
            .map(|((a, b), s)| (a - b) / s)
            .collect::<Vec<_>>(),
    ) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / ORDER)
    };
    Ok((100.0 * h0).min(h1))
}

fn dopri5(f: &dyn OdeFunction, z0: &Tensor, times: &[f64], cfg: &OdeConfig) -> Result<TrajectorySolution> {
    let mut states = vec![z0.clone()];
    let mut t = times[0];
    let mut z = z0.clone();
    if times.len() == 1 {
        return Ok(TrajectorySolution {
            times: times.to_vec(),
            states,
            steps_taken: 0,
            rejected_steps: 0,
        });
    }
    let mut k1 = eval_checked(f, &z, t)?;
    let mut h = if cfg.initial_step > 0.0 {
        cfg.initial_step
    } else {
        initial_step(f, &z, &k1, t, cfg)?
    };
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let mut err_prev = 1e-4_f64;
    let mut last_rejected = false;

    for &t_target in &times[1..] {
        while t < t_target {
            if accepted + rejected >= cfg.max_steps {
                return Err(Error::MaxStepsExceeded {
                    t,
                    max_steps: cfg.max_steps,
                });
            }
            let remaining = t_target - t;
            // Land exactly on the output time instead of interpolating.
            let lands = h >= remaining * (1.0 - 1e-12);
            let h_step = if lands { remaining } else { h };
            if h_step <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow { t, h: h_step });
            }

            let mut ks: Vec<Tensor> = vec![k1.clone()];
            for s in 1..7 {
                let terms: Vec<(f64, &Tensor)> = A[s].iter().copied().zip(ks.iter()).collect();
                let zs = combine(&z, h_step, &terms)?;
                ks.push(eval_checked(f, &zs, t + C[s] * h_step)?);
            }
            // The 7th stage is evaluated at the fifth-order solution.
            let terms: Vec<(f64, &Tensor)> = A[6].iter().copied().zip(ks.iter()).collect();
            let z_new = combine(&z, h_step, &terms)?;

            let err_terms: Vec<(f64, &Tensor)> = E.iter().copied().zip(ks.iter()).collect();
            let zero = z.zeros_like()?;
            let err_vec = to_f64_vec(&combine(&zero, h_step, &err_terms)?)?;
            let err = error_norm(&err_vec, &to_f64_vec(&z)?, &to_f64_vec(&z_new)?, cfg);
            if !err.is_finite() {
                return Err(Error::NonFiniteDerivative { t });
            }

            if err <= 1.0 {
                accepted += 1;
                t = if lands { t_target } else { t + h_step };
                z = z_new;
                k1 = ks.pop().expect("seven stages");
                let alpha = 1.0 / ORDER - 0.75 * PI_BETA;
                let mut factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    SAFETY * err.powf(-alpha) * err_prev.powf(PI_BETA)
                };
                factor = factor.clamp(MIN_FACTOR, MAX_FACTOR);
                if last_rejected {
                    factor = factor.min(1.0);
                }
                // A step shortened to hit an output time says little about
                // the natural step; keep the longer of the two.
                h = if lands { h.max(h_step) * factor } else { h_step * factor };
                err_prev = err.max(1e-4);
                last_rejected = false;
            } else {
                rejected += 1;
                let factor = (SAFETY * err.powf(-1.0 / ORDER)).clamp(MIN_FACTOR, 1.0);
                h = h_step * factor;
                last_rejected = true;
            }
        }
        states.push(z.clone());
    }
    Ok(TrajectorySolution {
        times: times.to_vec(),
        states,
        steps_taken: accepted,
        rejected_steps: rejected,
    })
}

/// Writes `t,z_0,...,z_{d-1}` rows.
pub fn write_trajectory_csv(path: &Path, times: &[f64], rows: &[Vec<f64>]) -> Result<()> {
    if times.len() != rows.len() {
        return Err(Error::validation("one state row per time point is required"));
    }
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let d = rows.first().map(Vec::len).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("z_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (t, row) in times.iter().zip(rows) {
        let mut rec = vec![format!("{t}")];
        rec.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reverse-mode versus central-difference gradients for one tensor.
#[derive(Debug, Clone)]
pub struct GradientComparison {
    pub name: String,
    /// Checked flat coordinates.
    pub coords: Vec<usize>,
    pub autodiff: Vec<f64>,
    pub finite_diff: Vec<f64>,
}

impl GradientComparison {
    /// `||g_ad - g_fd|| / ||g_fd||` over the checked coordinates; the
    /// absolute difference when the reference gradient vanishes.
    pub fn relative_error(&self) -> f64 {
        let diff: f64 = self
            .autodiff
            .iter()
            .zip(&self.finite_diff)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = self.finite_diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            diff / norm
        } else {
            diff
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub comparisons: Vec<GradientComparison>,
}

impl GradientCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.comparisons
            .iter()
            .map(GradientComparison::relative_error)
            .fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&GradientComparison> {
        self.comparisons.iter().find(|c| c.name == name)
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Checks reverse-mode gradients of `loss()` with respect to `params`
/// against central finite differences.
///
/// `loss` must read the variables so in-place perturbation changes its
/// value. Everything must be `f64`. At most `max_coords` evenly spaced
/// coordinates per tensor are probed.
pub fn check_gradient(params: &[(&str, &Var)], loss: &dyn Fn() -> Result<Tensor>, max_coords: usize) -> Result<GradientCheck> {
    if params.iter().any(|(_, v)| v.dtype() != DType::F64) {
        return Err(Error::validation("gradient checks require f64 tensors"));
    }
    let value = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };

    let grads = loss()?.backward()?;
    let mut comparisons = Vec::new();
    for &(name, var) in params {
        let n = var.elem_count();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        let coords: Vec<usize> = (0..n).step_by(stride).collect();
        let ad_full = match grads.get(var.as_tensor()) {
            Some(g) => to_f64_vec(g)?,
            None => vec![0.0; n],
        };
        let base = var.as_tensor().detach().copy()?;
        let base_flat = to_f64_vec(&base)?;
        let mut fd = Vec::with_capacity(coords.len());
        for &i in &coords {
            let probe = |delta: f64| -> Result<f64> {
                let mut v = base_flat.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, base.shape(), base.device())?)?;
                value(&loss()?)
            };
            let plus = probe(FD_STEP)?;
            let minus = probe(-FD_STEP)?;
            fd.push((plus - minus) / (2.0 * FD_STEP));
        }
        var.set(&base)?;
        comparisons.push(GradientComparison {
            name: name.to_string(),
            autodiff: coords.iter().map(|&i| ad_full[i]).collect(),
            coords,
            finite_diff: fd,
        });
    }
    Ok(GradientCheck { comparisons })
}

/// [`check_gradient`] for `d loss(z(T)) / d{params, z0}`.
pub fn check_gradient_through_solver(
    f: &dyn OdeFunction,
    params: &[(&str, &Var)],
    z0: &Var,
    times: &[f64],
    cfg: &OdeConfig,
    loss: &dyn Fn(&Tensor) -> Result<Tensor>,
    max_coords: usize,
) -> Result<GradientCheck> {
    let all: Vec<(&str, &Var)> = params.iter().copied().chain(std::iter::once(("z0", z0))).collect();
    let eval = || -> Result<Tensor> {
        let sol = integrate(f, z0.as_tensor(), times, cfg)?;
        loss(sol.final_state())
    };
    check_gradient(&all, &eval, max_coords)
}
