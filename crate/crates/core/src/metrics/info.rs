//! Histogram mutual information and the MIG / AAM disentanglement scores.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 20;

/// Row-aligned latent codes and discrete ground-truth factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeFactorTable {
    pub codes: Vec<Vec<f64>>,
    pub factors: Vec<Vec<usize>>,
}

impl CodeFactorTable {
    pub fn new(codes: Vec<Vec<f64>>, factors: Vec<Vec<usize>>) -> Result<Self> {
        if codes.is_empty() || codes.len() != factors.len() {
            return Err(Error::validation(format!(
                "code and factor tables must be non-empty and row-aligned ({} vs {} rows)",
                codes.len(),
                factors.len()
            )));
        }
        let d = codes[0].len();
        let k = factors[0].len();
        if d == 0 || k == 0 || codes.iter().any(|r| r.len() != d) || factors.iter().any(|r| r.len() != k) {
            return Err(Error::validation("ragged or empty code/factor rows"));
        }
        Ok(Self { codes, factors })
    }

    pub fn n_samples(&self) -> usize {
        self.codes.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.codes[0].len()
    }

    pub fn n_factors(&self) -> usize {
        self.factors[0].len()
    }

    pub fn code_column(&self, j: usize) -> Vec<f64> {
        self.codes.iter().map(|r| r[j]).collect()
    }

    pub fn factor_column(&self, k: usize) -> Vec<f64> {
        self.factors.iter().map(|r| r[k] as f64).collect()
    }

    /// `I[j][k]` between code dim `j` and factor `k`, in nats.
    pub fn mi_matrix(&self, bins: usize) -> Result<Vec<Vec<f64>>> {
        let factors: Vec<Vec<usize>> = (0..self.n_factors()).map(|k| discretize(&self.factor_column(k), bins)).collect();
        (0..self.latent_dim())
            .map(|j| {
                let z = discretize(&self.code_column(j), bins);
                Ok(factors.iter().map(|v| discrete_mi(&z, v)).collect())
            })
            .collect()
    }

    /// Writes `codes.csv` and `factors.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path, factor_names: &[&str]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let codes_path = dir.join("codes.csv");
        let mut w = csv::Writer::from_path(&codes_path).map_err(|e| Error::io(&codes_path, e.into()))?;
        let header: Vec<String> = (0..self.latent_dim()).map(|j| format!("z_{j}")).collect();
        w.write_record(&header).map_err(|e| Error::io(&codes_path, e.into()))?;
        for row in &self.codes {
            w.write_record(row.iter().map(|v| format!("{v:.17e}")))
                .map_err(|e| Error::io(&codes_path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(&codes_path, e))?;

        let factors_path = dir.join("factors.csv");
        let mut w = csv::Writer::from_path(&factors_path).map_err(|e| Error::io(&factors_path, e.into()))?;
        let header: Vec<String> = (0..self.n_factors())
            .map(|k| factor_names.get(k).map(|s| s.to_string()).unwrap_or_else(|| format!("v_{k}")))
            .collect();
        w.write_record(&header).map_err(|e| Error::io(&factors_path, e.into()))?;
        for row in &self.factors {
            w.write_record(row.iter().map(usize::to_string))
                .map_err(|e| Error::io(&factors_path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(&factors_path, e))
    }
}

/// Bin labels for a column. Columns with at most `bins` distinct values are
/// treated as categorical; otherwise equal-frequency bins, with tied values
/// always sharing a bin.
pub fn discretize(x: &[f64], bins: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut distinct = 0;
    for w in order.windows(2) {
        if x[w[0]] != x[w[1]] {
            distinct += 1;
        }
    }
    if !x.is_empty() {
        distinct += 1;
    }
    let categorical = distinct <= bins;
    let n = x.len();
    let mut out = vec![0; n];
    let mut label = 0;
    for (rank, &i) in order.iter().enumerate() {
        if rank > 0 && x[i] != x[order[rank - 1]] {
            label = if categorical { label + 1 } else { rank * bins / n };
        }
        out[i] = label;
    }
    out
}

/// Counts are summed in sorted order so the result does not depend on hash
/// iteration order.
fn entropy_of_counts<'a>(counts: impl Iterator<Item = &'a usize>, n: f64) -> f64 {
    let mut c: Vec<usize> = counts.copied().filter(|&c| c > 0).collect();
    c.sort_unstable();
    c.iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Empirical entropy of labels, nats.
pub fn entropy(labels: &[usize]) -> f64 {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    entropy_of_counts(counts.values(), labels.len() as f64)
}

/// Plug-in MI of two label columns, `H(a) + H(b) - H(a, b)`.
pub fn discrete_mi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
    }
    let (ha, hb) = (entropy(a), entropy(b));
    let mi = ha.min(hb) + ha.max(hb) - entropy_of_counts(joint.values(), n);
    mi.max(0.0)
}

/// Histogram MI between two real columns. A constant column gives 0.
pub fn mutual_information(z: &[f64], v: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::validation(format!("need at least 2 bins, got {bins}")));
    }
    if z.is_empty() || z.len() != v.len() {
        return Err(Error::validation("columns must be non-empty and equally long"));
    }
    Ok(discrete_mi(&discretize(z, bins), &discretize(v, bins)))
}

/// `(factor index, entropy)` of every factor that varies in the sample.
/// A constant factor has nothing to be informative about, so both scores
/// skip it; a table where every factor is constant is an error.
fn factor_entropies(table: &CodeFactorTable, bins: usize) -> Result<Vec<(usize, f64)>> {
    let h: Vec<(usize, f64)> = (0..table.n_factors())
        .map(|k| (k, entropy(&discretize(&table.factor_column(k), bins))))
        .filter(|&(_, h)| h > 0.0)
        .collect();
    if h.is_empty() {
        return Err(Error::validation("every factor takes a single value in this sample"));
    }
    Ok(h)
}

/// Mutual information gap, averaged over the factors that vary.
pub fn mig(table: &CodeFactorTable, bins: usize) -> Result<f64> {
    let h = factor_entropies(table, bins)?;
    let mi = table.mi_matrix(bins)?;
    let mut acc = 0.0;
    for &(k, hk) in &h {
        let mut col: Vec<f64> = mi.iter().map(|r| r[k]).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        let second = col.get(1).copied().unwrap_or(0.0);
        acc += (col[0] - second) / hk;
    }
    Ok(acc / h.len() as f64)
}

/// How AAM discounts a factor's largest MI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AamMode {
    /// Subtract the sum of every non-maximal MI.
    #[default]
    SumOthers,
    /// Subtract only the runner-up.
    SecondLargest,
}

/// Axis alignment, averaged over the factors that vary. A factor no code
/// dim carries any information about scores 0.
pub fn aam(table: &CodeFactorTable, bins: usize, mode: AamMode) -> Result<f64> {
    let varying = factor_entropies(table, bins)?;
    let mi = table.mi_matrix(bins)?;
    let mut acc = 0.0;
    for &(f, _) in &varying {
        let mut col: Vec<f64> = mi.iter().map(|r| r[f]).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        let top = col[0];
        if top <= 0.0 {
            continue;
        }
        let rest = match mode {
            AamMode::SumOthers => col[1..].iter().sum(),
            AamMode::SecondLargest => col.get(1).copied().unwrap_or(0.0),
        };
        acc += (top - rest).max(0.0) / top;
    }
    Ok(acc / varying.len() as f64)
}
