//! Regression of per-trial costs on `{log n / n, 1/n}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fit of `E_n = a · log(n)/n + b/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub r_squared: f64,
    pub n_values: Vec<usize>,
    /// Observations that entered the per-n means.
    pub observations: usize,
    /// Observations dropped because the value was missing.
    pub excluded: usize,
    /// Whether per-n inverse-variance weights were used.
    pub weighted: bool,
}

/// Per-`n` mean and variance of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMean {
    pub n: usize,
    pub mean: f64,
    pub var_of_mean: f64,
    pub count: usize,
}

/// Groups `(n, value)` observations; `None` values are counted as excluded.
pub fn cell_means(obs: impl IntoIterator<Item = (usize, Option<f64>)>) -> (Vec<CellMean>, usize) {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut excluded = 0;
    for (n, v) in obs {
        match v {
            Some(v) if v.is_finite() => groups.entry(n).or_default().push(v),
            _ => excluded += 1,
        }
    }
    let cells = groups
        .into_iter()
        .map(|(n, vs)| {
            let k = vs.len() as f64;
            let mean = vs.iter().sum::<f64>() / k;
            let var = if vs.len() > 1 {
                vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            CellMean {
                n,
                mean,
                var_of_mean: var / k,
                count: vs.len(),
            }
        })
        .collect();
    (cells, excluded)
}

/// Weighted least squares on the per-n means. Weights are inverse
/// variances of the means when every cell has a positive variance; otherwise
/// (noiseless or single-trial data) the fit is unweighted and the standard
/// errors come from the residuals.
pub fn fit_leading_constant(
    obs: impl IntoIterator<Item = (usize, Option<f64>)>,
) -> Result<FitResult> {
    let (cells, excluded) = cell_means(obs);
    if cells.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "need at least 3 distinct n values, got {}",
            cells.len()
        )));
    }
    if cells.iter().any(|c| c.n < 2) {
        return Err(Error::RankDeficient(
            "n = 1 makes log(n)/n vanish; use n >= 2".into(),
        ));
    }
    let weighted = cells.iter().all(|c| c.var_of_mean > 0.0);
    let rows: Vec<(f64, f64, f64, f64)> = cells
        .iter()
        .map(|c| {
            let n = c.n as f64;
            let w = if weighted { 1.0 / c.var_of_mean } else { 1.0 };
            (n.ln() / n, 1.0 / n, c.mean, w)
        })
        .collect();
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x1, x2, y, w) in &rows {
        s11 += w * x1 * x1;
        s12 += w * x1 * x2;
        s22 += w * x2 * x2;
        r1 += w * x1 * y;
        r2 += w * x2 * y;
    }
    let det = s11 * s22 - s12 * s12;
    if !(det.abs() > 1e-14 * s11 * s22) {
        return Err(Error::RankDeficient("design columns are collinear".into()));
    }
    let a = (s22 * r1 - s12 * r2) / det;
    let b = (s11 * r2 - s12 * r1) / det;
    let (inv11, inv22) = (s22 / det, s11 / det);

    let wsum: f64 = rows.iter().map(|r| r.3).sum();
    let ybar = rows.iter().map(|r| r.3 * r.2).sum::<f64>() / wsum;
    let ss_res: f64 = rows
        .iter()
        .map(|&(x1, x2, y, w)| w * (y - a * x1 - b * x2).powi(2))
        .sum();
    let ss_tot: f64 = rows
        .iter()
        .map(|&(_, _, y, w)| w * (y - ybar).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };

    let scale = if weighted {
        1.0
    } else {
        ss_res / (rows.len() - 2) as f64
    };
    Ok(FitResult {
        a,
        b,
        se_a: (scale * inv11).sqrt(),
        se_b: (scale * inv22).sqrt(),
        r_squared,
        n_values: cells.iter().map(|c| c.n).collect(),
        observations: cells.iter().map(|c| c.count).sum(),
        excluded,
        weighted,
    })
}
