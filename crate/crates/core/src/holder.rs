//! Hölder semi-norms of gridded fields and power-law fits of their growth.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid1D;
use crate::selfsim::linear_fit;

#[derive(Debug, Error)]
pub enum HolderError {
    #[error("window [{0}, {1}] holds fewer than 8 nodes")]
    EmptyWindow(f64, f64),
    #[error("alpha = {0} outside (0, 1]")]
    BadAlpha(f64),
    #[error("need at least 6 samples, found {0}")]
    TooFewSamples(usize),
    #[error("T* - t spans a factor {0:.3}, need at least 4")]
    NarrowSpan(f64),
    #[error("non-positive value {value:e} at t = {t}")]
    NonPositive { t: f64, value: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Largest number of nodes entering the pairwise maximisation.
pub const MAX_PAIR_NODES: usize = 2000;

/// Nodes kept contiguous around the steepest point when subsampling.
const CORE_NODES: usize = 600;

/// Semi-norm samples `(t, value)` of one field for fixed `alpha` and window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminormSeries {
    pub alpha: f64,
    pub window: (f64, f64),
    pub samples: Vec<(f64, f64)>,
}

impl SeminormSeries {
    pub fn new(alpha: f64, window: (f64, f64)) -> Self {
        SeminormSeries {
            alpha,
            window,
            samples: vec![],
        }
    }

    /// Writes `t, T* - t, value` rows.
    pub fn write_csv<W: Write>(&self, t_star: f64, out: W) -> Result<(), HolderError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "tstar_minus_t", "value"])?;
        for &(t, v) in &self.samples {
            w.write_record(&[format!("{t:.17e}"), format!("{:.17e}", t_star - t), format!("{v:.17e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Indices of the nodes used for the pairwise maximisation on `lo..hi`.
///
/// Small windows use every node. Larger ones keep a contiguous block around
/// the node of steepest descent and a uniform stride elsewhere.
pub fn pair_nodes(f: &[f64], grid: &Grid1D, lo: usize, hi: usize) -> Vec<usize> {
    let count = hi - lo;
    if count <= MAX_PAIR_NODES {
        return (lo..hi).collect();
    }
    let slope: Vec<f64> = (lo..hi).map(|j| grid.d1_at(f, j)).collect();
    let steep = lo
        + slope
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc })
            .0;
    let c_lo = steep.saturating_sub(CORE_NODES / 2).max(lo);
    let c_hi = (c_lo + CORE_NODES).min(hi);
    let stride = (count - (c_hi - c_lo)).div_ceil(MAX_PAIR_NODES - CORE_NODES).max(1);
    let mut out: Vec<usize> = (lo..c_lo).step_by(stride).collect();
    out.extend(c_lo..c_hi);
    out.extend((c_hi..hi).step_by(stride));
    if out.last() != Some(&(hi - 1)) {
        out.push(hi - 1);
    }
    out
}

/// `max |f(x_i) - f(x_j)| / |x_i - x_j|^alpha` over node pairs in `window`.
pub fn holder_seminorm(f: &[f64], grid: &Grid1D, alpha: f64, window: (f64, f64)) -> Result<f64, HolderError> {
    let all = holder_seminorms(f, grid, &[alpha], window)?;
    Ok(all[0])
}

/// [`holder_seminorm`] for several exponents sharing one pass over the pairs.
pub fn holder_seminorms(f: &[f64], grid: &Grid1D, alphas: &[f64], window: (f64, f64)) -> Result<Vec<f64>, HolderError> {
    if let Some(&a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(HolderError::BadAlpha(a));
    }
    let lo = grid.x.partition_point(|&x| x < window.0);
    let hi = grid.x.partition_point(|&x| x <= window.1);
    if hi < lo + 8 {
        return Err(HolderError::EmptyWindow(window.0, window.1));
    }
    let idx = pair_nodes(f, grid, lo, hi);
    let xs: Vec<f64> = idx.iter().map(|&j| grid.x[j]).collect();
    let fs: Vec<f64> = idx.iter().map(|&j| f[j]).collect();
    let mut best = vec![0.0f64; alphas.len()];
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let df = (fs[j] - fs[i]).abs();
            if df == 0.0 {
                continue;
            }
            let ld = (xs[j] - xs[i]).ln();
            for (b, &a) in best.iter_mut().zip(alphas) {
                let v = df * (-a * ld).exp();
                if v > *b {
                    *b = v;
                }
            }
        }
    }
    Ok(best)
}

/// Exponent of `(T* - t)` predicted for the `C^alpha` semi-norm near the singularity.
pub fn expected_slope(alpha: f64) -> f64 {
    -(5.0 * alpha - 3.0) / 2.0
}

/// Least-squares power law `value ~ A (T* - t)^slope`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    /// `A` in the fitted law (reported, not asserted).
    pub prefactor: f64,
    /// RMS residual in `ln(value)`.
    pub residual: f64,
    pub samples: usize,
    /// `max(T* - t) / min(T* - t)` over the samples.
    pub span: f64,
}

pub fn fit_blowup_rate(series: &SeminormSeries, t_star: f64) -> Result<RateFit, HolderError> {
    let n = series.samples.len();
    if n < 6 {
        return Err(HolderError::TooFewSamples(n));
    }
    if let Some(&(t, value)) = series.samples.iter().find(|s| !(s.1 > 0.0)) {
        return Err(HolderError::NonPositive { t, value });
    }
    let d: Vec<f64> = series.samples.iter().map(|s| t_star - s.0).collect();
    let (dmin, dmax) = d.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    if !(dmin > 0.0) {
        return Err(HolderError::NonPositive { t: t_star, value: dmin });
    }
    let span = dmax / dmin;
    if span < 4.0 {
        return Err(HolderError::NarrowSpan(span));
    }
    let lx: Vec<f64> = d.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = series.samples.iter().map(|s| s.1.ln()).collect();
    let (a, b, residual) = linear_fit(&lx, &ly);
    Ok(RateFit {
        slope: b,
        prefactor: a.exp(),
        residual,
        samples: n,
        span,
    })
}
