//! One-dimensional node grids on a truncated line.
//!
//! Every grid is the image of a uniform index coordinate `j = 0..n` under a
//! smooth increasing map. Derivatives are taken in `j` and divided by the
//! metric `dx/dj`, so uniform and stretched grids share one code path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 16 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("grid must straddle the origin: [{0}, {1}]")]
    BadExtent(f64, f64),
    #[error("mesh map is not increasing")]
    NotMonotone,
}

/// Node positions plus the metric `dx/dj` at nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid1D {
    pub x: Vec<f64>,
    /// `dx/dj` at node `j`.
    pub metric: Vec<f64>,
}

/// Parameters of the centred sinh map
/// `x(s) = c (1 - S(s)^2) + L S(s)`, `S(s) = sinh(k s) / sinh(k)`, `s in [-1, 1]`.
///
/// The map fixes the end points at `-L` and `L`, places `c` at `s = 0` and
/// concentrates nodes there with spacing `L k ds / sinh(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinhMap {
    pub centre: f64,
    pub half_width: f64,
    pub k: f64,
}

/// Below this stretching the map is evaluated through its series.
const K_SMALL: f64 = 1e-4;

impl SinhMap {
    /// `S(s)`, `dS/ds`, `dS/dk`.
    fn shape(&self, s: f64) -> (f64, f64, f64) {
        self.shape_with(s, self.k.sinh(), self.k.cosh())
    }

    /// As [`Self::shape`] with `sinh k`, `cosh k` supplied.
    fn shape_with(&self, s: f64, sk: f64, ck: f64) -> (f64, f64, f64) {
        let k = self.k;
        if k < K_SMALL {
            let k2 = k * k;
            let sv = s + k2 * (s * s * s - s) / 6.0;
            let ds = 1.0 + k2 * (3.0 * s * s - 1.0) / 6.0;
            let dk = k * (s * s * s - s) / 3.0;
            return (sv, ds, dk);
        }
        // One expm1 gives both sinh and cosh without cancellation near s = 0.
        let e = (k * s).exp_m1();
        let sh = e * (e + 2.0) / (2.0 * (e + 1.0));
        let ch = 1.0 + e * e / (2.0 * (e + 1.0));
        let sv = sh / sk;
        let ds = k * ch / sk;
        let dk = (s * ch * sk - sh * ck) / (sk * sk);
        (sv, ds, dk)
    }

    /// Node positions, metric and the sensitivities `dx/dk`, `dx/dc` for `n` nodes.
    pub fn sample(&self, n: usize) -> MapSample {
        let (sk, ck) = (self.k.sinh(), self.k.cosh());
        let ds = 2.0 / (n as f64 - 1.0);
        let mut out = MapSample {
            x: Vec::with_capacity(n),
            metric: Vec::with_capacity(n),
            dx_dk: Vec::with_capacity(n),
            dx_dc: Vec::with_capacity(n),
        };
        for j in 0..n {
            let s = node_coord(j, n);
            let (sv, dsv, dk) = self.shape_with(s, sk, ck);
            let lever = self.half_width - 2.0 * self.centre * sv;
            out.x.push(self.centre * (1.0 - sv * sv) + self.half_width * sv);
            out.metric.push(lever * dsv * ds);
            out.dx_dk.push(lever * dk);
            out.dx_dc.push(1.0 - sv * sv);
        }
        out
    }

    /// Physical position at computational coordinate `s`.
    pub fn x(&self, s: f64) -> f64 {
        let (sv, _, _) = self.shape(s);
        self.centre * (1.0 - sv * sv) + self.half_width * sv
    }

    /// `dx/ds`.
    pub fn dx_ds(&self, s: f64) -> f64 {
        let (sv, ds, _) = self.shape(s);
        (self.half_width - 2.0 * self.centre * sv) * ds
    }

    /// `dx/dk` and `dx/dc`, used for the mesh velocity.
    pub fn sensitivities(&self, s: f64) -> (f64, f64) {
        let (sv, _, dk) = self.shape(s);
        (
            (self.half_width - 2.0 * self.centre * sv) * dk,
            1.0 - sv * sv,
        )
    }

    /// Spacing at the centre for `n` nodes.
    pub fn centre_spacing(&self, n: usize) -> f64 {
        let ds = 2.0 / (n as f64 - 1.0);
        self.dx_ds(0.0) * ds
    }

    /// Stretching `k` giving centre spacing `target` with `n` nodes on half-width `l`.
    ///
    /// Returns 0 when the uniform spacing is already finer than `target`.
    pub fn k_for_spacing(l: f64, n: usize, target: f64) -> f64 {
        let ds = 2.0 / (n as f64 - 1.0);
        let r = target / (l * ds);
        if r >= 1.0 {
            return 0.0;
        }
        // Solve k / sinh(k) = r by Newton on g(k) = ln(sinh k / k) + ln r.
        let mut k = (-r.ln() + (-r.ln()).ln().max(0.0) + 1.0).max(1.0);
        for _ in 0..100 {
            let g = (k.sinh() / k).ln() + r.ln();
            let dg = 1.0 / k.tanh() - 1.0 / k;
            let step = g / dg;
            k = (k - step).max(0.5 * k);
            if step.abs() < 1e-14 * k {
                break;
            }
        }
        k
    }

    /// `d ln(k / sinh k) / dk = 1/k - coth k`, negative for `k > 0`.
    pub fn log_ratio_slope(k: f64) -> f64 {
        if k < K_SMALL {
            -k / 3.0
        } else {
            1.0 / k - 1.0 / k.tanh()
        }
    }
}

/// Sampled [`SinhMap`] at the grid nodes.
#[derive(Debug, Clone)]
pub struct MapSample {
    pub x: Vec<f64>,
    pub metric: Vec<f64>,
    pub dx_dk: Vec<f64>,
    pub dx_dc: Vec<f64>,
}

/// Computational coordinate of node `j`.
pub fn node_coord(j: usize, n: usize) -> f64 {
    -1.0 + 2.0 * j as f64 / (n as f64 - 1.0)
}

impl Grid1D {
    /// Uniform grid on `[x_min, x_max]`.
    pub fn uniform(x_min: f64, x_max: f64, n: usize) -> Result<Self, GridError> {
        if n < 16 {
            return Err(GridError::TooFewNodes(n));
        }
        if !(x_min < 0.0 && 0.0 < x_max) {
            return Err(GridError::BadExtent(x_min, x_max));
        }
        let dx = (x_max - x_min) / (n as f64 - 1.0);
        let x = (0..n).map(|j| x_min + dx * j as f64).collect();
        Ok(Grid1D {
            x,
            metric: vec![dx; n],
        })
    }

    /// Grid generated by a [`SinhMap`].
    pub fn stretched(map: &SinhMap, n: usize) -> Result<Self, GridError> {
        Ok(Self::stretched_sample(map, n)?.0)
    }

    /// Grid generated by a [`SinhMap`] together with the map sensitivities.
    pub fn stretched_sample(map: &SinhMap, n: usize) -> Result<(Self, MapSample), GridError> {
        if n < 16 {
            return Err(GridError::TooFewNodes(n));
        }
        let sample = map.sample(n);
        if sample.metric.iter().any(|&m| m <= 0.0) || sample.x.windows(2).any(|p| p[1] <= p[0]) {
            return Err(GridError::NotMonotone);
        }
        let grid = Grid1D {
            x: sample.x.clone(),
            metric: sample.metric.clone(),
        };
        Ok((grid, sample))
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// Smallest node spacing.
    pub fn dx_min(&self) -> f64 {
        self.x
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Finite-volume cell width around node `j`.
    pub fn cell(&self, j: usize) -> f64 {
        let n = self.n();
        if j == 0 {
            0.5 * (self.x[1] - self.x[0])
        } else if j == n - 1 {
            0.5 * (self.x[n - 1] - self.x[n - 2])
        } else {
            0.5 * (self.x[j + 1] - self.x[j - 1])
        }
    }

    /// First derivative, fourth order in the index coordinate.
    pub fn d1(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.d1_into(f, &mut out);
        out
    }

    pub fn d1_into(&self, f: &[f64], out: &mut [f64]) {
        let n = f.len();
        debug_assert_eq!(n, self.n());
        for j in 2..n - 2 {
            let d = (f[j - 2] - 8.0 * f[j - 1] + 8.0 * f[j + 1] - f[j + 2]) / 12.0;
            out[j] = d / self.metric[j];
        }
        let c = [-25.0, 48.0, -36.0, 16.0, -3.0];
        let c1 = [-3.0, -10.0, 18.0, -6.0, 1.0];
        let (mut a, mut b, mut e, mut g) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..5 {
            a += c[i] * f[i];
            b += c1[i] * f[i];
            e += c1[i] * f[n - 1 - i];
            g += c[i] * f[n - 1 - i];
        }
        out[0] = a / 12.0 / self.metric[0];
        out[1] = b / 12.0 / self.metric[1];
        out[n - 2] = -e / 12.0 / self.metric[n - 2];
        out[n - 1] = -g / 12.0 / self.metric[n - 1];
    }

    /// First derivative biased against the transport direction: fifth-order
    /// upwind stencils where `speed` has a sign, the central stencil of
    /// [`Self::d1`] elsewhere and within three nodes of either end.
    pub fn d1_upwind(&self, f: &[f64], speed: &[f64]) -> Vec<f64> {
        let n = f.len();
        let mut out = self.d1(f);
        for j in 3..n.saturating_sub(3) {
            let d = if speed[j] > 0.0 {
                -2.0 * f[j - 3] + 15.0 * f[j - 2] - 60.0 * f[j - 1] + 20.0 * f[j] + 30.0 * f[j + 1] - 3.0 * f[j + 2]
            } else if speed[j] < 0.0 {
                3.0 * f[j - 2] - 30.0 * f[j - 1] - 20.0 * f[j] + 60.0 * f[j + 1] - 15.0 * f[j + 2] + 2.0 * f[j + 3]
            } else {
                continue;
            };
            out[j] = d / 60.0 / self.metric[j];
        }
        out
    }

    /// First derivative at node `j` only (interior stencil where possible).
    pub fn d1_at(&self, f: &[f64], j: usize) -> f64 {
        let n = f.len();
        if j >= 2 && j + 2 < n {
            (f[j - 2] - 8.0 * f[j - 1] + 8.0 * f[j + 1] - f[j + 2]) / 12.0 / self.metric[j]
        } else {
            self.d1(f)[j]
        }
    }

    /// Gregory (end-corrected trapezoid) rule in the index coordinate,
    /// fourth order for smooth maps.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        let n = f.len();
        let w_end = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];
        let mut s = 0.0;
        for j in 0..n {
            let w = if j < 3 {
                w_end[j]
            } else if j >= n - 3 {
                w_end[n - 1 - j]
            } else {
                1.0
            };
            s += w * f[j] * self.metric[j];
        }
        s
    }

    /// Cumulative trapezoid integral from the left end, `F(x_0) = 0`.
    pub fn cumulative(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for j in 1..f.len() {
            out[j] = out[j - 1] + 0.5 * (f[j - 1] + f[j]) * (self.x[j] - self.x[j - 1]);
        }
        out
    }

    /// Cumulative integral from the left end, fourth order: four-point
    /// Lagrange rule per cell in the index coordinate, weighted by the metric.
    pub fn cumulative4(&self, f: &[f64]) -> Vec<f64> {
        let n = f.len();
        let g: Vec<f64> = f.iter().zip(&self.metric).map(|(f, m)| f * m).collect();
        let mut out = vec![0.0; n];
        for j in 0..n - 1 {
            let cell = if j == 0 {
                (9.0 * g[0] + 19.0 * g[1] - 5.0 * g[2] + g[3]) / 24.0
            } else if j == n - 2 {
                (9.0 * g[n - 1] + 19.0 * g[n - 2] - 5.0 * g[n - 3] + g[n - 4]) / 24.0
            } else {
                (-g[j - 1] + 13.0 * g[j] + 13.0 * g[j + 1] - g[j + 2]) / 24.0
            };
            out[j + 1] = out[j] + cell;
        }
        out
    }

    /// Index of the node nearest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        match self
            .x
            .binary_search_by(|v| v.partial_cmp(&x).expect("finite grid"))
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.n() => self.n() - 1,
            Err(i) => {
                if x - self.x[i - 1] <= self.x[i] - x {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// Cubic Lagrange interpolation of nodal data at `x`.
    pub fn interp(&self, f: &[f64], x: f64) -> f64 {
        let n = self.n();
        let i = match self
            .x
            .binary_search_by(|v| v.partial_cmp(&x).expect("finite grid"))
        {
            Ok(i) => return f[i],
            Err(i) => i.clamp(2, n - 2),
        };
        let j0 = i - 2;
        let xs = &self.x[j0..j0 + 4];
        let mut s = 0.0;
        for a in 0..4 {
            let mut w = 1.0;
            for b in 0..4 {
                if a != b {
                    w *= (x - xs[b]) / (xs[a] - xs[b]);
                }
            }
            s += w * f[j0 + a];
        }
        s
    }
}

/// Six-point Lagrange transfer between two samplings of one map, carried out
/// in the computational coordinate (node `i` of `n` sits at `node_coord(i, n)`).
#[derive(Debug, Clone)]
pub struct IndexTransfer {
    base: Vec<usize>,
    weights: Vec<[f64; 6]>,
    n_from: usize,
}

impl IndexTransfer {
    pub fn new(n_from: usize, n_to: usize) -> Self {
        assert!(n_from >= 6 && n_to >= 2, "transfer needs at least six source nodes");
        let scale = (n_from - 1) as f64 / (n_to - 1) as f64;
        let mut base = Vec::with_capacity(n_to);
        let mut weights = Vec::with_capacity(n_to);
        for i in 0..n_to {
            let p = if i == n_to - 1 { (n_from - 1) as f64 } else { i as f64 * scale };
            let b = (p.floor() as isize - 2).clamp(0, n_from as isize - 6) as usize;
            let t = p - b as f64;
            let mut w = [0.0; 6];
            let near = t.round();
            if (t - near).abs() < 1e-12 {
                w[near as usize] = 1.0;
            } else {
                for (a, wa) in w.iter_mut().enumerate() {
                    let mut c = 1.0;
                    for m in 0..6 {
                        if m != a {
                            c *= (t - m as f64) / (a as f64 - m as f64);
                        }
                    }
                    *wa = c;
                }
            }
            base.push(b);
            weights.push(w);
        }
        IndexTransfer { base, weights, n_from }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        debug_assert_eq!(f.len(), self.n_from);
        self.base
            .iter()
            .zip(&self.weights)
            .map(|(&b, w)| {
                let s = &f[b..b + 6];
                w[0] * s[0] + w[1] * s[1] + w[2] * s[2] + w[3] * s[3] + w[4] * s[4] + w[5] * s[5]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transfer_reproduces_quintics_and_identity() {
        let (nf, nt) = (101, 37);
        let tr = IndexTransfer::new(nf, nt);
        let f: Vec<f64> = (0..nf).map(|i| { let s = node_coord(i, nf); s.powi(5) - 2.0 * s * s + 1.0 }).collect();
        let g = tr.apply(&f);
        for (i, v) in g.iter().enumerate() {
            let s = node_coord(i, nt);
            assert!((v - (s.powi(5) - 2.0 * s * s + 1.0)).abs() < 1e-12);
        }
        let id = IndexTransfer::new(nf, nf);
        assert_eq!(id.apply(&f), f);
    }

    #[test]
    fn uniform_derivative_is_fourth_order() {
        let err = |n: usize| {
            let g = Grid1D::uniform(-2.0, 3.0, n).unwrap();
            let f: Vec<f64> = g.x.iter().map(|x| x.sin()).collect();
            let d = g.d1(&f);
            g.x.iter()
                .zip(&d)
                .map(|(x, d)| (x.cos() - d).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(101), err(201));
        assert!(e1 / e2 > 12.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn stretched_map_geometry() {
        let l = 4.0;
        let n = 512;
        let k = SinhMap::k_for_spacing(l, n, 1e-4);
        let m = SinhMap {
            centre: 0.3,
            half_width: l,
            k,
        };
        assert!((m.centre_spacing(n) - 1e-4).abs() < 1e-12);
        let g = Grid1D::stretched(&m, n).unwrap();
        assert!((g.x[0] + l).abs() < 1e-12 && (g.x[n - 1] - l).abs() < 1e-12);
        assert!(g.x.windows(2).all(|w| w[1] > w[0]));
        let f: Vec<f64> = g.x.iter().map(|x| x.sin()).collect();
        let d = g.d1(&f);
        for j in 0..n {
            assert!((d[j] - g.x[j].cos()).abs() < 1e-4);
        }
        let i = g.integrate(&g.x.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!((i / (2.0 * l.powi(3) / 3.0) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn small_k_series_matches() {
        for &k in &[0.0, 5e-5] {
            let m = SinhMap {
                centre: 0.0,
                half_width: 2.0,
                k,
            };
            assert!((m.x(0.5) - 1.0).abs() < 1e-8);
            assert!((m.dx_ds(0.3) - 2.0).abs() < 1e-8);
        }
        let a = SinhMap {
            centre: 0.1,
            half_width: 2.0,
            k: 1.0001e-4,
        };
        let b = SinhMap { k: 0.9999e-4, ..a };
        assert!((a.x(0.7) - b.x(0.7)).abs() < 1e-9);
    }

    #[test]
    fn k_sensitivity_matches_finite_difference() {
        let m = SinhMap {
            centre: 0.2,
            half_width: 4.0,
            k: 7.0,
        };
        let h = 1e-6;
        let mp = SinhMap { k: 7.0 + h, ..m };
        let mm = SinhMap { k: 7.0 - h, ..m };
        for &s in &[-0.9, -0.2, 0.0, 0.4, 0.95] {
            let fd = (mp.x(s) - mm.x(s)) / (2.0 * h);
            let (dk, _) = m.sensitivities(s);
            assert!((fd - dk).abs() < 1e-6 * (1.0 + dk.abs()));
        }
    }

    #[test]
    fn interpolation_is_cubic_exact() {
        let g = Grid1D::uniform(-1.0, 1.0, 33).unwrap();
        let f: Vec<f64> = g.x.iter().map(|x| x * x * x - x).collect();
        let x = 0.123;
        assert!((g.interp(&f, x) - (x * x * x - x)).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_grids() {
        assert_eq!(Grid1D::uniform(-1.0, 1.0, 8).unwrap_err(), GridError::TooFewNodes(8));
        assert!(Grid1D::uniform(0.5, 1.0, 32).is_err());
    }
}
