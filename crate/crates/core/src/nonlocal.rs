//! Nonlocal terms: the cumulative integral `G`, inversion of
//! `I_h q = h q - (h^3 q_x)_x`, the Helmholtz operator `1 - d_xx`, and
//! Green-kernel columns with their exponential decay rate.
//!
//! All elliptic problems use a conservative three-point flux discretization,
//! which gives symmetric positive-definite tridiagonal matrices on any grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid1D;

#[derive(Debug, Error, PartialEq)]
pub enum NonlocalError {
    #[error("depth h = {value} is not positive at x = {x}")]
    NonPositiveDepth { x: f64, value: f64 },
    #[error("non-finite input at node {0}")]
    NonFinite(usize),
    #[error("singular tridiagonal system at row {0}")]
    Singular(usize),
    #[error("field length {got} does not match grid size {want}")]
    Length { got: usize, want: usize },
}

/// Boundary closure of an elliptic solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Zero flux.
    Neumann,
    /// Outgoing exponential decay at the natural rate of the operator.
    Decay,
}

/// Symmetric tridiagonal matrix factorized once (LDL^T), solved many times.
#[derive(Debug, Clone)]
pub struct TridiagFactor {
    /// Multipliers `off[i] / d[i]`.
    l: Vec<f64>,
    off: Vec<f64>,
    d_inv: Vec<f64>,
}

impl TridiagFactor {
    /// Factorizes the matrix with diagonal `diag` and off-diagonal `off`.
    pub fn new(diag: &[f64], off: &[f64]) -> Result<Self, NonlocalError> {
        let n = diag.len();
        let mut d_inv = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        let mut d = diag[0];
        for i in 0..n {
            if i > 0 {
                d = diag[i] - off[i - 1] * l[i - 1];
            }
            if d == 0.0 || !d.is_finite() {
                return Err(NonlocalError::Singular(i));
            }
            d_inv[i] = 1.0 / d;
            if i + 1 < n {
                l[i] = off[i] * d_inv[i];
            }
        }
        Ok(TridiagFactor {
            l,
            off: off.to_vec(),
            d_inv,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.d_inv.len();
        let mut x = rhs.to_vec();
        for i in 1..n {
            x[i] -= self.l[i - 1] * x[i - 1];
        }
        x[n - 1] *= self.d_inv[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.off[i] * x[i + 1]) * self.d_inv[i];
        }
        x
    }
}

/// Assembled and factorized flux-form operator
/// `a_i f_i - (c (f)_x)_x` integrated over cells.
#[derive(Debug, Clone)]
pub struct EllipticSolver {
    diag: Vec<f64>,
    off: Vec<f64>,
    cells: Vec<f64>,
    factor: TridiagFactor,
}

impl EllipticSolver {
    /// `reaction[i]` multiplies `f` at nodes, `diffusion[i]` lives at `i + 1/2`,
    /// `robin[0..2]` add boundary terms `robin * f` at the two ends.
    fn assemble(
        grid: &Grid1D,
        reaction: &[f64],
        diffusion: &[f64],
        robin: [f64; 2],
    ) -> Result<Self, NonlocalError> {
        let n = grid.n();
        let cells: Vec<f64> = (0..n).map(|j| grid.cell(j)).collect();
        let mut diag: Vec<f64> = (0..n).map(|j| reaction[j] * cells[j]).collect();
        let mut off = vec![0.0; n - 1];
        for j in 0..n - 1 {
            let c = diffusion[j] / (grid.x[j + 1] - grid.x[j]);
            diag[j] += c;
            diag[j + 1] += c;
            off[j] = -c;
        }
        diag[0] += robin[0];
        diag[n - 1] += robin[1];
        let factor = TridiagFactor::new(&diag, &off)?;
        Ok(EllipticSolver {
            diag,
            off,
            cells,
            factor,
        })
    }

    /// Solves with a nodal right-hand side (integrated over cells).
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b: Vec<f64> = rhs.iter().zip(&self.cells).map(|(r, c)| r * c).collect();
        self.factor.solve(&b)
    }

    /// `A f` (cell-integrated).
    fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = f.len();
        (0..n)
            .map(|i| {
                let mut a = self.diag[i] * f[i];
                if i > 0 {
                    a += self.off[i - 1] * f[i - 1];
                }
                if i + 1 < n {
                    a += self.off[i] * f[i + 1];
                }
                a
            })
            .collect()
    }

    /// Defect correction towards the fourth-order operator
    /// `reaction f - (coeff f_x)_x`: interior rows use [`apply_fourth_order`],
    /// the three rows next to each end keep the three-point closure.
    fn solve_refined(&self, grid: &Grid1D, reaction: &[f64], coeff: &[f64], source: &[f64], sweeps: usize) -> Vec<f64> {
        let n = source.len();
        let b: Vec<f64> = source.iter().zip(&self.cells).map(|(r, c)| r * c).collect();
        let mut f = self.factor.solve(&b);
        let mut op = vec![0.0; n];
        for _ in 0..sweeps {
            apply_fourth_order(grid, reaction, coeff, &f, &mut op);
            let low = self.apply(&f);
            let d: Vec<f64> = (0..n)
                .map(|j| {
                    if j < 3 || j + 3 >= n {
                        b[j] - low[j]
                    } else {
                        self.cells[j] * (source[j] - op[j])
                    }
                })
                .collect();
            let df = self.factor.solve(&d);
            for (f, d) in f.iter_mut().zip(&df) {
                *f += d;
            }
        }
        f
    }

    /// Relative residual `|A f - b| / |b|` in the max norm.
    pub fn residual(&self, f: &[f64], rhs: &[f64]) -> f64 {
        let n = f.len();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            let mut a = self.diag[i] * f[i];
            if i > 0 {
                a += self.off[i - 1] * f[i - 1];
            }
            if i + 1 < n {
                a += self.off[i] * f[i + 1];
            }
            let b = rhs[i] * self.cells[i];
            worst = worst.max((a - b).abs());
            scale = scale.max(b.abs());
        }
        if scale == 0.0 {
            worst
        } else {
            worst / scale
        }
    }
}

/// Pointwise `reaction f - (coeff f_x)_x` at nodes `3..n-3`, fourth order:
/// staggered fluxes `(coeff / x_s) f_s` in the index coordinate.
pub fn apply_fourth_order(grid: &Grid1D, reaction: &[f64], coeff: &[f64], f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let m = &grid.metric;
    let a: Vec<f64> = coeff.iter().zip(m).map(|(c, m)| c / m).collect();
    // flux[j] sits at j + 1/2 for j in 1..n-2.
    let mut flux = vec![0.0; n];
    for j in 1..n - 2 {
        let ah = (-a[j - 1] + 9.0 * a[j] + 9.0 * a[j + 1] - a[j + 2]) / 16.0;
        let fs = (f[j - 1] - 27.0 * f[j] + 27.0 * f[j + 1] - f[j + 2]) / 24.0;
        flux[j] = ah * fs;
    }
    for j in 3..n - 3 {
        let d = (flux[j - 2] - 27.0 * flux[j - 1] + 27.0 * flux[j] - flux[j + 1]) / 24.0;
        out[j] = reaction[j] * f[j] - d / m[j];
    }
}

fn check_len(f: &[f64], grid: &Grid1D) -> Result<(), NonlocalError> {
    if f.len() != grid.n() {
        return Err(NonlocalError::Length {
            got: f.len(),
            want: grid.n(),
        });
    }
    Ok(())
}

fn check_finite(f: &[f64]) -> Result<(), NonlocalError> {
    match f.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(NonlocalError::NonFinite(i)),
        None => Ok(()),
    }
}

fn check_depth(h: &[f64], grid: &Grid1D) -> Result<(), NonlocalError> {
    check_len(h, grid)?;
    check_finite(h)?;
    match h.iter().position(|&v| v <= 0.0) {
        Some(i) => Err(NonlocalError::NonPositiveDepth {
            x: grid.x[i],
            value: h[i],
        }),
        None => Ok(()),
    }
}

/// `G(x) = int_{x_min}^x (u + sqrt h)_x (u - sqrt h)_x`, integrand `u_x^2 - h_x^2 / (4h)`.
pub fn compute_g(h: &[f64], u: &[f64], grid: &Grid1D) -> Result<Vec<f64>, NonlocalError> {
    check_depth(h, grid)?;
    check_len(u, grid)?;
    let hx = grid.d1(h);
    let ux = grid.d1(u);
    let g: Vec<f64> = (0..h.len())
        .map(|i| ux[i] * ux[i] - hx[i] * hx[i] / (4.0 * h[i]))
        .collect();
    Ok(grid.cumulative4(&g))
}

/// Factorized `I_h` with zero-flux ends: `h q - (h^3 q_x)_x = h r`.
pub fn ih_solver(h: &[f64], grid: &Grid1D) -> Result<EllipticSolver, NonlocalError> {
    check_depth(h, grid)?;
    let half: Vec<f64> = (0..h.len() - 1)
        .map(|j| (0.5 * (h[j] + h[j + 1])).powi(3))
        .collect();
    EllipticSolver::assemble(grid, h, &half, [0.0, 0.0])
}

/// Solves `q - h^{-1} (h^3 q_x)_x = rhs` with `q_x = 0` at both ends.
pub fn invert_ih(h: &[f64], rhs: &[f64], grid: &Grid1D) -> Result<Vec<f64>, NonlocalError> {
    check_len(rhs, grid)?;
    check_finite(rhs)?;
    let s = ih_solver(h, grid)?;
    let b: Vec<f64> = h.iter().zip(rhs).map(|(h, r)| h * r).collect();
    Ok(s.solve(&b))
}

/// As [`invert_ih`], refined to fourth order in the interior by two
/// defect-correction sweeps.
pub fn invert_ih4(h: &[f64], rhs: &[f64], grid: &Grid1D) -> Result<Vec<f64>, NonlocalError> {
    check_len(rhs, grid)?;
    check_finite(rhs)?;
    let s = ih_solver(h, grid)?;
    let h3: Vec<f64> = h.iter().map(|h| h * h * h).collect();
    let b: Vec<f64> = h.iter().zip(rhs).map(|(h, r)| h * r).collect();
    Ok(s.solve_refined(grid, h, &h3, &b, 2))
}

/// Factorized `1 - d_xx` with `p_x = p` on the left and `p_x = -p` on the right.
pub fn helmholtz_solver(grid: &Grid1D) -> Result<EllipticSolver, NonlocalError> {
    let n = grid.n();
    EllipticSolver::assemble(grid, &vec![1.0; n], &vec![1.0; n - 1], [1.0, 1.0])
}

/// Solves `p - p_xx = rhs` with decaying Robin ends.
pub fn helmholtz_solve(rhs: &[f64], grid: &Grid1D) -> Result<Vec<f64>, NonlocalError> {
    check_len(rhs, grid)?;
    check_finite(rhs)?;
    Ok(helmholtz_solver(grid)?.solve(rhs))
}

/// As [`helmholtz_solve`], refined to fourth order in the interior.
pub fn helmholtz_solve4(rhs: &[f64], grid: &Grid1D) -> Result<Vec<f64>, NonlocalError> {
    check_len(rhs, grid)?;
    check_finite(rhs)?;
    let ones = vec![1.0; grid.n()];
    Ok(helmholtz_solver(grid)?.solve_refined(grid, &ones, &ones, rhs, 2))
}

/// Elliptic operator whose resolvent columns are inspected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OperatorKind {
    /// `K - d_x (h^{-1} d_x (h^3 K))`.
    Ih { h: Vec<f64> },
    /// `K - K_xx`.
    Helmholtz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticOperator {
    pub kind: OperatorKind,
    pub boundary: Boundary,
}

/// One column `K(., z)` of the discrete resolvent, forced by a unit-mass
/// delta at node `z`.
pub fn green_kernel_column(
    op: &EllipticOperator,
    grid: &Grid1D,
    z: usize,
) -> Result<Vec<f64>, NonlocalError> {
    let n = grid.n();
    let mut delta = vec![0.0; n];
    delta[z] = 1.0 / grid.cell(z);
    match &op.kind {
        OperatorKind::Helmholtz => {
            let robin = match op.boundary {
                Boundary::Neumann => [0.0, 0.0],
                Boundary::Decay => [1.0, 1.0],
            };
            let s = EllipticSolver::assemble(grid, &vec![1.0; n], &vec![1.0; n - 1], robin)?;
            Ok(s.solve(&delta))
        }
        OperatorKind::Ih { h } => {
            check_depth(h, grid)?;
            // Work with f = h^3 K: f / h^3 - (h^{-1} f_x)_x = delta.
            let reaction: Vec<f64> = h.iter().map(|h| h.powi(-3)).collect();
            let half: Vec<f64> = (0..n - 1).map(|j| 2.0 / (h[j] + h[j + 1])).collect();
            let robin = match op.boundary {
                Boundary::Neumann => [0.0, 0.0],
                // f ~ exp(-|x| / h) in the far field, so h^{-1} f_x = -+ f / h^2.
                Boundary::Decay => [h[0].powi(-2), h[n - 1].powi(-2)],
            };
            let s = EllipticSolver::assemble(grid, &reaction, &half, robin)?;
            let f = s.solve(&delta);
            Ok(f.iter().zip(h).map(|(f, h)| f / h.powi(3)).collect())
        }
    }
}

/// Least-squares decay rate of `-log|K|` against `|x - z|` over both tails,
/// skipping 10 nodes around `z` and next to each boundary.
///
/// Returns `f64::INFINITY` when the tail underflows.
pub fn kernel_decay_rate(column: &[f64], grid: &Grid1D, z: usize) -> f64 {
    let n = column.len();
    let skip = 10;
    let (mut sx, mut sy, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in skip..n.saturating_sub(skip) {
        if i + skip > z && i < z + skip + 1 {
            continue;
        }
        let k = column[i].abs();
        if k <= f64::MIN_POSITIVE {
            return f64::INFINITY;
        }
        let d = (grid.x[i] - grid.x[z]).abs();
        let y = -k.ln();
        sx += d;
        sy += y;
        sxx += d * d;
        sxy += d * y;
        m += 1.0;
    }
    if m < 2.0 {
        return f64::INFINITY;
    }
    let den = m * sxx - sx * sx;
    if den == 0.0 {
        return f64::INFINITY;
    }
    (m * sxy - sx * sy) / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn g_vanishes_for_constants_and_simple_waves() {
        let g = Grid1D::uniform(-5.0, 5.0, 201).unwrap();
        let h = vec![2.0; 201];
        let u = vec![0.7; 201];
        assert!(compute_g(&h, &u, &g).unwrap().iter().all(|v| v.abs() < 1e-14));
        let h: Vec<f64> = g.x.iter().map(|x| (1.0 + 0.3 * (-x * x).exp()).powi(2)).collect();
        let u: Vec<f64> = h.iter().map(|h| h.sqrt() + 0.5).collect();
        let gg = compute_g(&h, &u, &g).unwrap();
        // Zero up to the fourth-order differencing error of u versus h.
        assert!(gg.iter().all(|v| v.abs() < 1e-6), "{}", gg[200]);
    }

    #[test]
    fn g_of_tanh_profile() {
        let g = Grid1D::uniform(-20.0, 20.0, 4001).unwrap();
        let h = vec![1.0; g.n()];
        let u: Vec<f64> = g.x.iter().map(|x| x.tanh()).collect();
        let gg = compute_g(&h, &u, &g).unwrap();
        assert!((gg[g.n() - 1] - 4.0 / 3.0).abs() < 1e-5);
        assert_eq!(gg[0], 0.0);
        let neg = vec![-1.0; g.n()];
        assert!(matches!(
            compute_g(&neg, &u, &g),
            Err(NonlocalError::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn ih_inverts_discrete_fourier_mode_exactly() {
        let n = 301;
        let g = Grid1D::uniform(-0.75 * PI, 0.75 * PI, n).unwrap();
        let dx = g.x[1] - g.x[0];
        let k = 2.0;
        let keff2 = (2.0 - 2.0 * (k * dx).cos()) / (dx * dx);
        let h = vec![1.0; n];
        let rhs: Vec<f64> = g.x.iter().map(|x| (1.0 + keff2) * (k * x).sin()).collect();
        let q = invert_ih(&h, &rhs, &g).unwrap();
        for i in 0..n {
            assert!((q[i] - (k * g.x[i]).sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn ih_continuous_mode_converges_second_order() {
        let err = |n: usize| {
            let g = Grid1D::uniform(-0.75 * PI, 0.75 * PI, n).unwrap();
            let h = vec![1.0; n];
            let rhs: Vec<f64> = g.x.iter().map(|x| 5.0 * (2.0 * x).sin()).collect();
            let q = invert_ih(&h, &rhs, &g).unwrap();
            (0..n)
                .map(|i| (q[i] - (2.0 * g.x[i]).sin()).abs())
                .fold(0.0, f64::max)
        };
        let r = err(101) / err(201);
        assert!((3.5..4.5).contains(&r), "ratio {r}");
    }

    #[test]
    fn ih_preserves_constants_and_residual_is_small() {
        let g = Grid1D::uniform(-4.0, 4.0, 257).unwrap();
        let h = vec![4.0; 257];
        let q = invert_ih(&h, &vec![0.37; 257], &g).unwrap();
        assert!(q.iter().all(|v| (v - 0.37).abs() < 1e-12));
        let h: Vec<f64> = g.x.iter().map(|x| 1.0 + 0.1 * (-x * x).exp()).collect();
        let r: Vec<f64> = g.x.iter().map(|x| (-4.0 * x * x).exp()).collect();
        let s = ih_solver(&h, &g).unwrap();
        let b: Vec<f64> = h.iter().zip(&r).map(|(h, r)| h * r).collect();
        let q = s.solve(&b);
        assert!(s.residual(&q, &b) < 1e-10);
    }

    #[test]
    fn ih_variable_coefficient_refinement() {
        let solve = |n: usize| {
            let g = Grid1D::uniform(-8.0, 8.0, n).unwrap();
            let h: Vec<f64> = g.x.iter().map(|x| 1.0 + 0.1 * (-x * x).exp()).collect();
            let r: Vec<f64> = g.x.iter().map(|x| (-x * x).exp()).collect();
            invert_ih(&h, &r, &g).unwrap()
        };
        let (a, b, c) = (solve(161), solve(321), solve(641));
        let e1 = (0..161).map(|i| (a[i] - c[4 * i]).abs()).fold(0.0, f64::max);
        let e2 = (0..321).map(|i| (b[i] - c[2 * i]).abs()).fold(0.0, f64::max);
        assert!(e1 < 1e-3);
        assert!(e1 / e2 > 3.0, "{e1} {e2}");
    }

    #[test]
    fn refined_solves_converge_fourth_order_on_stretched_grid() {
        use crate::grid::SinhMap;
        let exact = |x: f64| (-(x - 0.3) * (x - 0.3)).exp() * (1.0 + 0.2 * x);
        let err = |n: usize| {
            let map = SinhMap { centre: 0.2, half_width: 8.0, k: 3.0 };
            let g = Grid1D::stretched(&map, n).unwrap();
            let q: Vec<f64> = g.x.iter().map(|&x| exact(x)).collect();
            let h: Vec<f64> = g.x.iter().map(|x| 1.0 + 0.3 * (-x * x).exp()).collect();
            // rhs = q - h^{-1}(h^3 q_x)_x evaluated with the fourth-order operator on a fine grid.
            let fine = Grid1D::stretched(&map, 8 * (n - 1) + 1).unwrap();
            let qf: Vec<f64> = fine.x.iter().map(|&x| exact(x)).collect();
            let hf: Vec<f64> = fine.x.iter().map(|x| 1.0 + 0.3 * (-x * x).exp()).collect();
            let h3f: Vec<f64> = hf.iter().map(|h| h.powi(3)).collect();
            let mut op = vec![0.0; fine.n()];
            apply_fourth_order(&fine, &hf, &h3f, &qf, &mut op);
            let r: Vec<f64> = (0..n).map(|i| { let j = 8 * i; if j < 3 || j + 3 >= fine.n() { qf[j] } else { op[j] / hf[j] } }).collect();
            let a = invert_ih4(&h, &r, &g).unwrap();
            let b = invert_ih(&h, &r, &g).unwrap();
            let e4 = (n / 4..3 * n / 4).map(|i| (a[i] - q[i]).abs()).fold(0.0, f64::max);
            let e2 = (n / 4..3 * n / 4).map(|i| (b[i] - q[i]).abs()).fold(0.0, f64::max);
            (e4, e2)
        };
        let (a4, a2) = err(201);
        let (b4, b2) = err(401);
        assert!(a4 < a2 && b4 < b2, "{a4} {a2} {b4} {b2}");
        assert!(a4 / b4 > 12.0, "fourth-order ratio {}", a4 / b4);
        assert!(a2 / b2 > 3.0 && a2 / b2 < 6.0, "second-order ratio {}", a2 / b2);
    }

    #[test]
    fn refined_helmholtz_reproduces_smooth_solution() {
        let err = |n: usize| {
            let g = Grid1D::uniform(-30.0, 30.0, n).unwrap();
            let p: Vec<f64> = g.x.iter().map(|x| (-x * x / 4.0).exp()).collect();
            let r: Vec<f64> = g.x.iter().map(|x| (-x * x / 4.0).exp() * (1.0 - (x * x / 4.0 - 0.5))).collect();
            let q = helmholtz_solve4(&r, &g).unwrap();
            q.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(301), err(601));
        assert!(e1 / e2 > 12.0, "{e1} {e2}");
    }

    #[test]
    fn helmholtz_fourier_mode_and_delta() {
        let g = Grid1D::uniform(-20.0 * PI, 20.0 * PI, 8001).unwrap();
        let rhs: Vec<f64> = g.x.iter().map(|x| (1.0 + (2.0 * x).cos()) / 4.0).collect();
        let p = helmholtz_solve(&rhs, &g).unwrap();
        for i in 0..g.n() {
            if g.x[i].abs() < 10.0 {
                let e = 0.25 + (2.0 * g.x[i]).cos() / 20.0;
                assert!((p[i] - e).abs() < 1e-4);
            }
        }
        let g = Grid1D::uniform(-30.0, 30.0, 6001).unwrap();
        let sig: f64 = 0.02;
        let rhs: Vec<f64> = g
            .x
            .iter()
            .map(|x| (-x * x / (2.0 * sig * sig)).exp() / (sig * (2.0 * PI).sqrt()))
            .collect();
        let p = helmholtz_solve(&rhs, &g).unwrap();
        for i in 0..g.n() {
            let x = g.x[i].abs();
            if x > 0.5 && x < 10.0 {
                assert!((p[i] - 0.5 * (-x).exp()).abs() < 1e-3 * (-x).exp());
            }
        }
        assert!(helmholtz_solve(&vec![0.0; g.n()], &g).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_depth_kernel_is_exponential() {
        let hs = 2.0;
        let g = Grid1D::uniform(-30.0, 30.0, 3001).unwrap();
        let op = EllipticOperator {
            kind: OperatorKind::Ih { h: vec![hs; g.n()] },
            boundary: Boundary::Decay,
        };
        let z = 1500;
        let k = green_kernel_column(&op, &g, z).unwrap();
        for i in 0..g.n() {
            let e = (-(g.x[i] - g.x[z]).abs() / hs).exp() / (2.0 * hs);
            assert!((k[i] - e).abs() < 1e-3 * e.max(1e-6), "{i}");
        }
        let rate = kernel_decay_rate(&k, &g, z);
        assert!((rate * hs - 1.0).abs() < 0.02);
    }

    #[test]
    fn kernel_symmetric_for_constant_depth() {
        let g = Grid1D::uniform(-10.0, 10.0, 401).unwrap();
        let op = EllipticOperator {
            kind: OperatorKind::Ih { h: vec![1.5; 401] },
            boundary: Boundary::Decay,
        };
        let a = green_kernel_column(&op, &g, 150).unwrap();
        let b = green_kernel_column(&op, &g, 260).unwrap();
        assert!((a[260] - b[150]).abs() < 1e-12);
    }

    #[test]
    fn kernel_decays_for_variable_depth() {
        let g = Grid1D::uniform(-40.0, 40.0, 2001).unwrap();
        let h: Vec<f64> = g.x.iter().map(|x| 2.0 + 3.0 * (-x * x / 4.0).exp()).collect();
        let hmax = 5.0;
        let op = EllipticOperator {
            kind: OperatorKind::Ih { h },
            boundary: Boundary::Decay,
        };
        for &z in &[300, 1000, 1500] {
            let k = green_kernel_column(&op, &g, z).unwrap();
            let r = kernel_decay_rate(&k, &g, z);
            assert!(r > 0.0 && r >= 0.8 / hmax, "{r}");
        }
    }

    #[test]
    fn underflowing_tail_reports_infinity() {
        let g = Grid1D::uniform(-1.0, 1.0, 64).unwrap();
        let mut col = vec![1.0; 64];
        col[5] = 0.0;
        col[50] = 0.0;
        assert_eq!(kernel_decay_rate(&col, &g, 32), f64::INFINITY);
    }
}
