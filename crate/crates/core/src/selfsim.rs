//! Modulation ODEs, blow-up time estimation and self-similar rescaling.
//!
//! With `g = tau - t`, `s = -ln g` and `y = (x - xi) / g^{5/2}`, the rescaled
//! fields are `W = g^{-3/2}(w - kappa)`, `Z = z`, `Q = q`; hence
//! `d^n W / dy^n = g^{(5n - 3)/2} d^n w / dx^n`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pde::{self, Fields, PdeError, PhysState, Snapshot, Trajectory};
use crate::profile::ProfileTable;

#[derive(Debug, Error)]
pub enum SelfsimError {
    #[error("need at least {need} snapshots past {growth}x growth, found {found}")]
    TooFewSnapshots { need: usize, found: usize, growth: f64 },
    #[error("1/max(-w_x) is not monotone in the fit window")]
    NonMonotone,
    #[error("tau - t = {0:e} is not positive")]
    PastBlowup(f64),
    #[error("resolved y-window is empty")]
    EmptyWindow,
    #[error("s-spacing {0} too large for differencing (limit 0.1)")]
    CoarseSpacing(f64),
    #[error("snapshots are on different y-grids")]
    GridMismatch,
    #[error(transparent)]
    Pde(#[from] PdeError),
}

/// Modulation variables `(tau, kappa, xi)` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationState {
    pub t: f64,
    pub tau: f64,
    pub kappa: f64,
    pub xi: f64,
}

impl ModulationState {
    pub fn gap(&self) -> f64 {
        self.tau - self.t
    }

    /// Self-similar time `s = -ln(tau - t)`.
    pub fn s(&self) -> f64 {
        -self.gap().ln()
    }

    pub fn y_of(&self, x: f64) -> f64 {
        (x - self.xi) / self.gap().powf(2.5)
    }

    pub fn x_of(&self, y: f64) -> f64 {
        self.xi + y * self.gap().powf(2.5)
    }
}

/// PDE fields sampled at `x = xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum CentreProbe {
    Rsv {
        z: f64,
        z_x: f64,
        z_xx: f64,
        g: f64,
        q: f64,
        q_x: f64,
        q_xx: f64,
        w_x: f64,
        w_xx: f64,
        w_xxx: f64,
    },
    Rb {
        p: f64,
        p_x: f64,
        v_x: f64,
        v_xx: f64,
        v_xxx: f64,
    },
}

impl CentreProbe {
    pub fn third_derivative(&self) -> f64 {
        match self {
            CentreProbe::Rsv { w_xxx, .. } => *w_xxx,
            CentreProbe::Rb { v_xxx, .. } => *v_xxx,
        }
    }

    pub fn slope(&self) -> f64 {
        match self {
            CentreProbe::Rsv { w_x, .. } => *w_x,
            CentreProbe::Rb { v_x, .. } => *v_x,
        }
    }

    pub fn curvature(&self) -> f64 {
        match self {
            CentreProbe::Rsv { w_xx, .. } => *w_xx,
            CentreProbe::Rb { v_xx, .. } => *v_xx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationRates {
    pub tau_dot: f64,
    pub kappa_dot: f64,
    pub xi_dot: f64,
    /// Set when `|w_xxx(xi)|` fell below the division guard.
    pub frozen: bool,
}

/// Division guard on `|w_xxx(xi)|`.
pub fn division_guard(eps: f64) -> f64 {
    1e-6 * eps.powi(-6)
}

/// Right-hand sides of the modulation ODEs.
///
/// rSV:
/// `tau' = g^2 z_x^2/4 - (4/3) g z_x - (4/3) g^2 q_x`,
/// `kappa' = 2 B / (g w_xxx) + (8/3)(G - q)`,
/// `xi' = -B / w_xxx + z/3 + kappa`,
/// with `B = z_x z_xx - (8/3) q_xx - (8/3) z_xx / g`.
/// rB: `tau' = -g^2 p / 2`, `kappa' = -2 p_x / (g v_xxx) - p_x`, `xi' = p_x / v_xxx + kappa`.
pub fn modulation_rates(m: &ModulationState, probe: &CentreProbe, t: f64, eps: f64) -> ModulationRates {
    let g = m.tau - t;
    let w3 = probe.third_derivative();
    if !(w3.abs() >= division_guard(eps)) || !(g > 0.0) {
        return ModulationRates {
            tau_dot: 0.0,
            kappa_dot: 0.0,
            xi_dot: 0.0,
            frozen: true,
        };
    }
    match *probe {
        CentreProbe::Rsv {
            z,
            z_x,
            z_xx,
            g: gg,
            q,
            q_x,
            q_xx,
            w_xxx,
            ..
        } => {
            let b = z_x * z_xx - 8.0 / 3.0 * q_xx - 8.0 / 3.0 * z_xx / g;
            ModulationRates {
                tau_dot: g * g * z_x * z_x / 4.0 - 4.0 / 3.0 * g * z_x - 4.0 / 3.0 * g * g * q_x,
                kappa_dot: 2.0 * b / (g * w_xxx) + 8.0 / 3.0 * (gg - q),
                xi_dot: -b / w_xxx + z / 3.0 + m.kappa,
                frozen: false,
            }
        }
        CentreProbe::Rb { p, p_x, v_xxx, .. } => ModulationRates {
            tau_dot: -g * g * p / 2.0,
            kappa_dot: -2.0 * p_x / (g * v_xxx) - p_x,
            xi_dot: p_x / v_xxx + m.kappa,
            frozen: false,
        },
    }
}

/// Primary field and its fixed-`x` time derivative sampled at `xi`:
/// `f = (w, w_x, w_xx, w_xxx)`, `f_t = (w_t, w_xt, w_xxt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentreJet {
    pub f: [f64; 4],
    pub f_t: [f64; 3],
}

/// Modulation rates obtained by differentiating the centre constraints
/// `w(xi) = kappa`, `(tau - t) w_x(xi) = -2`, `w_xx(xi) = 0` along the discrete flow.
///
/// Residuals of the constraints are relaxed at rate `relax` in `s`. With the
/// constraints satisfied exactly these rates coincide with [`modulation_rates`].
pub fn constrained_rates(m: &ModulationState, jet: &CentreJet, t: f64, eps: f64, relax: f64) -> ModulationRates {
    let g = m.tau - t;
    let [w, a1, a2, a3] = jet.f;
    let [w_t, w_xt, w_xxt] = jet.f_t;
    if !(a3.abs() >= division_guard(eps)) || !(g > 0.0) || a1 == 0.0 {
        return ModulationRates {
            tau_dot: 0.0,
            kappa_dot: 0.0,
            xi_dot: 0.0,
            frozen: true,
        };
    }
    let xi_dot = (-relax * a2 / g - w_xxt) / a3;
    let c1 = g * a1 + 2.0;
    let tau_dot = 1.0 - (g * (w_xt + xi_dot * a2) + relax * c1 / g) / a1;
    let kappa_dot = w_t + xi_dot * a1 + relax * (w - m.kappa) / g;
    ModulationRates {
        tau_dot,
        kappa_dot,
        xi_dot,
        frozen: false,
    }
}

/// Samples the probe fields of `state` at `x = xi`.
pub fn probe_state(state: &PhysState, xi: f64) -> Result<CentreProbe, PdeError> {
    let grid = &state.grid;
    let d = |f: &[f64]| -> Vec<f64> { grid.d1(f) };
    match &state.fields {
        Fields::Rsv { w, z } => {
            let tm = pde::rsv_terms(grid, w, z)?;
            let zxx = d(&tm.zx);
            let qx = d(&tm.q);
            let qxx = d(&qx);
            let wxx = d(&tm.wx);
            let wxxx = d(&wxx);
            Ok(CentreProbe::Rsv {
                z: grid.interp(z, xi),
                z_x: grid.interp(&tm.zx, xi),
                z_xx: grid.interp(&zxx, xi),
                g: grid.interp(&tm.g, xi),
                q: grid.interp(&tm.q, xi),
                q_x: grid.interp(&qx, xi),
                q_xx: grid.interp(&qxx, xi),
                w_x: grid.interp(&tm.wx, xi),
                w_xx: grid.interp(&wxx, xi),
                w_xxx: grid.interp(&wxxx, xi),
            })
        }
        Fields::Rb { v } => {
            let tm = pde::rb_terms(grid, v)?;
            let vxx = d(&tm.vx);
            let vxxx = d(&vxx);
            Ok(CentreProbe::Rb {
                p: grid.interp(&tm.p, xi),
                p_x: grid.interp(&tm.px, xi),
                v_x: grid.interp(&tm.vx, xi),
                v_xx: grid.interp(&vxx, xi),
                v_xxx: grid.interp(&vxxx, xi),
            })
        }
    }
}

/// Advances the modulation variables by one RK4 step of size `dt` with the PDE
/// fields held at `state` (used when the modulation is integrated after the fact).
pub fn step_modulation(m: &ModulationState, state: &PhysState, dt: f64) -> Result<(ModulationState, ModulationRates), PdeError> {
    let eps = state.eps;
    let rates_at = |mm: &ModulationState, t: f64| -> Result<ModulationRates, PdeError> {
        let probe = probe_state(state, mm.xi)?;
        Ok(modulation_rates(mm, &probe, t, eps))
    };
    let shift = |r: &ModulationRates, a: f64, t: f64| ModulationState {
        t,
        tau: m.tau + a * r.tau_dot,
        kappa: m.kappa + a * r.kappa_dot,
        xi: m.xi + a * r.xi_dot,
    };
    let k1 = rates_at(m, m.t)?;
    let k2 = rates_at(&shift(&k1, 0.5 * dt, m.t + 0.5 * dt), m.t + 0.5 * dt)?;
    let k3 = rates_at(&shift(&k2, 0.5 * dt, m.t + 0.5 * dt), m.t + 0.5 * dt)?;
    let k4 = rates_at(&shift(&k3, dt, m.t + dt), m.t + dt)?;
    let c = |f: fn(&ModulationRates) -> f64| dt / 6.0 * (f(&k1) + 2.0 * f(&k2) + 2.0 * f(&k3) + f(&k4));
    let next = ModulationState {
        t: m.t + dt,
        tau: m.tau + c(|r| r.tau_dot),
        kappa: m.kappa + c(|r| r.kappa_dot),
        xi: m.xi + c(|r| r.xi_dot),
    };
    Ok((next, k1))
}

/// Blow-up estimate from the slope law `1/max(-w_x) ~ (T* - t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupEstimate {
    pub t_star: f64,
    pub x_star: f64,
    /// RMS residual of the linear fit of `1/max(-w_x)`.
    pub residual: f64,
    pub samples: usize,
    pub t_last: f64,
}

/// Least-squares line `y = a + b x`, returning `(a, b, rms residual)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rms = (x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum::<f64>() / n).sqrt();
    (a, b, rms)
}

/// Fits `m(t) = 1/max(-w_x)` on the given samples `(t, min w_x, argmin x)`.
pub fn estimate_blowup_from(samples: &[(f64, f64, f64)]) -> Result<BlowupEstimate, SelfsimError> {
    if samples.len() < 2 {
        return Err(SelfsimError::TooFewSnapshots {
            need: 2,
            found: samples.len(),
            growth: 0.0,
        });
    }
    let t: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let m: Vec<f64> = samples.iter().map(|s| 1.0 / (-s.1)).collect();
    if m.iter().any(|v| !(*v > 0.0)) || m.windows(2).any(|p| p[1] >= p[0]) {
        return Err(SelfsimError::NonMonotone);
    }
    let (a, b, residual) = linear_fit(&t, &m);
    let t_star = -a / b;
    let xs: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let (xa, xb, _) = linear_fit(&t, &xs);
    Ok(BlowupEstimate {
        t_star,
        x_star: xa + xb * t_star,
        residual,
        samples: samples.len(),
        t_last: *t.last().expect("nonempty"),
    })
}

/// Snapshots with growth at least `min_growth`, latest `k`.
pub fn blowup_window(traj: &Trajectory, min_growth: f64, k: usize) -> Vec<&Snapshot> {
    let regime: Vec<&Snapshot> = traj
        .snapshots
        .iter()
        .filter(|s| traj.growth(&s.record) >= min_growth)
        .collect();
    let start = regime.len().saturating_sub(k);
    regime[start..].to_vec()
}

/// Slope-based `(T*, x*)` from the last `k` snapshots past 4x growth.
pub fn estimate_blowup_k(traj: &Trajectory, k: usize) -> Result<BlowupEstimate, SelfsimError> {
    let win = blowup_window(traj, 4.0, k);
    if win.len() < k.min(8) {
        return Err(SelfsimError::TooFewSnapshots {
            need: k.min(8),
            found: win.len(),
            growth: 4.0,
        });
    }
    let samples: Vec<(f64, f64, f64)> = win
        .iter()
        .map(|s| (s.record.t, s.record.min_wx, s.record.argmin_x))
        .collect();
    estimate_blowup_from(&samples)
}

/// Slope-based estimate from the last 8 snapshots in the blow-up regime.
pub fn estimate_blowup(traj: &Trajectory) -> Result<BlowupEstimate, SelfsimError> {
    estimate_blowup_k(traj, 8)
}

/// Modulation-based `T*`: first zero of `tau - t`, extrapolated from the last record.
pub fn modulation_blowup_time(traj: &Trajectory) -> Option<f64> {
    let r = traj.series.last()?;
    let g = r.modulation.gap();
    let speed = 1.0 - r.rates.tau_dot;
    if g > 0.0 && speed > 0.0 {
        Some(r.t + g / speed)
    } else {
        None
    }
}

/// Fixed graded `y`-grid: uniform spacing `h0` near 0 with geometric growth
/// (ratio `1 + h0`) out to `y_max`, symmetric.
pub fn y_grid(y_max: f64) -> Vec<f64> {
    let h0 = 0.02;
    let mut pos = vec![];
    let mut y = 0.0;
    let mut h = h0;
    loop {
        y += h;
        if y > y_max {
            break;
        }
        pos.push(y);
        if y > 1.0 {
            h *= 1.0 + h0;
        }
    }
    let mut out: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
    out.push(0.0);
    out.extend(pos);
    out
}

/// Rescaled fields on a `y`-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledSnapshot {
    pub s: f64,
    pub modulation: ModulationState,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub w_y: Vec<f64>,
    pub w_yy: Vec<f64>,
    pub w_yyy: Vec<f64>,
    pub w_yyyy: Vec<f64>,
    /// `z` (rSV) or empty (rB).
    pub z: Vec<f64>,
    pub z_y: Vec<f64>,
    /// `q` (rSV) or `p` (rB).
    pub q: Vec<f64>,
    pub q_y: Vec<f64>,
    /// `G` (rSV) or empty.
    pub g_field: Vec<f64>,
    /// `(W, W_y + 2, W_yy)` at `y = 0`.
    pub constraint: [f64; 3],
    /// `d^3 W / dy^3` at `y = 0`.
    pub w3_origin: f64,
}

/// Half-width of the physical window `|x - xi| <= X` used for rescaled fields.
pub const RESOLVED_HALF_WIDTH: f64 = 1.0;

/// Maps `state` into self-similar variables with modulation `m`.
pub fn rescale_state(state: &PhysState, m: &ModulationState) -> Result<RescaledSnapshot, SelfsimError> {
    let g = m.tau - state.t;
    if !(g > 0.0) {
        return Err(SelfsimError::PastBlowup(g));
    }
    let grid = &state.grid;
    let lo = (grid.x_min() - m.xi).max(-RESOLVED_HALF_WIDTH);
    let hi = (grid.x_max() - m.xi).min(RESOLVED_HALF_WIDTH);
    if !(hi > 0.0 && lo < 0.0) {
        return Err(SelfsimError::EmptyWindow);
    }
    let scale = g.powf(2.5);
    let y_max = lo.abs().min(hi) / scale;
    let y = y_grid(y_max);
    let w = state.fields.primary();
    let wx = grid.d1(w);
    let wxx = grid.d1(&wx);
    let wxxx = grid.d1(&wxx);
    let wxxxx = grid.d1(&wxxx);
    let (z, zx, q, qx, gf) = match &state.fields {
        Fields::Rsv { w, z } => {
            let tm = pde::rsv_terms(grid, w, z)?;
            let qx = grid.d1(&tm.q);
            (z.clone(), tm.zx, tm.q, qx, tm.g)
        }
        Fields::Rb { v } => {
            let tm = pde::rb_terms(grid, v)?;
            (vec![], vec![], tm.p, tm.px, vec![])
        }
    };
    let amp = |n: i32| g.powf((5.0 * n as f64 - 3.0) / 2.0);
    let at = |f: &[f64], yy: f64| grid.interp(f, m.xi + yy * scale);
    let sample = |f: &[f64], c: f64| -> Vec<f64> { y.iter().map(|&yy| c * at(f, yy)).collect() };
    let wk: Vec<f64> = w.iter().map(|v| v - m.kappa).collect();
    let out = RescaledSnapshot {
        s: -g.ln(),
        modulation: ModulationState { t: state.t, ..*m },
        w: sample(&wk, amp(0)),
        w_y: sample(&wx, amp(1)),
        w_yy: sample(&wxx, amp(2)),
        w_yyy: sample(&wxxx, amp(3)),
        w_yyyy: sample(&wxxxx, amp(4)),
        z: if z.is_empty() { vec![] } else { sample(&z, 1.0) },
        z_y: if zx.is_empty() { vec![] } else { sample(&zx, scale) },
        q: sample(&q, 1.0),
        q_y: sample(&qx, scale),
        g_field: if gf.is_empty() { vec![] } else { sample(&gf, 1.0) },
        constraint: [amp(0) * at(&wk, 0.0), amp(1) * at(&wx, 0.0) + 2.0, amp(2) * at(&wxx, 0.0)],
        w3_origin: amp(3) * at(&wxxx, 0.0),
        y,
    };
    Ok(out)
}

/// Rescales a stored snapshot using its recorded modulation.
pub fn rescale_snapshot(snap: &Snapshot, cfg: &pde::SimConfig) -> Result<RescaledSnapshot, SelfsimError> {
    rescale_state(&snap.phys(cfg), &snap.record.modulation)
}

/// Inverse map of [`rescale_state`] for the primary field: `w(x) = kappa + g^{3/2} W(y)`.
pub fn unscale_primary(r: &RescaledSnapshot) -> Vec<(f64, f64)> {
    let m = &r.modulation;
    let g = m.gap();
    r.y.iter()
        .zip(&r.w)
        .map(|(&y, &w)| (m.x_of(y), m.kappa + g.powf(1.5) * w))
        .collect()
}

/// Weighted distances between `W_y` and the profile slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileDistance {
    /// `sup (1 + |y|^{2/5}) |W_y - W'|`.
    pub weighted: f64,
    pub weighted_at: f64,
    /// `sup (1 + y^2)/y^2 |W_y - W'|` over `y != 0`.
    pub near_origin: f64,
    pub near_origin_at: f64,
    pub constraint: [f64; 3],
    pub y_window: f64,
}

pub fn profile_distance(r: &RescaledSnapshot, profile: &ProfileTable) -> ProfileDistance {
    let mut d = ProfileDistance {
        weighted: 0.0,
        weighted_at: 0.0,
        near_origin: 0.0,
        near_origin_at: 0.0,
        constraint: r.constraint,
        y_window: r.y.last().copied().unwrap_or(0.0),
    };
    for (&y, &wy) in r.y.iter().zip(&r.w_y) {
        let diff = (wy - profile.eval(y).1).abs();
        let a = (1.0 + y.abs().powf(0.4)) * diff;
        if a > d.weighted {
            d.weighted = a;
            d.weighted_at = y;
        }
        if y != 0.0 {
            let b = (1.0 + y * y) / (y * y) * diff;
            if b > d.near_origin {
                d.near_origin = b;
                d.near_origin_at = y;
            }
        }
    }
    d
}

/// `int_0^y W'(y')^2 dy'` at each node of `y` (5-point Gauss-Legendre per interval).
fn slope_square_integral(profile: &ProfileTable, y: &[f64]) -> Vec<f64> {
    const NODES: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.236_926_885_056_189_1,
        0.478_628_670_499_366_5,
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
    ];
    let piece = |a: f64, b: f64| -> f64 {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        h * NODES
            .iter()
            .zip(WEIGHTS)
            .map(|(t, w)| w * profile.eval(c + h * t).1.powi(2))
            .sum::<f64>()
    };
    let zero = y.iter().position(|v| *v == 0.0).unwrap_or(0);
    let mut out = vec![0.0; y.len()];
    for i in zero + 1..y.len() {
        out[i] = out[i - 1] + piece(y[i - 1], y[i]);
    }
    for i in (0..zero).rev() {
        out[i] = out[i + 1] - piece(y[i], y[i + 1]);
    }
    out
}

/// Builds a rescaled snapshot directly from a profile (for testing monitors).
///
/// With `Z` constant the nonlocal field is `G = (3/16) e^{-s/2} int_0^y W'^2`,
/// which makes the profile a steady state of the rescaled `W` equation.
pub fn rescaled_from_profile(profile: &ProfileTable, m: ModulationState, y_max: f64, z_const: f64) -> RescaledSnapshot {
    let y = y_grid(y_max);
    let g_scale = 3.0 / 16.0 * (-0.5 * m.s()).exp();
    let g_field = slope_square_integral(profile, &y).iter().map(|v| g_scale * v).collect();
    let ev: Vec<(f64, f64, f64)> = y.iter().map(|&v| profile.eval(v)).collect();
    let third: Vec<f64> = ev
        .iter()
        .map(|e| crate::profile::third_derivative(profile.beta, e.1))
        .collect();
    let fourth: Vec<f64> = y
        .iter()
        .zip(&ev)
        .map(|(&v, e)| v.signum() * crate::profile::fourth_derivative(profile.beta, e.1))
        .collect();
    let n = y.len();
    let (w0, w1, w2) = profile.eval(0.0);
    RescaledSnapshot {
        s: m.s(),
        modulation: m,
        w: ev.iter().map(|e| e.0).collect(),
        w_y: ev.iter().map(|e| e.1).collect(),
        w_yy: ev.iter().map(|e| e.2).collect(),
        w_yyy: third,
        w_yyyy: fourth,
        z: vec![z_const; n],
        z_y: vec![0.0; n],
        q: vec![0.0; n],
        q_y: vec![0.0; n],
        g_field,
        constraint: [w0, w1 + 2.0, w2],
        w3_origin: crate::profile::third_derivative(profile.beta, w1),
        y,
    }
}

/// Residual of the rescaled `W` equation between two snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub s_mid: f64,
    pub ds: f64,
    pub sup: f64,
    pub sup_at: f64,
    pub l2: f64,
    /// Largest individual term, for scale.
    pub scale: f64,
}

/// Modulation rates used by the rescaled equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    pub tau_dot: f64,
    pub kappa_dot: f64,
    pub xi_dot: f64,
}

impl From<ModulationRates> for RatePair {
    fn from(r: ModulationRates) -> Self {
        RatePair {
            tau_dot: r.tau_dot,
            kappa_dot: r.kappa_dot,
            xi_dot: r.xi_dot,
        }
    }
}

/// Residual of
/// `W_s - (3/2) W + U^W W_y + e^{s/2} kappa' / (1 - tau') - (8/3) e^{s/2} (G - Q) / (1 - tau')`
/// with `U^W = (5/2) y + (W + e^{3s/2} Z / 3 + e^{3s/2} (kappa - xi')) / (1 - tau')`.
///
/// For rB the `Z` term is absent and the forcing is `-e^{3s} P_y / (1 - tau')`.
pub fn residual_check(
    a: &RescaledSnapshot,
    b: &RescaledSnapshot,
    ra: RatePair,
    rb: RatePair,
) -> Result<ResidualRecord, SelfsimError> {
    let ds = b.s - a.s;
    if !(ds > 0.0) || ds > 0.1 {
        return Err(SelfsimError::CoarseSpacing(ds));
    }
    let n = a.y.len().min(b.y.len());
    // Common window: the shorter grid is a centred subset of the longer one.
    let off_a = (a.y.len() - n) / 2;
    let off_b = (b.y.len() - n) / 2;
    let s = 0.5 * (a.s + b.s);
    let mid = |f: &[f64], g: &[f64], i: usize| 0.5 * (f[off_a + i] + g[off_b + i]);
    let tau_dot = 0.5 * (ra.tau_dot + rb.tau_dot);
    let kappa_dot = 0.5 * (ra.kappa_dot + rb.kappa_dot);
    let xi_dot = 0.5 * (ra.xi_dot + rb.xi_dot);
    let kappa = 0.5 * (a.modulation.kappa + b.modulation.kappa);
    let den = 1.0 - tau_dot;
    let e_half = (0.5 * s).exp();
    let e_3half = (1.5 * s).exp();
    let rsv = !a.z.is_empty();
    let mut sup: f64 = 0.0;
    let mut sup_at = 0.0;
    let mut sum = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..n {
        let y = a.y[off_a + i];
        if (y - b.y[off_b + i]).abs() > 1e-12 * (1.0 + y.abs()) {
            return Err(SelfsimError::GridMismatch);
        }
        let w = mid(&a.w, &b.w, i);
        let wy = mid(&a.w_y, &b.w_y, i);
        let ws = (b.w[off_b + i] - a.w[off_a + i]) / ds;
        let (u, force) = if rsv {
            let z = mid(&a.z, &b.z, i);
            let gq = mid(&a.g_field, &b.g_field, i) - mid(&a.q, &b.q, i);
            let u = 2.5 * y + (w + e_3half * z / 3.0 + e_3half * (kappa - xi_dot)) / den;
            (u, 8.0 * e_half * gq / (3.0 * den))
        } else {
            let u = 2.5 * y + (w + e_3half * (kappa - xi_dot)) / den;
            let py = mid(&a.q_y, &b.q_y, i);
            (u, -(3.0 * s).exp() * py / den)
        };
        let kterm = e_half * kappa_dot / den;
        let r = ws - 1.5 * w + u * wy + kterm - force;
        scale = scale.max(ws.abs()).max((1.5 * w).abs()).max((u * wy).abs()).max(kterm.abs()).max(force.abs());
        if r.abs() > sup {
            sup = r.abs();
            sup_at = y;
        }
        let dy = if i + 1 < n { a.y[off_a + i + 1] - y } else { 0.0 };
        sum += r * r * dy;
    }
    Ok(ResidualRecord {
        s_mid: s,
        ds,
        sup,
        sup_at,
        l2: sum.sqrt(),
        scale,
    })
}

/// Recomputes the rescaled snapshot on a shared grid of half-width `y_max`.
pub fn rescale_state_window(state: &PhysState, m: &ModulationState, y_max: f64) -> Result<RescaledSnapshot, SelfsimError> {
    let mut r = rescale_state(state, m)?;
    let keep: Vec<usize> = (0..r.y.len()).filter(|&i| r.y[i].abs() <= y_max + 1e-12).collect();
    let pick = |f: &Vec<f64>| -> Vec<f64> {
        if f.is_empty() {
            vec![]
        } else {
            keep.iter().map(|&i| f[i]).collect()
        }
    };
    r.w = pick(&r.w);
    r.w_y = pick(&r.w_y);
    r.w_yy = pick(&r.w_yy);
    r.w_yyy = pick(&r.w_yyy);
    r.w_yyyy = pick(&r.w_yyyy);
    r.z = pick(&r.z);
    r.z_y = pick(&r.z_y);
    r.q = pick(&r.q);
    r.q_y = pick(&r.q_y);
    r.g_field = pick(&r.g_field);
    r.y = pick(&r.y);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{make_initial_data, Model, SimConfig};
    use crate::profile::solve_profile;
    use proptest::prelude::*;

    fn modulation(t: f64, tau: f64, kappa: f64, xi: f64) -> ModulationState {
        ModulationState { t, tau, kappa, xi }
    }

    #[test]
    fn synthetic_linear_law_gives_exact_blowup_time() {
        let samples: Vec<(f64, f64, f64)> = (0..8)
            .map(|i| {
                let t = 0.5 + 0.02 * i as f64;
                (t, -1.0 / (0.7 - t), 0.1 + 0.01 * t)
            })
            .collect();
        let e = estimate_blowup_from(&samples).unwrap();
        assert!((e.t_star - 0.7).abs() < 1e-12);
        assert!((e.x_star - 0.107).abs() < 1e-12);
    }

    #[test]
    fn synthetic_perturbed_law_within_tolerance() {
        let samples: Vec<(f64, f64, f64)> = (0..8)
            .map(|i| {
                let d = 0.04 / 1.3f64.powi(i);
                (0.7 - d, -1.0 / (d * (1.0 + 0.05 * d)), 0.0)
            })
            .collect();
        let e = estimate_blowup_from(&samples).unwrap();
        assert!((e.t_star - 0.7).abs() < 1e-3, "{}", e.t_star);
        let mut bad = samples.clone();
        bad[3].1 = -100.0;
        assert!(matches!(estimate_blowup_from(&bad), Err(SelfsimError::NonMonotone)));
    }

    #[test]
    fn closed_form_rates_for_symmetric_data() {
        let m = modulation(0.0, 0.01, 4.0, 0.2);
        let probe = CentreProbe::Rsv {
            z: -4.0,
            z_x: 0.0,
            z_xx: 0.0,
            g: 0.3,
            q: 0.0,
            q_x: 0.0,
            q_xx: 0.0,
            w_x: -200.0,
            w_xx: 0.0,
            w_xxx: 1e9,
        };
        let r = modulation_rates(&m, &probe, 0.0, 0.3);
        assert!(!r.frozen);
        assert_eq!(r.tau_dot, 0.0);
        assert!((r.xi_dot - (-4.0 / 3.0 + 4.0)).abs() < 1e-15);
        assert!((r.kappa_dot - 0.8).abs() < 1e-15);
        let mut tiny = probe.clone();
        if let CentreProbe::Rsv { w_xxx, .. } = &mut tiny {
            *w_xxx = 1e-4;
        }
        assert!(modulation_rates(&m, &tiny, 0.0, 0.3).frozen);
    }

    proptest! {
        /// rB: with the constraints exact, differentiating them along
        /// `v_t = -v v_x - p_x` (using `p_xx = p - v_x^2/2`, `p_xxx = p_x - v_x v_xx`)
        /// reproduces the closed-form rates.
        #[test]
        fn constrained_rates_match_closed_form(
            g in 1e-3f64..0.5,
            kappa in -2.0f64..2.0,
            p in -1.0f64..1.0,
            p_x in -1.0f64..1.0,
            a3 in 10.0f64..1e6,
        ) {
            let m = modulation(0.0, g, kappa, 0.0);
            let a1 = -2.0 / g;
            let jet = CentreJet {
                f: [kappa, a1, 0.0, a3],
                f_t: [-kappa * a1 - p_x, -a1 * a1 - (p - a1 * a1 / 2.0), -kappa * a3 - p_x],
            };
            let probe = CentreProbe::Rb { p, p_x, v_x: a1, v_xx: 0.0, v_xxx: a3 };
            let a = constrained_rates(&m, &jet, 0.0, 0.3, 1.0);
            let b = modulation_rates(&m, &probe, 0.0, 0.3);
            let close = |u: f64, v: f64| (u - v).abs() <= 1e-9 * (1.0 + v.abs());
            prop_assert!(close(a.tau_dot, b.tau_dot), "{} {}", a.tau_dot, b.tau_dot);
            prop_assert!(close(a.kappa_dot, b.kappa_dot));
            prop_assert!(close(a.xi_dot, b.xi_dot));
        }
    }

    #[test]
    fn constrained_rates_relax_residuals() {
        // Static field: the rates only carry the relaxation terms.
        let g = 0.01;
        let m = modulation(0.0, g, 1.0, 0.0);
        let jet = CentreJet {
            f: [1.1, -190.0, 5.0, 1e8],
            f_t: [0.0; 3],
        };
        let r = constrained_rates(&m, &jet, 0.0, 0.3, 2.0);
        let c2_dot = r.xi_dot * jet.f[3];
        assert!((c2_dot + 2.0 * 5.0 / g).abs() < 1e-9);
        let c1_dot = (r.tau_dot - 1.0) * jet.f[1] + g * r.xi_dot * jet.f[2];
        assert!((c1_dot + 2.0 * (g * jet.f[1] + 2.0) / g).abs() < 1e-9);
        let c0_dot = r.xi_dot * jet.f[1] - r.kappa_dot;
        assert!((c0_dot + 2.0 * 0.1 / g).abs() < 1e-9);
    }

    #[test]
    fn rescaled_initial_data_matches_profile() {
        let prof = solve_profile(1.0, 1e6, 1e-12).unwrap();
        let cfg = SimConfig::new(Model::Rsv);
        let s = make_initial_data(&cfg, &prof).unwrap();
        let w0 = s.grid.interp(s.fields.primary(), 0.0);
        let m = modulation(-cfg.eps, 0.0, w0, 0.0);
        assert!((m.s() + cfg.eps.ln()).abs() < 1e-15);
        let r = rescale_state(&s, &m).unwrap();
        assert!(r.constraint[0].abs() < 1e-12);
        assert!(r.constraint[1].abs() < 1e-4 && r.constraint[2].abs() < 1e-2);
        assert!((r.w3_origin - 256.0).abs() < 1.0);
        let d = profile_distance(&r, &prof);
        assert!(d.weighted < 1e-3, "{}", d.weighted);
        // Inverse map reproduces the physical samples.
        for (x, w) in unscale_primary(&r) {
            assert!((w - s.grid.interp(s.fields.primary(), x)).abs() < 1e-12);
        }
        let late = modulation(-cfg.eps, -cfg.eps, w0, 0.0);
        assert!(matches!(rescale_state(&s, &late), Err(SelfsimError::PastBlowup(_))));
    }

    #[test]
    fn exact_profile_has_zero_distance() {
        let prof = solve_profile(1.0, 1e6, 1e-12).unwrap();
        let r = rescaled_from_profile(&prof, modulation(0.0, 0.01, 4.0, 0.0), 1e3, -4.0);
        let d = profile_distance(&r, &prof);
        assert_eq!(d.weighted, 0.0);
        assert_eq!(d.near_origin, 0.0);
        assert!(d.constraint.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn steady_profile_residual_and_kappa_corruption() {
        let prof = solve_profile(1.0, 1e6, 1e-12).unwrap();
        let (kappa, z) = (4.0, -4.0);
        let ma = modulation(0.0, 0.01, kappa, 0.0);
        let mb = modulation(0.0, 0.01 * (-0.005f64).exp(), kappa, 0.0);
        let a = rescaled_from_profile(&prof, ma, 100.0, z);
        let b = rescaled_from_profile(&prof, mb, 100.0, z);
        let rates = RatePair {
            tau_dot: 0.0,
            kappa_dot: 0.0,
            xi_dot: z / 3.0 + kappa,
        };
        let clean = residual_check(&a, &b, rates, rates).unwrap();
        // Only the O(ds^2) midpoint error of the e^{s/2} forcing weight remains.
        assert!(clean.sup < 2e-6 * clean.scale, "{:?}", clean);
        let shift = |mut r: RescaledSnapshot| {
            r.modulation.kappa += 0.1;
            r
        };
        let bad = residual_check(&shift(a.clone()), &shift(b), rates, rates).unwrap();
        // Offset enters through the transport speed: 0.1 e^{3s/2} |W_y|, largest at y = 0.
        let expect = 0.1 * (1.5 * clean.s_mid).exp() * 2.0;
        assert!((bad.sup / expect - 1.0).abs() < 1e-6, "{} {}", bad.sup, expect);
        let far = rescaled_from_profile(&prof, modulation(0.0, 0.001, kappa, 0.0), 100.0, z);
        assert!(matches!(residual_check(&a, &far, rates, rates), Err(SelfsimError::CoarseSpacing(_))));
    }
}
