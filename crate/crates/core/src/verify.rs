//! Pointwise checks of the profile inequalities, of admissible initial data
//! and of the bootstrap bounds along a rescaled trajectory.
//!
//! Every check reports its worst margin (bound minus observed value, so
//! negative means violated) and where it occurred.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid1D;
use crate::pde::{energy, Fields, PhysState};
use crate::profile::ProfileTable;
use crate::selfsim::RescaledSnapshot;

/// Absolute slack granted at analytic equality points.
pub const TOL_EQ: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("quadrature on [{a}, {b}] did not reach tolerance")]
    Quadrature { a: f64, b: f64 },
}

/// Outcome of one inequality over its domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: String,
    pub domain: String,
    pub worst_margin: f64,
    /// `y` (or `x`) of the worst margin.
    pub worst_at: f64,
    /// Self-similar time of the worst margin, for trajectory checks.
    pub worst_s: Option<f64>,
    pub pass: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub title: String,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn new(title: &str) -> Self {
        VerifyReport {
            title: title.into(),
            checks: vec![],
        }
    }

    /// Adds a check; it passes when `worst_margin >= -TOL_EQ`.
    pub fn push(&mut self, id: &str, domain: &str, worst: Worst) -> &mut CheckResult {
        self.checks.push(CheckResult {
            id: id.into(),
            domain: domain.into(),
            worst_margin: worst.margin,
            worst_at: worst.at,
            worst_s: worst.s,
            pass: worst.margin >= -TOL_EQ,
            note: None,
        });
        self.checks.last_mut().expect("just pushed")
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, id: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.id == id)
    }

    /// Plain-text table, one row per check.
    pub fn summary_table(&self) -> String {
        let mut out = format!("{}\n", self.title);
        out += &format!("{:<22} {:>6} {:>14} {:>14}  {}\n", "check", "pass", "margin", "at", "domain");
        for c in &self.checks {
            out += &format!(
                "{:<22} {:>6} {:>14.6e} {:>14.6e}  {}{}\n",
                c.id,
                if c.pass { "yes" } else { "NO" },
                c.worst_margin,
                c.worst_at,
                c.domain,
                c.note.as_ref().map(|n| format!(" [{n}]")).unwrap_or_default()
            );
        }
        out
    }
}

/// Running minimum of a margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Worst {
    pub margin: f64,
    pub at: f64,
    pub s: Option<f64>,
}

impl Default for Worst {
    fn default() -> Self {
        Worst {
            margin: f64::INFINITY,
            at: f64::NAN,
            s: None,
        }
    }
}

impl Worst {
    pub fn of(margin: f64, at: f64) -> Self {
        Worst { margin, at, s: None }
    }

    pub fn offer(&mut self, margin: f64, at: f64) {
        // NaN margins count as violations.
        let m = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if m < self.margin {
            self.margin = m;
            self.at = at;
        }
    }

    fn merge(&mut self, other: Worst, s: f64) {
        if other.margin < self.margin {
            *self = Worst { s: Some(s), ..other };
        }
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64, VerifyError> {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Option<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol.max(1e-15 * (left + right).abs()) {
            return Some(left + right + delta / 15.0);
        }
        if depth == 0 {
            return None;
        }
        Some(rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)? + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48).ok_or(VerifyError::Quadrature { a, b })
}

/// Cumulative integrals `int_0^{y_i} f` on increasing nodes `y_i >= 0`,
/// computed in `t = u^{1/5}` so that `u^{2/5}` terms are smooth at 0.
fn cumulative_from_zero(f: &dyn Fn(f64) -> f64, y: &[f64], rel_tol: f64) -> Result<Vec<f64>, VerifyError> {
    let g = |t: f64| 5.0 * t.powi(4) * f(t.powi(5));
    let mut out = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &v in y {
        let tv = v.powf(0.2);
        let crude = (tv - prev) / 6.0 * (g(prev) + 4.0 * g(0.5 * (prev + tv)) + g(tv));
        acc += adaptive_simpson(&g, prev, tv, rel_tol * crude.abs())?;
        out.push(acc);
        prev = tv;
    }
    Ok(out)
}

/// `n_per_decade` log-spaced points on `[lo, hi]`.
pub fn log_points(lo: f64, hi: f64, n_per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = (decades * n_per_decade as f64).ceil() as usize;
    (0..=n).map(|i| lo * 10f64.powf(decades * i as f64 / n as f64)).collect()
}

/// `5/2 + W/y` with its limit `1/2` at the origin.
fn quotient_term(w: f64, y: f64) -> f64 {
    if y == 0.0 {
        0.5
    } else {
        2.5 + w / y
    }
}

/// Margin of `2 + W' - 6y^2/(5(1+y^2)) >= 0`.
pub fn margin_4_1(p: &ProfileTable, y: f64) -> f64 {
    let (_, wp, _) = p.eval(y);
    let r = y * y / (1.0 + y * y);
    2.0 + wp - 1.2 * r
}

/// Margin of `1 + W' + 2/(1+y^2)(5/2 + W/y) >= y^2/(5(1+y^2))`.
pub fn margin_num_2(p: &ProfileTable, y: f64) -> f64 {
    let (w, wp, _) = p.eval(y);
    let r = y * y / (1.0 + y * y);
    1.0 + wp + 2.0 / (1.0 + y * y) * quotient_term(w, y) - 0.2 * r
}

/// Margin of `7/2 + 2W' + (5/2 + W/y)/(1+y^2) >= 19y^2/(10(1+y^2))`.
pub fn margin_num_3(p: &ProfileTable, y: f64) -> f64 {
    let (w, wp, _) = p.eval(y);
    let r = y * y / (1.0 + y * y);
    3.5 + 2.0 * wp + quotient_term(w, y) / (1.0 + y * y) - 1.9 * r
}

/// Left side and `delta`-free right side of the `num_6` inequality.
pub fn num_6_sides(p: &ProfileTable, y: f64, integral: f64) -> (f64, f64) {
    let (w, wp, wpp) = p.eval(y);
    let y2 = y * y;
    let lhs = wpp.abs() * (y2 + 1.0) / y2 * integral;
    let rhs = 1.0 + wp + 2.0 / (y2 + 1.0) * quotient_term(w, y) - y2 / (500.0 * (1.0 + y2));
    (lhs, rhs)
}

/// Margin (right minus left) of `num_1-lem` at `|y|` given `I = int_0^{|y|} 1/(1+u^{2/5})`.
pub fn margin_num_1(p: &ProfileTable, y: f64, integral: f64) -> f64 {
    let a = y.abs();
    let (w, wp, wpp) = p.eval(a);
    let q = a.powf(0.4);
    let lhs = (q + 1.0) * wpp.abs() * integral;
    let rhs = 10.0 / (13.0 * (1.0 + q)) + wp - 2.0 * q / (5.0 * (1.0 + q)) * (w / a + 6.0 / (13.0 * a) * integral);
    rhs - lhs
}

/// Settings for [`check_profile_inequalities`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileCheckConfig {
    pub y_min: f64,
    pub y_max: f64,
    pub per_decade: usize,
    /// Lower end of the `num_1-lem` domain.
    pub m0: f64,
    /// Cap used for the two boundedness checks.
    pub bound_cap: f64,
}

impl Default for ProfileCheckConfig {
    fn default() -> Self {
        ProfileCheckConfig {
            y_min: 1e-6,
            y_max: 1e8,
            per_decade: 200,
            m0: 2e6,
            bound_cap: 2.0,
        }
    }
}

/// Evaluates the profile inequalities on `y in ±[y_min, y_max]` and at `y = 0`.
pub fn check_profile_inequalities(p: &ProfileTable, cfg: &ProfileCheckConfig) -> Result<VerifyReport, VerifyError> {
    let pos = log_points(cfg.y_min, cfg.y_max, cfg.per_decade);
    let ys: Vec<f64> = pos.iter().rev().map(|v| -v).chain([0.0]).chain(pos.iter().copied()).collect();
    let dom = format!("y in ±[{:e}, {:e}] and y = 0", cfg.y_min, cfg.y_max);
    let mut rep = VerifyReport::new("profile inequalities");

    for (id, f) in [
        ("4.1", margin_4_1 as fn(&ProfileTable, f64) -> f64),
        ("num_2", margin_num_2),
        ("num_3", margin_num_3),
    ] {
        let mut w = Worst::default();
        for &y in &ys {
            w.offer(f(p, y), y);
        }
        rep.push(id, &dom, w);
    }

    let mut w = Worst::default();
    let mut wb = Worst::default();
    let (mut sup_d1, mut sup_d2) = (Worst::default(), Worst::default());
    for &y in &ys {
        let (wv, wp, wpp) = p.eval(y);
        w.offer((wp + 2.0).min(-wp), y);
        wb.offer(2.0 * y.abs() - wv.abs(), y);
        sup_d1.offer(cfg.bound_cap - y.abs().powf(0.4) * wp.abs(), y);
        sup_d2.offer(cfg.bound_cap - y.abs() * (y.abs().powf(0.4) + 1.0) * wpp.abs(), y);
    }
    rep.push("4.0", &dom, w);
    rep.push("4.00", &dom, wb);
    let cap = format!("{dom}; bounded by C = {}", cfg.bound_cap);
    rep.push("4.0'", &cap, sup_d1);
    rep.push("4.0''", &cap, sup_d2);

    // num_6: smallest admissible delta is the largest ratio of the two sides.
    let sq = |u: f64| u * u / (1.0 + u * u);
    let i6 = cumulative_from_zero(&sq, &pos, 1e-12)?;
    let mut delta: f64 = 0.0;
    let mut delta_at = f64::NAN;
    let mut rhs_min = Worst::default();
    for (&y, &iy) in pos.iter().zip(&i6) {
        for yy in [y, -y] {
            let (lhs, rhs) = num_6_sides(p, yy, iy);
            rhs_min.offer(rhs, yy);
            if rhs > 0.0 && lhs / rhs > delta {
                delta = lhs / rhs;
                delta_at = yy;
            }
        }
    }
    let admissible = rhs_min.margin > 0.0 && delta > 0.0 && delta < 1.0;
    let c = rep.push("num_6", &dom, Worst::of(if admissible { 1.0 - delta } else { -1.0 }, delta_at));
    c.note = Some(format!("delta = {delta:.6}"));

    // num_1-lem on |y| >= m0 only.
    let far: Vec<f64> = pos.iter().copied().filter(|&y| y >= cfg.m0).collect();
    let w = margin_num_1_on(p, &far)?;
    rep.push("num_1-lem", &format!("|y| in [{:e}, {:e}]", cfg.m0, cfg.y_max), w);
    Ok(rep)
}

/// Worst `num_1-lem` margin over `±ys` (`ys` positive, increasing).
pub fn margin_num_1_on(p: &ProfileTable, ys: &[f64]) -> Result<Worst, VerifyError> {
    let f = |u: f64| 1.0 / (1.0 + u.powf(0.4));
    let ints = cumulative_from_zero(&f, ys, 1e-12)?;
    let mut w = Worst::default();
    for (&y, &iy) in ys.iter().zip(&ints) {
        // The inequality is even in y.
        w.offer(margin_num_1(p, y, iy), y);
        w.offer(margin_num_1(p, -y, iy), -y);
    }
    Ok(w)
}

/// Parameters of the initial-data and bootstrap checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub eps: f64,
    pub h_star: f64,
    /// `Theta` in `(50^{-1/5}, 6/13)`.
    pub theta_cap: f64,
    /// The large constant `M` of the bootstrap bounds.
    pub big_m: f64,
    /// Relative tolerance of the pointwise equalities at the origin.
    pub equality_tol: f64,
}

impl BoundParams {
    pub fn new(eps: f64, h_star: f64) -> Self {
        BoundParams {
            eps,
            h_star,
            theta_cap: 0.46,
            big_m: 1e8,
            equality_tol: 5e-3,
        }
    }

    /// `theta = (6/13 - Theta) / 3`.
    pub fn theta(&self) -> f64 {
        (6.0 / 13.0 - self.theta_cap) / 3.0
    }
}

fn sup_norm(v: &[f64]) -> (f64, usize) {
    v.iter()
        .enumerate()
        .fold((0.0, 0), |(m, k), (i, &x)| if x.abs() > m { (x.abs(), i) } else { (m, k) })
}

fn l2_norm(grid: &Grid1D, v: &[f64]) -> f64 {
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    grid.integrate(&sq).sqrt()
}

/// Checks the admissibility conditions on `(w0, z0)` (or `v0`).
pub fn validate_initial_data(state: &PhysState, profile: &ProfileTable, par: &BoundParams) -> VerifyReport {
    let mut rep = VerifyReport::new("initial data");
    let g = &state.grid;
    let eps = par.eps;
    let w = state.fields.primary();
    let d: Vec<Vec<f64>> = (0..4).scan(w.to_vec(), |f, _| {
        *f = g.d1(f);
        Some(f.clone())
    }).collect();
    let at0 = |f: &[f64]| g.interp(f, 0.0);

    if let Fields::Rsv { w, z } = &state.fields {
        let (m, i) = w.iter().zip(z).enumerate().fold((f64::INFINITY, 0), |(m, k), (i, (a, b))| {
            if a - b < m { (a - b, i) } else { (m, k) }
        });
        rep.push("init_h", "inf (w0 - z0) > 0", Worst::of(m, g.x[i]));
    }

    let targets = [(-2.0 / eps, "w0'(0) = -2/eps"), (0.0, "w0''(0) = 0"), (256.0 * eps.powi(-6), "w0'''(0) = 256 eps^-6")];
    let rel = format!(" (relative tolerance {:e})", par.equality_tol);
    let scales = [2.0 / eps, 256.0 * eps.powf(-3.5), 256.0 * eps.powi(-6)];
    for (k, ((target, label), scale)) in targets.iter().zip(scales).enumerate() {
        let err = (at0(&d[k]) - target).abs() / scale;
        let c = rep.push(&format!("init_w0[{}]", k + 1), &format!("{label}{rel}"), Worst::of(par.equality_tol - err, 0.0));
        c.note = Some(format!("relative error {err:.3e}"));
    }

    let (s1, i1) = sup_norm(&d[0]);
    rep.push("init_wbound.wx", "sup|w0'| <= 2/eps", Worst::of(2.0 / eps * (1.0 + par.equality_tol) - s1, g.x[i1]));
    let (s4, i4) = sup_norm(&d[3]);
    let c = rep.push("init_wbound.wxxxx", "sup|w0''''| <= eps^(-17/2)", Worst::of(eps.powf(-8.5) - s4, g.x[i4]));
    c.note = Some(format!("ratio {:.3e}", s4 / eps.powf(-8.5)));
    for (j, cj) in [(2usize, 1.0), (3, 65536.0), (4, 1.0)] {
        let bound = cj * eps.powf(-(10.0 * j as f64 - 11.0) / 4.0);
        let v = l2_norm(g, &d[j - 1]);
        let c = rep.push(&format!("init_wbound.L2[{j}]"), &format!("|d^{j} w0|_L2 <= C_{j} eps^(-(10j-11)/4)"), Worst::of(bound - v, f64::NAN));
        c.note = Some(format!("ratio {:.3e}", v / bound));
    }

    if let Fields::Rsv { z, .. } = &state.fields {
        let c0 = 2.0 * state.h_star.sqrt();
        let shifted: Vec<f64> = z.iter().map(|v| v + c0).collect();
        let (sz, iz) = sup_norm(&shifted);
        rep.push("init_wbound.z", "sup|z0 + 2 sqrt h*| <= 1", Worst::of(1.0 - sz, g.x[iz]));
        let dz: Vec<Vec<f64>> = (0..4).scan(z.to_vec(), |f, _| {
            *f = g.d1(f);
            Some(f.clone())
        }).collect();
        let (s, i) = sup_norm(&dz[0]);
        rep.push("init_wbound.zx", "sup|z0'| <= 1/sqrt h*", Worst::of(1.0 / state.h_star.sqrt() - s, g.x[i]));
        for (j, dj) in dz.iter().enumerate().skip(1) {
            let (s, i) = sup_norm(dj);
            rep.push(&format!("init_wbound.z[{}]", j + 1), "sup|d^j z0| <= 1", Worst::of(1.0 - s, g.x[i]));
        }
        let mut wz = Worst::default();
        for (i, &x) in g.x.iter().enumerate() {
            wz.offer(1.0 / state.h_star.sqrt() - (eps + x.abs().powf(0.4)) * dz[0][i].abs(), x);
        }
        rep.push("init_zx_weight", "(eps + |x|^(2/5))|z0'| <= 1/sqrt h*", wz);
    }

    let sc = eps.powf(2.5);
    // Differentiate the deviation from the profile rather than the data, so
    // truncation error does not swamp the y^2 weight near the origin.
    let dev: Vec<f64> = g.x.iter().zip(w).map(|(&x, &wv)| eps * wv - sc * profile.eval(x / sc).0).collect();
    let ddev = g.d1(&dev);
    let (mut inner, mut outer) = (Worst::default(), Worst::default());
    for (i, &x) in g.x.iter().enumerate() {
        let y = x / sc;
        let diff = ddev[i].abs();
        let r = y * y / (1.0 + y * y);
        let bound = (r / 3000.0).min(par.theta_cap / (1.0 + y.abs().powf(0.4)));
        if x.abs() <= 1.0 { &mut inner } else { &mut outer }.offer(bound - diff, x);
    }
    let dom = "|eps w0' - W'(x/eps^(5/2))| <= min(y^2/(3000(1+y^2)), Theta/(1+|y|^(2/5)))";
    rep.push("init_wx_weight", &format!("{dom}, |x| <= 1"), inner);
    rep.push("init_wx_weight.cutoff", &format!("{dom}, |x| > 1"), outer);

    let theta = par.theta();
    let tail = [0, g.n() - 1]
        .iter()
        .map(|&i| g.x[i].abs().powf(0.4) * d[0][i].abs())
        .fold(0.0f64, f64::max);
    rep.push("init_wx_dec", "|x|^(2/5)|w0'| at the domain ends <= theta/2", Worst::of(theta / 2.0 - tail, g.x[g.n() - 1]));
    let lo = 50f64.powf(-0.2);
    rep.push(
        "theta_range",
        "Theta in (50^(-1/5), 6/13)",
        Worst::of((par.theta_cap - lo).min(6.0 / 13.0 - par.theta_cap), par.theta_cap),
    );

    if state.h().is_some() {
        let e0 = energy(state);
        let c = rep.push("E0_bound", "E0 <= h*^3/6", Worst::of(state.h_star.powi(3) / 6.0 - e0, f64::NAN));
        c.note = Some(format!("E0 = {e0:.6}"));
    }
    rep
}

/// Whether a bound belongs to the assumed set or to the improved set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Assumption,
    Improved,
    /// Finite-trend only; no pass/fail.
    Trend,
}

/// Margin history of one bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSeries {
    pub id: String,
    pub kind: BoundKind,
    /// `(s, worst margin at s)`.
    pub samples: Vec<(f64, f64)>,
    pub first_violation: Option<f64>,
}

/// One monitored instant: rescaled fields plus `tau'` and gradient growth.
#[derive(Debug, Clone, Copy)]
pub struct MonitorSample<'a> {
    pub rsnap: &'a RescaledSnapshot,
    pub tau_dot: f64,
    /// `max(-w_x)` relative to its initial value.
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub report: VerifyReport,
    pub series: Vec<MarginSeries>,
    /// `s` values where fourth derivatives were treated as noise.
    pub noisy_fourth_derivative: Vec<f64>,
}

/// Growth beyond which `d^4 W / dy^4` from a run is considered noise.
pub const FOURTH_DERIVATIVE_GROWTH_LIMIT: f64 = 10.0;

fn bound_ids() -> Vec<(&'static str, BoundKind, &'static str)> {
    use BoundKind::*;
    vec![
        ("dottau", Assumption, "|tau'| <= 8 eps / sqrt h*"),
        ("lem_Zy", Assumption, "|Z_y| <= 5 e^(-5s/2) / sqrt h*"),
        ("Zy_dec", Assumption, "|Z_y| <= 10 e^(-3s/2) / (sqrt h* (1+|y|^(2/5)))"),
        ("Wy_bound", Assumption, "|W_y - W'| <= y^2/(1000(1+y^2))"),
        ("Wy_dec", Assumption, "|W_y - W'| <= 6/(13(1+|y|^(2/5)))"),
        ("Wyy_bound", Assumption, "|W_yy| <= M^(1/8)|y|/(1+y^2)^(1/2)"),
        ("Wy3_0", Assumption, "|W_yyy(0) - 256| <= 1"),
        ("Wy3_bound", Assumption, "|W_yyy| <= M^(3/4)"),
        ("Wy4_bound", Assumption, "|W_yyyy| <= M"),
        ("dottau_close", Improved, "|tau'| <= 7 e^(-s) / sqrt h*"),
        ("lem_Zy_close", Improved, "|Z_y| <= 4 e^(-5s/2) / sqrt h*"),
        ("Zyweight_close", Improved, "|Z_y| <= 8 e^(-3s/2) / (sqrt h* (1+|y|^(2/5)))"),
        ("Utildey_close", Improved, "|W_y - W'| <= y^2/(1500(1+y^2))"),
        ("Utildey_M-str", Improved, "|W_y - W'| <= (6/13 - theta)/(1+|y|^(2/5))"),
        ("Wy2_close", Improved, "|W_yy| <= M^(1/8)|y|/(2(1+y^2)^(1/2))"),
        ("Wy3_close", Improved, "|W_yyy| <= M^(3/4)/2"),
        ("Wy4_close", Improved, "|W_yyyy| <= M/2"),
        ("Qy_weighted", Trend, "e^(s/2) sup |y|^(4/5)|Q_y| (finite)"),
    ]
}

/// Per-`s` worst margins of every bound for one sample.
fn sample_margins(ms: &MonitorSample, profile: &ProfileTable, par: &BoundParams) -> Vec<Option<Worst>> {
    let r = ms.rsnap;
    let s = r.s;
    let sh = par.h_star.sqrt();
    let m = par.big_m;
    let theta = par.theta();
    let has_z = !r.z_y.is_empty();
    let noisy = ms.growth >= FOURTH_DERIVATIVE_GROWTH_LIMIT;
    let mut out = vec![];
    let pointwise = |f: &dyn Fn(usize, f64) -> f64| {
        let mut w = Worst::default();
        for (i, &y) in r.y.iter().enumerate() {
            w.offer(f(i, y), y);
        }
        Some(w)
    };
    let dev: Vec<f64> = r.y.iter().zip(&r.w_y).map(|(&y, wy)| (wy - profile.eval(y).1).abs()).collect();
    let r2 = |y: f64| y * y / (1.0 + y * y);
    let dec = |y: f64| 1.0 + y.abs().powf(0.4);
    let zsup = if has_z { sup_norm(&r.z_y) } else { (0.0, 0) };
    let zmax = |c: f64| {
        has_z.then(|| Worst::of(c * (-2.5 * s).exp() / sh - zsup.0, r.y[zsup.1]))
    };
    let zdec = |c: f64| {
        if has_z {
            pointwise(&|i, y| c * (-1.5 * s).exp() / (sh * dec(y)) - r.z_y[i].abs())
        } else {
            None
        }
    };
    let w3 = sup_norm(&r.w_yyy);
    let w4 = sup_norm(&r.w_yyyy);
    let w4m = |c: f64| (!noisy).then(|| Worst::of(c - w4.0, r.y[w4.1]));

    out.push(Some(Worst::of(8.0 * par.eps / sh - ms.tau_dot.abs(), 0.0)));
    out.push(zmax(5.0));
    out.push(zdec(10.0));
    out.push(pointwise(&|i, y| r2(y) / 1000.0 - dev[i]));
    out.push(pointwise(&|i, y| 6.0 / (13.0 * dec(y)) - dev[i]));
    out.push(pointwise(&|i, y| m.powf(0.125) * y.abs() / (1.0 + y * y).sqrt() - r.w_yy[i].abs()));
    out.push(Some(Worst::of(1.0 - (r.w3_origin - 256.0).abs(), 0.0)));
    out.push(Some(Worst::of(m.powf(0.75) - w3.0, r.y[w3.1])));
    out.push(w4m(m));
    out.push(Some(Worst::of(7.0 * (-s).exp() / sh - ms.tau_dot.abs(), 0.0)));
    out.push(zmax(4.0));
    out.push(zdec(8.0));
    out.push(pointwise(&|i, y| r2(y) / 1500.0 - dev[i]));
    out.push(pointwise(&|i, y| (6.0 / 13.0 - theta) / dec(y) - dev[i]));
    out.push(pointwise(&|i, y| 0.5 * m.powf(0.125) * y.abs() / (1.0 + y * y).sqrt() - r.w_yy[i].abs()));
    out.push(Some(Worst::of(0.5 * m.powf(0.75) - w3.0, r.y[w3.1])));
    out.push(w4m(0.5 * m));
    let mut q = Worst::default();
    for (&y, &qy) in r.y.iter().zip(&r.q_y) {
        q.offer(-(0.5 * s).exp() * y.abs().powf(0.8) * qy.abs(), y);
    }
    out.push(Some(q));
    out
}

/// Evaluates every bootstrap bound at every sample. Report-only: all margin
/// series are produced even when bounds fail.
pub fn monitor_bootstrap(samples: &[MonitorSample], profile: &ProfileTable, par: &BoundParams) -> BootstrapReport {
    let ids = bound_ids();
    let mut series: Vec<MarginSeries> = ids
        .iter()
        .map(|(id, kind, _)| MarginSeries {
            id: id.to_string(),
            kind: *kind,
            samples: vec![],
            first_violation: None,
        })
        .collect();
    let mut worst = vec![Worst::default(); ids.len()];
    let mut noisy = vec![];
    for ms in samples {
        let s = ms.rsnap.s;
        if ms.growth >= FOURTH_DERIVATIVE_GROWTH_LIMIT {
            noisy.push(s);
        }
        for (k, m) in sample_margins(ms, profile, par).into_iter().enumerate() {
            let Some(m) = m else { continue };
            series[k].samples.push((s, m.margin));
            if ids[k].1 != BoundKind::Trend && m.margin < -TOL_EQ && series[k].first_violation.is_none() {
                series[k].first_violation = Some(s);
            }
            worst[k].merge(m, s);
        }
    }
    let mut report = VerifyReport::new("bootstrap monitors");
    for (k, (id, kind, dom)) in ids.iter().enumerate() {
        if series[k].samples.is_empty() {
            continue;
        }
        match kind {
            BoundKind::Trend => {
                let sup = -worst[k].margin;
                let c = report.push(id, dom, Worst { margin: 0.0, ..worst[k] });
                c.pass = sup.is_finite();
                c.note = Some(format!("sup {sup:.3e}, trend only"));
            }
            _ => {
                let c = report.push(id, dom, worst[k]);
                c.note = Some(format!("{kind:?}").to_lowercase());
            }
        }
    }
    BootstrapReport {
        report,
        series,
        noisy_fourth_derivative: noisy,
    }
}
