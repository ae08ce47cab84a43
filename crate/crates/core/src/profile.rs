//! Self-similar Hunter–Saxton profiles.
//!
//! The profile `W` is the odd, decreasing solution of
//! `(1 + W'/2) W' + (W + 5y/2) W'' = 0` with `W(0) = 0`, `W'(0) = -2`,
//! `W'''(0) = 256 beta`. Along the solution the ODE reduces to the
//! autonomous first-order law `W'' = 2 sqrt(beta) (2 + W')^{1/2} (-W')^{7/2}`,
//! which is what gets integrated. Far from the origin the profile behaves like
//! `-(5/3) (50 beta)^{-1/5} y^{3/5}`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Geometric ratio between consecutive table nodes.
pub const NODE_RATIO: f64 = 1.05;
/// Relative tolerance defining the table/asymptotics switch point.
pub const SWITCH_TOL: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("integrator failed to converge at y = {y} (last error estimate {residual:e})")]
    NoConvergence { y: f64, residual: f64 },
    #[error("W' = {value} left [-2, 0] at y = {y}")]
    SlopeOutOfRange { y: f64, value: f64 },
    #[error("profile file: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile file: {0}")]
    Csv(#[from] csv::Error),
    #[error("profile file: {0}")]
    Format(String),
}

/// Tabulated profile for `y >= 0` with a leading-order far-field patch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileTable {
    pub beta: f64,
    pub rel_tol: f64,
    pub y_nodes: Vec<f64>,
    pub w_vals: Vec<f64>,
    pub wp_vals: Vec<f64>,
    pub wpp_vals: Vec<f64>,
    pub y_switch: f64,
    /// Coefficients of `-a0 y^{3/5}`, `-a1 y^{-2/5}`, `a2 y^{-7/5}`.
    pub asym_coeffs: [f64; 3],
    /// Largest relative mismatch between table and patch at `y_switch`.
    pub switch_mismatch: f64,
}

/// Far-field constants `(5/3)(50b)^{-1/5}`, `(50b)^{-1/5}`, `(2/5)(50b)^{-1/5}`.
pub fn asymptotic_coeffs(beta: f64) -> [f64; 3] {
    let c = (50.0 * beta).powf(-0.2);
    [5.0 / 3.0 * c, c, 0.4 * c]
}

/// Leading far-field values `(W, W', W'')` for `y > 0`.
pub fn asymptotic_eval(coeffs: &[f64; 3], y: f64) -> (f64, f64, f64) {
    (
        -coeffs[0] * y.powf(0.6),
        -coeffs[1] * y.powf(-0.4),
        coeffs[2] * y.powf(-1.4),
    )
}

/// Right-hand side of the reduced law `W'' = f(W')`.
pub fn reduced_rhs(beta: f64, p: f64) -> f64 {
    let a = (2.0 + p).max(0.0);
    let b = (-p).max(0.0);
    2.0 * beta.sqrt() * a.sqrt() * b.powi(3) * b.sqrt()
}

/// `W''' = f'(p) f(p) = 2 beta p^6 (-14 - 8p)`.
pub fn third_derivative(beta: f64, p: f64) -> f64 {
    2.0 * beta * p.powi(6) * (-14.0 - 8.0 * p)
}

/// Fourth derivative `(d/dp W''') f(p)`.
pub fn fourth_derivative(beta: f64, p: f64) -> f64 {
    2.0 * beta * (-84.0 * p.powi(5) - 56.0 * p.powi(6)) * reduced_rhs(beta, p)
}

/// Quintic Hermite interpolant on `[0, 1]` from value, slope and curvature
/// at both ends (`h` is the physical interval length).
fn quintic_hermite(t: f64, h: f64, a: [f64; 3], b: [f64; 3]) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let h00 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h10 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h20 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h01 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h11 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h21 = 0.5 * (t3 - 2.0 * t4 + t5);
    h00 * a[0] + h10 * h * a[1] + h20 * h * h * a[2] + h01 * b[0] + h11 * h * b[1] + h21 * h * h * b[2]
}

/// Odd Taylor coefficients of `W` at the origin: `y, y^3, ..., y^9`.
pub fn taylor_coeffs(beta: f64) -> [f64; 5] {
    [
        -2.0,
        128.0 * beta / 3.0,
        -57344.0 * beta.powi(2) / 15.0,
        21495808.0 * beta.powi(3) / 45.0,
        -28219277312.0 * beta.powi(4) / 405.0,
    ]
}

fn taylor_eval(beta: f64, y: f64) -> (f64, f64, f64) {
    let c = taylor_coeffs(beta);
    let (mut w, mut wp, mut wpp) = (0.0, 0.0, 0.0);
    for (k, &ck) in c.iter().enumerate() {
        let n = (2 * k + 1) as i32;
        w += ck * y.powi(n);
        wp += ck * n as f64 * y.powi(n - 1);
        if n >= 2 {
            wpp += ck * (n * (n - 1)) as f64 * y.powi(n - 2);
        }
    }
    (w, wp, wpp)
}

/// Dormand–Prince 5(4) tableau.
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `(W, p)' = (p, f(p))` from `y0` to `y1` adaptively.
fn integrate_interval(
    beta: f64,
    state: [f64; 2],
    y0: f64,
    y1: f64,
    h_guess: &mut f64,
    rtol: f64,
) -> Result<[f64; 2], ProfileError> {
    let rhs = |s: [f64; 2]| [s[1], reduced_rhs(beta, s[1])];
    let atol = rtol * 1e-6;
    let mut y = y0;
    let mut s = state;
    let mut h = h_guess.min(y1 - y0);
    let mut last_err = 0.0;
    for _ in 0..100_000 {
        if y >= y1 {
            return Ok(s);
        }
        let last = y + h >= y1;
        if last {
            h = y1 - y;
        }
        let mut k = [[0.0f64; 2]; 7];
        for i in 0..7 {
            let mut st = s;
            for (j, kj) in k.iter().enumerate().take(i) {
                let a = DP_A[i][j];
                if a != 0.0 {
                    st[0] += h * a * kj[0];
                    st[1] += h * a * kj[1];
                }
            }
            k[i] = rhs(st);
        }
        let mut s5 = s;
        let mut s4 = s;
        for i in 0..7 {
            s5[0] += h * DP_B5[i] * k[i][0];
            s5[1] += h * DP_B5[i] * k[i][1];
            s4[0] += h * DP_B4[i] * k[i][0];
            s4[1] += h * DP_B4[i] * k[i][1];
        }
        let mut err: f64 = 0.0;
        for c in 0..2 {
            let sc = atol + rtol * s[c].abs().max(s5[c].abs());
            err = err.max((s5[c] - s4[c]).abs() / sc);
        }
        last_err = err;
        let accepted = err <= 1.0;
        if accepted {
            y = if last { y1 } else { y + h };
            s = s5;
        }
        let fac = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= fac;
        if accepted && !last {
            *h_guess = h;
        }
        if h < 1e-14 * y.max(1e-300) {
            break;
        }
    }
    Err(ProfileError::NoConvergence {
        y,
        residual: last_err,
    })
}

impl ProfileTable {
    /// Evaluates `(W, W', W'')` at any finite `y` (odd extension).
    pub fn eval(&self, y: f64) -> (f64, f64, f64) {
        let a = y.abs();
        let sg = if y < 0.0 { -1.0 } else { 1.0 };
        let (w, wp, wpp) = if a > self.y_switch {
            asymptotic_eval(&self.asym_coeffs, a)
        } else {
            self.eval_table(a)
        };
        (sg * w, wp, sg * wpp)
    }

    /// Table interpolation for `0 <= y <= y_max`, ignoring the far-field patch.
    pub fn eval_table(&self, y: f64) -> (f64, f64, f64) {
        let n = self.y_nodes.len();
        let y = y.clamp(0.0, self.y_nodes[n - 1]);
        if y <= self.y_nodes[1] {
            return taylor_eval(self.beta, y);
        }
        let i = match self
            .y_nodes
            .binary_search_by(|v| v.partial_cmp(&y).expect("finite nodes"))
        {
            Ok(i) => return (self.w_vals[i], self.wp_vals[i], self.wpp_vals[i]),
            Err(i) => i - 1,
        };
        let (y0, y1) = (self.y_nodes[i], self.y_nodes[i + 1]);
        let h = y1 - y0;
        let t = (y - y0) / h;
        let (p0, p1) = (self.wp_vals[i], self.wp_vals[i + 1]);
        let (d3a, d3b) = (third_derivative(self.beta, p0), third_derivative(self.beta, p1));
        let (d4a, d4b) = (
            fourth_derivative(self.beta, p0),
            fourth_derivative(self.beta, p1),
        );
        let w = quintic_hermite(
            t,
            h,
            [self.w_vals[i], p0, self.wpp_vals[i]],
            [self.w_vals[i + 1], p1, self.wpp_vals[i + 1]],
        );
        let wp = quintic_hermite(t, h, [p0, self.wpp_vals[i], d3a], [p1, self.wpp_vals[i + 1], d3b]);
        let wpp = quintic_hermite(
            t,
            h,
            [self.wpp_vals[i], d3a, d4a],
            [self.wpp_vals[i + 1], d3b, d4b],
        );
        (w, wp, wpp)
    }

    /// `W'''` from the reduced law, with the odd-extension sign.
    pub fn eval_third(&self, y: f64) -> f64 {
        let (_, wp, _) = self.eval(y);
        third_derivative(self.beta, wp)
    }

    pub fn y_max(&self) -> f64 {
        *self.y_nodes.last().expect("non-empty table")
    }

    /// Writes the table as CSV with `#` header lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), ProfileError> {
        writeln!(out, "# beta={:e}", self.beta)?;
        writeln!(out, "# rel_tol={:e}", self.rel_tol)?;
        writeln!(out, "# y_switch={:e}", self.y_switch)?;
        writeln!(out, "# switch_mismatch={:e}", self.switch_mismatch)?;
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["y", "W", "Wp", "Wpp"])?;
        for i in 0..self.y_nodes.len() {
            wtr.write_record(&[
                format!("{:e}", self.y_nodes[i]),
                format!("{:e}", self.w_vals[i]),
                format!("{:e}", self.wp_vals[i]),
                format!("{:e}", self.wpp_vals[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), ProfileError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads a table written by [`ProfileTable::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, ProfileError> {
        let mut header = std::collections::HashMap::new();
        let mut body = String::new();
        for line in input.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    let v: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| ProfileError::Format(format!("bad header value {v}")))?;
                    header.insert(k.trim().to_string(), v);
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let get = |k: &str| {
            header
                .get(k)
                .copied()
                .ok_or_else(|| ProfileError::Format(format!("missing header {k}")))
        };
        let beta = get("beta")?;
        let mut t = ProfileTable {
            beta,
            rel_tol: get("rel_tol")?,
            y_nodes: vec![],
            w_vals: vec![],
            wp_vals: vec![],
            wpp_vals: vec![],
            y_switch: get("y_switch")?,
            asym_coeffs: asymptotic_coeffs(beta),
            switch_mismatch: header.get("switch_mismatch").copied().unwrap_or(0.0),
        };
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        for rec in rdr.records() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ProfileError::Format(e.to_string()))?;
            if v.len() != 4 {
                return Err(ProfileError::Format("expected 4 columns".into()));
            }
            t.y_nodes.push(v[0]);
            t.w_vals.push(v[1]);
            t.wp_vals.push(v[2]);
            t.wpp_vals.push(v[3]);
        }
        if t.y_nodes.len() < 3 {
            return Err(ProfileError::Format("table too short".into()));
        }
        Ok(t)
    }

    pub fn load_csv(path: &Path) -> Result<Self, ProfileError> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Unit-scale node grid: `0`, then geometric from `y0` past `y_max`.
fn unit_nodes(y0: f64, y_max: f64) -> Vec<f64> {
    let mut v = vec![0.0, y0];
    let mut y = y0;
    while y < y_max {
        y *= NODE_RATIO;
        v.push(y.min(y_max));
    }
    v
}

/// Starting abscissa for `beta = 1`; nodes for other `beta` are scaled by `beta^{-1/2}`.
fn unit_start(rel_tol: f64) -> f64 {
    rel_tol.cbrt().min(0.004)
}

/// Integrates the profile ODE for the given `beta` and tabulates it on `[0, y_max]`.
pub fn solve_profile(beta: f64, y_max: f64, rel_tol: f64) -> Result<ProfileTable, ProfileError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(ProfileError::InvalidParameter(format!("beta = {beta} must be positive")));
    }
    if !(y_max >= 10.0 && y_max.is_finite()) {
        return Err(ProfileError::InvalidParameter(format!("y_max = {y_max} must be >= 10")));
    }
    if !(rel_tol > 1e-14 && rel_tol < 1e-4) {
        return Err(ProfileError::InvalidParameter(format!(
            "rel_tol = {rel_tol} outside (1e-14, 1e-4)"
        )));
    }
    let lambda = beta.powf(-0.5);
    let nodes: Vec<f64> = unit_nodes(unit_start(rel_tol), y_max / lambda)
        .into_iter()
        .map(|y| y * lambda)
        .collect();
    let n = nodes.len();
    let mut w = vec![0.0; n];
    let mut wp = vec![-2.0; n];
    let mut wpp = vec![0.0; n];
    let (w1, p1, _) = taylor_eval(beta, nodes[1]);
    w[1] = w1;
    wp[1] = p1;
    wpp[1] = reduced_rhs(beta, p1);
    let mut state = [w1, p1];
    let rtol = (rel_tol * 1e-2).max(1e-15);
    let mut h = nodes[1] * 0.1;
    for i in 2..n {
        state = integrate_interval(beta, state, nodes[i - 1], nodes[i], &mut h, rtol)?;
        if state[1] < -2.0 - rel_tol || state[1] > rel_tol {
            return Err(ProfileError::SlopeOutOfRange {
                y: nodes[i],
                value: state[1],
            });
        }
        w[i] = state[0];
        wp[i] = state[1];
        wpp[i] = reduced_rhs(beta, state[1]);
    }
    let coeffs = asymptotic_coeffs(beta);
    let mismatch = |i: usize| {
        let (aw, ap, app) = asymptotic_eval(&coeffs, nodes[i]);
        ((w[i] - aw) / aw)
            .abs()
            .max(((wp[i] - ap) / ap).abs())
            .max(((wpp[i] - app) / app).abs())
    };
    let mut switch = n - 1;
    for i in 2..n {
        if mismatch(i) <= SWITCH_TOL {
            switch = i;
            break;
        }
    }
    Ok(ProfileTable {
        beta,
        rel_tol,
        y_switch: nodes[switch],
        switch_mismatch: mismatch(switch),
        y_nodes: nodes,
        w_vals: w,
        wp_vals: wp,
        wpp_vals: wpp,
        asym_coeffs: coeffs,
    })
}

/// Free-function form of [`ProfileTable::eval`].
pub fn profile_eval(table: &ProfileTable, y: f64) -> (f64, f64, f64) {
    table.eval(y)
}

/// Builds `W_b(y) = l W_1(y / l)`, `l = b^{-1/2}`, from a unit table.
pub fn rescale_profile(table_unit: &ProfileTable, beta: f64) -> Result<ProfileTable, ProfileError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(ProfileError::InvalidParameter(format!("beta = {beta} must be positive")));
    }
    if (table_unit.beta - 1.0).abs() > 1e-14 {
        return Err(ProfileError::InvalidParameter(
            "rescaling requires a beta = 1 table".into(),
        ));
    }
    let l = beta.powf(-0.5);
    Ok(ProfileTable {
        beta,
        rel_tol: table_unit.rel_tol,
        y_nodes: table_unit.y_nodes.iter().map(|y| l * y).collect(),
        w_vals: table_unit.w_vals.iter().map(|w| l * w).collect(),
        wp_vals: table_unit.wp_vals.clone(),
        wpp_vals: table_unit.wpp_vals.iter().map(|v| v / l).collect(),
        y_switch: l * table_unit.y_switch,
        asym_coeffs: asymptotic_coeffs(beta),
        switch_mismatch: table_unit.switch_mismatch,
    })
}

/// Node-wise residuals of the second-order ODE and of the reduced law.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ProfileResidual {
    /// `sup |(1 + W'/2) W' + (W + 5y/2) W''|`.
    pub weq: f64,
    pub weq_at: f64,
    /// `sup |W'' - f(W')| / (1 + |W''|)`.
    pub reduced: f64,
    pub reduced_at: f64,
}

impl ProfileResidual {
    pub fn max(&self) -> f64 {
        self.weq.max(self.reduced)
    }
}

/// Residuals over the nodes with `y <= y_limit`.
pub fn profile_residual_upto(table: &ProfileTable, y_limit: f64) -> ProfileResidual {
    let mut r = ProfileResidual {
        weq: 0.0,
        weq_at: 0.0,
        reduced: 0.0,
        reduced_at: 0.0,
    };
    for i in 0..table.y_nodes.len() {
        let y = table.y_nodes[i];
        if y > y_limit {
            break;
        }
        let (w, p, pp) = (table.w_vals[i], table.wp_vals[i], table.wpp_vals[i]);
        let e = ((1.0 + 0.5 * p) * p + (w + 2.5 * y) * pp).abs();
        if e > r.weq {
            r.weq = e;
            r.weq_at = y;
        }
        let d = (pp - reduced_rhs(table.beta, p)).abs() / (1.0 + pp.abs());
        if d > r.reduced {
            r.reduced = d;
            r.reduced_at = y;
        }
    }
    r
}

/// Residuals over all table nodes.
pub fn profile_residual(table: &ProfileTable) -> ProfileResidual {
    profile_residual_upto(table, f64::INFINITY)
}

/// Structural defects of a table that residuals alone cannot see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TableDefect {
    OriginData { w: f64, wp: f64, wpp: f64 },
    SlopeRange { y: f64, wp: f64 },
    NegativeCurvature { y: f64, wpp: f64 },
    NotStrictlyIncreasing { y: f64 },
    FarFieldMismatch { y: f64, rel_err: f64 },
}

/// Checks origin data, `W'` range and monotonicity, and far-field decay.
pub fn table_defects(table: &ProfileTable) -> Vec<TableDefect> {
    let mut out = vec![];
    let tol = table.rel_tol.max(1e-14);
    if table.w_vals[0].abs() > tol || (table.wp_vals[0] + 2.0).abs() > tol || table.wpp_vals[0].abs() > tol
    {
        out.push(TableDefect::OriginData {
            w: table.w_vals[0],
            wp: table.wp_vals[0],
            wpp: table.wpp_vals[0],
        });
    }
    for i in 0..table.y_nodes.len() {
        let (y, p, pp) = (table.y_nodes[i], table.wp_vals[i], table.wpp_vals[i]);
        if !(-2.0 - tol..=tol).contains(&p) {
            out.push(TableDefect::SlopeRange { y, wp: p });
        }
        if pp < -tol {
            out.push(TableDefect::NegativeCurvature { y, wpp: pp });
        }
        if i > 0 && p <= table.wp_vals[i - 1] {
            out.push(TableDefect::NotStrictlyIncreasing { y });
        }
    }
    let last = table.y_nodes.len() - 1;
    let y = table.y_nodes[last];
    let (_, ap, _) = asymptotic_eval(&table.asym_coeffs, y);
    let rel_err = ((table.wp_vals[last] - ap) / ap).abs();
    if rel_err > 0.5 {
        out.push(TableDefect::FarFieldMismatch { y, rel_err });
    }
    out
}
