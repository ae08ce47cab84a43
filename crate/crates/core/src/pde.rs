//! Time integration of the regularized Saint-Venant system in Riemann
//! variables and of the regularized Burgers equation.
//!
//! rSV (time already rescaled by 3/4):
//! `w_t + (w + z/3) w_x = (8/3)(G - q)`, `z_t + (z + w/3) z_x = (8/3)(G - q)`.
//! rB: `v_t + v v_x = -p_x`, `p - p_xx = v_x^2 / 2`.
//!
//! Fields live on the nodes of a [`Grid1D`]. In tracking mode the grid is a
//! sinh map centred on the modulation point `xi(t)` whose centre spacing
//! follows `(tau - t)^{5/2}`; fields are then advanced at fixed computational
//! coordinate, which adds the mesh velocity to every transport speed. The
//! modulation ODEs for `(tau, kappa, xi)` are integrated with the same RK4
//! stages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid1D, GridError, IndexTransfer, MapSample, SinhMap};
use crate::nonlocal::{self, NonlocalError};
use crate::profile::ProfileTable;
use crate::selfsim::{self, CentreJet, CentreProbe, ModulationRates, ModulationState};
pub use crate::verify::validate_initial_data;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Nonlocal(#[from] NonlocalError),
    #[error("depth lost positivity (min w - z = {min_gap:e}) at t = {t}")]
    DepthLoss { t: f64, min_gap: f64 },
    #[error("grid too coarse: centre spacing {spacing:e} exceeds eps^(5/2)/32 = {limit:e}")]
    Unresolved { spacing: f64, limit: f64 },
    #[error("profile must be the beta = 1 table, got beta = {0}")]
    ProfileBeta(f64),
    #[error("non-finite field value at t = {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Rsv,
    Rb,
}

/// Spatial mesh strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshMode {
    /// Fixed uniform grid on `[-L, L]`.
    Uniform,
    /// Sinh map centred on `xi` with centre spacing `resolution * (tau - t)^{5/2}`.
    Tracking { resolution: f64 },
}

/// How the modulation ODEs are closed inside the integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationLaw {
    /// Closed-form rates from the centre probe.
    ClosedForm,
    /// Exact constraint derivatives with residual relaxation at rate `relax` in `s`.
    Constrained { relax: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: Model,
    pub eps: f64,
    pub h_star: f64,
    /// Half-width of the computational domain.
    pub l: f64,
    pub n: usize,
    pub cfl: f64,
    pub stop_growth_factor: f64,
    pub dt_floor: f64,
    /// Snapshot whenever the gradient growth passes the next power of this ratio.
    pub snapshot_growth_ratio: f64,
    /// Additional snapshot spacing in time.
    pub snapshot_dt: f64,
    /// Final time when no blow-up occurs.
    pub t_max: f64,
    pub mesh: MeshMode,
    /// Scalar diagnostics are recorded every this many steps.
    pub record_every: usize,
    /// Weight constant in the initial weighted-slope condition.
    pub theta_cap: f64,
    /// Relative energy drift that aborts a run before 10x growth.
    pub drift_abort: f64,
    /// rSV: `z` is held on every this many computational cells of the `w` map.
    pub secondary_stride: usize,
    pub modulation_law: ModulationLaw,
}

impl SimConfig {
    pub fn new(model: Model) -> Self {
        SimConfig {
            model,
            eps: 0.3,
            h_star: 4.0,
            l: 4.0,
            n: 8192,
            cfl: 0.9,
            stop_growth_factor: 20.0,
            dt_floor: 1e-14,
            snapshot_growth_ratio: 1.05,
            snapshot_dt: 0.015,
            t_max: 1.0,
            mesh: MeshMode::Tracking { resolution: 0.01 },
            record_every: 10,
            theta_cap: 0.46,
            drift_abort: 1e-3,
            secondary_stride: 8,
            modulation_law: ModulationLaw::Constrained { relax: 1.0 },
        }
    }

    /// Node count of the `z` sampling.
    pub fn secondary_nodes(&self) -> usize {
        (self.n - 1) / self.secondary_stride.max(1) + 1
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        let bad = |m: String| Err(PdeError::Config(m));
        if !(self.eps > 0.0 && self.eps <= 0.5) {
            return bad(format!("eps = {} outside (0, 0.5]", self.eps));
        }
        if !(self.h_star > 0.0 && self.h_star.is_finite()) {
            return bad(format!("h_star = {} must be positive", self.h_star));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return bad(format!("cfl = {} outside (0, 1)", self.cfl));
        }
        if !(self.l > 2.0) {
            return bad(format!("half-width L = {} must exceed the support radius 2", self.l));
        }
        if self.n < 16 {
            return bad(format!("n = {} too small", self.n));
        }
        if !(self.stop_growth_factor > 1.0) {
            return bad("stop growth factor must exceed 1".into());
        }
        if !(self.snapshot_growth_ratio > 1.0) {
            return bad("snapshot growth ratio must exceed 1".into());
        }
        if let MeshMode::Tracking { resolution } = self.mesh {
            if !(resolution > 0.0) {
                return bad("tracking resolution must be positive".into());
            }
        }
        if self.secondary_stride == 0 || self.secondary_nodes() < 64 {
            return bad(format!("secondary stride {} leaves too few nodes", self.secondary_stride));
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        Ok(())
    }
}

/// Field variables of either model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fields {
    Rsv { w: Vec<f64>, z: Vec<f64> },
    Rb { v: Vec<f64> },
}

impl Fields {
    pub fn model(&self) -> Model {
        match self {
            Fields::Rsv { .. } => Model::Rsv,
            Fields::Rb { .. } => Model::Rb,
        }
    }

    /// The steepening field (`w` or `v`).
    pub fn primary(&self) -> &[f64] {
        match self {
            Fields::Rsv { w, .. } => w,
            Fields::Rb { v } => v,
        }
    }

    pub fn secondary(&self) -> Option<&[f64]> {
        match self {
            Fields::Rsv { z, .. } => Some(z),
            Fields::Rb { .. } => None,
        }
    }

    fn components(&self) -> Vec<&Vec<f64>> {
        match self {
            Fields::Rsv { w, z } => vec![w, z],
            Fields::Rb { v } => vec![v],
        }
    }

    fn from_components(model: Model, mut c: Vec<Vec<f64>>) -> Self {
        match model {
            Model::Rsv => {
                let z = c.pop().expect("two components");
                let w = c.pop().expect("two components");
                Fields::Rsv { w, z }
            }
            Model::Rb => Fields::Rb {
                v: c.pop().expect("one component"),
            },
        }
    }

    /// `self + a * d`.
    fn axpy(&self, a: f64, d: &Fields) -> Fields {
        let c = self
            .components()
            .iter()
            .zip(d.components())
            .map(|(x, y)| x.iter().zip(y).map(|(x, y)| x + a * y).collect())
            .collect();
        Fields::from_components(self.model(), c)
    }

    fn is_finite(&self) -> bool {
        self.components().iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// Physical state on its grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhysState {
    pub grid: Grid1D,
    /// Present in tracking mode.
    pub map: Option<SinhMap>,
    pub fields: Fields,
    pub t: f64,
    pub h_star: f64,
    pub eps: f64,
}

impl PhysState {
    pub fn model(&self) -> Model {
        self.fields.model()
    }

    /// Depth `h = (w - z)^2 / 16` (rSV only).
    pub fn h(&self) -> Option<Vec<f64>> {
        match &self.fields {
            Fields::Rsv { w, z } => Some(w.iter().zip(z).map(|(w, z)| (w - z).powi(2) / 16.0).collect()),
            Fields::Rb { .. } => None,
        }
    }

    /// Velocity `u = (w + z) / 2` (rSV), or `v` itself (rB).
    pub fn u(&self) -> Vec<f64> {
        match &self.fields {
            Fields::Rsv { w, z } => w.iter().zip(z).map(|(w, z)| 0.5 * (w + z)).collect(),
            Fields::Rb { v } => v.clone(),
        }
    }
}

/// `(h, u) -> (w, z) = (u + 2 sqrt h, u - 2 sqrt h)`.
pub fn riemann_convert(h: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>), PdeError> {
    if let Some(i) = h.iter().position(|&v| !(v > 0.0)) {
        return Err(PdeError::Nonlocal(NonlocalError::NonPositiveDepth {
            x: i as f64,
            value: h[i],
        }));
    }
    let w = h.iter().zip(u).map(|(h, u)| u + 2.0 * h.sqrt()).collect();
    let z = h.iter().zip(u).map(|(h, u)| u - 2.0 * h.sqrt()).collect();
    Ok((w, z))
}

/// `(w, z) -> (h, u) = ((w - z)^2 / 16, (w + z) / 2)`, requires `w > z`.
pub fn riemann_invert(w: &[f64], z: &[f64]) -> Result<(Vec<f64>, Vec<f64>), PdeError> {
    if let Some(i) = w.iter().zip(z).position(|(w, z)| !(w > z)) {
        return Err(PdeError::Nonlocal(NonlocalError::NonPositiveDepth {
            x: i as f64,
            value: (w[i] - z[i]).powi(2) / 16.0,
        }));
    }
    let h = w.iter().zip(z).map(|(w, z)| (w - z).powi(2) / 16.0).collect();
    let u = w.iter().zip(z).map(|(w, z)| 0.5 * (w + z)).collect();
    Ok((h, u))
}

/// `C^4` even cutoff: 1 on `|x| <= 1`, 0 on `|x| >= 2`.
pub fn cutoff(x: f64) -> f64 {
    let t = x.abs() - 1.0;
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let s = t.powi(5) * (126.0 - 420.0 * t + 540.0 * t * t - 315.0 * t.powi(3) + 70.0 * t.powi(4));
        1.0 - s
    }
}

/// Centre spacing requested from the tracking grid at blow-up distance `gap`,
/// with `d ln(spacing) / d ln(resolution * gap^{5/2})`.
///
/// The request `T = resolution * gap^{5/2}` is blended harmonically with the
/// uniform spacing `U`, `T U / (T + U)`, so the stretching stays positive and
/// varies smoothly even while `T` exceeds `U`.
pub fn tracking_spacing(cfg: &SimConfig, gap: f64) -> (f64, f64) {
    match cfg.mesh {
        MeshMode::Uniform => (2.0 * cfg.l / (cfg.n as f64 - 1.0), 0.0),
        MeshMode::Tracking { resolution } => {
            let t = resolution * gap.max(0.0).powf(2.5);
            let u = 2.0 * cfg.l / (cfg.n as f64 - 1.0);
            (t * u / (t + u), u / (t + u))
        }
    }
}

/// Stretching parameter for the tracking grid at blow-up distance `gap = tau - t`.
pub fn tracking_k(cfg: &SimConfig, gap: f64) -> f64 {
    match cfg.mesh {
        MeshMode::Uniform => 0.0,
        MeshMode::Tracking { .. } => SinhMap::k_for_spacing(cfg.l, cfg.n, tracking_spacing(cfg, gap).0),
    }
}

/// Grid (and map) for modulation centre `xi` and blow-up distance `gap`.
pub fn build_grid(cfg: &SimConfig, xi: f64, gap: f64) -> Result<(Grid1D, Option<SinhMap>), PdeError> {
    match cfg.mesh {
        MeshMode::Uniform => Ok((Grid1D::uniform(-cfg.l, cfg.l, cfg.n)?, None)),
        MeshMode::Tracking { .. } => {
            let map = SinhMap {
                centre: xi,
                half_width: cfg.l,
                k: tracking_k(cfg, gap),
            };
            Ok((Grid1D::stretched(&map, cfg.n)?, Some(map)))
        }
    }
}

/// Builds the default profile-based data at `t = -eps`.
///
/// rSV: `w0 = 2 sqrt(h*) + eps^{3/2} chi(x) W(x / eps^{5/2})`, `z0 = -2 sqrt(h*)`;
/// rB: `v0 = eps^{3/2} chi(x) W(x / eps^{5/2})`. The amplitude `eps^{3/2}` gives
/// `w0'(0) = -2/eps` and `w0'''(0) = 256 eps^{-6}`.
pub fn make_initial_data(cfg: &SimConfig, profile: &ProfileTable) -> Result<PhysState, PdeError> {
    make_initial_data_with(cfg, profile, None)
}

/// As [`make_initial_data`], adding an optional perturbation to `z0` (rSV).
pub fn make_initial_data_with(
    cfg: &SimConfig,
    profile: &ProfileTable,
    z_perturbation: Option<&dyn Fn(f64) -> f64>,
) -> Result<PhysState, PdeError> {
    cfg.validate()?;
    if (profile.beta - 1.0).abs() > 1e-12 {
        return Err(PdeError::ProfileBeta(profile.beta));
    }
    let eps = cfg.eps;
    let (grid, map) = build_grid(cfg, 0.0, eps)?;
    let limit = eps.powf(2.5) / 32.0;
    let j = grid.nearest(0.0);
    let spacing = (grid.x[j + 1] - grid.x[j]).max(grid.x[j] - grid.x[j - 1]);
    if spacing > limit {
        return Err(PdeError::Unresolved { spacing, limit });
    }
    let amp = eps.powf(1.5);
    let scale = eps.powf(2.5);
    let bump: Vec<f64> = grid
        .x
        .iter()
        .map(|&x| {
            let c = cutoff(x);
            if c == 0.0 {
                0.0
            } else {
                amp * c * profile.eval(x / scale).0
            }
        })
        .collect();
    let fields = match cfg.model {
        Model::Rsv => {
            let c = 2.0 * cfg.h_star.sqrt();
            let w = bump.iter().map(|b| c + b).collect();
            let z = grid
                .x
                .iter()
                .map(|&x| -c + z_perturbation.map_or(0.0, |f| f(x)))
                .collect();
            Fields::Rsv { w, z }
        }
        Model::Rb => Fields::Rb { v: bump },
    };
    Ok(PhysState {
        grid,
        map,
        fields,
        t: -eps,
        h_star: cfg.h_star,
        eps,
    })
}

/// Energy: rSV `int h u^2/2 + (h - h*)^2/2 + h^3 (u_x^2 + h_x^2/h)/2`, rB `int v^2 + v_x^2`.
pub fn energy(state: &PhysState) -> f64 {
    let g = &state.grid;
    match &state.fields {
        Fields::Rsv { w, z } => {
            let wx = g.d1(w);
            let zx = g.d1(z);
            let e: Vec<f64> = (0..w.len())
                .map(|i| {
                    let h = (w[i] - z[i]).powi(2) / 16.0;
                    let u = 0.5 * (w[i] + z[i]);
                    let ux = 0.5 * (wx[i] + zx[i]);
                    let hx = (w[i] - z[i]) * (wx[i] - zx[i]) / 8.0;
                    0.5 * h * u * u
                        + 0.5 * (h - state.h_star).powi(2)
                        + 0.5 * h.powi(3) * (ux * ux + hx * hx / h)
                })
                .collect();
            g.integrate(&e)
        }
        Fields::Rb { v } => {
            let vx = g.d1(v);
            let e: Vec<f64> = v.iter().zip(&vx).map(|(v, d)| v * v + d * d).collect();
            g.integrate(&e)
        }
    }
}

/// rSV tendencies at fixed `x` together with the intermediate fields.
#[derive(Debug, Clone)]
pub struct RsvTerms {
    pub wt: Vec<f64>,
    pub zt: Vec<f64>,
    pub wx: Vec<f64>,
    pub zx: Vec<f64>,
    pub g: Vec<f64>,
    pub q: Vec<f64>,
}

pub fn rsv_terms(grid: &Grid1D, w: &[f64], z: &[f64]) -> Result<RsvTerms, PdeError> {
    let n = w.len();
    let wx = grid.d1(w);
    let zx = grid.d1(z);
    let (g, q) = rsv_nonlocal(grid, w, &wx, z, &zx)?;
    let mut wt = vec![0.0; n];
    let mut zt = vec![0.0; n];
    for i in 0..n {
        let f = 8.0 / 3.0 * (g[i] - q[i]);
        wt[i] = -(w[i] + z[i] / 3.0) * wx[i] + f;
        zt[i] = -(z[i] + w[i] / 3.0) * zx[i] + f;
    }
    Ok(RsvTerms { wt, zt, wx, zx, g, q })
}

/// `G` and `q` from nodal `w, z` and their derivatives.
fn rsv_nonlocal(grid: &Grid1D, w: &[f64], wx: &[f64], z: &[f64], zx: &[f64]) -> Result<(Vec<f64>, Vec<f64>), PdeError> {
    let n = w.len();
    let mut h = vec![0.0; n];
    for i in 0..n {
        let gap = w[i] - z[i];
        if !(gap > 0.0) {
            return Err(PdeError::DepthLoss {
                t: f64::NAN,
                min_gap: gap,
            });
        }
        h[i] = gap * gap / 16.0;
    }
    let integrand: Vec<f64> = (0..n)
        .map(|i| (3.0 * wx[i] + zx[i]) * (wx[i] + 3.0 * zx[i]) / 16.0)
        .collect();
    let g = grid.cumulative4(&integrand);
    let q = nonlocal::invert_ih4(&h, &g, grid)?;
    Ok((g, q))
}

/// `(w_t, z_t)` at fixed `x`.
pub fn rhs_rsv(state: &PhysState) -> Result<(Vec<f64>, Vec<f64>), PdeError> {
    match &state.fields {
        Fields::Rsv { w, z } => {
            let t = rsv_terms(&state.grid, w, z)?;
            Ok((t.wt, t.zt))
        }
        Fields::Rb { .. } => Err(PdeError::Config("rhs_rsv called on rB state".into())),
    }
}

/// rB tendency at fixed `x` together with the intermediate fields.
#[derive(Debug, Clone)]
pub struct RbTerms {
    pub vt: Vec<f64>,
    pub vx: Vec<f64>,
    pub p: Vec<f64>,
    pub px: Vec<f64>,
}

pub fn rb_terms(grid: &Grid1D, v: &[f64]) -> Result<RbTerms, PdeError> {
    let vx = grid.d1(v);
    let rhs: Vec<f64> = vx.iter().map(|d| 0.5 * d * d).collect();
    let p = nonlocal::helmholtz_solve4(&rhs, grid)?;
    let px = grid.d1(&p);
    let vt = (0..v.len()).map(|i| -v[i] * vx[i] - px[i]).collect();
    Ok(RbTerms { vt, vx, p, px })
}

/// `v_t` at fixed `x`.
pub fn rhs_rb(state: &PhysState) -> Result<Vec<f64>, PdeError> {
    match &state.fields {
        Fields::Rb { v } => Ok(rb_terms(&state.grid, v)?.vt),
        Fields::Rsv { .. } => Err(PdeError::Config("rhs_rb called on rSV state".into())),
    }
}

/// Derivative of `f` on nodes `lo..hi` only (other entries zero).
fn d1_window(grid: &Grid1D, f: &[f64], lo: usize, hi: usize) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for (j, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
        *o = grid.d1_at(f, j);
    }
    out
}

/// Values and derivatives at `x` by local differencing and cubic interpolation.
fn sample_derivatives(grid: &Grid1D, f: &[f64], fx: Option<&[f64]>, x: f64, order: usize) -> Vec<f64> {
    let n = grid.n();
    let j = grid.nearest(x);
    let w = 4 + 2 * order;
    let lo = j.saturating_sub(w);
    let hi = (j + w + 1).min(n);
    let mut out = vec![grid.interp(f, x)];
    let mut cur: Vec<f64> = match fx {
        Some(d) => d.to_vec(),
        None => d1_window(grid, f, lo, hi),
    };
    out.push(grid.interp(&cur, x));
    for k in 2..=order {
        let m = 2 * (k - 1);
        cur = d1_window(grid, &cur, (lo + m).min(n), hi.saturating_sub(m));
        out.push(grid.interp(&cur, x));
    }
    out
}

/// Grid plus mesh sensitivities for one stage; `coarse` carries the sampling
/// used for `z` when it is held on a sparser copy of the map.
#[derive(Debug, Clone)]
struct Frame {
    grid: Grid1D,
    map: Option<SinhMap>,
    sample: Option<MapSample>,
    coarse: Option<(Grid1D, Option<MapSample>)>,
}

/// Transfers between the `w` sampling (fine) and the `z` sampling (coarse).
#[derive(Debug, Clone)]
struct Transfers {
    to_fine: IndexTransfer,
    to_coarse: IndexTransfer,
}

/// Integrator state: physical fields plus modulation.
///
/// `phys` always holds both fields on the fine grid; the integrator's own
/// copy of `z` may live on the coarse sampling.
#[derive(Debug, Clone)]
pub struct SimState {
    pub phys: PhysState,
    pub modulation: ModulationState,
    work: Fields,
    frame: Frame,
}

/// Diagnostics gathered while evaluating a right-hand side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageDiag {
    pub min_wx: f64,
    pub argmin_x: f64,
    pub max_abs_zx: Option<f64>,
    pub max_abs_z: Option<f64>,
    pub g_inf: Option<f64>,
    pub q_inf: Option<f64>,
    pub probe: CentreProbe,
    pub rates: ModulationRates,
    /// Largest stable step from the transport speeds.
    pub dt_transport: f64,
}

struct Stage {
    dfields: Fields,
    dmod: [f64; 3],
    diag: StageDiag,
}

/// Adds the mesh-velocity term, fixes inflow ends and returns the transport step limit.
fn finish_transport(grid: &Grid1D, td: &mut [f64], speed: &[f64], forcing: &[f64], slope: &[f64], xt: &[f64]) -> f64 {
    let n = grid.n();
    let mut dt = f64::INFINITY;
    for j in 0..n {
        td[j] += xt[j] * slope[j];
        let a = speed[j] - xt[j];
        let dx = if j == 0 {
            grid.x[1] - grid.x[0]
        } else if j == n - 1 {
            grid.x[n - 1] - grid.x[n - 2]
        } else {
            (grid.x[j + 1] - grid.x[j]).min(grid.x[j] - grid.x[j - 1])
        };
        if a != 0.0 {
            dt = dt.min(dx / a.abs());
        }
    }
    // Inflow ends carry the far-field state: no transport across them.
    if speed[0] - xt[0] > 0.0 {
        td[0] = forcing[0];
    }
    if speed[n - 1] - xt[n - 1] < 0.0 {
        td[n - 1] = forcing[n - 1];
    }
    dt
}

fn mesh_velocity(sample: Option<&MapSample>, n: usize, xi_dot: f64, kdot: f64) -> Vec<f64> {
    match sample {
        Some(s) => (0..n).map(|j| s.dx_dc[j] * xi_dot + s.dx_dk[j] * kdot).collect(),
        None => vec![0.0; n],
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Explicit RK4 integrator with inline modulation and optional tracking mesh.
#[derive(Debug, Clone)]
pub struct Integrator {
    pub cfg: SimConfig,
    transfers: Option<Transfers>,
}

impl Integrator {
    pub fn new(cfg: SimConfig) -> Result<Self, PdeError> {
        cfg.validate()?;
        let nz = cfg.secondary_nodes();
        let transfers = (cfg.model == Model::Rsv && nz != cfg.n).then(|| Transfers {
            to_fine: IndexTransfer::new(nz, cfg.n),
            to_coarse: IndexTransfer::new(cfg.n, nz),
        });
        Ok(Integrator { cfg, transfers })
    }

    /// Initial integrator state with `(tau, kappa, xi) = (0, primary(0), 0)`.
    pub fn initial_state(&self, mut phys: PhysState) -> Result<SimState, PdeError> {
        let kappa0 = phys.grid.interp(phys.fields.primary(), 0.0);
        let modulation = ModulationState {
            t: phys.t,
            tau: 0.0,
            kappa: kappa0,
            xi: 0.0,
        };
        let frame = self.frame_for(&modulation, phys.t)?;
        if frame.grid.n() != phys.grid.n() {
            return Err(PdeError::Config(format!(
                "state has {} nodes, configuration {}",
                phys.grid.n(),
                frame.grid.n()
            )));
        }
        let work = match (&phys.fields, &self.transfers) {
            (Fields::Rsv { w, z }, Some(tr)) => Fields::Rsv {
                w: w.clone(),
                z: tr.to_coarse.apply(z),
            },
            (f, _) => f.clone(),
        };
        phys.fields = self.fine_fields(&work);
        Ok(SimState {
            phys,
            modulation,
            work,
            frame,
        })
    }

    fn fine_fields(&self, work: &Fields) -> Fields {
        match (work, &self.transfers) {
            (Fields::Rsv { w, z }, Some(tr)) => Fields::Rsv {
                w: w.clone(),
                z: tr.to_fine.apply(z),
            },
            (f, _) => f.clone(),
        }
    }

    fn frame_for(&self, m: &ModulationState, t: f64) -> Result<Frame, PdeError> {
        let cfg = &self.cfg;
        let nz = self.transfers.as_ref().map(|_| cfg.secondary_nodes());
        match cfg.mesh {
            MeshMode::Uniform => {
                let coarse = match nz {
                    Some(nz) => Some((Grid1D::uniform(-cfg.l, cfg.l, nz)?, None)),
                    None => None,
                };
                Ok(Frame {
                    grid: Grid1D::uniform(-cfg.l, cfg.l, cfg.n)?,
                    map: None,
                    sample: None,
                    coarse,
                })
            }
            MeshMode::Tracking { .. } => {
                let map = SinhMap {
                    centre: m.xi,
                    half_width: cfg.l,
                    k: tracking_k(cfg, m.tau - t),
                };
                let (grid, sample) = Grid1D::stretched_sample(&map, cfg.n)?;
                let coarse = match nz {
                    Some(nz) => {
                        let (g, s) = Grid1D::stretched_sample(&map, nz)?;
                        Some((g, Some(s)))
                    }
                    None => None,
                };
                Ok(Frame {
                    grid,
                    map: Some(map),
                    sample: Some(sample),
                    coarse,
                })
            }
        }
    }

    fn evaluate(&self, fields: &Fields, m: &ModulationState, t: f64, frame: &Frame) -> Result<Stage, PdeError> {
        let grid = &frame.grid;
        let n = grid.n();
        let x_xi = m.xi;
        let gap = m.tau - t;
        let blend = tracking_spacing(&self.cfg, gap).1;
        let mesh_kdot = |tau_dot: f64| match &frame.map {
            Some(map) if map.k > 0.0 && gap > 0.0 => {
                2.5 * (tau_dot - 1.0) * blend / (gap * SinhMap::log_ratio_slope(map.k))
            }
            _ => 0.0,
        };
        match fields {
            Fields::Rsv { w, z } => {
                let wx = grid.d1(w);
                let (zf, zxf, zxc) = match (&frame.coarse, &self.transfers) {
                    (Some((zg, _)), Some(tr)) => {
                        let zxc = zg.d1(z);
                        (tr.to_fine.apply(z), tr.to_fine.apply(&zxc), zxc)
                    }
                    _ => {
                        let zx = grid.d1(z);
                        (z.clone(), zx.clone(), zx)
                    }
                };
                let (g, q) = rsv_nonlocal(grid, w, &wx, &zf, &zxf).map_err(|e| match e {
                    PdeError::DepthLoss { min_gap, .. } => PdeError::DepthLoss { t, min_gap },
                    e => e,
                })?;
                let zgrid = frame.coarse.as_ref().map_or(grid, |c| &c.0);
                let zd = sample_derivatives(zgrid, z, Some(&zxc), x_xi, 2);
                let qd = sample_derivatives(grid, &q, None, x_xi, 2);
                let wd = sample_derivatives(grid, w, Some(&wx), x_xi, 3);
                let probe = CentreProbe::Rsv {
                    z: zd[0],
                    z_x: zd[1],
                    z_xx: zd[2],
                    g: grid.interp(&g, x_xi),
                    q: qd[0],
                    q_x: qd[1],
                    q_xx: qd[2],
                    w_x: wd[1],
                    w_xx: wd[2],
                    w_xxx: wd[3],
                };
                let f: Vec<f64> = (0..n).map(|i| 8.0 / 3.0 * (g[i] - q[i])).collect();
                let sw: Vec<f64> = (0..n).map(|i| w[i] + zf[i] / 3.0).collect();
                let mut wt: Vec<f64> = (0..n).map(|i| -sw[i] * wx[i] + f[i]).collect();
                let rates = self.rates(m, &probe, t, grid, &wd, &wt);
                let kd = mesh_kdot(rates.tau_dot);
                let xt = mesh_velocity(frame.sample.as_ref(), n, rates.xi_dot, kd);
                let mut dt = finish_transport(grid, &mut wt, &sw, &f, &wx, &xt);
                let nz = z.len();
                let (wc, fc) = match &self.transfers {
                    Some(tr) => (tr.to_coarse.apply(w), tr.to_coarse.apply(&f)),
                    None => (w.clone(), f.clone()),
                };
                let sz: Vec<f64> = (0..nz).map(|i| z[i] + wc[i] / 3.0).collect();
                let zsample = match &frame.coarse {
                    Some((_, s)) => s.as_ref(),
                    None => frame.sample.as_ref(),
                };
                let xtz = mesh_velocity(zsample, nz, rates.xi_dot, kd);
                let rel: Vec<f64> = (0..nz).map(|i| sz[i] - xtz[i]).collect();
                let zxu = zgrid.d1_upwind(z, &rel);
                let mut zt: Vec<f64> = (0..nz).map(|i| -sz[i] * zxu[i] + fc[i]).collect();
                dt = dt.min(finish_transport(zgrid, &mut zt, &sz, &fc, &zxu, &xtz));
                let (min_wx, arg) = argmin(&wx);
                let diag = StageDiag {
                    min_wx,
                    argmin_x: grid.x[arg],
                    max_abs_zx: Some(max_abs(&zxc)),
                    max_abs_z: Some(max_abs(z)),
                    g_inf: Some(max_abs(&g)),
                    q_inf: Some(max_abs(&q)),
                    probe,
                    rates,
                    dt_transport: dt,
                };
                Ok(Stage {
                    dfields: Fields::Rsv { w: wt, z: zt },
                    dmod: [rates.tau_dot, rates.kappa_dot, rates.xi_dot],
                    diag,
                })
            }
            Fields::Rb { v } => {
                let tm = rb_terms(grid, v)?;
                let pd = sample_derivatives(grid, &tm.p, Some(&tm.px), x_xi, 1);
                let vd = sample_derivatives(grid, v, Some(&tm.vx), x_xi, 3);
                let probe = CentreProbe::Rb {
                    p: pd[0],
                    p_x: pd[1],
                    v_x: vd[1],
                    v_xx: vd[2],
                    v_xxx: vd[3],
                };
                let rates = self.rates(m, &probe, t, grid, &vd, &tm.vt);
                let f: Vec<f64> = tm.px.iter().map(|p| -p).collect();
                let xt = mesh_velocity(frame.sample.as_ref(), n, rates.xi_dot, mesh_kdot(rates.tau_dot));
                let mut vt = tm.vt;
                let dt = finish_transport(grid, &mut vt, v, &f, &tm.vx, &xt);
                let (min_wx, arg) = argmin(&tm.vx);
                let diag = StageDiag {
                    min_wx,
                    argmin_x: grid.x[arg],
                    max_abs_zx: None,
                    max_abs_z: None,
                    g_inf: None,
                    q_inf: None,
                    probe,
                    rates,
                    dt_transport: dt,
                };
                Ok(Stage {
                    dfields: Fields::Rb { v: vt },
                    dmod: [rates.tau_dot, rates.kappa_dot, rates.xi_dot],
                    diag,
                })
            }
        }
    }

    fn rates(&self, m: &ModulationState, probe: &CentreProbe, t: f64, grid: &Grid1D, fd: &[f64], ft: &[f64]) -> ModulationRates {
        match self.cfg.modulation_law {
            ModulationLaw::ClosedForm => selfsim::modulation_rates(m, probe, t, self.cfg.eps),
            ModulationLaw::Constrained { relax } => {
                let td = sample_derivatives(grid, ft, None, m.xi, 2);
                let jet = CentreJet {
                    f: [fd[0], fd[1], fd[2], fd[3]],
                    f_t: [td[0], td[1], td[2]],
                };
                selfsim::constrained_rates(m, &jet, t, self.cfg.eps, relax)
            }
        }
    }

    /// Right-hand side diagnostics at the given state.
    pub fn diagnose(&self, s: &SimState) -> Result<StageDiag, PdeError> {
        Ok(self.evaluate(&s.work, &s.modulation, s.phys.t, &s.frame)?.diag)
    }

    fn stage_at(&self, base: &SimState, k: &Stage, a: f64, t: f64) -> Result<(Fields, ModulationState, Frame), PdeError> {
        let f = base.work.axpy(a, &k.dfields);
        let m = ModulationState {
            t,
            tau: base.modulation.tau + a * k.dmod[0],
            kappa: base.modulation.kappa + a * k.dmod[1],
            xi: base.modulation.xi + a * k.dmod[2],
        };
        let frame = self.frame_for(&m, t)?;
        Ok((f, m, frame))
    }

    /// One classical RK4 step of size `dt`.
    pub fn step(&self, s: &SimState, dt: f64) -> Result<SimState, PdeError> {
        let k1 = self.evaluate(&s.work, &s.modulation, s.phys.t, &s.frame)?;
        self.step_with(s, dt, k1)
    }

    fn step_with(&self, s: &SimState, dt: f64, k1: Stage) -> Result<SimState, PdeError> {
        let t0 = s.phys.t;
        let (f2, m2, fr2) = self.stage_at(s, &k1, 0.5 * dt, t0 + 0.5 * dt)?;
        let k2 = self.evaluate(&f2, &m2, t0 + 0.5 * dt, &fr2)?;
        let (f3, m3, fr3) = self.stage_at(s, &k2, 0.5 * dt, t0 + 0.5 * dt)?;
        let k3 = self.evaluate(&f3, &m3, t0 + 0.5 * dt, &fr3)?;
        let (f4, m4, fr4) = self.stage_at(s, &k3, dt, t0 + dt)?;
        let k4 = self.evaluate(&f4, &m4, t0 + dt, &fr4)?;
        let work = s
            .work
            .axpy(dt / 6.0, &k1.dfields)
            .axpy(dt / 3.0, &k2.dfields)
            .axpy(dt / 3.0, &k3.dfields)
            .axpy(dt / 6.0, &k4.dfields);
        let upd = |i: usize| dt / 6.0 * (k1.dmod[i] + 2.0 * k2.dmod[i] + 2.0 * k3.dmod[i] + k4.dmod[i]);
        let m = ModulationState {
            t: t0 + dt,
            tau: s.modulation.tau + upd(0),
            kappa: s.modulation.kappa + upd(1),
            xi: s.modulation.xi + upd(2),
        };
        if !work.is_finite() {
            return Err(PdeError::NonFinite(t0 + dt));
        }
        let fields = self.fine_fields(&work);
        if let Fields::Rsv { w, z } = &fields {
            let min_gap = w.iter().zip(z).map(|(w, z)| w - z).fold(f64::INFINITY, f64::min);
            if !(min_gap > 0.0) {
                return Err(PdeError::DepthLoss { t: t0 + dt, min_gap });
            }
        }
        let frame = self.frame_for(&m, t0 + dt)?;
        Ok(SimState {
            phys: PhysState {
                grid: frame.grid.clone(),
                map: frame.map,
                fields,
                t: t0 + dt,
                h_star: s.phys.h_star,
                eps: s.phys.eps,
            },
            modulation: m,
            work,
            frame,
        })
    }

    fn choose_dt(&self, diag: &StageDiag) -> f64 {
        let grad = if diag.min_wx < 0.0 { 0.5 / (-diag.min_wx) } else { f64::INFINITY };
        self.cfg.cfl * diag.dt_transport.min(grad)
    }
}

fn argmin(v: &[f64]) -> (f64, usize) {
    let (mut lo, mut arg) = (f64::INFINITY, 0);
    for (j, &d) in v.iter().enumerate() {
        if d < lo {
            lo = d;
            arg = j;
        }
    }
    (lo, arg)
}


/// Scalar diagnostics at one recorded step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub energy: f64,
    pub min_wx: f64,
    pub argmin_x: f64,
    pub max_abs_zx: Option<f64>,
    pub max_abs_z: Option<f64>,
    pub g_inf: Option<f64>,
    pub q_inf: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub modulation: ModulationState,
    pub rates: ModulationRates,
    pub probe: CentreProbe,
    pub centre_spacing: f64,
}

/// Stored field state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub index: usize,
    pub record: ScalarRecord,
    pub x: Vec<f64>,
    pub fields: Fields,
}

impl Snapshot {
    pub fn t(&self) -> f64 {
        self.record.t
    }

    /// Rebuilds the physical state (grid from stored nodes via the metric of
    /// the tracking map when available).
    pub fn grid(&self, cfg: &SimConfig) -> Grid1D {
        match build_grid(cfg, self.record.modulation.xi, self.record.modulation.tau - self.record.t) {
            Ok((g, _)) if g.x.len() == self.x.len() && g.x.iter().zip(&self.x).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs())) => g,
            _ => grid_from_nodes(&self.x),
        }
    }

    pub fn phys(&self, cfg: &SimConfig) -> PhysState {
        PhysState {
            grid: self.grid(cfg),
            map: None,
            fields: self.fields.clone(),
            t: self.record.t,
            h_star: cfg.h_star,
            eps: cfg.eps,
        }
    }
}

/// Grid from bare node positions, metric by fourth-order differencing of `x(j)`.
pub fn grid_from_nodes(x: &[f64]) -> Grid1D {
    let n = x.len();
    let idx = Grid1D {
        x: (0..n).map(|j| j as f64).collect(),
        metric: vec![1.0; n],
    };
    let metric = idx.d1(x);
    Grid1D {
        x: x.to_vec(),
        metric,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BlowUp,
    DtFloor,
    TimeLimit,
    Instability,
    ModulationCrossed,
    Failure,
}

/// Complete run output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: SimConfig,
    pub initial_min_wx: f64,
    pub initial_energy: f64,
    pub series: Vec<ScalarRecord>,
    pub snapshots: Vec<Snapshot>,
    pub stop: StopReason,
    pub message: Option<String>,
    pub steps: usize,
    pub blowup: bool,
}

impl Trajectory {
    /// `max(-w_x) / initial`.
    pub fn growth(&self, r: &ScalarRecord) -> f64 {
        r.min_wx / self.initial_min_wx
    }
}

fn make_record(step: usize, s: &SimState, diag: &StageDiag, dt: f64) -> ScalarRecord {
    let (h_min, h_max) = match s.phys.h() {
        Some(h) => (
            Some(h.iter().cloned().fold(f64::INFINITY, f64::min)),
            Some(h.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        ),
        None => (None, None),
    };
    let g = &s.phys.grid;
    let j = g.nearest(s.modulation.xi);
    let spacing = (g.x[(j + 1).min(g.n() - 1)] - g.x[j]).max(g.x[j] - g.x[j.saturating_sub(1)]);
    ScalarRecord {
        step,
        t: s.phys.t,
        dt,
        energy: energy(&s.phys),
        min_wx: diag.min_wx,
        argmin_x: diag.argmin_x,
        max_abs_zx: diag.max_abs_zx,
        max_abs_z: diag.max_abs_z,
        g_inf: diag.g_inf,
        q_inf: diag.q_inf,
        h_min,
        h_max,
        modulation: s.modulation,
        rates: diag.rates,
        probe: diag.probe.clone(),
        centre_spacing: spacing,
    }
}

/// Integrates from `t = -eps` until blow-up, time limit or failure.
pub fn run(cfg: &SimConfig, profile: &ProfileTable) -> Result<Trajectory, PdeError> {
    let phys = make_initial_data(cfg, profile)?;
    run_from(cfg, phys)
}

/// Integrates from a prepared initial state.
pub fn run_from(cfg: &SimConfig, phys: PhysState) -> Result<Trajectory, PdeError> {
    let integ = Integrator::new(cfg.clone())?;
    let mut s = integ.initial_state(phys)?;
    let mut k1 = integ.evaluate(&s.work, &s.modulation, s.phys.t, &s.frame)?;
    let initial_min_wx = k1.diag.min_wx;
    let e0 = energy(&s.phys);
    let mut traj = Trajectory {
        config: cfg.clone(),
        initial_min_wx,
        initial_energy: e0,
        series: vec![],
        snapshots: vec![],
        stop: StopReason::TimeLimit,
        message: None,
        steps: 0,
        blowup: false,
    };
    let growth_of = |min_wx: f64| if initial_min_wx < 0.0 { min_wx / initial_min_wx } else { 0.0 };
    let mut next_growth = cfg.snapshot_growth_ratio;
    let mut next_time = s.phys.t + cfg.snapshot_dt;
    let rec = make_record(0, &s, &k1.diag, 0.0);
    traj.snapshots.push(Snapshot {
        index: 0,
        record: rec.clone(),
        x: s.phys.grid.x.clone(),
        fields: s.phys.fields.clone(),
    });
    traj.series.push(rec);
    let mut step = 0usize;
    loop {
        let growth = growth_of(k1.diag.min_wx);
        let mut stop = None;
        if growth >= cfg.stop_growth_factor {
            stop = Some(StopReason::BlowUp);
        } else if s.phys.t >= cfg.t_max - 1e-15 {
            stop = Some(StopReason::TimeLimit);
        } else if matches!(cfg.mesh, MeshMode::Tracking { .. }) && s.modulation.tau - s.phys.t <= 0.0 {
            stop = Some(StopReason::ModulationCrossed);
        }
        let mut dt = integ.choose_dt(&k1.diag).min(cfg.t_max - s.phys.t);
        if stop.is_none() && dt < cfg.dt_floor {
            stop = Some(StopReason::DtFloor);
        }
        let want_snap = growth >= next_growth || s.phys.t >= next_time || stop.is_some();
        if step % cfg.record_every == 0 || want_snap {
            let rec = make_record(step, &s, &k1.diag, dt);
            if step > 0 && growth <= 10.0 && growth > 0.0 {
                let drift = (rec.energy - e0).abs() / e0.abs().max(f64::MIN_POSITIVE);
                if drift > cfg.drift_abort {
                    traj.message = Some(format!("energy drift {drift:e} at t = {}", s.phys.t));
                    stop = Some(StopReason::Instability);
                }
            }
            if want_snap && step > 0 {
                while growth >= next_growth {
                    next_growth *= cfg.snapshot_growth_ratio;
                }
                while s.phys.t >= next_time {
                    next_time += cfg.snapshot_dt;
                }
                traj.snapshots.push(Snapshot {
                    index: traj.snapshots.len(),
                    record: rec.clone(),
                    x: s.phys.grid.x.clone(),
                    fields: s.phys.fields.clone(),
                });
            }
            if step > 0 || traj.series.is_empty() {
                traj.series.push(rec);
            }
        }
        if let Some(r) = stop {
            traj.stop = r;
            traj.blowup = r == StopReason::BlowUp;
            break;
        }
        dt = dt.max(cfg.dt_floor);
        match integ.step_with(&s, dt, k1) {
            Ok(ns) => s = ns,
            Err(e) => {
                traj.stop = StopReason::Failure;
                traj.message = Some(e.to_string());
                break;
            }
        }
        step += 1;
        k1 = match integ.evaluate(&s.work, &s.modulation, s.phys.t, &s.frame) {
            Ok(k) => k,
            Err(e) => {
                traj.stop = StopReason::Failure;
                traj.message = Some(e.to_string());
                break;
            }
        };
    }
    traj.steps = step;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::solve_profile;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn uniform_cfg(model: Model, n: usize) -> SimConfig {
        let mut cfg = SimConfig::new(model);
        cfg.n = n;
        cfg.mesh = MeshMode::Uniform;
        cfg.secondary_stride = 1;
        cfg
    }

    fn state(cfg: &SimConfig, fields: impl Fn(&Grid1D) -> Fields) -> PhysState {
        let grid = Grid1D::uniform(-cfg.l, cfg.l, cfg.n).unwrap();
        PhysState {
            fields: fields(&grid),
            grid,
            map: None,
            t: -cfg.eps,
            h_star: cfg.h_star,
            eps: cfg.eps,
        }
    }

    fn bump_rsv(grid: &Grid1D, amp: f64) -> Fields {
        Fields::Rsv {
            w: grid.x.iter().map(|x| 4.0 + amp * (-2.0 * x * x).exp()).collect(),
            z: grid.x.iter().map(|x| -4.0 + 0.3 * amp * (-(x - 0.5).powi(2)).exp()).collect(),
        }
    }

    #[test]
    fn constant_state_has_zero_tendency() {
        let cfg = uniform_cfg(Model::Rsv, 257);
        let s = state(&cfg, |g| Fields::Rsv {
            w: vec![4.0; g.n()],
            z: vec![-4.0; g.n()],
        });
        let (wt, zt) = rhs_rsv(&s).unwrap();
        assert!(wt.iter().chain(&zt).all(|v| v.abs() < 1e-13));
        assert!(energy(&s).abs() < 1e-12);
        let s = state(&cfg, |g| Fields::Rb { v: vec![0.7; g.n()] });
        assert!(rhs_rb(&s).unwrap().iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn simple_wave_is_pure_transport() {
        let cfg = uniform_cfg(Model::Rsv, 1601);
        let s = state(&cfg, |g| {
            let r: Vec<f64> = g.x.iter().map(|x| 2.0 + 0.2 * (-x * x).exp()).collect();
            Fields::Rsv {
                w: r.iter().map(|a| 3.0 * a + 0.5).collect(),
                z: r.iter().map(|a| 0.5 - a).collect(),
            }
        });
        let Fields::Rsv { w, z } = &s.fields else { unreachable!() };
        let tm = rsv_terms(&s.grid, w, z).unwrap();
        assert!(tm.g.iter().all(|v| v.abs() < 1e-6));
        assert!(tm.q.iter().all(|v| v.abs() < 1e-6));
        for i in 0..w.len() {
            assert!((tm.wt[i] + (w[i] + z[i] / 3.0) * tm.wx[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn rb_sine_tendency() {
        // Boundary layers of the Helmholtz solve decay like exp(-(L - |x|)).
        let mut cfg = uniform_cfg(Model::Rb, 12001);
        cfg.l = 30.0;
        let s = state(&cfg, |g| Fields::Rb {
            v: g.x.iter().map(|x| x.sin()).collect(),
        });
        let vt = rhs_rb(&s).unwrap();
        for (x, v) in s.grid.x.iter().zip(&vt) {
            if x.abs() <= 8.0 {
                assert!((v + 0.4 * (2.0 * x).sin()).abs() < 1e-7, "{x} {v}");
            }
        }
    }

    #[test]
    fn rb_odd_data_gives_odd_tendency() {
        let cfg = uniform_cfg(Model::Rb, 801);
        let s = state(&cfg, |g| Fields::Rb {
            v: g.x.iter().map(|x| -x * (-x * x).exp() + 0.1 * (2.0 * x).sin() * (-x * x).exp()).collect(),
        });
        let vt = rhs_rb(&s).unwrap();
        let n = vt.len();
        for i in 0..n {
            assert!((vt[i] + vt[n - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn riemann_examples() {
        let (w, z) = riemann_convert(&[1.0, 4.0], &[0.0, 1.0]).unwrap();
        assert_eq!((w[0], z[0]), (2.0, -2.0));
        assert_eq!((w[1], z[1]), (5.0, -3.0));
        assert!(riemann_convert(&[0.0], &[1.0]).is_err());
        assert!(riemann_invert(&[1.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn riemann_round_trip(h in proptest::collection::vec(1e-3f64..1e3, 1..20), u in -50.0f64..50.0) {
            let u = vec![u; h.len()];
            let (w, z) = riemann_convert(&h, &u).unwrap();
            let (h2, u2) = riemann_invert(&w, &z).unwrap();
            for i in 0..h.len() {
                prop_assert!((h2[i] - h[i]).abs() <= 1e-14 * h[i].max(1.0) * 8.0);
                prop_assert!((u2[i] - u[i]).abs() <= 1e-14 * (u[i].abs() + h[i].sqrt()) * 8.0);
            }
        }

        #[test]
        fn cutoff_is_even_and_bounded(x in -3.0f64..3.0) {
            let c = cutoff(x);
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert_eq!(c, cutoff(-x));
        }
    }

    #[test]
    fn rb_energy_of_sine() {
        let g = Grid1D::uniform(-PI, PI, 2001).unwrap();
        let s = PhysState {
            fields: Fields::Rb {
                v: g.x.iter().map(|x| x.sin()).collect(),
            },
            grid: g,
            map: None,
            t: 0.0,
            h_star: 1.0,
            eps: 0.3,
        };
        assert!((energy(&s) - 2.0 * PI).abs() < 1e-8);
    }

    #[test]
    fn initial_data_matches_profile_at_origin() {
        let prof = solve_profile(1.0, 1e6, 1e-12).unwrap();
        let cfg = SimConfig::new(Model::Rsv);
        let s = make_initial_data(&cfg, &prof).unwrap();
        let Fields::Rsv { w, z } = &s.fields else { unreachable!() };
        assert!((s.grid.interp(w, 0.0) - 4.0).abs() < 1e-12);
        let wx = s.grid.d1(w);
        // Fourth-order differencing at the centre spacing.
        assert!((s.grid.interp(&wx, 0.0) * cfg.eps + 2.0).abs() < 1e-4);
        assert!(z.iter().all(|v| *v == -4.0));
        // Plateau: eps w0'(x) equals the profile slope at x / eps^{5/2}.
        let sc = cfg.eps.powf(2.5);
        for (x, d) in s.grid.x.iter().zip(&wx) {
            if x.abs() < 0.9 && x.abs() > 1e-3 {
                assert!((cfg.eps * d - prof.eval(x / sc).1).abs() < 1e-4, "{x} {}", cfg.eps * d - prof.eval(x / sc).1);
            }
        }
        let mut coarse = uniform_cfg(Model::Rsv, 1024);
        coarse.secondary_stride = 8;
        assert!(matches!(make_initial_data(&coarse, &prof), Err(PdeError::Unresolved { .. })));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::new(Model::Rsv);
        cfg.eps = 0.0;
        assert!(cfg.validate().is_err());
        cfg.eps = 0.6;
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::new(Model::Rb);
        cfg.cfl = 1.0;
        assert!(cfg.validate().is_err());
        assert!(SimConfig::new(Model::Rb).validate().is_ok());
    }

    fn advance(integ: &Integrator, s: &SimState, dt: f64, k: usize) -> SimState {
        let mut s = s.clone();
        for _ in 0..k {
            s = integ.step(&s, dt).unwrap();
        }
        s
    }

    #[test]
    fn rk4_richardson_local_error() {
        let cfg = uniform_cfg(Model::Rb, 401);
        let integ = Integrator::new(cfg.clone()).unwrap();
        let s0 = integ
            .initial_state(state(&cfg, |g| Fields::Rb {
                v: g.x.iter().map(|x| 0.5 * (-x * x).exp() * (1.0 + x)).collect(),
            }))
            .unwrap();
        let gap = |dt: f64| {
            let a = advance(&integ, &s0, dt, 1);
            let b = advance(&integ, &s0, 0.5 * dt, 2);
            let (fa, fb) = (a.phys.fields.primary(), b.phys.fields.primary());
            fa.iter().zip(fb).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        };
        let (e1, e2) = (gap(0.02), gap(0.01));
        // Local error O(dt^5): halving dt divides the gap by about 32.
        assert!(e1 / e2 > 24.0 && e1 / e2 < 40.0, "{e1} {e2}");
    }

    #[test]
    fn smooth_rsv_conserves_energy_over_100_steps() {
        let cfg = uniform_cfg(Model::Rsv, 2049);
        let integ = Integrator::new(cfg.clone()).unwrap();
        let s0 = integ.initial_state(state(&cfg, |g| bump_rsv(g, 0.2))).unwrap();
        let e0 = energy(&s0.phys);
        let s = advance(&integ, &s0, 1e-3, 100);
        assert!(((energy(&s.phys) - e0) / e0).abs() <= 1e-8);
    }

    #[test]
    fn coarse_secondary_sampling_tracks_full_resolution() {
        let mut cfg = uniform_cfg(Model::Rsv, 2049);
        let full = Integrator::new(cfg.clone()).unwrap();
        cfg.secondary_stride = 4;
        let split = Integrator::new(cfg.clone()).unwrap();
        let init = state(&cfg, |g| bump_rsv(g, 0.2));
        let a = advance(&full, &full.initial_state(init.clone()).unwrap(), 1e-3, 50);
        let b = advance(&split, &split.initial_state(init).unwrap(), 1e-3, 50);
        let (Fields::Rsv { w: wa, z: za }, Fields::Rsv { w: wb, z: zb }) = (&a.phys.fields, &b.phys.fields) else {
            unreachable!()
        };
        let d = |p: &[f64], q: &[f64]| p.iter().zip(q).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(d(wa, wb) < 1e-6 && d(za, zb) < 1e-6, "{} {}", d(wa, wb), d(za, zb));
    }

    #[test]
    fn constant_data_runs_to_time_limit() {
        let mut cfg = uniform_cfg(Model::Rsv, 257);
        cfg.t_max = 0.2;
        let init = state(&cfg, |g| Fields::Rsv {
            w: vec![4.0; g.n()],
            z: vec![-4.0; g.n()],
        });
        let tr = run_from(&cfg, init).unwrap();
        assert_eq!(tr.stop, StopReason::TimeLimit);
        assert!(!tr.blowup);
        assert!((tr.series.last().unwrap().t - 0.2).abs() < 1e-12);
    }

    #[test]
    fn tracking_spacing_blend() {
        let cfg = SimConfig::new(Model::Rsv);
        let u = 2.0 * cfg.l / (cfg.n as f64 - 1.0);
        let (sp, blend) = tracking_spacing(&cfg, 1.0);
        assert!(sp < u && sp > 0.9 * u.min(0.01));
        assert!(blend > 0.0 && blend < 1.0);
        let (small, b2) = tracking_spacing(&cfg, 0.01);
        assert!((small / (0.01 * 0.01f64.powf(2.5)) - 1.0).abs() < 0.01 && b2 > 0.99);
    }
}
