//! Command-line front end: argument parsing, run persistence, analysis and
//! report emission.
//!
//! A simulation writes a directory holding `manifest.json`, a scalar series
//! CSV and one CSV per snapshot. `analyze` and `verify` read only the files
//! listed in the manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::holder::{expected_slope, fit_blowup_rate, holder_seminorms, RateFit, SeminormSeries};
use crate::pde::{self, Fields, MeshMode, Model, ScalarRecord, SimConfig, Snapshot, StopReason, Trajectory};
use crate::profile::{profile_residual_upto, solve_profile, ProfileTable};
use crate::selfsim::{
    estimate_blowup, modulation_blowup_time, profile_distance, rescale_snapshot, BlowupEstimate, ProfileDistance,
    RescaledSnapshot,
};
use crate::verify::{
    check_profile_inequalities, monitor_bootstrap, validate_initial_data, BootstrapReport, BoundParams,
    MonitorSample, ProfileCheckConfig, VerifyReport, Worst,
};

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "cusplab", version, about = "Gradient blow-up laboratory for rSV and rB")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the self-similar profile and check its inequalities.
    Profile(ProfileArgs),
    /// Integrate rSV or rB from the profile-based initial data.
    Simulate(SimulateArgs),
    /// Fit blow-up rates and compare a run with the profile.
    Analyze(AnalyzeArgs),
    /// Run the inequality checks, and the run monitors when given a manifest.
    Verify(VerifyArgs),
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} is not a positive number"))
    }
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, default_value_t = 1.0, value_parser = positive, allow_negative_numbers = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e8, value_parser = positive)]
    pub ymax: f64,
    #[arg(long, default_value_t = 1e-12, value_parser = positive)]
    pub tol: f64,
    #[arg(long, short, default_value = "out/profile")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Rsv,
    Rb,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Model {
        match m {
            ModelArg::Rsv => Model::Rsv,
            ModelArg::Rb => Model::Rb,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct ConfigOverrides {
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,
    #[arg(long = "hstar")]
    pub h_star: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Half-width of the domain.
    #[arg(long)]
    pub l: Option<f64>,
    #[arg(long)]
    pub cfl: Option<f64>,
    #[arg(long = "stop-growth")]
    pub stop_growth_factor: Option<f64>,
    #[arg(long = "t-max")]
    pub t_max: Option<f64>,
    /// Centre resolution of the tracking mesh.
    #[arg(long, conflicts_with = "uniform")]
    pub resolution: Option<f64>,
    /// Use a fixed uniform mesh.
    #[arg(long)]
    pub uniform: bool,
    #[arg(long = "stride")]
    pub secondary_stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(value_enum)]
    pub model: ModelArg,
    /// JSON file with (a subset of) the configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
    #[arg(long, short, default_value = "out/run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub manifest: PathBuf,
    /// Output directory; defaults to `analysis/` next to the manifest.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Also render SVG charts.
    #[arg(long)]
    pub svg: bool,
    #[arg(long = "big-m", default_value_t = 1e8, value_parser = positive)]
    pub big_m: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Profile CSV; solved afresh when absent.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 1e8, value_parser = positive)]
    pub ymax: f64,
    /// Run manifest whose initial data and trajectory are checked too.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long = "big-m", default_value_t = 1e8, value_parser = positive)]
    pub big_m: f64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Applies defaults, then the JSON file, then command-line overrides.
pub fn build_config(model: Model, file: Option<&Path>, o: &ConfigOverrides) -> Result<SimConfig> {
    let mut v = serde_json::to_value(SimConfig::new(model))?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let user: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Value::Object(map) = user else {
            bail!("{}: configuration must be a JSON object", path.display());
        };
        let obj = v.as_object_mut().expect("config serializes to an object");
        for (k, val) in map {
            if !obj.contains_key(&k) {
                bail!("{}: unknown configuration key `{k}`", path.display());
            }
            obj.insert(k, val);
        }
        obj.insert("model".into(), serde_json::to_value(model)?);
    }
    let mut cfg: SimConfig = serde_json::from_value(v).context("invalid configuration")?;
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(x) = o.$f { cfg.$f = x; })* };
    }
    set!(eps, h_star, n, l, cfl, stop_growth_factor, t_max, secondary_stride);
    if o.uniform {
        cfg.mesh = MeshMode::Uniform;
    }
    if let Some(r) = o.resolution {
        cfg.mesh = MeshMode::Tracking { resolution: r };
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub index: usize,
    pub path: String,
    pub record: ScalarRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub title: String,
    pub all_pass: bool,
    pub failed: Vec<String>,
}

impl From<&VerifyReport> for VerifySummary {
    fn from(r: &VerifyReport) -> Self {
        VerifySummary {
            title: r.title.clone(),
            all_pass: r.all_pass(),
            failed: r.checks.iter().filter(|c| !c.pass).map(|c| c.id.clone()).collect(),
        }
    }
}

/// Self-contained record of a run and of any analysis performed on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub config: SimConfig,
    pub initial_min_wx: f64,
    pub initial_energy: f64,
    pub stop: StopReason,
    pub message: Option<String>,
    pub steps: usize,
    pub blowup: bool,
    pub series: Vec<ScalarRecord>,
    pub snapshots: Vec<SnapshotFile>,
    pub blowup_estimate: Option<BlowupEstimate>,
    pub modulation_t_star: Option<f64>,
    pub slopes: Vec<SlopeSummary>,
    pub verify: Vec<VerifySummary>,
    /// Every file written for this run, relative to the manifest directory.
    pub files: Vec<String>,
}

fn write_file(dir: &Path, rel: &str, files: &mut Vec<String>, body: &[u8]) -> Result<()> {
    let path = dir.join(rel);
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    if !files.iter().any(|f| f == rel) {
        files.push(rel.to_string());
    }
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow!("{e}"))?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn snapshot_csv(s: &Snapshot) -> Result<Vec<u8>> {
    match &s.fields {
        Fields::Rsv { w, z } => csv_bytes(
            &["x", "w", "z"],
            (0..s.x.len()).map(|i| vec![s.x[i].to_string(), w[i].to_string(), z[i].to_string()]),
        ),
        Fields::Rb { v } => csv_bytes(&["x", "v"], (0..s.x.len()).map(|i| vec![s.x[i].to_string(), v[i].to_string()])),
    }
}

fn series_csv(traj: &Trajectory) -> Result<Vec<u8>> {
    let header = [
        "step", "t", "dt", "growth", "energy", "min_wx", "argmin_x", "max_abs_z", "max_abs_zx", "h_min", "h_max",
        "tau", "kappa", "xi", "tau_dot", "kappa_dot", "xi_dot",
    ];
    let rows = traj.series.iter().map(|r| {
        vec![
            r.step.to_string(),
            r.t.to_string(),
            r.dt.to_string(),
            traj.growth(r).to_string(),
            r.energy.to_string(),
            r.min_wx.to_string(),
            r.argmin_x.to_string(),
            opt(r.max_abs_z),
            opt(r.max_abs_zx),
            opt(r.h_min),
            opt(r.h_max),
            r.modulation.tau.to_string(),
            r.modulation.kappa.to_string(),
            r.modulation.xi.to_string(),
            r.rates.tau_dot.to_string(),
            r.rates.kappa_dot.to_string(),
            r.rates.xi_dot.to_string(),
        ]
    });
    csv_bytes(&header, rows)
}

/// Writes a run directory and returns its manifest.
pub fn write_run(traj: &Trajectory, profile: &ProfileTable, dir: &Path) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let mut files = vec![];
    let mut snapshots = vec![];
    for s in &traj.snapshots {
        let rel = format!("snapshots/snap_{:04}.csv", s.index);
        write_file(dir, &rel, &mut files, &snapshot_csv(s)?)?;
        snapshots.push(SnapshotFile {
            index: s.index,
            path: rel,
            record: s.record.clone(),
        });
    }
    write_file(dir, "series.csv", &mut files, &series_csv(traj)?)?;
    let mut verify = vec![];
    if let Some(first) = traj.snapshots.first() {
        let par = BoundParams {
            theta_cap: traj.config.theta_cap,
            ..BoundParams::new(traj.config.eps, traj.config.h_star)
        };
        let rep = validate_initial_data(&first.phys(&traj.config), profile, &par);
        write_file(dir, "initial_data.txt", &mut files, rep.summary_table().as_bytes())?;
        verify.push(VerifySummary::from(&rep));
    }
    let m = RunManifest {
        format: MANIFEST_FORMAT,
        config: traj.config.clone(),
        initial_min_wx: traj.initial_min_wx,
        initial_energy: traj.initial_energy,
        stop: traj.stop,
        message: traj.message.clone(),
        steps: traj.steps,
        blowup: traj.blowup,
        series: traj.series.clone(),
        snapshots,
        blowup_estimate: estimate_blowup(traj).ok(),
        modulation_t_star: modulation_blowup_time(traj),
        slopes: vec![],
        verify,
        files,
    };
    save_manifest(&m, dir)?;
    Ok(m)
}

pub fn save_manifest(m: &RunManifest, dir: &Path) -> Result<()> {
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(m)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_snapshot(path: &Path, model: Model, index: usize, record: ScalarRecord) -> Result<Snapshot> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let cols = match model {
        Model::Rsv => 3,
        Model::Rb => 2,
    };
    let mut data: Vec<Vec<f64>> = vec![vec![]; cols];
    for row in rd.records() {
        let row = row?;
        if row.len() != cols {
            bail!("{}: expected {cols} columns, found {}", path.display(), row.len());
        }
        for (c, f) in row.iter().enumerate() {
            data[c].push(f.parse().with_context(|| format!("{}: bad number `{f}`", path.display()))?);
        }
    }
    let x = data.remove(0);
    let fields = match model {
        Model::Rsv => Fields::Rsv {
            w: data.remove(0),
            z: data.remove(0),
        },
        Model::Rb => Fields::Rb { v: data.remove(0) },
    };
    Ok(Snapshot { index, record, x, fields })
}

/// Loads a manifest and rebuilds its trajectory from the listed snapshot files.
pub fn load_run(manifest: &Path) -> Result<(RunManifest, Trajectory)> {
    let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest.display()))?;
    if m.format != MANIFEST_FORMAT {
        bail!("manifest format {} is not supported", m.format);
    }
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut snapshots = vec![];
    for s in &m.snapshots {
        if !m.files.contains(&s.path) {
            bail!("snapshot {} is not listed in the manifest files", s.path);
        }
        snapshots.push(read_snapshot(&dir.join(&s.path), m.config.model, s.index, s.record.clone())?);
    }
    let traj = Trajectory {
        config: m.config.clone(),
        initial_min_wx: m.initial_min_wx,
        initial_energy: m.initial_energy,
        series: m.series.clone(),
        snapshots,
        stop: m.stop,
        message: m.message.clone(),
        steps: m.steps,
        blowup: m.blowup,
    };
    Ok((m, traj))
}

/// Settings of the rate and profile analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub alphas: Vec<f64>,
    /// Growth range of the snapshots used in the fits.
    pub fit_growth: (f64, f64),
    /// Growth range searched (latest first) for the profile comparison.
    pub profile_growth: (f64, f64),
    /// Half-width of the window centred on `x*`.
    pub centre_half_width: f64,
    /// Window `[x* + a, x* + b]` that excludes `x*`.
    pub away: (f64, f64),
    pub bounds: BoundParams,
}

impl AnalysisConfig {
    pub fn new(cfg: &SimConfig) -> Self {
        AnalysisConfig {
            alphas: vec![0.6, 0.7, 0.8, 1.0],
            fit_growth: (4.0, 20.0),
            profile_growth: (10.0, 20.0),
            centre_half_width: 1.0,
            away: (0.25, 1.25),
            bounds: BoundParams {
                theta_cap: cfg.theta_cap,
                ..BoundParams::new(cfg.eps, cfg.h_star)
            },
        }
    }
}

/// Tolerance on the fitted exponent for `alpha`.
pub fn slope_tolerance(alpha: f64) -> f64 {
    if (alpha - 0.6).abs() < 1e-12 {
        0.1
    } else {
        0.15
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub alpha: f64,
    /// `centre` (contains `x*`) or `away`.
    pub label: String,
    pub window: (f64, f64),
    pub fit: Option<RateFit>,
    pub error: Option<String>,
    /// Expected exponent for centre windows.
    pub expected: Option<f64>,
    pub pass: bool,
}

/// One line of the verdict table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileComparison {
    pub growth: f64,
    pub snapshot: usize,
    pub distance: ProfileDistance,
    pub rescaled: RescaledSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub blowup: bool,
    pub estimate: Option<BlowupEstimate>,
    pub modulation_t_star: Option<f64>,
    pub series: Vec<(String, SeminormSeries)>,
    pub slopes: Vec<SlopeSummary>,
    pub bootstrap: Option<BootstrapReport>,
    pub comparison: Option<ProfileComparison>,
    pub verdicts: Vec<Verdict>,
}

impl Analysis {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict_table(&self) -> String {
        let mut out = String::new();
        if !self.blowup {
            out += "no blow-up detected\n";
        }
        for v in &self.verdicts {
            out += &format!("{:<34} {:>4}  {}\n", v.name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        }
        out
    }
}

/// Relative disagreement of two blow-up times, measured against the time
/// remaining from `t0`.
pub fn t_star_disagreement(a: f64, b: f64, t0: f64) -> f64 {
    (a - b).abs() / (b - t0).abs()
}

fn fit_windows(x_star: f64, traj: &Trajectory, ac: &AnalysisConfig) -> Vec<(String, (f64, f64))> {
    let l = traj.config.l;
    let clip = |a: f64, b: f64| (a.max(-l), b.min(l));
    vec![
        ("centre".into(), clip(x_star - ac.centre_half_width, x_star + ac.centre_half_width)),
        ("away".into(), clip(x_star + ac.away.0, x_star + ac.away.1)),
    ]
}

/// Semi-norms of the primary field for all `alphas` on each window, one
/// entry per snapshot, evaluated in parallel over snapshots.
fn seminorm_table(snaps: &[&Snapshot], cfg: &SimConfig, alphas: &[f64], windows: &[(f64, f64)]) -> Result<Vec<Vec<Vec<f64>>>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(snaps.len().max(1));
    let chunk = snaps.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<Vec<Vec<f64>>>>> = std::thread::scope(|sc| {
        let handles: Vec<_> = snaps
            .chunks(chunk)
            .map(|part| {
                sc.spawn(move || {
                    part.iter()
                        .map(|s| {
                            let g = s.grid(cfg);
                            windows
                                .iter()
                                .map(|&w| Ok(holder_seminorms(s.fields.primary(), &g, alphas, w)?))
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = vec![];
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Rate fits, bootstrap monitors and profile comparison for a trajectory.
pub fn analyze_trajectory(traj: &Trajectory, profile: &ProfileTable, ac: &AnalysisConfig) -> Result<Analysis> {
    let mut a = Analysis {
        blowup: traj.blowup,
        estimate: None,
        modulation_t_star: None,
        series: vec![],
        slopes: vec![],
        bootstrap: None,
        comparison: None,
        verdicts: vec![],
    };
    if !traj.blowup {
        return Ok(a);
    }
    if traj.snapshots.is_empty() {
        bail!("run has no snapshots");
    }
    let est = estimate_blowup(traj)?;
    a.estimate = Some(est);
    a.modulation_t_star = modulation_blowup_time(traj);
    a.verdicts.push(Verdict {
        name: "blow-up detected".into(),
        pass: true,
        detail: format!("T* = {:.6e}, x* = {:.6e}", est.t_star, est.x_star),
    });

    let fit_snaps: Vec<&Snapshot> = traj
        .snapshots
        .iter()
        .filter(|s| {
            let g = traj.growth(&s.record);
            g >= ac.fit_growth.0 && g <= ac.fit_growth.1
        })
        .collect();
    let windows = fit_windows(est.x_star, traj, ac);
    let bare: Vec<(f64, f64)> = windows.iter().map(|w| w.1).collect();
    let table = seminorm_table(&fit_snaps, &traj.config, &ac.alphas, &bare)?;
    for (wi, (label, window)) in windows.iter().enumerate() {
        for (ai, &alpha) in ac.alphas.iter().enumerate() {
            let mut series = SeminormSeries::new(alpha, *window);
            for (si, s) in fit_snaps.iter().enumerate() {
                series.samples.push((s.t(), table[si][wi][ai]));
            }
            let fit = fit_blowup_rate(&series, est.t_star);
            let centre = label == "centre";
            let expected = centre.then(|| expected_slope(alpha));
            let pass = match (&fit, expected) {
                (Ok(f), Some(e)) => (f.slope - e).abs() <= slope_tolerance(alpha),
                (Ok(f), None) => f.slope >= -0.1,
                (Err(_), _) => false,
            };
            a.slopes.push(SlopeSummary {
                alpha,
                label: label.clone(),
                window: *window,
                fit: fit.as_ref().ok().copied(),
                error: fit.as_ref().err().map(|e| e.to_string()),
                expected,
                pass,
            });
            a.series.push((label.clone(), series));
        }
    }
    for s in &a.slopes {
        let detail = match (&s.fit, s.expected) {
            (Some(f), Some(e)) => format!("slope {:+.4} (expected {e:+.3} ± {})", f.slope, slope_tolerance(s.alpha)),
            (Some(f), None) => format!("slope {:+.4} (bounded: >= -0.1)", f.slope),
            (None, _) => s.error.clone().unwrap_or_default(),
        };
        a.verdicts.push(Verdict {
            name: format!("rate alpha={} {}", s.alpha, s.label),
            pass: s.pass,
            detail,
        });
    }

    let rescaled: Vec<RescaledSnapshot> = traj
        .snapshots
        .iter()
        .map(|s| rescale_snapshot(s, &traj.config))
        .collect::<Result<_, _>>()?;
    let samples: Vec<MonitorSample> = traj
        .snapshots
        .iter()
        .zip(&rescaled)
        .map(|(s, r)| MonitorSample {
            rsnap: r,
            tau_dot: s.record.rates.tau_dot,
            growth: traj.growth(&s.record),
        })
        .collect();
    let boot = monitor_bootstrap(&samples, profile, &ac.bounds);

    let pick = traj
        .snapshots
        .iter()
        .zip(&rescaled)
        .filter(|(s, _)| {
            let g = traj.growth(&s.record);
            g >= ac.profile_growth.0 && g <= ac.profile_growth.1
        })
        .last();
    match pick {
        Some((s, r)) => {
            let d = profile_distance(r, profile);
            let c = d.constraint.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            a.verdicts.push(Verdict {
                name: "profile distance".into(),
                pass: d.weighted <= 6.0 / 13.0,
                detail: format!("sup (1+|y|^(2/5))|W_y - W'| = {:.4e} <= 6/13", d.weighted),
            });
            a.verdicts.push(Verdict {
                name: "modulation constraints".into(),
                pass: c <= 0.1,
                detail: format!("max |constraint| = {c:.4e} <= 0.1"),
            });
            a.comparison = Some(ProfileComparison {
                growth: traj.growth(&s.record),
                snapshot: s.index,
                distance: d,
                rescaled: r.clone(),
            });
        }
        None => a.verdicts.push(Verdict {
            name: "profile distance".into(),
            pass: false,
            detail: format!("no snapshot with growth in {:?}", ac.profile_growth),
        }),
    }
    let t0 = traj.snapshots[0].t();
    match a.modulation_t_star {
        Some(tm) => {
            let rel = t_star_disagreement(tm, est.t_star, t0);
            a.verdicts.push(Verdict {
                name: "T* agreement".into(),
                pass: rel <= 0.05,
                detail: format!("modulation {tm:.6e} vs slope {:.6e}: {rel:.3e} of T* - t0", est.t_star),
            });
        }
        None => a.verdicts.push(Verdict {
            name: "T* agreement".into(),
            pass: false,
            detail: "no modulation estimate".into(),
        }),
    }
    a.bootstrap = Some(boot);
    Ok(a)
}

/// Minimal log-log line chart.
pub fn svg_loglog(title: &str, xlabel: &str, ylabel: &str, lines: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    const COLOURS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];
    let pts: Vec<(f64, f64)> = lines
        .iter()
        .flat_map(|l| l.1.iter())
        .filter(|p| p.0 > 0.0 && p.1 > 0.0)
        .map(|p| (p.0.log10(), p.1.log10()))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), p| (a.min(p.0), b.max(p.0), c.min(p.1), d.max(p.1)),
    );
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">log10 {xlabel}</text>\n\
         <text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">log10 {ylabel}</text>\n",
        W / 2.0,
        W - 2.0 * PAD,
        H - 2.0 * PAD,
        W / 2.0,
        H - 15.0,
        H / 2.0,
        H / 2.0
    );
    for (v, anchor, x, y) in [(x0, "start", sx(x0), H - PAD + 15.0), (x1, "end", sx(x1), H - PAD + 15.0)] {
        s += &format!("<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\">{v:.2}</text>\n");
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        s += &format!("<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\">{v:.2}</text>\n", PAD - 4.0);
    }
    for (k, (name, data)) in lines.iter().enumerate() {
        let c = COLOURS[k % COLOURS.len()];
        let path: Vec<String> = data
            .iter()
            .filter(|p| p.0 > 0.0 && p.1 > 0.0)
            .map(|p| format!("{:.2},{:.2}", sx(p.0.log10()), sy(p.1.log10())))
            .collect();
        s += &format!("<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"1.5\" points=\"{}\"/>\n", path.join(" "));
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{c}\">{name}</text>\n",
            W - PAD + 4.0 - 120.0,
            PAD + 16.0 * (k as f64 + 1.0)
        );
    }
    s + "</svg>\n"
}

/// Writes the analysis outputs into `root`, recording file names in `files`.
fn write_analysis(a: &Analysis, profile: &ProfileTable, root: &Path, svg: bool, files: &mut Vec<String>) -> Result<()> {
    let rel = |n: &str| n.to_string();
    let t_star = a.estimate.map(|e| e.t_star).unwrap_or(f64::NAN);
    for (label, s) in &a.series {
        let mut buf = vec![];
        s.write_csv(t_star, &mut buf)?;
        write_file(root, &rel(&format!("seminorm_{label}_alpha{:.2}.csv", s.alpha)), files, &buf)?;
    }
    let fits = csv_bytes(
        &["label", "alpha", "window_lo", "window_hi", "slope", "expected", "prefactor", "residual", "samples", "span", "pass"],
        a.slopes.iter().map(|s| {
            let f = s.fit;
            vec![
                s.label.clone(),
                s.alpha.to_string(),
                s.window.0.to_string(),
                s.window.1.to_string(),
                opt(f.map(|f| f.slope)),
                opt(s.expected),
                opt(f.map(|f| f.prefactor)),
                opt(f.map(|f| f.residual)),
                f.map(|f| f.samples.to_string()).unwrap_or_default(),
                opt(f.map(|f| f.span)),
                s.pass.to_string(),
            ]
        }),
    )?;
    write_file(root, &rel("rate_fits.csv"), files, &fits)?;
    if let Some(c) = &a.comparison {
        let r = &c.rescaled;
        let rows = (0..r.y.len()).map(|i| {
            let (wb, wbp, _) = profile.eval(r.y[i]);
            vec![r.y[i].to_string(), r.w[i].to_string(), wb.to_string(), r.w_y[i].to_string(), wbp.to_string()]
        });
        write_file(root, &rel("profile_overlay.csv"), files, &csv_bytes(&["y", "W", "W_profile", "W_y", "W_y_profile"], rows)?)?;
    }
    if let Some(b) = &a.bootstrap {
        let rows = b.series.iter().flat_map(|s| {
            s.samples
                .iter()
                .map(move |&(sv, m)| vec![s.id.clone(), format!("{:?}", s.kind).to_lowercase(), sv.to_string(), m.to_string()])
        });
        write_file(root, &rel("bootstrap_margins.csv"), files, &csv_bytes(&["bound", "kind", "s", "margin"], rows)?)?;
        write_file(root, &rel("bootstrap.txt"), files, b.report.summary_table().as_bytes())?;
    }
    write_file(root, &rel("verdict.txt"), files, a.verdict_table().as_bytes())?;
    if svg && !a.series.is_empty() {
        let lines: Vec<(String, Vec<(f64, f64)>)> = a
            .series
            .iter()
            .filter(|(l, _)| l == "centre")
            .map(|(_, s)| (format!("alpha {}", s.alpha), s.samples.iter().map(|&(t, v)| (t_star - t, v)).collect()))
            .collect();
        write_file(root, &rel("rate_fits.svg"), files, svg_loglog("Hoelder semi-norms near x*", "T* - t", "semi-norm", &lines).as_bytes())?;
        if let Some(c) = &a.comparison {
            let r = &c.rescaled;
            let meas: Vec<(f64, f64)> = r.y.iter().zip(&r.w_y).filter(|p| *p.0 > 0.0).map(|(&y, &v)| (y, -v)).collect();
            let prof: Vec<(f64, f64)> = r.y.iter().filter(|y| **y > 0.0).map(|&y| (y, -profile.eval(y).1)).collect();
            let lines = vec![("-W_y (run)".to_string(), meas), ("-W' (profile)".to_string(), prof)];
            write_file(root, &rel("profile_overlay.svg"), files, svg_loglog("Rescaled slope", "y", "-W_y", &lines).as_bytes())?;
        }
    }
    Ok(())
}

fn default_profile() -> Result<ProfileTable> {
    Ok(solve_profile(1.0, 1e8, 1e-12)?)
}

fn profile_report(p: &ProfileTable, ymax: f64) -> VerifyReport {
    let mut rep = VerifyReport::new(&format!("profile beta = {}", p.beta));
    let (_, w1, w2) = p.eval(0.0);
    let w3 = p.eval_third(0.0);
    let tight = |id: &str, dom: &str, err: f64, tol: f64| (id.to_string(), dom.to_string(), err, tol);
    let mut items = vec![
        tight("W'(0)", "W'(0) = -2", (w1 + 2.0).abs(), 1e-10),
        tight("W''(0)", "W''(0) = 0", w2.abs(), 1e-10),
        tight("W'''(0)", &format!("W'''(0) = 256 beta = {}", 256.0 * p.beta), (w3 - 256.0 * p.beta).abs(), 1e-6 * p.beta),
    ];
    let lim = ymax.min(1e3);
    let res = profile_residual_upto(p, lim).max();
    items.push(tight("residual", &format!("equation residual on |y| <= {lim:e}"), res, 1e-8));
    if (p.beta - 1.0).abs() < 1e-12 && ymax >= 1e6 {
        let target = 50f64.powf(-0.2);
        let v = 1e6f64.powf(0.4) * p.eval(1e6).1.abs();
        items.push(tight("tail", "y^(2/5)|W'(y)| at y = 1e6 within 2% of 50^(-1/5)", (v / target - 1.0).abs(), 0.02));
    }
    for (id, dom, err, tol) in items {
        let c = rep.push(&id, &dom, Worst::of(tol - err, 0.0));
        c.pass = err <= tol;
        c.note = Some(format!("error {err:.3e}"));
    }
    rep
}

fn cmd_profile(a: &ProfileArgs) -> Result<bool> {
    let p = solve_profile(a.beta, a.ymax, a.tol)?;
    fs::create_dir_all(&a.out)?;
    p.save_csv(&a.out.join("profile.csv"))?;
    let mut reports = vec![profile_report(&p, a.ymax)];
    if (a.beta - 1.0).abs() < 1e-12 {
        let cfg = ProfileCheckConfig {
            y_max: a.ymax.min(ProfileCheckConfig::default().y_max),
            ..Default::default()
        };
        reports.push(check_profile_inequalities(&p, &cfg)?);
    }
    emit_reports(&reports, &a.out)
}

fn emit_reports(reports: &[VerifyReport], out: &Path) -> Result<bool> {
    fs::create_dir_all(out)?;
    let text: String = reports.iter().map(|r| r.summary_table() + "\n").collect();
    print!("{text}");
    fs::write(out.join("report.txt"), &text)?;
    fs::write(out.join("report.json"), serde_json::to_vec_pretty(reports)?)?;
    Ok(reports.iter().all(|r| r.all_pass()))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<bool> {
    let cfg = build_config(a.model.into(), a.config.as_deref(), &a.overrides)?;
    let profile = default_profile()?;
    let traj = pde::run(&cfg, &profile)?;
    let m = write_run(&traj, &profile, &a.out)?;
    println!(
        "stop: {:?}; steps: {}; blow-up: {}; snapshots: {}",
        m.stop,
        m.steps,
        m.blowup,
        m.snapshots.len()
    );
    if let Some(e) = m.blowup_estimate {
        println!("T* = {:.8e}, x* = {:.6e}", e.t_star, e.x_star);
    }
    if let Some(msg) = &m.message {
        println!("{msg}");
    }
    println!("manifest: {}", a.out.join("manifest.json").display());
    Ok(!matches!(m.stop, StopReason::Instability | StopReason::Failure))
}

/// Runs the analysis of a saved run, writes its outputs and updates the manifest.
pub fn analyze_manifest(manifest: &Path, out: Option<&Path>, svg: bool, big_m: f64) -> Result<Analysis> {
    let (mut m, traj) = load_run(manifest)?;
    let profile = default_profile()?;
    let mut ac = AnalysisConfig::new(&traj.config);
    ac.bounds.big_m = big_m;
    let a = analyze_trajectory(&traj, &profile, &ac)?;
    let dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("analysis"));
    fs::create_dir_all(&out_dir)?;
    let mut written = vec![];
    write_analysis(&a, &profile, &out_dir, svg, &mut written)?;
    // Paths inside the run directory are recorded relative to it.
    let base = fs::canonicalize(&dir)?;
    let full = fs::canonicalize(&out_dir)?;
    let mut files = m.files.clone();
    for f in written {
        let name = match full.strip_prefix(&base) {
            Ok(rel) => rel.join(&f).display().to_string(),
            Err(_) => full.join(&f).display().to_string(),
        };
        if !files.contains(&name) {
            files.push(name);
        }
    }
    m.files = files;
    m.slopes = a.slopes.clone();
    m.blowup_estimate = a.estimate.or(m.blowup_estimate);
    m.modulation_t_star = a.modulation_t_star.or(m.modulation_t_star);
    m.verify.retain(|v| v.title != "bootstrap monitors");
    if let Some(b) = &a.bootstrap {
        m.verify.push(VerifySummary::from(&b.report));
    }
    save_manifest(&m, &dir)?;
    Ok(a)
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<bool> {
    let an = analyze_manifest(&a.manifest, a.out.as_deref(), a.svg, a.big_m)?;
    print!("{}", an.verdict_table());
    if let Some(b) = &an.bootstrap {
        print!("\n{}", b.report.summary_table());
    }
    Ok(an.all_pass())
}

fn cmd_verify(a: &VerifyArgs) -> Result<bool> {
    let profile = match &a.profile {
        Some(path) => ProfileTable::load_csv(path)?,
        None => solve_profile(1.0, a.ymax, 1e-12)?,
    };
    let cfg = ProfileCheckConfig {
        y_max: a.ymax.min(profile.y_max()).min(ProfileCheckConfig::default().y_max),
        ..Default::default()
    };
    let mut reports = vec![profile_report(&profile, cfg.y_max), check_profile_inequalities(&profile, &cfg)?];
    if let Some(path) = &a.manifest {
        let (_, traj) = load_run(path)?;
        let mut par = AnalysisConfig::new(&traj.config).bounds;
        par.big_m = a.big_m;
        if let Some(first) = traj.snapshots.first() {
            reports.push(validate_initial_data(&first.phys(&traj.config), &profile, &par));
        }
        let rescaled: Vec<RescaledSnapshot> = traj
            .snapshots
            .iter()
            .map(|s| rescale_snapshot(s, &traj.config))
            .collect::<Result<_, _>>()?;
        let samples: Vec<MonitorSample> = traj
            .snapshots
            .iter()
            .zip(&rescaled)
            .map(|(s, r)| MonitorSample {
                rsnap: r,
                tau_dot: s.record.rates.tau_dot,
                growth: traj.growth(&s.record),
            })
            .collect();
        reports.push(monitor_bootstrap(&samples, &profile, &par).report);
    }
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("out/verify"));
    emit_reports(&reports, &out)
}

/// Executes a parsed command line; `Ok(true)` when every requested check passed.
pub fn execute(cli: &Cli) -> Result<bool> {
    let ok = match &cli.command {
        Command::Profile(a) => cmd_profile(a)?,
        Command::Simulate(a) => cmd_simulate(a)?,
        Command::Analyze(a) => cmd_analyze(a)?,
        Command::Verify(a) => cmd_verify(a)?,
    };
    std::io::stdout().flush()?;
    Ok(ok)
}
