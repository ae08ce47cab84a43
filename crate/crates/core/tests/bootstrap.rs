use cusplab::pde::{make_initial_data, run, MeshMode, Model, SimConfig, Trajectory};
use cusplab::profile::{solve_profile, ProfileTable};
use cusplab::selfsim::{rescale_snapshot, RescaledSnapshot};
use cusplab::verify::{monitor_bootstrap, validate_initial_data, BootstrapReport, BoundKind, BoundParams, MonitorSample};
use std::sync::OnceLock;

fn profile() -> &'static ProfileTable {
    static P: OnceLock<ProfileTable> = OnceLock::new();
    P.get_or_init(|| solve_profile(1.0, 1e8, 1e-12).unwrap())
}

fn monitor(traj: &Trajectory, par: &BoundParams) -> BootstrapReport {
    let rescaled: Vec<RescaledSnapshot> = traj
        .snapshots
        .iter()
        .map(|s| rescale_snapshot(s, &traj.config).unwrap())
        .collect();
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
    monitor_bootstrap(&samples, profile(), par)
}

fn short_run(model: Model, eps: f64, stop: f64, n: usize, resolution: f64) -> Trajectory {
    let mut cfg = SimConfig::new(model);
    cfg.eps = eps;
    cfg.n = n;
    cfg.mesh = MeshMode::Tracking { resolution };
    cfg.stop_growth_factor = stop;
    run(&cfg, profile()).unwrap()
}

#[test]
fn assumption_bounds_hold_at_initial_time() {
    let traj = short_run(Model::Rsv, 0.3, 1.2, 8192, 0.01);
    let first = &traj.snapshots[0];
    assert_eq!(first.t(), -0.3);
    let r = rescale_snapshot(first, &traj.config).unwrap();
    // Z is constant initially, so Z_y vanishes below eps^{5/2}/sqrt(h*).
    let zy = r.z_y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(zy <= 0.3f64.powf(2.5) / 2.0, "{zy}");

    // W'' ~ 256 y at the origin needs M^{1/8} >= 256, so use M = 2^80 here.
    let par = BoundParams {
        big_m: 2f64.powi(80),
        ..BoundParams::new(0.3, 4.0)
    };
    let sample = MonitorSample {
        rsnap: &r,
        tau_dot: first.record.rates.tau_dot,
        growth: 1.0,
    };
    let rep = monitor_bootstrap(&[sample], profile(), &par);
    for s in rep.series.iter().filter(|s| s.kind == BoundKind::Assumption && s.id != "Wy_bound") {
        assert!(s.first_violation.is_none(), "{}\n{}", s.id, rep.report.summary_table());
    }
    // The y^2 weight vanishes at the origin, so the grid's slope defect there
    // is the whole violation.
    let wy = rep.report.get("Wy_bound").unwrap();
    let defect = r.constraint[1].abs();
    assert!(defect < 1e-3, "{defect}");
    assert!(wy.worst_margin >= -defect * (1.0 + 1e-6), "{} {defect}", wy.worst_margin);
    let default_m = monitor_bootstrap(&[sample], profile(), &BoundParams::new(0.3, 4.0));
    assert!(!default_m.report.get("Wyy_bound").unwrap().pass);

    let init = validate_initial_data(&make_initial_data(&traj.config, profile()).unwrap(), profile(), &par);
    assert!(init.get("init_h").unwrap().pass);
}

#[test]
fn large_eps_run_violates_and_flags_a_bound() {
    let traj = short_run(Model::Rb, 0.5, 4.0, 4096, 0.02);
    let rep = monitor(&traj, &BoundParams::new(0.5, 4.0));
    let violated: Vec<_> = rep
        .series
        .iter()
        .filter(|s| s.kind == BoundKind::Assumption && s.first_violation.is_some())
        .map(|s| s.id.as_str())
        .collect();
    assert!(!violated.is_empty(), "{}", rep.report.summary_table());
    assert!(!rep.report.all_pass());
    // Series continue past the first violation.
    let w3 = rep.series.iter().find(|s| s.id == "Wy3_0").unwrap();
    assert_eq!(w3.samples.len(), traj.snapshots.len());
}
