//! Acceptance suite: one test per exit criterion, each printing a PASS line
//! with the measured quantity. Run with
//! `cargo test --test acceptance -- --nocapture` to see the report.

use ksfem::cli::{build_scenario, parse_config_str, run_command};
use ksfem::diagnostics::DiagRecord;
use ksfem::mesh::{make_domain, triangulate, DomainPreset, Point, TriMesh};
use ksfem::operator::{assemble_mass, assemble_stiffness, solve_spd, ScalarField};
use ksfem::reactions::{
    r2_sup_on_clamp_box, CoefficientPair, Cutoff, KineticParams, ReactionNetwork,
};
use ksfem::stepper::{MonitorConfig, SimState, StepConfig, Stepper, StopReason};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference_triangle() -> TriMesh {
    TriMesh::from_parts(
        vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ],
        vec![[0, 1, 2]],
        vec![[0, 1], [1, 2], [2, 0]],
        vec![],
    )
    .unwrap()
}

fn gaussian(mesh: &TriMesh, cx: f64, cy: f64, width: f64, amp: f64, offset: f64) -> ScalarField {
    ScalarField::from_fn(mesh, |x, y| {
        offset + amp * (-(((x - cx).powi(2) + (y - cy).powi(2)) / (width * width))).exp()
    })
}

fn origin_monitor() -> MonitorConfig {
    MonitorConfig {
        corner: Point::new(0.0, 0.0),
        corner_radius: 0.1,
    }
}

#[test]
#[allow(clippy::needless_range_loop)]
fn criterion_01_element_oracles() {
    let mesh = reference_triangle();
    let k = assemble_stiffness(&mesh, &ScalarField::constant(&mesh, 1.0)).unwrap();
    let k_expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
    let m = assemble_mass(&mesh, false);
    let ml = assemble_mass(&mesh, true);
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            worst = worst.max((k.get(i, j) - k_expected[i][j]).abs());
            let m_want = if i == j { 2.0 / 24.0 } else { 1.0 / 24.0 };
            worst = worst.max((m.get(i, j) - m_want).abs());
            let l_want = if i == j { 1.0 / 6.0 } else { 0.0 };
            worst = worst.max((ml.get(i, j) - l_want).abs());
        }
    }
    assert!(worst <= 1e-14, "max element-matrix error {worst:.3e}");
    println!("PASS criterion 1 (element oracles): max entry error {worst:.3e} <= 1e-14");
}

fn full_model_lshape_run(c_f: f64, c_g: f64, u0_zero: bool) -> Vec<DiagRecord> {
    let domain = make_domain(DomainPreset::LShape).unwrap();
    let mesh = triangulate(&domain, 0.05, None, true).unwrap();
    let mut cfg = StepConfig::new(0.2);
    cfg.tau0 = 1e-3;
    cfg.solver_tol = 1e-12;
    let stepper = Stepper::new(&mesh, cfg).unwrap();

    let u0 = if u0_zero {
        ScalarField::constant(&mesh, 0.0)
    } else {
        gaussian(&mesh, 0.25, 0.25, 0.15, 1.0, 0.1)
    };
    let v0 = gaussian(&mesh, 0.25, 0.75, 0.2, 0.6, 0.2);
    let p0 = gaussian(&mesh, 0.75, 0.25, 0.2, 0.5, 0.1);
    let w0 = ScalarField::constant(&mesh, 0.3);
    let cutoff = Cutoff::from_initial_sup_norms(1.0, v0.linf(), p0.linf(), w0.linf()).unwrap();
    let net = ReactionNetwork::full(
        KineticParams::with_constant_production(1.0, 0.5, 0.25, c_f, c_g).unwrap(),
    )
    .with_cutoff(cutoff);
    let cp = CoefficientPair::classical(1.0).unwrap();
    let initial = SimState::new(0.0, u0, v0, p0, w0).unwrap();
    let monitor = MonitorConfig {
        corner: Point::new(0.5, 0.5),
        corner_radius: 0.1,
    };
    let out = stepper.run(initial, &cp, &net, &monitor).unwrap();
    assert_eq!(out.reason, StopReason::ReachedTEnd);
    assert_eq!(out.series.len(), 201, "expected 200 accepted steps");
    out.series
}

#[test]
fn criterion_02_mass_conservation() {
    let series = full_model_lshape_run(1.0, 0.5, false);
    let m0 = series[0].mass_u;
    let drift = series
        .iter()
        .fold(0.0f64, |acc, r| acc.max((r.mass_u - m0).abs()))
        / m0.abs();
    assert!(drift <= 1e-8, "relative mass drift {drift:.3e}");
    println!(
        "PASS criterion 2 (mass conservation): relative drift {drift:.3e} <= 1e-8 over 200 steps"
    );
}

#[test]
fn criterion_03_enzyme_conservation() {
    let series = full_model_lshape_run(0.0, 0.0, true);
    let e0 = series[0].mass_p_plus_w;
    let drift = series
        .iter()
        .fold(0.0f64, |acc, r| acc.max((r.mass_p_plus_w - e0).abs()))
        / e0.abs();
    assert!(drift <= 1e-8, "relative enzyme drift {drift:.3e}");
    println!(
        "PASS criterion 3 (enzyme conservation): relative drift {drift:.3e} <= 1e-8 over 200 steps"
    );
}

#[test]
fn criterion_04_manufactured_solution_convergence() {
    // Pure heat, u0 = cos(pi x) cos(pi y), exact u(t) = e^{-2 pi^2 t} u0.
    // tau = 0.16 h^2 keeps the time error proportional to the space error.
    let domain = make_domain(DomainPreset::UnitSquare).unwrap();
    let l2_error = |h: f64, tau: f64| -> f64 {
        let mesh = triangulate(&domain, h, None, true).unwrap();
        let mut cfg = StepConfig::new(0.01);
        cfg.tau0 = tau;
        cfg.tau_min = tau / 1e6;
        cfg.solver_tol = 1e-12;
        let stepper = Stepper::new(&mesh, cfg).unwrap();
        let initial = SimState::new(
            0.0,
            ScalarField::from_fn(&mesh, |x, y| {
                (std::f64::consts::PI * x).cos() * (std::f64::consts::PI * y).cos()
            }),
            ScalarField::constant(&mesh, 0.0),
            ScalarField::constant(&mesh, 0.0),
            ScalarField::constant(&mesh, 0.0),
        )
        .unwrap();
        let cp = CoefficientPair::constant_kappa(1.0, 0.0, 0.5).unwrap();
        let net = ksfem::reactions::ReactionNetwork::custom([
            std::sync::Arc::new(|_, _, _, _| 0.0),
            std::sync::Arc::new(|_, _, _, _| 0.0),
            std::sync::Arc::new(|_, _, _, _| 0.0),
            std::sync::Arc::new(|_, _, _, _| 0.0),
        ]);
        let out = stepper.run(initial, &cp, &net, &origin_monitor()).unwrap();
        assert_eq!(out.reason, StopReason::ReachedTEnd);
        let state = out.final_state;
        let decay = (-2.0 * std::f64::consts::PI.powi(2) * state.t).exp();
        let diff: Vec<f64> = state
            .u
            .values()
            .iter()
            .zip(mesh.nodes())
            .map(|(&uh, p)| {
                uh - decay * (std::f64::consts::PI * p.x).cos() * (std::f64::consts::PI * p.y).cos()
            })
            .collect();
        let mass = assemble_mass(&mesh, false);
        let md = mass.apply(&diff).unwrap();
        diff.iter().zip(&md).map(|(a, b)| a * b).sum::<f64>().sqrt()
    };
    let e_coarse = l2_error(0.125, 0.0025);
    let e_fine = l2_error(0.0625, 0.000625);
    let ratio = e_coarse / e_fine;
    assert!(
        (3.2..=4.8).contains(&ratio),
        "L2 error ratio {ratio:.3} outside [3.2, 4.8] ({e_coarse:.3e} / {e_fine:.3e})"
    );
    println!(
        "PASS criterion 4 (manufactured solution): L2 errors {e_coarse:.3e} -> {e_fine:.3e}, ratio {ratio:.2} in [3.2, 4.8]"
    );
}

#[test]
fn criterion_05_positivity_preservation() {
    let domain = make_domain(DomainPreset::UnitSquare).unwrap();
    let mesh = triangulate(&domain, 1.0 / 16.0, None, true).unwrap();
    assert!(mesh.is_nonobtuse());
    let mut cfg = StepConfig::new(0.1);
    cfg.tau0 = 1e-3;
    cfg.solver_tol = 1e-12;
    cfg.lumped_mass = true;
    let stepper = Stepper::new(&mesh, cfg).unwrap();
    let v0 = gaussian(&mesh, 0.3, 0.3, 0.25, 1.0, 0.0);
    let p0 = gaussian(&mesh, 0.7, 0.4, 0.25, 1.0, 0.0);
    let w0 = ScalarField::constant(&mesh, 0.5);
    let cutoff = Cutoff::from_initial_sup_norms(1.0, v0.linf(), p0.linf(), w0.linf()).unwrap();
    let net = ReactionNetwork::full(
        KineticParams::with_constant_production(1.0, 0.5, 0.25, 1.0, 0.5).unwrap(),
    )
    .with_cutoff(cutoff);
    let qp = ksfem::reactions::check_quasipositivity(
        &net,
        &ksfem::reactions::SampleBox {
            u: (0.0, 2.0),
            v: (0.0, 2.0),
            p: (0.0, 2.0),
            w: (0.0, 2.0),
        },
        5,
    )
    .unwrap();
    assert!(qp.ok, "network must be quasipositive");
    let initial = SimState::new(0.0, gaussian(&mesh, 0.5, 0.5, 0.2, 1.0, 0.0), v0, p0, w0).unwrap();
    let cp = CoefficientPair::classical(1.0).unwrap();
    let out = stepper.run(initial, &cp, &net, &origin_monitor()).unwrap();
    assert_eq!(out.reason, StopReason::ReachedTEnd);
    assert_eq!(out.series.len(), 101);
    let worst = out.series.iter().fold(f64::INFINITY, |m, r| {
        m.min(r.min_v).min(r.min_p).min(r.min_w)
    });
    assert!(worst >= -1e-10, "worst undershoot {worst:.3e}");
    println!(
        "PASS criterion 5 (positivity): min over 100 steps of (v, p, w) = {worst:.3e} >= -1e-10"
    );
}

#[test]
fn criterion_06_semigroup_positivity_contractivity() {
    let domain = make_domain(DomainPreset::UnitSquare).unwrap();
    let mesh = triangulate(&domain, 0.125, None, true).unwrap();
    let n = mesh.node_count();
    let ml = assemble_mass(&mesh, true);
    let mut rng = ChaCha8Rng::seed_from_u64(20240131);
    let mut min_out = f64::INFINITY;
    let mut max_growth = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let mu = ScalarField::from_values(&mesh, (0..n).map(|_| rng.gen_range(0.5..2.0)).collect())
            .unwrap();
        let k = assemble_stiffness(&mesh, &mu).unwrap();
        let a = ml.add_scaled(&k, 0.01).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let out = solve_spd(&a, &ml.apply(&x).unwrap(), 1e-14, 100_000).unwrap();
        min_out = min_out.min(out.iter().copied().fold(f64::INFINITY, f64::min));
        let in_max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let out_max = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        max_growth = max_growth.max(out_max - in_max);
    }
    assert!(min_out >= -1e-12, "worst undershoot {min_out:.3e}");
    assert!(
        max_growth <= 1e-12,
        "worst sup-norm growth {max_growth:.3e}"
    );
    println!(
        "PASS criterion 6 (semigroup): 1000 vectors, undershoot {min_out:.3e} >= -1e-12, growth {max_growth:.3e} <= 1e-12"
    );
}

#[test]
fn criterion_07_blowup_termination() {
    let dir = tempfile::tempdir().unwrap();
    let series_path = dir.path().join("blowup.csv");
    let text = format!(
        "\
[domain]
preset = unit_square
h = 1.0
[model]
preset = custom
R1 = u_squared
[initial]
u0 = constant 1
[stepping]
t_end = 2.0
tau0 = 1e-3
tau_min = 1e-6
blowup_linf = 50
adapt = halving
[output]
series = {}
",
        series_path.display()
    );
    let cfg = parse_config_str(&text).unwrap();
    let summary = run_command(&cfg).unwrap();
    assert_eq!(summary.exit_code, 2, "blow-up exit code");
    assert_eq!(summary.reason, StopReason::BlowupDetected);
    assert!(
        summary.final_t >= 0.9 && summary.final_t <= 1.05,
        "blow-up at t = {} (exact ODE blow-up at t = 1)",
        summary.final_t
    );
    // Halving engaged: some accepted step ran at tau < tau0.
    let csv = std::fs::read_to_string(&series_path).unwrap();
    let min_tau = csv
        .lines()
        .skip(1)
        .filter_map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let step: usize = cols[0].parse().ok()?;
            if step == 0 {
                return None;
            }
            cols[2].parse::<f64>().ok()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(
        min_tau < 1e-3,
        "tau-halving engaged (min accepted tau {min_tau:.3e})"
    );
    println!(
        "PASS criterion 7 (blow-up): exit code 2 at t = {:.4} in [0.9, 1.05], min accepted tau {min_tau:.3e} < tau0",
        summary.final_t
    );
}

#[test]
fn criterion_08_boundedness_margin() {
    // Representative completed runs: the full-model conservation run and a
    // classical-preset run assembled from a config.
    let delta = 1.0;
    let check_run = |series: &[DiagRecord], net: &ReactionNetwork, label: &str| {
        assert_eq!(
            series[0].margin, delta,
            "margin at t = 0 must equal delta exactly, got {}",
            series[0].margin
        );
        let v0_inf = series[0].min_v.abs().max(series[0].max_v.abs());
        let u_bound = series
            .iter()
            .fold(0.0f64, |m, r| m.max(r.min_u.abs()).max(r.max_u.abs()));
        let b = r2_sup_on_clamp_box(net, u_bound.max(1e-9), 9).unwrap();
        for r in series {
            let v_inf = r.min_v.abs().max(r.max_v.abs());
            assert!(
                v_inf <= v0_inf + r.t * b + 1e-9,
                "{label}: |v|_inf = {v_inf} exceeds {v0_inf} + {} * {b} at step {}",
                r.t,
                r.step
            );
        }
        b
    };

    // Full model on the L-shape (same setup as criterion 2).
    let domain = make_domain(DomainPreset::LShape).unwrap();
    let mesh = triangulate(&domain, 0.05, None, true).unwrap();
    let mut cfg = StepConfig::new(0.2);
    cfg.solver_tol = 1e-12;
    let stepper = Stepper::new(&mesh, cfg).unwrap();
    let u0 = gaussian(&mesh, 0.25, 0.25, 0.15, 1.0, 0.1);
    let v0 = gaussian(&mesh, 0.25, 0.75, 0.2, 0.6, 0.2);
    let p0 = gaussian(&mesh, 0.75, 0.25, 0.2, 0.5, 0.1);
    let w0 = ScalarField::constant(&mesh, 0.3);
    let cutoff = Cutoff::from_initial_sup_norms(delta, v0.linf(), p0.linf(), w0.linf()).unwrap();
    let net = ReactionNetwork::full(
        KineticParams::with_constant_production(1.0, 0.5, 0.25, 1.0, 0.5).unwrap(),
    )
    .with_cutoff(cutoff);
    let cp = CoefficientPair::classical(1.0).unwrap();
    let initial = SimState::new(0.0, u0, v0, p0, w0).unwrap();
    let out = stepper
        .run(
            initial,
            &cp,
            &net,
            &MonitorConfig {
                corner: Point::new(0.5, 0.5),
                corner_radius: 0.1,
            },
        )
        .unwrap();
    assert_eq!(out.reason, StopReason::ReachedTEnd);
    let b1 = check_run(&out.series, &net, "full model");

    // Classical preset via the config path.
    let text = "\
[domain]
preset = unit_square
h = 0.0625
[model]
preset = classical
chi = 2
c_f = 1
c_k = 1
[initial]
u0 = gaussian 0.5 0.5 0.2 1.0 0.0
v0 = constant 0.4
[stepping]
t_end = 0.05
solver_tol = 1e-12
";
    let cfg = parse_config_str(text).unwrap();
    let scenario = build_scenario(&cfg).unwrap();
    let stepper = Stepper::new(&scenario.mesh, scenario.step.clone()).unwrap();
    let out = stepper
        .run(
            scenario.initial,
            &scenario.coefficients,
            &scenario.net,
            &scenario.monitor,
        )
        .unwrap();
    assert_eq!(out.reason, StopReason::ReachedTEnd);
    let b2 = check_run(&out.series, &scenario.net, "classical");

    println!(
        "PASS criterion 8 (boundedness margin): margin(0) = delta exactly; |v|_inf <= |v0|_inf + t * B held with B = {b1:.3} and {b2:.3}"
    );
}

#[test]
fn criterion_09_determinism_and_continuous_dependence() {
    // Byte-identical CSVs from identical configs.
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let series = dir.path().join(name);
        let text = format!(
            "\
[domain]
preset = unit_square
h = 0.125
[model]
preset = classical
chi = 3
[initial]
u0 = gaussian 0.5 0.5 0.2 1.0 0.1
v0 = constant 0.5
[stepping]
t_end = 0.02
[output]
series = {}
",
            series.display()
        );
        let cfg = parse_config_str(&text).unwrap();
        let summary = run_command(&cfg).unwrap();
        assert_eq!(summary.exit_code, 0);
        csvs.push(std::fs::read(&series).unwrap());
    }
    assert_eq!(
        csvs[0], csvs[1],
        "identical configs must give byte-identical CSVs"
    );

    // Continuous dependence: response to an L-inf perturbation of u0 scales
    // linearly across a decade of epsilon.
    let domain = make_domain(DomainPreset::UnitSquare).unwrap();
    let mesh = triangulate(&domain, 1.0 / 16.0, None, true).unwrap();
    let run_with_eps = |eps: f64| -> SimState {
        let mut cfg = StepConfig::new(0.05);
        cfg.solver_tol = 1e-12;
        let stepper = Stepper::new(&mesh, cfg).unwrap();
        let u0 = ScalarField::from_values(
            &mesh,
            gaussian(&mesh, 0.5, 0.5, 0.2, 1.0, 0.1)
                .values()
                .iter()
                .map(|v| v + eps)
                .collect(),
        )
        .unwrap();
        let v0 = ScalarField::constant(&mesh, 0.5);
        let p0 = ScalarField::constant(&mesh, 0.0);
        let w0 = ScalarField::constant(&mesh, 0.0);
        let cutoff = Cutoff::from_initial_sup_norms(1.0, v0.linf(), p0.linf(), w0.linf()).unwrap();
        let net = ReactionNetwork::simplified(
            ksfem::reactions::const_fn1(1.0),
            ksfem::reactions::const_fn1(1.0),
        )
        .with_cutoff(cutoff);
        let cp = CoefficientPair::classical(2.0).unwrap();
        let initial = SimState::new(0.0, u0, v0, p0, w0).unwrap();
        let out = stepper.run(initial, &cp, &net, &origin_monitor()).unwrap();
        assert_eq!(out.reason, StopReason::ReachedTEnd);
        out.final_state
    };
    let base = run_with_eps(0.0);
    let response = |eps: f64| -> f64 {
        let s = run_with_eps(eps);
        s.u.linf_diff(&base.u)
            .max(s.v.linf_diff(&base.v))
            .max(s.p.linf_diff(&base.p))
            .max(s.w.linf_diff(&base.w))
    };
    let r3 = response(1e-3);
    let r4 = response(1e-4);
    let ratio = r3 / r4;
    assert!(
        (5.0..=20.0).contains(&ratio),
        "response ratio {ratio:.2} outside [5, 20] ({r3:.3e} / {r4:.3e})"
    );
    println!(
        "PASS criterion 9 (determinism + continuous dependence): CSVs byte-identical; response ratio {ratio:.2} in [5, 20]"
    );
}

#[test]
fn criterion_10_corner_concentration() {
    let text = "\
[domain]
preset = l_shape
h = 0.05
[model]
preset = classical
chi = 10
c_f = 5
c_k = 1
[initial]
u0 = gaussian 0.25 0.25 0.1 1.0 0.0
v0 = constant 0
[stepping]
t_end = 0.05
tau0 = 1e-3
[output]
corner_x = 0.5
corner_y = 0.5
corner_radius = 0.15
";
    let cfg = parse_config_str(text).unwrap();
    let scenario = build_scenario(&cfg).unwrap();
    assert_eq!(scenario.monitor.corner, Point::new(0.5, 0.5));
    let stepper = Stepper::new(&scenario.mesh, scenario.step.clone()).unwrap();
    let out = stepper
        .run(
            scenario.initial,
            &scenario.coefficients,
            &scenario.net,
            &scenario.monitor,
        )
        .unwrap();
    assert_eq!(out.reason, StopReason::ReachedTEnd);
    let start = out.series.first().unwrap().corner_fraction;
    let end = out.series.last().unwrap().corner_fraction;
    assert!(
        end > start,
        "corner mass fraction must grow: {start:.4} -> {end:.4}"
    );
    println!(
        "PASS criterion 10 (corner concentration): fraction at reentrant corner {start:.4} -> {end:.4}"
    );
}
