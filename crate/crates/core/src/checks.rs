//! Built-in property suites behind `ksfem check --suite <name>`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cli::{build_scenario, parse_config_str};
use crate::diagnostics::total_mass;
use crate::error::{Error, Result};
use crate::mesh::{make_domain, triangulate, DomainPreset, Point, TriMesh};
use crate::operator::{assemble_mass, assemble_stiffness, solve_spd, ScalarField};
use crate::reactions::{
    check_quasipositivity, CoefficientPair, Cutoff, Fn4, KineticParams, ReactionNetwork, SampleBox,
};
use crate::stepper::Stepper;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        pass,
        detail,
    }
}

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
    .expect("reference triangle")
}

#[allow(clippy::needless_range_loop)]
pub fn suite_operators() -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();

    // Hand-derived element matrices on the reference triangle.
    let tri = reference_triangle();
    let k = assemble_stiffness(&tri, &ScalarField::constant(&tri, 1.0))?;
    let k_expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            worst = worst.max((k.get(i, j) - k_expected[i][j]).abs());
        }
    }
    results.push(check(
        "local_stiffness_oracle",
        worst <= 1e-14,
        format!("max entry error {worst:.2e}"),
    ));

    let m = assemble_mass(&tri, false);
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 2.0 / 24.0 } else { 1.0 / 24.0 };
            worst = worst.max((m.get(i, j) - want).abs());
        }
    }
    let ml = assemble_mass(&tri, true);
    for i in 0..3 {
        worst = worst.max((ml.get(i, i) - 1.0 / 6.0).abs());
    }
    results.push(check(
        "local_mass_oracle",
        worst <= 1e-14,
        format!("max entry error {worst:.2e}"),
    ));

    // Row sums and symmetry on an L-shape mesh with a varying coefficient.
    let domain = make_domain(DomainPreset::LShape)?;
    let mesh = triangulate(&domain, 0.1, None, true)?;
    let mu = ScalarField::from_fn(&mesh, |x, y| 0.7 + x * y + 0.3 * x);
    let k = assemble_stiffness(&mesh, &mu)?;
    let scale = k.max_abs();
    let row_worst = k.row_sums().iter().fold(0.0f64, |m, s| m.max(s.abs()));
    results.push(check(
        "stiffness_row_sums_zero",
        row_worst <= 1e-12 * scale,
        format!("max |row sum| {row_worst:.2e} vs scale {scale:.2e}"),
    ));
    let asym = k.asymmetry();
    results.push(check(
        "stiffness_symmetric",
        asym <= 1e-14 * scale,
        format!("max asymmetry {asym:.2e}"),
    ));

    // Kernel of the Neumann stiffness contains exactly the constants.
    let ones = vec![1.0; mesh.node_count()];
    let k_ones = k.apply(&ones)?;
    let const_resid = k_ones.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut nonconst_ok = true;
    for seed in 0..10u64 {
        let n = mesh.node_count();
        let mut x: Vec<f64> = (0..n)
            .map(|i| (((i as u64 + 3) * (seed + 11) * 2654435761) % 997) as f64 / 997.0)
            .collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        x.iter_mut().for_each(|v| *v -= mean);
        let energy: f64 = x.iter().zip(k.apply(&x)?.iter()).map(|(a, b)| a * b).sum();
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        if energy <= 1e-12 * norm2 {
            nonconst_ok = false;
        }
    }
    results.push(check(
        "stiffness_kernel_constants",
        const_resid <= 1e-12 * scale && nonconst_ok,
        format!(
            "|K 1|_inf = {const_resid:.2e}; sampled nonconstant energies positive: {nonconst_ok}"
        ),
    ));

    // One implicit Euler step maps nonnegative vectors to nonnegative ones
    // and contracts the sup norm (nonobtuse mesh, lumped mass, mu > 0).
    let square = triangulate(&make_domain(DomainPreset::UnitSquare)?, 0.125, None, true)?;
    let n = square.node_count();
    let ml = assemble_mass(&square, true);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut min_out: f64 = f64::INFINITY;
    let mut max_growth: f64 = f64::NEG_INFINITY;
    for _ in 0..200 {
        let mu =
            ScalarField::from_values(&square, (0..n).map(|_| rng.gen_range(0.5..2.0)).collect())?;
        let k = assemble_stiffness(&square, &mu)?;
        let a = ml.add_scaled(&k, 0.01)?;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let out = solve_spd(&a, &ml.apply(&x)?, 1e-14, 100_000)?;
        min_out = min_out.min(out.iter().copied().fold(f64::INFINITY, f64::min));
        let in_max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let out_max = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        max_growth = max_growth.max(out_max - in_max);
    }
    results.push(check(
        "semigroup_positivity",
        min_out >= -1e-12,
        format!("worst undershoot {min_out:.2e}"),
    ));
    results.push(check(
        "semigroup_linf_contractive",
        max_growth <= 1e-12,
        format!("worst sup-norm growth {max_growth:.2e}"),
    ));

    // Sign-indefinite coefficients must be admitted: exhibit a negative
    // quadratic form.
    let mu = ScalarField::from_fn(&square, |x, _| if x > 0.5 { -1.0 } else { 1.0 });
    let k = assemble_stiffness(&square, &mu)?;
    let idx = square
        .nodes()
        .iter()
        .position(|p| (p.x - 0.875).abs() < 1e-9 && (p.y - 0.5).abs() < 1e-9)
        .ok_or_else(|| Error::InvalidParameter("probe node missing".into()))?;
    let mut x = vec![0.0; n];
    x[idx] = 1.0;
    let form: f64 = x.iter().zip(k.apply(&x)?.iter()).map(|(a, b)| a * b).sum();
    results.push(check(
        "indefinite_mu_quadratic_form",
        form < 0.0,
        format!("x^T K(mu) x = {form:.3e} for sign-changing mu"),
    ));

    Ok(results)
}

pub fn suite_reactions() -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();

    let net = ReactionNetwork::full(KineticParams::with_constant_production(
        1.0, 2.0, 0.0, 0.0, 0.0,
    )?);
    let r = net.eval(0.0, 1.0, 4.0, 3.0)?;
    results.push(check(
        "printed_kinetics_spot_value",
        (r[1] - 2.0).abs() <= 1e-15 && r[0] == 0.0,
        format!("R2(0,1,4,3) = {}", r[1]),
    ));

    let net = ReactionNetwork::full(KineticParams::with_constant_production(
        1.3, 0.7, 0.4, 2.0, 0.0,
    )?);
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let (u, v, p, w) = (
            rng.gen_range(-2.0..4.0),
            rng.gen_range(0.0..5.0),
            rng.gen_range(0.0..5.0),
            rng.gen_range(0.0..5.0),
        );
        let r = net.eval(u, v, p, w)?;
        worst = worst.max((r[2] + r[3]).abs() / r[2].abs().max(r[3].abs()).max(1.0));
    }
    results.push(check(
        "enzyme_balance_u_g_zero",
        worst <= 1e-14,
        format!("max relative |R3 + R4| = {worst:.2e}"),
    ));

    let c = Cutoff::with_level(5.0, 1.0)?;
    let identity_ok = [3.0f64, -4.99, 5.0, -5.0, 0.0]
        .iter()
        .all(|&x| c.eval(x).to_bits() == x.to_bits());
    let saturation_ok = c.eval(-100.0) == -6.0 && c.eval(100.0) == 6.0;
    let mut monotone_ok = true;
    for _ in 0..2000 {
        let x: f64 = rng.gen_range(-10.0..10.0);
        let y: f64 = rng.gen_range(-10.0..10.0);
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        if c.eval(lo) > c.eval(hi) || c.eval(x).abs() > 6.0 {
            monotone_ok = false;
        }
    }
    results.push(check(
        "cutoff_identity_saturation_monotone",
        identity_ok && saturation_ok && monotone_ok,
        format!("identity {identity_ok}, saturation {saturation_ok}, monotone {monotone_ok}"),
    ));

    let net = ReactionNetwork::full(KineticParams::with_constant_production(
        1.0, 0.5, 0.25, 1.0, 0.5,
    )?);
    let boxx = SampleBox {
        u: (0.0, 3.0),
        v: (0.0, 2.0),
        p: (0.0, 2.0),
        w: (0.0, 2.0),
    };
    let rep = check_quasipositivity(&net, &boxx, 5)?;
    results.push(check(
        "quasipositivity_full_network",
        rep.ok,
        format!("ok = {}", rep.ok),
    ));

    let zero: Fn4 = Arc::new(|_, _, _, _| 0.0);
    let bad: Fn4 = Arc::new(|_, _, _, _| -1.0);
    let net = ReactionNetwork::custom([zero.clone(), zero.clone(), zero, bad]);
    let rep = check_quasipositivity(&net, &boxx, 3)?;
    results.push(check(
        "quasipositivity_violation_witnessed",
        !rep.ok && rep.witness.map(|w| w.component == 4).unwrap_or(false),
        format!("witness = {:?}", rep.witness),
    ));

    let cp = CoefficientPair::classical(2.0)?;
    let (kappa, sigma) = cp.eval(3.0, 7.0)?;
    results.push(check(
        "classical_coefficients",
        kappa == 1.0 && sigma == -6.0,
        format!("(kappa, sigma)(3, 7) = ({kappa}, {sigma})"),
    ));

    Ok(results)
}

pub fn suite_conservation() -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();

    // Full model on the L-shape: cell mass is conserved (R1 = 0, Neumann).
    let full_cfg = "\
[domain]
preset = l_shape
h = 0.1
[model]
preset = full
r1 = 1
r_neg1 = 0.5
r2 = 0.25
chi = 1
c_f = 1
c_g = 0.5
[initial]
u0 = gaussian 0.25 0.25 0.15 1.0 0.1
v0 = constant 0.5
p0 = constant 0.5
w0 = constant 0
[stepping]
t_end = 0.1
tau0 = 1e-3
solver_tol = 1e-12
";
    let cfg = parse_config_str(full_cfg)?;
    let scenario = build_scenario(&cfg)?;
    let stepper = Stepper::new(&scenario.mesh, scenario.step.clone())?;
    let out = stepper.run(
        scenario.initial,
        &scenario.coefficients,
        &scenario.net,
        &scenario.monitor,
    )?;
    let m0 = out.series.first().map(|r| r.mass_u).unwrap_or(0.0);
    let drift = out
        .series
        .iter()
        .fold(0.0f64, |m, r| m.max((r.mass_u - m0).abs()))
        / m0.abs().max(1e-300);
    results.push(check(
        "cell_mass_conserved",
        drift <= 1e-8,
        format!(
            "relative drift {drift:.2e} over {} steps",
            out.series.len() - 1
        ),
    ));

    // Enzyme total conserved when u g = 0 (here u stays identically zero).
    let enzyme_cfg = "\
[domain]
preset = l_shape
h = 0.1
[model]
preset = full
r1 = 1
r_neg1 = 0.5
r2 = 0.25
chi = 1
c_f = 0
c_g = 0
[initial]
u0 = constant 0
v0 = gaussian 0.25 0.25 0.2 1.0 0.2
p0 = gaussian 0.25 0.75 0.2 0.8 0.1
w0 = constant 0.3
[stepping]
t_end = 0.1
tau0 = 1e-3
solver_tol = 1e-12
";
    let cfg = parse_config_str(enzyme_cfg)?;
    let scenario = build_scenario(&cfg)?;
    let stepper = Stepper::new(&scenario.mesh, scenario.step.clone())?;
    let out = stepper.run(
        scenario.initial,
        &scenario.coefficients,
        &scenario.net,
        &scenario.monitor,
    )?;
    let e0 = out.series.first().map(|r| r.mass_p_plus_w).unwrap_or(0.0);
    let drift = out
        .series
        .iter()
        .fold(0.0f64, |m, r| m.max((r.mass_p_plus_w - e0).abs()))
        / e0.abs().max(1e-300);
    results.push(check(
        "enzyme_total_conserved",
        drift <= 1e-8,
        format!("relative drift {drift:.2e}"),
    ));
    let u_stays_zero = out.final_state.u.linf() == 0.0;
    results.push(check(
        "u_zero_is_invariant",
        u_stays_zero,
        format!("final |u|_inf = {}", out.final_state.u.linf()),
    ));

    // Determinism: identical runs give identical diagnostics rows.
    let cfg = parse_config_str(full_cfg)?;
    let rerun = |cfg: &crate::cli::RunConfigFile| -> Result<Vec<String>> {
        let scenario = build_scenario(cfg)?;
        let stepper = Stepper::new(&scenario.mesh, scenario.step.clone())?;
        let out = stepper.run(
            scenario.initial,
            &scenario.coefficients,
            &scenario.net,
            &scenario.monitor,
        )?;
        Ok(out.series.iter().map(|r| r.to_csv_row()).collect())
    };
    let a = rerun(&cfg)?;
    let b = rerun(&cfg)?;
    results.push(check(
        "runs_bit_identical",
        a == b,
        format!("{} rows compared", a.len()),
    ));

    // The mass quadrature itself, against polygon areas.
    let domain = make_domain(DomainPreset::LShape)?;
    let mesh = triangulate(&domain, 0.1, None, false)?;
    let ones = ScalarField::constant(&mesh, 1.0);
    let err = (total_mass(&ones, &mesh) - 0.75).abs();
    results.push(check(
        "mass_quadrature_exact",
        err <= 1e-12,
        format!("area error {err:.2e}"),
    ));

    Ok(results)
}

pub fn run_suite(name: &str) -> Result<Vec<CheckResult>> {
    match name {
        "operators" => suite_operators(),
        "reactions" => suite_reactions(),
        "conservation" => suite_conservation(),
        other => Err(Error::InvalidParameter(format!(
            "unknown suite `{other}`; expected operators, reactions, or conservation"
        ))),
    }
}
