//! Time integration of the coupled system by the decoupled IMEX scheme.
//!
//! One outer step of size tau:
//!
//! 1. (v, p, w): for each species solve
//!    `(M + tau k K1) x_new = M (x_old + tau R^eta(u_stage, v_old, p_old, w_old))`
//!    with K1 the unit-coefficient stiffness — diffusion implicit, clamped
//!    reactions explicit, u entering as a given stage function.
//! 2. u: solve
//!    `(M + tau K(kappa(u_stage, v_stage))) u_new
//!       = M (u_old + tau R1^eta(u_stage, v_stage, p_stage, w_stage))
//!         - tau K(sigma(u_stage, v_stage)) v_stage`,
//!    so the crossdiffusion term div(sigma grad v) acts as an explicit right-
//!    hand side and every linear system stays symmetric positive definite.
//! 3. Optionally repeat (1)-(2), feeding the latest u back in (Picard). With
//!    `picard_iters = 0` this is the plain lagged splitting.
//!
//! Runs terminate at `t_end`, on a blow-up trigger (sup norm of u above
//! `blowup_linf`, or non-finite fields), or when halving-on-failure drives
//! tau below `tau_min`. Under halving, an over-threshold step is rejected and
//! retried with tau/2 so the trajectory creeps up to the blow-up time instead
//! of overshooting it.

use crate::diagnostics::DiagRecord;
use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};
use crate::operator::{assemble_mass, assemble_stiffness, solve_spd, ScalarField, SparseOperator};
use crate::reactions::{CoefficientPair, ReactionNetwork};

/// The quadruple (u, v, p, w) at one time point.
#[derive(Clone, Debug)]
pub struct SimState {
    pub t: f64,
    pub u: ScalarField,
    pub v: ScalarField,
    pub p: ScalarField,
    pub w: ScalarField,
}

impl SimState {
    pub fn new(
        t: f64,
        u: ScalarField,
        v: ScalarField,
        p: ScalarField,
        w: ScalarField,
    ) -> Result<Self> {
        if !t.is_finite() {
            return Err(Error::NonFinite("state time".into()));
        }
        let id = u.mesh_id();
        for (name, f) in [("v", &v), ("p", &p), ("w", &w)] {
            if f.mesh_id() != id {
                return Err(Error::InvalidParameter(format!(
                    "field {name} lives on a different mesh"
                )));
            }
        }
        Ok(SimState { t, u, v, p, w })
    }

    pub fn all_finite(&self) -> bool {
        self.u.all_finite() && self.v.all_finite() && self.p.all_finite() && self.w.all_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdaptMode {
    None,
    HalvingOnFailure,
}

/// Time-stepping and termination parameters.
#[derive(Clone, Debug)]
pub struct StepConfig {
    pub tau0: f64,
    pub tau_min: f64,
    pub t_end: f64,
    pub picard_iters: usize,
    pub picard_tol: f64,
    pub blowup_linf: f64,
    pub k_v: f64,
    pub k_p: f64,
    pub k_w: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    pub lumped_mass: bool,
    pub adapt: AdaptMode,
}

impl StepConfig {
    /// Defaults for everything but the horizon.
    pub fn new(t_end: f64) -> Self {
        StepConfig {
            tau0: 1e-3,
            tau_min: 1e-6,
            t_end,
            picard_iters: 0,
            picard_tol: 1e-8,
            blowup_linf: 1e6,
            k_v: 1.0,
            k_p: 1.0,
            k_w: 1.0,
            solver_tol: crate::operator::DEFAULT_SOLVER_TOL,
            solver_max_iter: 20_000,
            lumped_mass: true,
            adapt: AdaptMode::HalvingOnFailure,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("tau0", self.tau0),
            ("tau_min", self.tau_min),
            ("picard_tol", self.picard_tol),
            ("blowup_linf", self.blowup_linf),
            ("k_v", self.k_v),
            ("k_p", self.k_p),
            ("k_w", self.k_w),
            ("solver_tol", self.solver_tol),
        ];
        for (name, v) in pos {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.tau_min > self.tau0 {
            return Err(Error::InvalidParameter(format!(
                "tau_min {} exceeds tau0 {}",
                self.tau_min, self.tau0
            )));
        }
        if !self.t_end.is_finite() || self.t_end < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "t_end must be >= 0, got {}",
                self.t_end
            )));
        }
        if self.solver_max_iter == 0 {
            return Err(Error::InvalidParameter(
                "solver_max_iter must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    ReachedTEnd,
    BlowupDetected,
    StepUnderflow,
    SolverFailure,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub reason: StopReason,
    pub final_state: SimState,
    pub series: Vec<DiagRecord>,
    /// Number of tau-halvings performed during the run.
    pub halvings: usize,
}

/// Extra information about one accepted step.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub picard_converged: bool,
}

/// Where diagnostics watch for corner concentration.
#[derive(Clone, Copy, Debug)]
pub struct MonitorConfig {
    pub corner: Point,
    pub corner_radius: f64,
}

/// Decision of the halving-on-failure controller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimestepDecision {
    Continue(f64),
    Underflow,
}

/// Halving-on-failure rule: a failed step retries at tau/2 (underflow below
/// `tau_min`); a successful step grows tau by 1.2x, capped at tau0.
pub fn adapt_timestep(step_succeeded: bool, tau: f64, config: &StepConfig) -> TimestepDecision {
    if step_succeeded {
        TimestepDecision::Continue((tau * 1.2).min(config.tau0))
    } else {
        let half = tau / 2.0;
        if half < config.tau_min {
            TimestepDecision::Underflow
        } else {
            TimestepDecision::Continue(half)
        }
    }
}

pub struct Stepper<'m> {
    mesh: &'m TriMesh,
    config: StepConfig,
    mass: SparseOperator,
    unit_stiffness: SparseOperator,
}

impl<'m> Stepper<'m> {
    pub fn new(mesh: &'m TriMesh, config: StepConfig) -> Result<Self> {
        config.validate()?;
        let mass = assemble_mass(mesh, config.lumped_mass);
        let unit_stiffness = assemble_stiffness(mesh, &ScalarField::constant(mesh, 1.0))?;
        Ok(Stepper {
            mesh,
            config,
            mass,
            unit_stiffness,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        self.mesh
    }

    pub fn config(&self) -> &StepConfig {
        &self.config
    }

    fn check_state(&self, state: &SimState) -> Result<()> {
        if state.u.mesh_id() != self.mesh.id() {
            return Err(Error::InvalidParameter(
                "state fields live on a different mesh".into(),
            ));
        }
        Ok(())
    }

    fn solve(&self, a: &SparseOperator, b: &[f64]) -> Result<Vec<f64>> {
        solve_spd(a, b, self.config.solver_tol, self.config.solver_max_iter)
    }

    /// Advance the (v, p, w) subsystem one implicit-diffusion step with
    /// explicit clamped reactions evaluated at (u_stage, v_old, p_old, w_old).
    pub fn step_vpw(
        &self,
        state: &SimState,
        u_stage: &ScalarField,
        tau: f64,
        net: &ReactionNetwork,
    ) -> Result<(ScalarField, ScalarField, ScalarField)> {
        self.check_state(state)?;
        let n = self.mesh.node_count();
        let (us, vs, ps, ws) = (
            u_stage.values(),
            state.v.values(),
            state.p.values(),
            state.w.values(),
        );
        let mut r2 = vec![0.0; n];
        let mut r3 = vec![0.0; n];
        let mut r4 = vec![0.0; n];
        for i in 0..n {
            let r = net.eval(us[i], vs[i], ps[i], ws[i])?;
            r2[i] = r[1];
            r3[i] = r[2];
            r4[i] = r[3];
        }
        let mut out = Vec::with_capacity(3);
        for (k, old, reac) in [
            (self.config.k_v, vs, &r2),
            (self.config.k_p, ps, &r3),
            (self.config.k_w, ws, &r4),
        ] {
            let a = self.mass.add_scaled(&self.unit_stiffness, tau * k)?;
            let staged: Vec<f64> = old
                .iter()
                .zip(reac.iter())
                .map(|(x, r)| x + tau * r)
                .collect();
            let b = self.mass.apply(&staged)?;
            out.push(ScalarField::from_values(self.mesh, self.solve(&a, &b)?)?);
        }
        let w_new = out.pop().unwrap();
        let p_new = out.pop().unwrap();
        let v_new = out.pop().unwrap();
        Ok((v_new, p_new, w_new))
    }

    /// Advance the quasilinear u equation with lagged coefficients
    /// kappa(u_old, v_stage), sigma(u_old, v_stage); the crossdiffusion term
    /// enters the right-hand side as -tau K(sigma) v_stage.
    pub fn step_u(
        &self,
        state: &SimState,
        v_stage: &ScalarField,
        tau: f64,
        cp: &CoefficientPair,
        net: &ReactionNetwork,
    ) -> Result<ScalarField> {
        self.step_u_stage(state, &state.u, v_stage, &state.p, &state.w, tau, cp, net)
    }

    #[allow(clippy::too_many_arguments)]
    fn step_u_stage(
        &self,
        state: &SimState,
        u_stage: &ScalarField,
        v_stage: &ScalarField,
        p_stage: &ScalarField,
        w_stage: &ScalarField,
        tau: f64,
        cp: &CoefficientPair,
        net: &ReactionNetwork,
    ) -> Result<ScalarField> {
        self.check_state(state)?;
        let n = self.mesh.node_count();
        let mut kappa = vec![0.0; n];
        let mut sigma = vec![0.0; n];
        for i in 0..n {
            let (k, s) =
                cp.eval(u_stage.values()[i], v_stage.values()[i])
                    .map_err(|e| match e {
                        Error::CoefficientFloor { value, floor, .. } => Error::CoefficientFloor {
                            node: i,
                            value,
                            floor,
                        },
                        other => other,
                    })?;
            kappa[i] = k;
            sigma[i] = s;
        }
        let k_kappa = assemble_stiffness(self.mesh, &ScalarField::from_values(self.mesh, kappa)?)?;
        let k_sigma = assemble_stiffness(self.mesh, &ScalarField::from_values(self.mesh, sigma)?)?;

        let mut staged = vec![0.0; n];
        for (i, s) in staged.iter_mut().enumerate() {
            let r1 = net.eval(
                u_stage.values()[i],
                v_stage.values()[i],
                p_stage.values()[i],
                w_stage.values()[i],
            )?[0];
            *s = state.u.values()[i] + tau * r1;
        }
        let mut b = self.mass.apply(&staged)?;
        let drift = k_sigma.apply(v_stage.values())?;
        for i in 0..n {
            b[i] -= tau * drift[i];
        }
        let a = self.mass.add_scaled(&k_kappa, tau)?;
        ScalarField::from_values(self.mesh, self.solve(&a, &b)?)
    }

    /// One outer step with optional Picard iteration over the decoupling.
    pub fn advance(
        &self,
        state: &SimState,
        tau: f64,
        cp: &CoefficientPair,
        net: &ReactionNetwork,
    ) -> Result<(SimState, StepInfo)> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {tau}"
            )));
        }
        let mut u_stage = state.u.clone();
        let mut converged = self.config.picard_iters == 0;
        let mut prev: Option<(ScalarField, ScalarField, ScalarField, ScalarField)> = None;
        let mut latest = None;
        for _pass in 0..=self.config.picard_iters {
            let (v_s, p_s, w_s) = self.step_vpw(state, &u_stage, tau, net)?;
            let u_s = self.step_u_stage(state, &u_stage, &v_s, &p_s, &w_s, tau, cp, net)?;
            if let Some((pu, pv, pp, pw)) = &prev {
                let rel = |new: &ScalarField, old: &ScalarField| {
                    new.linf_diff(old) / new.linf().max(1e-30)
                };
                let update = rel(&u_s, pu)
                    .max(rel(&v_s, pv))
                    .max(rel(&p_s, pp))
                    .max(rel(&w_s, pw));
                if update <= self.config.picard_tol {
                    converged = true;
                    latest = Some((u_s, v_s, p_s, w_s));
                    break;
                }
            }
            u_stage = u_s.clone();
            prev = Some((u_s.clone(), v_s.clone(), p_s.clone(), w_s.clone()));
            latest = Some((u_s, v_s, p_s, w_s));
        }
        let (u, v, p, w) = latest.expect("at least one pass");
        Ok((
            SimState {
                t: state.t + tau,
                u,
                v,
                p,
                w,
            },
            StepInfo {
                picard_converged: converged,
            },
        ))
    }

    /// Run until `t_end` or a termination trigger, recording one diagnostics
    /// row per accepted step (plus the initial state).
    pub fn run(
        &self,
        initial: SimState,
        cp: &CoefficientPair,
        net: &ReactionNetwork,
        monitor: &MonitorConfig,
    ) -> Result<RunOutcome> {
        self.run_with_observer(initial, cp, net, monitor, &mut |_, _| Ok(()))
    }

    /// Like [`Stepper::run`], streaming each record to `observer` as it is
    /// produced (so aborted runs still leave usable partial output).
    pub fn run_with_observer(
        &self,
        initial: SimState,
        cp: &CoefficientPair,
        net: &ReactionNetwork,
        monitor: &MonitorConfig,
        observer: &mut dyn FnMut(&DiagRecord, &SimState) -> Result<()>,
    ) -> Result<RunOutcome> {
        self.check_state(&initial)?;
        if !initial.all_finite() {
            return Err(Error::NonFinite("initial state".into()));
        }
        let cfg = &self.config;
        let mut series: Vec<DiagRecord> = Vec::new();
        let emit = |step: usize,
                    tau: f64,
                    state: &SimState,
                    picard: bool,
                    series: &mut Vec<DiagRecord>,
                    observer: &mut dyn FnMut(&DiagRecord, &SimState) -> Result<()>|
         -> Result<()> {
            let rec = DiagRecord::compute(
                step,
                tau,
                state,
                self.mesh,
                monitor.corner,
                monitor.corner_radius,
                net.cutoff(),
                picard,
            );
            observer(&rec, state)?;
            series.push(rec);
            Ok(())
        };

        let mut state = initial;
        emit(0, 0.0, &state, true, &mut series, observer)?;

        let t_eps = 4.0 * f64::EPSILON * cfg.t_end.max(1.0);
        let mut tau = cfg.tau0;
        let mut halvings = 0usize;
        let mut step = 0usize;

        loop {
            let remaining = cfg.t_end - state.t;
            if remaining <= t_eps {
                return Ok(RunOutcome {
                    reason: StopReason::ReachedTEnd,
                    final_state: state,
                    series,
                    halvings,
                });
            }
            let tau_step = tau.min(remaining);

            enum Verdict {
                Accept(SimState, bool),
                Overshoot(SimState, bool),
                NonFinite,
                SolverTrouble,
            }
            let verdict = match self.advance(&state, tau_step, cp, net) {
                Ok((next, info)) => {
                    if !next.all_finite() {
                        Verdict::NonFinite
                    } else if next.u.linf() > cfg.blowup_linf {
                        Verdict::Overshoot(next, info.picard_converged)
                    } else {
                        Verdict::Accept(next, info.picard_converged)
                    }
                }
                Err(Error::SolverDiverged { .. }) | Err(Error::CoefficientFloor { .. }) => {
                    Verdict::SolverTrouble
                }
                Err(Error::NonFinite(_)) => Verdict::NonFinite,
                Err(e) => return Err(e),
            };

            match verdict {
                Verdict::Accept(next, picard) => {
                    state = next;
                    step += 1;
                    emit(step, tau_step, &state, picard, &mut series, observer)?;
                    tau = match cfg.adapt {
                        AdaptMode::HalvingOnFailure => match adapt_timestep(true, tau_step, cfg) {
                            TimestepDecision::Continue(t) => t,
                            TimestepDecision::Underflow => unreachable!(),
                        },
                        AdaptMode::None => cfg.tau0,
                    };
                }
                Verdict::Overshoot(next, picard) => match cfg.adapt {
                    AdaptMode::None => {
                        state = next;
                        step += 1;
                        emit(step, tau_step, &state, picard, &mut series, observer)?;
                        return Ok(RunOutcome {
                            reason: StopReason::BlowupDetected,
                            final_state: state,
                            series,
                            halvings,
                        });
                    }
                    AdaptMode::HalvingOnFailure => match adapt_timestep(false, tau_step, cfg) {
                        TimestepDecision::Continue(t) => {
                            tau = t;
                            halvings += 1;
                        }
                        TimestepDecision::Underflow => {
                            return Ok(RunOutcome {
                                reason: StopReason::BlowupDetected,
                                final_state: state,
                                series,
                                halvings,
                            });
                        }
                    },
                },
                Verdict::NonFinite => match cfg.adapt {
                    AdaptMode::None => {
                        return Ok(RunOutcome {
                            reason: StopReason::BlowupDetected,
                            final_state: state,
                            series,
                            halvings,
                        });
                    }
                    AdaptMode::HalvingOnFailure => match adapt_timestep(false, tau_step, cfg) {
                        TimestepDecision::Continue(t) => {
                            tau = t;
                            halvings += 1;
                        }
                        TimestepDecision::Underflow => {
                            return Ok(RunOutcome {
                                reason: StopReason::BlowupDetected,
                                final_state: state,
                                series,
                                halvings,
                            });
                        }
                    },
                },
                Verdict::SolverTrouble => match cfg.adapt {
                    AdaptMode::None => {
                        return Ok(RunOutcome {
                            reason: StopReason::SolverFailure,
                            final_state: state,
                            series,
                            halvings,
                        });
                    }
                    AdaptMode::HalvingOnFailure => match adapt_timestep(false, tau_step, cfg) {
                        TimestepDecision::Continue(t) => {
                            tau = t;
                            halvings += 1;
                        }
                        TimestepDecision::Underflow => {
                            return Ok(RunOutcome {
                                reason: StopReason::StepUnderflow,
                                final_state: state,
                                series,
                                halvings,
                            });
                        }
                    },
                },
            }
        }
    }
}
