//! Reaction kinetics, chemotactic coefficients, and the cut-off clamp.
//!
//! The four-species network couples cell density u, attractant v, enzyme p
//! and complex w through
//!
//! ```text
//! R1 = 0
//! R2 = -r1 v p + r_neg1 w + u f(v)
//! R3 = -r1 v p + (r_neg1 + r2) w + u g(v, p)
//! R4 =  r1 v p - (r_neg1 + r2) w
//! ```
//!
//! so R3 + R4 = u g(v, p): the total of free and bound enzyme is conserved
//! whenever u g vanishes. The optional cut-off eta clamps the v, p, w
//! arguments of every R_i to the band [-(M+1), M+1], where
//! M = delta + max of the initial sup norms of v, p, w; inside [-M, M] it is
//! the exact identity.

use std::sync::Arc;

use crate::error::{Error, Result};

pub type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type Fn4 = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

pub fn const_fn1(c: f64) -> Fn1 {
    Arc::new(move |_| c)
}

pub fn const_fn2(c: f64) -> Fn2 {
    Arc::new(move |_, _| c)
}

/// Rates and production functions of the four-species network.
#[derive(Clone)]
pub struct KineticParams {
    pub r1: f64,
    pub r_neg1: f64,
    pub r2: f64,
    /// Attractant production per cell, f(v).
    pub f: Fn1,
    /// Enzyme production per cell, g(v, p).
    pub g: Fn2,
}

impl KineticParams {
    pub fn new(r1: f64, r_neg1: f64, r2: f64, f: Fn1, g: Fn2) -> Result<Self> {
        for (name, r) in [("r1", r1), ("r_neg1", r_neg1), ("r2", r2)] {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "rate {name} must be finite and nonnegative, got {r}"
                )));
            }
        }
        Ok(KineticParams {
            r1,
            r_neg1,
            r2,
            f,
            g,
        })
    }

    /// Constant production rates f = c_f, g = c_g.
    pub fn with_constant_production(
        r1: f64,
        r_neg1: f64,
        r2: f64,
        c_f: f64,
        c_g: f64,
    ) -> Result<Self> {
        Self::new(r1, r_neg1, r2, const_fn1(c_f), const_fn2(c_g))
    }
}

impl std::fmt::Debug for KineticParams {
    fn fmt(&self, fmt: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fmt.debug_struct("KineticParams")
            .field("r1", &self.r1)
            .field("r_neg1", &self.r_neg1)
            .field("r2", &self.r2)
            .finish_non_exhaustive()
    }
}

/// Diffusion coefficient kappa(u, v) > 0 and chemotactic sensitivity
/// sigma(u, v) (sign-indefinite; sigma < 0 is attraction).
#[derive(Clone)]
pub struct CoefficientPair {
    kappa: Fn2,
    sigma: Fn2,
    kappa_floor: f64,
}

impl CoefficientPair {
    pub fn new(kappa: Fn2, sigma: Fn2, kappa_floor: f64) -> Result<Self> {
        if !kappa_floor.is_finite() || kappa_floor <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "kappa_floor must be strictly positive, got {kappa_floor}"
            )));
        }
        Ok(CoefficientPair {
            kappa,
            sigma,
            kappa_floor,
        })
    }

    /// Classical chemotaxis coefficients: kappa = 1, sigma = -chi u.
    pub fn classical(chi: f64) -> Result<Self> {
        if !chi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "chi must be finite, got {chi}"
            )));
        }
        Self::new(const_fn2(1.0), Arc::new(move |u, _| -chi * u), 1.0)
    }

    /// Constant kappa with sigma = -chi u.
    pub fn constant_kappa(kappa: f64, chi: f64, kappa_floor: f64) -> Result<Self> {
        if kappa.is_nan() || kappa < kappa_floor {
            return Err(Error::InvalidParameter(format!(
                "constant kappa {kappa} below floor {kappa_floor}"
            )));
        }
        Self::new(
            const_fn2(kappa),
            Arc::new(move |u, _| -chi * u),
            kappa_floor,
        )
    }

    pub fn kappa_floor(&self) -> f64 {
        self.kappa_floor
    }

    /// Evaluate (kappa, sigma) at a point, validating the kappa floor.
    pub fn eval(&self, u: f64, v: f64) -> Result<(f64, f64)> {
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite("coefficient arguments".into()));
        }
        let k = (self.kappa)(u, v);
        let s = (self.sigma)(u, v);
        if !k.is_finite() || !s.is_finite() {
            return Err(Error::NonFinite(format!(
                "coefficients at (u, v) = ({u}, {v})"
            )));
        }
        if k < self.kappa_floor {
            return Err(Error::CoefficientFloor {
                node: usize::MAX,
                value: k,
                floor: self.kappa_floor,
            });
        }
        Ok((k, s))
    }
}

impl std::fmt::Debug for CoefficientPair {
    fn fmt(&self, fmt: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fmt.debug_struct("CoefficientPair")
            .field("kappa_floor", &self.kappa_floor)
            .finish_non_exhaustive()
    }
}

/// C1 clamp that is the bit-exact identity on [-M, M], saturates at
/// +/-(M+1), and blends with a monotone cubic Hermite on M < |x| < M+1.
/// M = delta + (max initial sup norm); storing the two summands separately
/// keeps the boundedness margin at t = 0 exactly equal to delta.
#[derive(Clone, Copy, Debug)]
pub struct Cutoff {
    delta: f64,
    sup0: f64,
}

impl Cutoff {
    /// Clamp level from the initial data: M = delta + max(sup_v, sup_p, sup_w).
    pub fn from_initial_sup_norms(delta: f64, sup_v: f64, sup_p: f64, sup_w: f64) -> Result<Self> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive, got {delta}"
            )));
        }
        let sup0 = sup_v.max(sup_p).max(sup_w);
        if !sup0.is_finite() || sup0 < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "initial sup norms invalid: {sup0}"
            )));
        }
        Ok(Cutoff { delta, sup0 })
    }

    /// Clamp with a directly prescribed level M (delta still recorded).
    pub fn with_level(level: f64, delta: f64) -> Result<Self> {
        if !level.is_finite() || !delta.is_finite() || delta <= 0.0 || level < delta {
            return Err(Error::InvalidParameter(format!(
                "need level >= delta > 0, got level {level}, delta {delta}"
            )));
        }
        Ok(Cutoff {
            delta,
            sup0: level - delta,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// The sup norm the level was derived from.
    pub fn initial_sup(&self) -> f64 {
        self.sup0
    }

    /// The clamp level M.
    pub fn level(&self) -> f64 {
        self.delta + self.sup0
    }

    /// Evaluate the clamp eta(x).
    pub fn eval(&self, x: f64) -> f64 {
        let m = self.level();
        if x.abs() <= m {
            return x;
        }
        if x >= m + 1.0 {
            return m + 1.0;
        }
        if x <= -(m + 1.0) {
            return -(m + 1.0);
        }
        // Hermite blend on [M, M+1]: value M -> M+1, slope 1 -> 0, mirrored
        // for negative x. eta(M + t) = M + t + t^2 - t^3.
        let t = x.abs() - m;
        let val = m + t + t * t - t * t * t;
        if x > 0.0 {
            val
        } else {
            -val
        }
    }
}

pub fn eval_cutoff(c: &Cutoff, x: f64) -> f64 {
    c.eval(x)
}

#[derive(Clone)]
pub enum NetworkKind {
    /// The four-species network with its printed kinetics.
    FullKellerSegel(KineticParams),
    /// Two-species reduction: R2 = -k(v) v + u f(v), all other R_i = 0.
    Simplified { decay: Fn1, production: Fn1 },
    /// User-supplied R1..R4.
    Custom([Fn4; 4]),
}

/// A reaction network plus optional cut-off. With a cut-off configured, every
/// R_i sees eta-clamped (v, p, w) arguments; u is never clamped.
#[derive(Clone)]
pub struct ReactionNetwork {
    kind: NetworkKind,
    cutoff: Option<Cutoff>,
}

impl ReactionNetwork {
    pub fn full(params: KineticParams) -> Self {
        ReactionNetwork {
            kind: NetworkKind::FullKellerSegel(params),
            cutoff: None,
        }
    }

    pub fn simplified(decay: Fn1, production: Fn1) -> Self {
        ReactionNetwork {
            kind: NetworkKind::Simplified { decay, production },
            cutoff: None,
        }
    }

    pub fn custom(r: [Fn4; 4]) -> Self {
        ReactionNetwork {
            kind: NetworkKind::Custom(r),
            cutoff: None,
        }
    }

    pub fn with_cutoff(mut self, cutoff: Cutoff) -> Self {
        self.cutoff = Some(cutoff);
        self
    }

    pub fn cutoff(&self) -> Option<&Cutoff> {
        self.cutoff.as_ref()
    }

    pub fn kind(&self) -> &NetworkKind {
        &self.kind
    }

    /// Evaluate (R1, R2, R3, R4), applying the clamp if configured.
    pub fn eval(&self, u: f64, v: f64, p: f64, w: f64) -> Result<[f64; 4]> {
        if !(u.is_finite() && v.is_finite() && p.is_finite() && w.is_finite()) {
            return Err(Error::NonFinite(format!(
                "reaction arguments ({u}, {v}, {p}, {w})"
            )));
        }
        let (v, p, w) = match &self.cutoff {
            Some(c) => (c.eval(v), c.eval(p), c.eval(w)),
            None => (v, p, w),
        };
        let out = match &self.kind {
            NetworkKind::FullKellerSegel(kp) => {
                let complex = kp.r1 * v * p;
                let release = (kp.r_neg1 + kp.r2) * w;
                [
                    0.0,
                    -complex + kp.r_neg1 * w + u * (kp.f)(v),
                    -complex + release + u * (kp.g)(v, p),
                    complex - release,
                ]
            }
            NetworkKind::Simplified { decay, production } => {
                [0.0, -decay(v) * v + u * production(v), 0.0, 0.0]
            }
            NetworkKind::Custom(r) => [
                r[0](u, v, p, w),
                r[1](u, v, p, w),
                r[2](u, v, p, w),
                r[3](u, v, p, w),
            ],
        };
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("reaction values".into()));
        }
        Ok(out)
    }
}

impl std::fmt::Debug for ReactionNetwork {
    fn fmt(&self, fmt: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            NetworkKind::FullKellerSegel(_) => "full_keller_segel",
            NetworkKind::Simplified { .. } => "simplified",
            NetworkKind::Custom(_) => "custom",
        };
        fmt.debug_struct("ReactionNetwork")
            .field("kind", &kind)
            .field("cutoff", &self.cutoff)
            .finish()
    }
}

pub fn eval_reactions(net: &ReactionNetwork, u: f64, v: f64, p: f64, w: f64) -> Result<[f64; 4]> {
    net.eval(u, v, p, w)
}

/// Sampling ranges for the quasipositivity check. The v, p, w ranges are
/// clipped to [0, inf) since the condition quantifies over nonnegative
/// concentrations; u ranges over all reals.
#[derive(Clone, Copy, Debug)]
pub struct SampleBox {
    pub u: (f64, f64),
    pub v: (f64, f64),
    pub p: (f64, f64),
    pub w: (f64, f64),
}

#[derive(Clone, Copy, Debug)]
pub struct QuasipositivityWitness {
    /// Which condition failed: 2, 3 or 4 for R2, R3, R4.
    pub component: usize,
    pub u: f64,
    pub v: f64,
    pub p: f64,
    pub w: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct QuasipositivityReport {
    pub ok: bool,
    pub witness: Option<QuasipositivityWitness>,
}

/// Grid-sample the quasipositivity conditions R2(u,0,p,w) >= 0,
/// R3(u,v,0,w) >= 0, R4(u,v,p,0) >= 0 for nonnegative v, p, w. This is a
/// falsifier: `ok` means no violation was found among the samples.
pub fn check_quasipositivity(
    net: &ReactionNetwork,
    boxx: &SampleBox,
    samples: usize,
) -> Result<QuasipositivityReport> {
    if samples < 1 {
        return Err(Error::InvalidParameter(
            "need at least 1 sample per axis".into(),
        ));
    }
    let axis = |(lo, hi): (f64, f64), nonneg: bool| -> Result<Vec<f64>> {
        if !lo.is_finite() || !hi.is_finite() || hi < lo {
            return Err(Error::InvalidParameter(format!(
                "invalid range ({lo}, {hi})"
            )));
        }
        let lo = if nonneg { lo.max(0.0) } else { lo };
        let hi = if nonneg { hi.max(0.0) } else { hi };
        Ok((0..samples)
            .map(|k| {
                if samples == 1 {
                    lo
                } else {
                    lo + (hi - lo) * k as f64 / (samples - 1) as f64
                }
            })
            .collect())
    };
    let us = axis(boxx.u, false)?;
    let vs = axis(boxx.v, true)?;
    let ps = axis(boxx.p, true)?;
    let ws = axis(boxx.w, true)?;

    for &u in &us {
        for &v in &vs {
            for &p in &ps {
                for &w in &ws {
                    let checks = [
                        (2usize, net.eval(u, 0.0, p, w)?[1], 0.0, p, w),
                        (3, net.eval(u, v, 0.0, w)?[2], v, 0.0, w),
                        (4, net.eval(u, v, p, 0.0)?[3], v, p, 0.0),
                    ];
                    for (component, value, cv, cp, cw) in checks {
                        if value < 0.0 {
                            return Ok(QuasipositivityReport {
                                ok: false,
                                witness: Some(QuasipositivityWitness {
                                    component,
                                    u,
                                    v: cv,
                                    p: cp,
                                    w: cw,
                                    value,
                                }),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(QuasipositivityReport {
        ok: true,
        witness: None,
    })
}

/// Upper bound for |R2| with clamped (v, p, w) arguments and |u| <= u_bound,
/// estimated by dense grid sampling over the clamp box.
pub fn r2_sup_on_clamp_box(net: &ReactionNetwork, u_bound: f64, samples: usize) -> Result<f64> {
    let band = match net.cutoff() {
        Some(c) => c.level() + 1.0,
        None => return Err(Error::InvalidParameter("network has no cutoff".into())),
    };
    let grid = |lo: f64, hi: f64| -> Vec<f64> {
        (0..samples.max(2))
            .map(|k| lo + (hi - lo) * k as f64 / (samples.max(2) - 1) as f64)
            .collect()
    };
    let mut sup: f64 = 0.0;
    for &u in &grid(-u_bound, u_bound) {
        for &v in &grid(-band, band) {
            for &p in &grid(-band, band) {
                for &w in &grid(-band, band) {
                    sup = sup.max(net.eval(u, v, p, w)?[1].abs());
                }
            }
        }
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_net(r1: f64, r_neg1: f64, r2: f64, c_f: f64, c_g: f64) -> ReactionNetwork {
        ReactionNetwork::full(
            KineticParams::with_constant_production(r1, r_neg1, r2, c_f, c_g).unwrap(),
        )
    }

    #[test]
    fn printed_formula_spot_value() {
        // r1=1, r_neg1=2, r2=0, f=0: R2(0, 1, 4, 3) = -4 + 6 + 0 = 2.
        let net = full_net(1.0, 2.0, 0.0, 0.0, 0.0);
        let r = net.eval(0.0, 1.0, 4.0, 3.0).unwrap();
        assert_eq!(r[0], 0.0);
        assert!((r[1] - 2.0).abs() <= 1e-15);
    }

    #[test]
    fn enzyme_balance_when_u_g_vanishes() {
        let net = full_net(1.3, 0.7, 0.4, 2.0, 0.0);
        let mut state = 0.123_f64;
        for _ in 0..200 {
            state = (state * 16807.0) % 1.0 + 0.01;
            let (u, v, p, w) = (state * 3.0, state * 5.0, (1.0 - state) * 4.0, state * 2.0);
            let r = net.eval(u, v, p, w).unwrap();
            let scale = r[2].abs().max(r[3].abs()).max(1.0);
            assert!(
                (r[2] + r[3]).abs() <= 1e-14 * scale,
                "R3+R4 = {}",
                r[2] + r[3]
            );
        }
        // Also exact with u = 0 and nonzero g.
        let net = full_net(1.0, 1.0, 1.0, 1.0, 3.0);
        let r = net.eval(0.0, 2.0, 3.0, 4.0).unwrap();
        assert!((r[2] + r[3]).abs() <= 1e-14 * r[2].abs().max(1.0));
    }

    #[test]
    fn clamp_forces_zero_factors() {
        // Cutoff M=1: at (0, 10, 0, 0) the clamped v is 2 but every product
        // still carries a zero factor.
        let net =
            full_net(1.0, 1.0, 0.0, 0.0, 0.0).with_cutoff(Cutoff::with_level(1.0, 1.0).unwrap());
        let r = net.eval(0.0, 10.0, 0.0, 0.0).unwrap();
        assert_eq!(r[1], 0.0);
        assert_eq!(r[3], 0.0);
    }

    #[test]
    fn cutoff_identity_is_bit_exact() {
        let c = Cutoff::with_level(5.0, 1.0).unwrap();
        for x in [3.0, -4.999, 5.0, -5.0, 0.1, 1.0e-300] {
            assert_eq!(c.eval(x).to_bits(), x.to_bits());
        }
    }

    #[test]
    fn cutoff_saturates() {
        let c = Cutoff::with_level(5.0, 1.0).unwrap();
        assert_eq!(c.eval(-100.0), -6.0);
        assert_eq!(c.eval(77.0), 6.0);
        let mid = c.eval(5.5);
        assert!(mid > 5.0 && mid < 6.0, "blend value {mid}");
    }

    #[test]
    fn cutoff_monotone_and_bounded_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let c = Cutoff::from_initial_sup_norms(1.0, 2.5, 0.3, 1.1).unwrap();
        assert_eq!(c.level(), 3.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let x: f64 = rng.gen_range(-10.0..10.0);
            let y: f64 = rng.gen_range(-10.0..10.0);
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            assert!(
                c.eval(lo) <= c.eval(hi),
                "monotonicity failed at ({lo}, {hi})"
            );
            assert!(c.eval(x).abs() <= c.level() + 1.0);
        }
    }

    #[test]
    fn quasipositive_full_network() {
        let net = full_net(1.0, 0.5, 0.25, 1.0, 0.5);
        let boxx = SampleBox {
            u: (0.0, 3.0),
            v: (0.0, 2.0),
            p: (0.0, 2.0),
            w: (0.0, 2.0),
        };
        let rep = check_quasipositivity(&net, &boxx, 5).unwrap();
        assert!(rep.ok);
    }

    #[test]
    fn quasipositivity_violation_is_witnessed() {
        let zero: Fn4 = Arc::new(|_, _, _, _| 0.0);
        let bad: Fn4 = Arc::new(|_, _, _, _| -1.0);
        let net = ReactionNetwork::custom([zero.clone(), zero.clone(), zero, bad]);
        let boxx = SampleBox {
            u: (0.0, 1.0),
            v: (0.0, 1.0),
            p: (0.0, 1.0),
            w: (0.0, 1.0),
        };
        let rep = check_quasipositivity(&net, &boxx, 2).unwrap();
        assert!(!rep.ok);
        let w = rep.witness.expect("witness");
        assert_eq!(w.component, 4);
        assert_eq!(w.value, -1.0);
    }

    #[test]
    fn quasipositive_with_negative_u_when_production_vanishes() {
        // With f = g = 0 the u-dependence drops out entirely, so the
        // conditions hold for u of either sign: R2(u,0,p,w) = r_neg1 w >= 0,
        // R3(u,v,0,w) = (r_neg1+r2) w >= 0, R4(u,v,p,0) = r1 v p >= 0.
        let net = full_net(1.0, 0.5, 0.25, 0.0, 0.0);
        let boxx = SampleBox {
            u: (-5.0, 5.0),
            v: (0.0, 2.0),
            p: (0.0, 2.0),
            w: (0.0, 2.0),
        };
        let rep = check_quasipositivity(&net, &boxx, 4).unwrap();
        assert!(rep.ok);
        // With c_f > 0 and negative u the sampler must find the violation.
        let net = full_net(1.0, 0.5, 0.25, 1.0, 0.0);
        let rep = check_quasipositivity(&net, &boxx, 4).unwrap();
        assert!(!rep.ok, "u f(v) < 0 for u < 0 must be witnessed");
    }

    #[test]
    fn classical_coefficients() {
        let cp = CoefficientPair::classical(2.0).unwrap();
        assert_eq!(cp.eval(3.0, 7.0).unwrap(), (1.0, -6.0));
        assert_eq!(cp.eval(0.0, 11.0).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn volume_filling_custom_kappa() {
        let cp = CoefficientPair::new(Arc::new(|u, _| 1.0 + u * u), const_fn2(0.0), 1.0).unwrap();
        assert_eq!(cp.eval(2.0, 0.3).unwrap().0, 5.0);
    }

    #[test]
    fn kappa_below_floor_is_error() {
        let cp = CoefficientPair::new(Arc::new(|u, _| u), const_fn2(0.0), 0.5).unwrap();
        assert!(matches!(
            cp.eval(0.1, 0.0),
            Err(Error::CoefficientFloor { .. })
        ));
        assert!(cp.eval(0.7, 0.0).is_ok());
    }

    #[test]
    fn kappa_floor_must_be_positive() {
        assert!(CoefficientPair::new(const_fn2(1.0), const_fn2(0.0), 0.0).is_err());
    }

    #[test]
    fn simplified_matches_printed_formula() {
        let net = ReactionNetwork::simplified(const_fn1(0.7), const_fn1(1.5));
        for (u, v) in [(0.0, 1.0), (2.0, 3.0), (1.0, -0.5)] {
            let r = net.eval(u, v, 9.0, 9.0).unwrap();
            assert!((r[1] - (-0.7 * v + u * 1.5)).abs() <= 1e-15);
            assert_eq!(r[0], 0.0);
            assert_eq!(r[2], 0.0);
            assert_eq!(r[3], 0.0);
        }
    }

    #[test]
    fn nonfinite_input_rejected() {
        let net = full_net(1.0, 1.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            net.eval(f64::NAN, 0.0, 0.0, 0.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn margin_at_t0_is_delta_exactly() {
        for sup in [0.3, 1.7, 0.0, 123.456] {
            let c = Cutoff::from_initial_sup_norms(1.0, sup, sup * 0.5, 0.0).unwrap();
            // level - sup computed as delta + (sup0 - sup) is exactly delta.
            assert_eq!(c.delta() + (c.initial_sup() - sup), 1.0);
        }
    }
}
