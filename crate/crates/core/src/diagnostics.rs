//! Per-step observables: masses, extrema, corner concentration, clamp margin.

use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};
use crate::operator::ScalarField;
use crate::reactions::Cutoff;
use crate::stepper::SimState;

/// Exact integral of the P1 interpolant: 1^T M f with consistent mass M,
/// i.e. sum over elements of area * (f_i + f_j + f_k) / 3.
pub fn total_mass(f: &ScalarField, mesh: &TriMesh) -> f64 {
    assert_eq!(f.mesh_id(), mesh.id(), "field does not belong to this mesh");
    let vals = f.values();
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(t, tri)| mesh.triangle_area(t) * (vals[tri[0]] + vals[tri[1]] + vals[tri[2]]) / 3.0)
        .sum()
}

/// Nodal extrema (which coincide with the P1 extrema).
pub fn field_extrema(f: &ScalarField) -> Result<(f64, f64)> {
    if !f.all_finite() {
        return Err(Error::NonFinite("field passed to field_extrema".into()));
    }
    Ok((f.min(), f.max()))
}

/// Lumped-mass quadrature weights, one per node (= integral of the hat).
fn lumped_weights(mesh: &TriMesh) -> Vec<f64> {
    let mut w = vec![0.0; mesh.node_count()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.triangle_area(t) / 3.0;
        for &i in tri {
            w[i] += a;
        }
    }
    w
}

/// Fraction of the total |f| mass carried by nodes within `radius` of
/// `corner`, using lumped-mass weights. Zero when no node lies in the ball
/// or when f vanishes.
pub fn corner_mass_fraction(f: &ScalarField, mesh: &TriMesh, corner: Point, radius: f64) -> f64 {
    assert_eq!(f.mesh_id(), mesh.id(), "field does not belong to this mesh");
    let w = lumped_weights(mesh);
    let mut near = 0.0;
    let mut total = 0.0;
    for (i, p) in mesh.nodes().iter().enumerate() {
        let m = w[i] * f.values()[i].abs();
        total += m;
        if p.dist(&corner) <= radius {
            near += m;
        }
    }
    if total > 0.0 {
        near / total
    } else {
        0.0
    }
}

/// Signed distance to the clamp level: M - max(|v|, |p|, |w|) sup norms.
/// Positive means the cut-off is inactive and the clamped system coincides
/// with the original one. Computed as delta + (sup0 - current sup) so that at
/// t = 0 the result is exactly delta.
pub fn boundedness_margin(state: &SimState, clamp: &Cutoff) -> f64 {
    let sup = state.v.linf().max(state.p.linf()).max(state.w.linf());
    clamp.delta() + (clamp.initial_sup() - sup)
}

/// One diagnostics row, written per accepted step.
#[derive(Clone, Debug)]
pub struct DiagRecord {
    pub step: usize,
    pub t: f64,
    pub tau: f64,
    pub mass_u: f64,
    pub mass_p_plus_w: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub min_v: f64,
    pub max_v: f64,
    pub min_p: f64,
    pub max_p: f64,
    pub min_w: f64,
    pub max_w: f64,
    pub corner_fraction: f64,
    pub margin: f64,
    pub clamp_active: bool,
    pub picard_converged: bool,
}

impl DiagRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        step: usize,
        tau: f64,
        state: &SimState,
        mesh: &TriMesh,
        corner: Point,
        corner_radius: f64,
        clamp: Option<&Cutoff>,
        picard_converged: bool,
    ) -> Self {
        let margin = clamp
            .map(|c| boundedness_margin(state, c))
            .unwrap_or(f64::INFINITY);
        let mass_p = total_mass(&state.p, mesh);
        let mass_w = total_mass(&state.w, mesh);
        DiagRecord {
            step,
            t: state.t,
            tau,
            mass_u: total_mass(&state.u, mesh),
            mass_p_plus_w: mass_p + mass_w,
            min_u: state.u.min(),
            max_u: state.u.max(),
            min_v: state.v.min(),
            max_v: state.v.max(),
            min_p: state.p.min(),
            max_p: state.p.max(),
            min_w: state.w.min(),
            max_w: state.w.max(),
            corner_fraction: corner_mass_fraction(&state.u, mesh, corner, corner_radius),
            margin,
            clamp_active: margin < 0.0,
            picard_converged,
        }
    }

    pub const CSV_HEADER: &'static str = "step,t,tau,mass_u,mass_p_plus_w,min_u,max_u,min_v,max_v,min_p,max_p,min_w,max_w,corner_fraction,margin,clamp_active,picard_converged";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.t,
            self.tau,
            self.mass_u,
            self.mass_p_plus_w,
            self.min_u,
            self.max_u,
            self.min_v,
            self.max_v,
            self.min_p,
            self.max_p,
            self.min_w,
            self.max_w,
            self.corner_fraction,
            self.margin,
            self.clamp_active,
            self.picard_converged
        )
    }
}
