//! Discrete energy accounting for the incremental (backward Euler) problem.
//!
//! The power balance is checked in its time-discrete form: every increment is
//! the work-conjugate product of an end-of-step force with the corresponding
//! field increment. In that form the balance residual reduces to the
//! plastic/damage complementarity terms, which vanish at converged KKT
//! states, so the check is exact at the discrete level rather than only in
//! the small-step limit. (Evaluating stored energy as a state function
//! instead leaves O(step^2) residuals at elastic-plastic transitions.)

use crate::constitutive::{
    degradation_g, elastic_energy_split, fatigue_degradation, local_damage_w, plastic_energy,
    stress, MaterialSpec, PointState,
};

/// Backward-form free-energy increment per unit volume.
///
/// `kappa_grad_increment` carries the FE-side term
/// `g(alpha_1) eta_p^2 sum_s grad(kappa_s_1) . grad(dkappa_s)` (zero at a
/// bare point).
pub fn free_energy_increment(
    prev: &PointState,
    next: &PointState,
    spec: &MaterialSpec,
    kappa_grad_increment: f64,
) -> f64 {
    let (g1, gp1) = degradation_g(next.alpha);
    let sigma1 = stress(next, spec);
    let mut de = sigma1.ddot(&(next.strain - prev.strain));
    for (s, p) in spec.surfaces.iter().enumerate() {
        let dep = next.plastic[s] - prev.plastic[s];
        let rel = spec.eff_dev(sigma1) - next.plastic[s] * (g1 * p.h_kin);
        de -= rel.ddot(&dep);
        de += g1 * p.h_iso * next.kappa[s] * (next.kappa[s] - prev.kappa[s]);
    }
    de += kappa_grad_increment;
    de -= sigma1.ddot(&(next.ratchet - prev.ratchet));
    let (psi_plus, _) = elastic_energy_split(next.elastic_strain(), spec);
    de += gp1 * (psi_plus + plastic_energy(next, spec)) * (next.alpha - prev.alpha);
    de
}

/// Backward-form dissipation increment per unit volume, with the fatigue
/// degradation lagged at `prev.gamma` and the ratcheting work priced at the
/// previous stress.
///
/// `damage_grad_increment` carries `eta_d^2 grad(alpha_1) . grad(dalpha)`
/// from the FE layer (zero at a bare point).
pub fn dissipation_increment(
    prev: &PointState,
    next: &PointState,
    spec: &MaterialSpec,
    damage_grad_increment: f64,
) -> f64 {
    let (g1, gp1) = degradation_g(next.alpha);
    let dalpha = next.alpha - prev.alpha;
    let mut dd = 0.0;
    for s in 0..spec.n_surfaces() {
        let sp = spec.dissipative_strength(s, next.kappa[s]);
        dd += g1 * sp * (next.kappa[s] - prev.kappa[s]);
        dd += gp1 * sp * next.kappa[s] * dalpha;
    }
    let sigma_prev = stress(prev, spec);
    dd += sigma_prev.ddot(&(next.ratchet - prev.ratchet));
    let d_lag = fatigue_degradation(prev.gamma, spec);
    let (_, wp) = local_damage_w(next.alpha, spec);
    dd += d_lag * (wp * dalpha + damage_grad_increment);
    dd
}

/// Backward-form external work increment for a strain-driven point:
/// end-of-step stress times the strain increment.
pub fn point_work_increment(prev: &PointState, next: &PointState, spec: &MaterialSpec) -> f64 {
    stress(next, spec).ddot(&(next.strain - prev.strain))
}
