//! Point-wise material model: energies, stress, degradation functions, yield
//! functions, damage driving/resisting forces and fatigue accumulation.
//!
//! Two kinematic settings share one code path:
//!
//! * plane-strain / full-tensor mode, with the volumetric-deviatoric
//!   tension/compression split and the `sqrt(2/3)` equivalent-strain factor;
//! * the uniaxial (1D) reduction, where tensors collapse to their `xx`
//!   component, the split is dropped and the `sqrt(2/3)` factor is set to 1.

use crate::tensor::{macaulay, SymTensor};
use thiserror::Error;

/// Elastic kinematics selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kinematics {
    /// Isotropic 3D elasticity (used under plane-strain constraints).
    Full { bulk: f64, shear: f64 },
    /// Uniaxial scalar elasticity of the 1D reduction.
    Uniaxial { youngs: f64 },
}

/// Tension/compression split of the elastic energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    VolDev,
    None,
}

/// Local damage dissipation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DamageModel {
    At1,
    At2,
}

/// Per-surface yield and hardening data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceParams {
    /// Yield strength (MPa), > 0.
    pub sigma_p: f64,
    /// Kinematic hardening modulus (MPa), >= 0.
    pub h_kin: f64,
    /// Isotropic hardening (softening if negative) modulus (MPa).
    pub h_iso: f64,
}

/// All constitutive parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialSpec {
    pub kinematics: Kinematics,
    pub split: Split,
    /// Yield surfaces ordered by increasing `sigma_p`.
    pub surfaces: Vec<SurfaceParams>,
    /// Ratcheting fraction in [0, 1].
    pub beta: f64,
    /// Plastic internal length (N^1/2).
    pub eta_p: f64,
    /// Damage internal length (N^1/2).
    pub eta_d: f64,
    /// Damage threshold (MPa).
    pub w0: f64,
    pub damage_model: DamageModel,
    /// Fatigue threshold (MPa); `f64::INFINITY` disables fatigue.
    pub gamma0: f64,
    /// Logarithmic decay rate of the fatigue degradation function.
    pub fatigue_k: f64,
    /// Keep the `beta * dsigma : n_g` correction in the discrete yield
    /// condition (can be disabled for comparison runs).
    pub ratchet_correction: bool,
}

#[derive(Debug, Error)]
pub enum MaterialError {
    #[error("material must define at least one yield surface")]
    NoSurfaces,
    #[error("surface {0}: sigma_p must be positive")]
    BadYieldStrength(usize),
    #[error("surface {0}: h_kin must be non-negative")]
    BadKinematicModulus(usize),
    #[error("yield strengths must be non-decreasing (surface {0})")]
    UnorderedSurfaces(usize),
    #[error("elastic moduli must be positive")]
    BadElasticity,
    #[error("beta must lie in [0, 1]")]
    BadBeta,
    #[error("gamma0 must be positive (or infinite)")]
    BadGamma0,
    #[error("fatigue decay rate k must be positive")]
    BadFatigueRate,
    #[error("w0 must be positive")]
    BadW0,
    #[error("the volumetric-deviatoric split requires full-tensor kinematics")]
    SplitInUniaxial,
    #[error("internal lengths must be non-negative")]
    BadLength,
}

impl MaterialSpec {
    pub fn validate(&self) -> Result<(), MaterialError> {
        if self.surfaces.is_empty() {
            return Err(MaterialError::NoSurfaces);
        }
        for (s, p) in self.surfaces.iter().enumerate() {
            if !(p.sigma_p > 0.0) {
                return Err(MaterialError::BadYieldStrength(s));
            }
            if p.h_kin < 0.0 {
                return Err(MaterialError::BadKinematicModulus(s));
            }
            if s > 0 && p.sigma_p < self.surfaces[s - 1].sigma_p {
                return Err(MaterialError::UnorderedSurfaces(s));
            }
        }
        match self.kinematics {
            Kinematics::Full { bulk, shear } => {
                if !(bulk > 0.0 && shear > 0.0) {
                    return Err(MaterialError::BadElasticity);
                }
            }
            Kinematics::Uniaxial { youngs } => {
                if !(youngs > 0.0) {
                    return Err(MaterialError::BadElasticity);
                }
                if self.split == Split::VolDev {
                    return Err(MaterialError::SplitInUniaxial);
                }
            }
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(MaterialError::BadBeta);
        }
        if !(self.gamma0 > 0.0) {
            return Err(MaterialError::BadGamma0);
        }
        if !(self.fatigue_k > 0.0) {
            return Err(MaterialError::BadFatigueRate);
        }
        if !(self.w0 > 0.0) {
            return Err(MaterialError::BadW0);
        }
        if self.eta_p < 0.0 || self.eta_d < 0.0 {
            return Err(MaterialError::BadLength);
        }
        Ok(())
    }

    pub fn n_surfaces(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_uniaxial(&self) -> bool {
        matches!(self.kinematics, Kinematics::Uniaxial { .. })
    }

    /// Factor in the hardening law `kappa_dot = c ||eps_p_dot||`:
    /// `sqrt(2/3)` in full-tensor mode, 1 in the 1D reduction.
    pub fn hard_factor(&self) -> f64 {
        if self.is_uniaxial() {
            1.0
        } else {
            (2.0f64 / 3.0).sqrt()
        }
    }

    /// Inverse of [`hard_factor`](Self::hard_factor): the magnitude of the
    /// plastic strain increment per unit `dkappa`.
    pub fn flow_factor(&self) -> f64 {
        1.0 / self.hard_factor()
    }

    /// Deviatoric projection in full mode; identity in the 1D reduction
    /// (scalars have no deviator).
    pub fn eff_dev(&self, t: SymTensor) -> SymTensor {
        if self.is_uniaxial() {
            t
        } else {
            t.dev()
        }
    }

    /// Norm used by yield functions and flow directions: the full Euclidean
    /// norm, which reduces to `|xx|` for the scalar 1D representation.
    pub fn eff_norm(&self, t: SymTensor) -> f64 {
        if self.is_uniaxial() {
            t.xx.abs()
        } else {
            t.norm()
        }
    }

    /// Resisting radius of surface `s`, floored at zero so that exhausted
    /// isotropic softening never produces a negative yield stress.
    pub fn yield_radius(&self, s: usize, kappa_s: f64, laplacian_term: f64) -> f64 {
        let p = &self.surfaces[s];
        (p.sigma_p + p.h_iso * kappa_s - laplacian_term).max(0.0)
    }

    /// Effective yield strength entering the plastic dissipation increment.
    /// Equals `sigma_p` while the radius floor is inactive; once isotropic
    /// softening is exhausted it is reduced so that the dissipated power
    /// matches the stress actually sustained by the floored surface.
    pub fn dissipative_strength(&self, s: usize, kappa_s: f64) -> f64 {
        let p = &self.surfaces[s];
        if p.sigma_p + p.h_iso * kappa_s >= 0.0 {
            p.sigma_p
        } else {
            -p.h_iso * kappa_s
        }
    }
}

/// Full constitutive state at one material point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointState {
    /// Total strain.
    pub strain: SymTensor,
    /// Per-surface plastic strains (deviatoric).
    pub plastic: Vec<SymTensor>,
    /// Per-surface hardening variables, non-negative and non-decreasing.
    pub kappa: Vec<f64>,
    /// Ratcheting strain (deviatoric).
    pub ratchet: SymTensor,
    /// Damage in [0, 1], non-decreasing.
    pub alpha: f64,
    /// Fatigue accumulator (MPa), non-decreasing.
    pub gamma: f64,
    /// Fatigue driver from the previous accepted step.
    pub theta_prev: f64,
    /// Per-surface gradient energy density `1/2 eta_p^2 ||grad kappa_s||^2`,
    /// supplied by the FE layer (zero in point-driver mode).
    pub kappa_grad_energy: Vec<f64>,
}

impl PointState {
    pub fn zero(n_surfaces: usize) -> Self {
        Self {
            strain: SymTensor::ZERO,
            plastic: vec![SymTensor::ZERO; n_surfaces],
            kappa: vec![0.0; n_surfaces],
            ratchet: SymTensor::ZERO,
            alpha: 0.0,
            gamma: 0.0,
            theta_prev: 0.0,
            kappa_grad_energy: vec![0.0; n_surfaces],
        }
    }

    /// Elastic strain `eps - sum_s eps_p_s - eps_r`.
    pub fn elastic_strain(&self) -> SymTensor {
        let mut e = self.strain;
        for p in &self.plastic {
            e = e - *p;
        }
        e - self.ratchet
    }
}

/// Quadratic degradation `g = (1-alpha)^2` and its derivative.
pub fn degradation_g(alpha: f64) -> (f64, f64) {
    assert!(
        (-1e-9..=1.0 + 1e-9).contains(&alpha),
        "damage variable out of range: {alpha}"
    );
    let a = alpha.clamp(0.0, 1.0);
    let one = 1.0 - a;
    (one * one, -2.0 * one)
}

/// Local damage dissipation `w(alpha)` and `w'(alpha)`.
pub fn local_damage_w(alpha: f64, spec: &MaterialSpec) -> (f64, f64) {
    assert!(
        (-1e-9..=1.0 + 1e-9).contains(&alpha),
        "damage variable out of range: {alpha}"
    );
    let a = alpha.clamp(0.0, 1.0);
    match spec.damage_model {
        DamageModel::At1 => (spec.w0 * a, spec.w0),
        DamageModel::At2 => (spec.w0 * a * a, 2.0 * spec.w0 * a),
    }
}

/// Fatigue degradation `d(gamma)`: 1 below the threshold, logarithmic decay
/// up to the cutoff `gamma0 * 10^(1/k)`, zero beyond.
pub fn fatigue_degradation(gamma: f64, spec: &MaterialSpec) -> f64 {
    debug_assert!(gamma >= 0.0);
    if !spec.gamma0.is_finite() || gamma <= spec.gamma0 {
        return 1.0;
    }
    let k = spec.fatigue_k;
    if gamma >= spec.gamma0 * 10f64.powf(1.0 / k) {
        return 0.0;
    }
    let b = 1.0 - k * (gamma / spec.gamma0).log10();
    b * b
}

/// Positive/negative elastic energy parts of the selected split.
pub fn elastic_energy_split(eps_e: SymTensor, spec: &MaterialSpec) -> (f64, f64) {
    match spec.kinematics {
        Kinematics::Uniaxial { youngs } => {
            let e = eps_e.xx;
            (0.5 * youngs * e * e, 0.0)
        }
        Kinematics::Full { bulk, shear } => {
            let tr = eps_e.trace();
            let dev = eps_e.dev();
            let dev2 = dev.ddot(&dev);
            match spec.split {
                Split::VolDev => {
                    let (tp, tm) = macaulay(tr);
                    (0.5 * bulk * tp * tp + shear * dev2, 0.5 * bulk * tm * tm)
                }
                Split::None => (0.5 * bulk * tr * tr + shear * dev2, 0.0),
            }
        }
    }
}

/// Plastic free energy `1/2 sum_s (h_kin eps_p:eps_p + h_iso kappa^2)` plus
/// the gradient energy supplied by the FE layer.
pub fn plastic_energy(state: &PointState, spec: &MaterialSpec) -> f64 {
    let mut psi = 0.0;
    for (s, p) in spec.surfaces.iter().enumerate() {
        let ep = &state.plastic[s];
        psi += 0.5 * (p.h_kin * ep.ddot(ep) + p.h_iso * state.kappa[s] * state.kappa[s]);
        psi += state.kappa_grad_energy[s];
    }
    psi
}

/// Total free energy `g(alpha)(psi_e+ + psi_p) + psi_e-`.
pub fn free_energy(state: &PointState, spec: &MaterialSpec) -> f64 {
    let (g, _) = degradation_g(state.alpha);
    let (ep, em) = elastic_energy_split(state.elastic_strain(), spec);
    g * (ep + plastic_energy(state, spec)) + em
}

/// Stress from the decomposed energy, degrading only the positive part.
pub fn stress(state: &PointState, spec: &MaterialSpec) -> SymTensor {
    stress_of_elastic(state.elastic_strain(), state.alpha, spec)
}

/// Stress as a function of the elastic strain and damage.
pub fn stress_of_elastic(eps_e: SymTensor, alpha: f64, spec: &MaterialSpec) -> SymTensor {
    let (g, _) = degradation_g(alpha);
    match spec.kinematics {
        Kinematics::Uniaxial { youngs } => SymTensor::uniaxial(g * youngs * eps_e.xx),
        Kinematics::Full { bulk, shear } => {
            let tr = eps_e.trace();
            let dev = eps_e.dev();
            let (tp, tm) = match spec.split {
                Split::VolDev => macaulay(tr),
                Split::None => (tr, 0.0),
            };
            let vol = g * bulk * tp + bulk * tm;
            SymTensor::diag(vol, vol, vol) + dev * (2.0 * shear * g)
        }
    }
}

/// Plastic yield function of surface `s`. `laplacian_term` carries
/// `-eta_p^2 div(grad kappa_s)` from the FE layer (zero at a bare point).
pub fn plastic_yield(
    state: &PointState,
    s: usize,
    spec: &MaterialSpec,
    laplacian_term: f64,
) -> f64 {
    let (g, _) = degradation_g(state.alpha);
    let sig = stress(state, spec);
    let rel = spec.eff_dev(sig) - state.plastic[s] * (g * spec.surfaces[s].h_kin);
    let radius = spec.yield_radius(s, state.kappa[s], laplacian_term);
    spec.eff_norm(rel) - g * spec.hard_factor() * radius
}

/// Plastic-damage coupling term `sum_s sigma_p_s kappa_s`, with the
/// effective strength of exhausted-softening surfaces so that the damage
/// force stays consistent with the dissipation actually accounted for.
pub fn dissipative_coupling(state: &PointState, spec: &MaterialSpec) -> f64 {
    (0..spec.n_surfaces())
        .map(|s| spec.dissipative_strength(s, state.kappa[s]) * state.kappa[s])
        .sum()
}

/// Damage driving forces `(D_e, D_p)` and the local resisting force
/// `R_local = d(gamma) w'(alpha)` (gradient contribution added by the FE
/// layer).
pub fn damage_forces(state: &PointState, spec: &MaterialSpec) -> (f64, f64, f64) {
    let (_, gp) = degradation_g(state.alpha);
    let (psi_plus, _) = elastic_energy_split(state.elastic_strain(), spec);
    let coupling = dissipative_coupling(state, spec);
    let d_e = -gp * psi_plus;
    let d_p = -gp * (plastic_energy(state, spec) + coupling);
    let (_, wp) = local_damage_w(state.alpha, spec);
    let r_local = fatigue_degradation(state.gamma, spec) * wp;
    (d_e, d_p, r_local)
}

/// Fatigue driver `theta = g(alpha)(psi_e+ + psi_p)`.
pub fn fatigue_driver(state: &PointState, spec: &MaterialSpec) -> f64 {
    let (g, _) = degradation_g(state.alpha);
    let (psi_plus, _) = elastic_energy_split(state.elastic_strain(), spec);
    g * (psi_plus + plastic_energy(state, spec))
}

/// Time-discrete fatigue update: returns `(gamma_new, theta)` where the
/// accumulator grows only on loading (`theta > theta_prev`). The caller
/// stores `theta` as `theta_prev` on step acceptance.
pub fn update_fatigue(state: &PointState, spec: &MaterialSpec) -> (f64, f64) {
    let theta = fatigue_driver(state, spec);
    let inc = (theta - state.theta_prev).max(0.0);
    (state.gamma + inc, theta)
}
