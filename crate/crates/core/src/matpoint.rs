//! Homogeneous material-point driver: multi-surface return mapping with
//! ratcheting, closed-form local damage update, staggered point iteration,
//! force or displacement control.

use crate::constitutive::{
    damage_forces, degradation_g, dissipative_coupling, elastic_energy_split, fatigue_degradation,
    plastic_energy, stress, stress_of_elastic, update_fatigue, DamageModel, Kinematics,
    MaterialError, MaterialSpec, PointState,
};
use crate::energy::{dissipation_increment, free_energy_increment, point_work_increment};
use crate::load::{Waveform, WaveformError};
use crate::tensor::SymTensor;
use thiserror::Error;

/// Control mode and target history for a point run.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMode {
    pub kind: ControlKind,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    /// Imposed axial stress (MPa); strain found by outer bisection.
    Force,
    /// Imposed axial strain.
    Displacement,
}

#[derive(Debug, Error)]
pub enum PointError {
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error("return map: no bracket for surface {surface} (residual {residual:.3e})")]
    ReturnMapBracket { surface: usize, residual: f64 },
    #[error("return map: fixed-point sweeps did not converge (residual {residual:.3e})")]
    ReturnMapDiverged { residual: f64 },
    #[error("staggered point iteration did not converge at step {step} after {iters} iterations")]
    StaggeredDiverged { step: usize, iters: usize },
    #[error("load capacity exceeded at step {step}: target stress {target:.6e} unreachable")]
    LoadCapacity { step: usize, target: f64 },
}

/// Quantities frozen at the previous accepted step for the whole staggered
/// loop: the stress and the ratcheting flow direction.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub sigma_n: SymTensor,
    /// Direction of the deviatoric previous stress; zero tensor at zero
    /// deviatoric stress (no ratcheting increment).
    pub n_g: SymTensor,
}

impl StepContext {
    pub fn from_state(state_n: &PointState, spec: &MaterialSpec) -> Self {
        let sigma_n = stress(state_n, spec);
        Self {
            sigma_n,
            n_g: spec.eff_dev(sigma_n).direction(),
        }
    }
}

/// Result of the plastic solve at fixed damage.
#[derive(Debug, Clone)]
pub struct ReturnMap {
    pub state: PointState,
    pub dkappa: Vec<f64>,
    /// Discrete yield values at the end state (KKT diagnostics).
    pub fhat: Vec<f64>,
    pub sweeps: usize,
}

const SWEEP_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 200;

/// Multi-surface return map at fixed damage `alpha`: finds `dkappa_s >= 0`
/// satisfying the discrete per-surface KKT conditions, with flow along the
/// trial relative-stress directions and the ratcheting increment along the
/// frozen previous-step direction.
pub fn return_map_step(
    state_n: &PointState,
    strain: SymTensor,
    alpha: f64,
    ctx: &StepContext,
    spec: &MaterialSpec,
) -> Result<ReturnMap, PointError> {
    let n = spec.n_surfaces();
    let (g, _) = degradation_g(alpha);
    let ff = spec.flow_factor();
    let beta = spec.beta;

    // Trial elastic strain with all plastic variables at their previous
    // accepted values; flow directions are frozen at this trial state.
    let mut eps_e_tr = strain - state_n.ratchet;
    for p in &state_n.plastic {
        eps_e_tr = eps_e_tr - *p;
    }
    let sigma_tr = stress_of_elastic(eps_e_tr, alpha, spec);
    let n_tr: Vec<SymTensor> = (0..n)
        .map(|s| {
            let rel = spec.eff_dev(sigma_tr) - state_n.plastic[s] * (g * spec.surfaces[s].h_kin);
            if spec.is_uniaxial() {
                SymTensor::uniaxial(rel.xx.signum() * if rel.xx == 0.0 { 0.0 } else { 1.0 })
            } else {
                rel.direction()
            }
        })
        .collect();

    let mut dk = vec![0.0f64; n];

    // Discrete yield value of surface `s` with candidate increment `x` and
    // the other surfaces at their current iterates. Returns the signed
    // projection form (monotone in `x`, used for root finding; with the
    // yield radius floored at zero the norm form never changes sign) and the
    // norm form of the yield function (KKT diagnostics).
    // `eps_e_at` evaluates in O(1) from the running elastic strain of the
    // current iterate (all surfaces at dk) by swapping surface s to x.
    let fhat = |s: usize, x: f64, dk: &[f64], eps_e_cur: SymTensor| -> (f64, f64) {
        let delta = x - dk[s];
        let eps_e = eps_e_cur - (n_tr[s] + ctx.n_g * beta) * (ff * delta);
        let sigma = stress_of_elastic(eps_e, alpha, spec);
        let eps_p = state_n.plastic[s] + n_tr[s] * (ff * x);
        let rel = spec.eff_dev(sigma) - eps_p * (g * spec.surfaces[s].h_kin);
        let corr = if spec.ratchet_correction && beta > 0.0 {
            beta * (sigma - ctx.sigma_n).ddot(&ctx.n_g)
        } else {
            0.0
        };
        let resist = g * spec.yield_radius(s, state_n.kappa[s] + x, 0.0);
        (
            ff * (rel.ddot(&n_tr[s]) + corr) - resist,
            ff * (spec.eff_norm(rel) + corr) - resist,
        )
    };

    // Elastic stiffness scale for the initial bracket guess.
    let stiff = match spec.kinematics {
        Kinematics::Full { bulk, shear } => bulk.max(2.0 * shear),
        Kinematics::Uniaxial { youngs } => youngs,
    };

    // Running elastic strain of the current iterate (all surfaces at dk).
    let mut eps_e_cur = eps_e_tr;
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut change: f64 = 0.0;
        for s in 0..n {
            let (h0, _) = fhat(s, 0.0, &dk, eps_e_cur);
            let root = if h0 <= 0.0 {
                0.0
            } else {
                // bracket by doubling, then bisect
                let p = &spec.surfaces[s];
                let slope = ff * ff * (g * (stiff + p.h_kin) + p.h_iso.abs()) + 1e-30;
                let mut hi = (h0 / slope).max(1e-14);
                let mut lo = 0.0;
                let mut expansions = 0;
                while fhat(s, hi, &dk, eps_e_cur).0 > 0.0 {
                    lo = hi;
                    hi *= 2.0;
                    expansions += 1;
                    if expansions > 200 {
                        return Err(PointError::ReturnMapBracket {
                            surface: s,
                            residual: fhat(s, hi, &dk, eps_e_cur).0,
                        });
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if fhat(s, mid, &dk, eps_e_cur).0 > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            change = change.max((root - dk[s]).abs());
            eps_e_cur = eps_e_cur - (n_tr[s] + ctx.n_g * beta) * (ff * (root - dk[s]));
            dk[s] = root;
        }
        if change <= SWEEP_TOL * (1.0 + dk.iter().cloned().fold(0.0f64, f64::max)) {
            // Per-sweep change underestimates the remaining error when the
            // surfaces are strongly coupled; accept only once the signed
            // yield residuals themselves are at tolerance.
            let worst = (0..n)
                .map(|s| fhat(s, dk[s], &dk, eps_e_cur).0)
                .fold(f64::NEG_INFINITY, f64::max);
            if worst <= SWEEP_TOL * (1.0 + spec.surfaces[0].sigma_p) {
                break;
            }
        }
        if sweeps >= MAX_SWEEPS {
            return Err(PointError::ReturnMapDiverged { residual: change });
        }
    }

    let mut state = state_n.clone();
    state.strain = strain;
    state.alpha = alpha;
    let sum_dk: f64 = dk.iter().sum();
    for s in 0..n {
        state.plastic[s] = state_n.plastic[s] + n_tr[s] * (ff * dk[s]);
        state.kappa[s] = state_n.kappa[s] + dk[s];
    }
    state.ratchet = state_n.ratchet + ctx.n_g * (ff * beta * sum_dk);
    // Report the signed-projection yield: it is the yield function of the
    // frozen-direction discrete system the return map solves, so the KKT
    // conditions hold for it exactly. The norm form can sit marginally
    // positive when the yield radius is exhausted and the ratchet
    // correction is active.
    let fh: Vec<f64> = (0..n).map(|s| fhat(s, dk[s], &dk, eps_e_cur).0).collect();
    Ok(ReturnMap {
        state,
        dkappa: dk,
        fhat: fh,
        sweeps,
    })
}

/// Closed-form damage update at fixed plastic fields: root of the local
/// damage yield function with the fatigue degradation lagged at `gamma_lag`,
/// clamped to `[alpha_n, 1]`.
pub fn damage_update_point(state: &PointState, spec: &MaterialSpec, gamma_lag: f64) -> f64 {
    let alpha_n = state.alpha;
    let d = fatigue_degradation(gamma_lag, spec);
    let (psi_plus, _) = elastic_energy_split(state.elastic_strain(), spec);
    let drive = psi_plus + plastic_energy(state, spec) + dissipative_coupling(state, spec);
    // f^d(alpha) = 2(1-alpha)*drive - d*w'(alpha)
    let wp_at = |a: f64| match spec.damage_model {
        DamageModel::At1 => spec.w0,
        DamageModel::At2 => 2.0 * spec.w0 * a,
    };
    if 2.0 * (1.0 - alpha_n) * drive - d * wp_at(alpha_n) <= 0.0 {
        return alpha_n;
    }
    let root = if d == 0.0 {
        1.0
    } else {
        match spec.damage_model {
            DamageModel::At2 => drive / (drive + d * spec.w0),
            DamageModel::At1 => 1.0 - d * spec.w0 / (2.0 * drive),
        }
    };
    root.clamp(alpha_n, 1.0)
}

const STAGGER_TOL: f64 = 1e-8;
const MAX_STAGGER: usize = 500;

/// One load step at a point: alternate the plastic return map and the
/// damage update until successive field updates fall below tolerance.
pub fn staggered_point_step(
    state_n: &PointState,
    strain: SymTensor,
    ctx: &StepContext,
    spec: &MaterialSpec,
    step: usize,
) -> Result<ReturnMap, PointError> {
    let mut alpha = state_n.alpha;
    let mut kappa_prev = state_n.kappa.clone();
    for _iter in 0..MAX_STAGGER {
        let rm = return_map_step(state_n, strain, alpha, ctx, spec)?;
        let alpha_new = damage_update_point(&rm.state, spec, state_n.gamma);
        let dk_change = rm
            .state
            .kappa
            .iter()
            .zip(&kappa_prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let da = (alpha_new - alpha).abs();
        kappa_prev.clone_from(&rm.state.kappa);
        alpha = alpha_new;
        if da < STAGGER_TOL && dk_change < STAGGER_TOL {
            let mut out = rm;
            out.state.alpha = alpha;
            return Ok(out);
        }
    }
    Err(PointError::StaggeredDiverged {
        step,
        iters: MAX_STAGGER,
    })
}

/// One trace row; axial (`xx`) components of the tensors.
#[derive(Debug, Clone)]
pub struct PointRow {
    pub step: usize,
    pub control: f64,
    pub stress: f64,
    pub strain: f64,
    pub plastic: Vec<f64>,
    pub kappa: Vec<f64>,
    pub ratchet: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub d_fatigue: f64,
    pub drive_elastic: f64,
    pub drive_plastic: f64,
    pub resist: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub work: f64,
}

/// Full point-run output: the CSV rows plus per-step diagnostics used by
/// verification (balance residuals, KKT values).
#[derive(Debug, Clone)]
pub struct PointTrace {
    pub n_surfaces: usize,
    pub rows: Vec<PointRow>,
    pub balance_residual: Vec<f64>,
    pub dkappa: Vec<Vec<f64>>,
    pub fhat: Vec<Vec<f64>>,
    pub final_state: PointState,
}

impl PointTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,control,stress,strain");
        for s in 1..=self.n_surfaces {
            out.push_str(&format!(",eps_p_{s}"));
        }
        for s in 1..=self.n_surfaces {
            out.push_str(&format!(",kappa_{s}"));
        }
        out.push_str(
            ",eps_r,alpha,gamma,d_fatigue,D_e,D_p,R,energy_stored,dissipation_cum,work_ext\n",
        );
        for r in &self.rows {
            out.push_str(&r.step.to_string());
            for v in [r.control, r.stress, r.strain] {
                out.push_str(&format!(",{}", crate::sig9(v)));
            }
            for v in r.plastic.iter().chain(&r.kappa) {
                out.push_str(&format!(",{}", crate::sig9(*v)));
            }
            for v in [
                r.ratchet,
                r.alpha,
                r.gamma,
                r.d_fatigue,
                r.drive_elastic,
                r.drive_plastic,
                r.resist,
                r.energy,
                r.dissipation,
                r.work,
            ] {
                out.push_str(&format!(",{}", crate::sig9(v)));
            }
            out.push('\n');
        }
        out
    }
}

/// March the control history from a virgin state.
pub fn run_point(control: &ControlMode, spec: &MaterialSpec) -> Result<PointTrace, PointError> {
    spec.validate()?;
    control.waveform.validate()?;
    let n = spec.n_surfaces();
    let total = control.waveform.total_steps();

    let mut state = PointState::zero(n);
    let mut trace = PointTrace {
        n_surfaces: n,
        rows: Vec::with_capacity(total + 1),
        balance_residual: Vec::with_capacity(total + 1),
        dkappa: Vec::with_capacity(total + 1),
        fhat: Vec::with_capacity(total + 1),
        final_state: PointState::zero(n),
    };
    let (mut energy, mut dissipation, mut work) = (0.0, 0.0, 0.0);
    push_row(
        &mut trace,
        &state,
        spec,
        0,
        0.0,
        state.gamma,
        energy,
        dissipation,
        work,
        0.0,
        vec![0.0; n],
        vec![0.0; n],
    );

    for i in 1..=total {
        let target = control.waveform.sample(i)?;
        let ctx = StepContext::from_state(&state, spec);
        let rm = match control.kind {
            ControlKind::Displacement => {
                staggered_point_step(&state, SymTensor::uniaxial(target), &ctx, spec, i)?
            }
            ControlKind::Force => solve_force_step(&state, target, &ctx, spec, i)?,
        };
        let mut next = rm.state.clone();
        let (gamma_new, theta) = update_fatigue(&next, spec);
        next.gamma = gamma_new;
        next.theta_prev = theta;

        let de = free_energy_increment(&state, &next, spec, 0.0);
        let dd = dissipation_increment(&state, &next, spec, 0.0);
        let dw = point_work_increment(&state, &next, spec);
        energy += de;
        dissipation += dd;
        work += dw;
        let gamma_lag = state.gamma;
        state = next;
        push_row(
            &mut trace,
            &state,
            spec,
            i,
            target,
            gamma_lag,
            energy,
            dissipation,
            work,
            de + dd - dw,
            rm.dkappa,
            rm.fhat,
        );
    }
    trace.final_state = state;
    Ok(trace)
}

/// Force control: outer bisection on the axial strain over the fully
/// staggered response `sigma(eps)`.
fn solve_force_step(
    state_n: &PointState,
    target: f64,
    ctx: &StepContext,
    spec: &MaterialSpec,
    step: usize,
) -> Result<ReturnMap, PointError> {
    let tol = 1e-10 * target.abs().max(1.0);
    let respond = |x: f64| -> Result<ReturnMap, PointError> {
        staggered_point_step(state_n, SymTensor::uniaxial(x), ctx, spec, step)
    };
    let sigma_of = |rm: &ReturnMap| stress(&rm.state, spec).xx;

    let stiff = match spec.kinematics {
        Kinematics::Full { bulk, shear } => bulk + 4.0 * shear / 3.0,
        Kinematics::Uniaxial { youngs } => youngs,
    };
    let mut a = state_n.strain.xx;
    let rm_a = respond(a)?;
    let mut fa = sigma_of(&rm_a) - target;
    if fa.abs() <= tol {
        return Ok(rm_a);
    }
    let mut h = -(fa.abs() / stiff).max(1e-8) * fa.signum();
    let mut b = a + h;
    let mut rm_b = respond(b)?;
    let mut fb = sigma_of(&rm_b) - target;
    let mut expansions = 0;
    while fa.signum() == fb.signum() {
        if fb.abs() <= tol {
            return Ok(rm_b);
        }
        a = b;
        fa = fb;
        h *= 2.0;
        b = a + h;
        expansions += 1;
        if expansions > 80 {
            return Err(PointError::LoadCapacity { step, target });
        }
        rm_b = respond(b)?;
        fb = sigma_of(&rm_b) - target;
    }
    // bisect on [a, b]
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let rm_m = respond(mid)?;
        let fm = sigma_of(&rm_m) - target;
        if fm.abs() <= tol || (b - a).abs() <= f64::EPSILON * (1.0 + mid.abs()) {
            return Ok(rm_m);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Err(PointError::LoadCapacity { step, target })
}

#[allow(clippy::too_many_arguments)]
fn push_row(
    trace: &mut PointTrace,
    state: &PointState,
    spec: &MaterialSpec,
    step: usize,
    control: f64,
    gamma_lag: f64,
    energy: f64,
    dissipation: f64,
    work: f64,
    residual: f64,
    dkappa: Vec<f64>,
    fhat: Vec<f64>,
) {
    let (d_e, d_p, _) = damage_forces(state, spec);
    // The damage update lags the fatigue degradation at the start-of-step
    // accumulator, so the recorded resistance must use the same value for
    // the row to reproduce the yield condition enforced by the step.
    let (_, wp) = crate::constitutive::local_damage_w(state.alpha, spec);
    let resist = fatigue_degradation(gamma_lag, spec) * wp;
    trace.rows.push(PointRow {
        step,
        control,
        stress: stress(state, spec).xx,
        strain: state.strain.xx,
        plastic: state.plastic.iter().map(|p| p.xx).collect(),
        kappa: state.kappa.clone(),
        ratchet: state.ratchet.xx,
        alpha: state.alpha,
        gamma: state.gamma,
        d_fatigue: fatigue_degradation(state.gamma, spec),
        drive_elastic: d_e,
        drive_plastic: d_p,
        resist,
        energy,
        dissipation,
        work,
    });
    trace.balance_residual.push(residual);
    trace.dkappa.push(dkappa);
    trace.fhat.push(fhat);
}
