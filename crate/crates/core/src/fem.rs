//! Plane-strain finite-element layer: precomputed bilinear shape data,
//! quadrature-point state handling, and assembly of the equilibrium
//! residual/tangent. The plastic and damage subproblem assemblies live in
//! the solver module, which owns the staggered iteration.

use crate::constitutive::{degradation_g, stress, Kinematics, MaterialSpec, PointState, Split};
use crate::mesh::{shape_eval, Mesh};
use crate::tensor::SymTensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("finite-element runs require full (bulk/shear) kinematics")]
    UniaxialKinematics,
    #[error("mesh error: {0}")]
    Mesh(#[from] crate::mesh::MeshError),
}

/// 2x2 Gauss rule on the reference square (weights are all 1).
pub const GAUSS_2X2: [[f64; 2]; 4] = {
    // 1/sqrt(3), spelled out because const fns cannot call sqrt.
    const G: f64 = 0.577_350_269_189_625_8;
    [[-G, -G], [G, -G], [G, G], [-G, G]]
};

/// Shape data of one quadrature point of one element.
#[derive(Debug, Clone)]
pub struct GpShape {
    pub n: [f64; 4],
    pub grad: [[f64; 2]; 4],
    /// detJ times the Gauss weight: the integration measure.
    pub weight: f64,
}

/// Mesh plus material plus precomputed quadrature data.
pub struct FeModel {
    pub mesh: Mesh,
    pub spec: MaterialSpec,
    /// `shapes[e][q]` for the 4 Gauss points of element `e`.
    pub shapes: Vec<[GpShape; 4]>,
}

/// Per-dof Dirichlet data: `Some(value)` pins the dof at `value`.
pub type DofConstraints = Vec<Option<f64>>;

impl FeModel {
    pub fn new(mesh: Mesh, spec: MaterialSpec) -> Result<FeModel, FemError> {
        if matches!(spec.kinematics, Kinematics::Uniaxial { .. }) {
            return Err(FemError::UniaxialKinematics);
        }
        mesh.validate()?;
        let shapes = (0..mesh.n_elements())
            .map(|e| {
                let xy = mesh.element_coords(e);
                GAUSS_2X2.map(|[xi, eta]| {
                    let (n, grad, detj) = shape_eval(&xy, xi, eta);
                    GpShape {
                        n,
                        grad,
                        weight: detj,
                    }
                })
            })
            .collect();
        Ok(FeModel { mesh, spec, shapes })
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.mesh.n_nodes()
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    /// Zero-valued quadrature states (virgin material), one per Gauss point.
    pub fn virgin_states(&self) -> Vec<[PointState; 4]> {
        let n = self.spec.n_surfaces();
        (0..self.mesh.n_elements())
            .map(|_| std::array::from_fn(|_| PointState::zero(n)))
            .collect()
    }

    /// Symmetric gradient of the displacement field at a Gauss point
    /// (plane strain: zz = 0).
    pub fn gp_strain(&self, e: usize, q: usize, u: &[f64]) -> SymTensor {
        let sh = &self.shapes[e][q];
        let conn = &self.mesh.elements[e];
        let mut exx = 0.0;
        let mut eyy = 0.0;
        let mut exy = 0.0;
        for a in 0..4 {
            let ux = u[2 * conn[a]];
            let uy = u[2 * conn[a] + 1];
            exx += sh.grad[a][0] * ux;
            eyy += sh.grad[a][1] * uy;
            exy += 0.5 * (sh.grad[a][1] * ux + sh.grad[a][0] * uy);
        }
        SymTensor {
            xx: exx,
            yy: eyy,
            zz: 0.0,
            xy: exy,
            xz: 0.0,
            yz: 0.0,
        }
    }

    /// Interpolate a nodal scalar field at a Gauss point.
    pub fn gp_scalar(&self, e: usize, q: usize, nodal: &[f64]) -> f64 {
        let sh = &self.shapes[e][q];
        let conn = &self.mesh.elements[e];
        (0..4).map(|a| sh.n[a] * nodal[conn[a]]).sum()
    }

    /// Physical gradient of a nodal scalar field at a Gauss point.
    pub fn gp_scalar_grad(&self, e: usize, q: usize, nodal: &[f64]) -> [f64; 2] {
        let sh = &self.shapes[e][q];
        let conn = &self.mesh.elements[e];
        let mut g = [0.0; 2];
        for a in 0..4 {
            g[0] += sh.grad[a][0] * nodal[conn[a]];
            g[1] += sh.grad[a][1] * nodal[conn[a]];
        }
        g
    }

    /// Plane-strain consistent material tangent (Voigt rows xx, yy, xy with
    /// engineering shear) for fixed internal variables, including the
    /// volumetric tension/compression branch.
    pub fn material_tangent(&self, eps_e: &SymTensor, alpha: f64) -> [[f64; 3]; 3] {
        let (g, _) = degradation_g(alpha);
        let (bulk, shear) = match self.spec.kinematics {
            Kinematics::Full { bulk, shear } => (bulk, shear),
            Kinematics::Uniaxial { .. } => unreachable!("checked at construction"),
        };
        let kb = match self.spec.split {
            Split::VolDev if eps_e.trace() < 0.0 => bulk,
            _ => g * bulk,
        };
        let mu = g * shear;
        let d = kb + 4.0 * mu / 3.0;
        let o = kb - 2.0 * mu / 3.0;
        [[d, o, 0.0], [o, d, 0.0], [0.0, 0.0, mu]]
    }

    /// Internal force vector for the given quadrature states (whose stress
    /// is evaluated by the constitutive law), minus nothing: assemble
    /// `f_int_i = sum_gp w B^T sigma`.
    pub fn internal_forces(&self, states: &[[PointState; 4]]) -> Vec<f64> {
        let mut f = vec![0.0; self.n_dofs()];
        for e in 0..self.mesh.n_elements() {
            let conn = &self.mesh.elements[e];
            for q in 0..4 {
                let sh = &self.shapes[e][q];
                let sig = stress(&states[e][q], &self.spec);
                for a in 0..4 {
                    f[2 * conn[a]] += sh.weight * (sh.grad[a][0] * sig.xx + sh.grad[a][1] * sig.xy);
                    f[2 * conn[a] + 1] +=
                        sh.weight * (sh.grad[a][1] * sig.yy + sh.grad[a][0] * sig.xy);
                }
            }
        }
        f
    }

    /// Stiffness triplets for fixed internal variables.
    pub fn stiffness_triplets(&self, states: &[[PointState; 4]]) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.mesh.n_elements() * 64);
        for e in 0..self.mesh.n_elements() {
            let conn = &self.mesh.elements[e];
            for q in 0..4 {
                let sh = &self.shapes[e][q];
                let st = &states[e][q];
                let d = self.material_tangent(&st.elastic_strain(), st.alpha);
                // B_a = [[dNx, 0], [0, dNy], [dNy, dNx]] per node a.
                for a in 0..4 {
                    let ba = [
                        [sh.grad[a][0], 0.0],
                        [0.0, sh.grad[a][1]],
                        [sh.grad[a][1], sh.grad[a][0]],
                    ];
                    for b in 0..4 {
                        let bb = [
                            [sh.grad[b][0], 0.0],
                            [0.0, sh.grad[b][1]],
                            [sh.grad[b][1], sh.grad[b][0]],
                        ];
                        for i in 0..2 {
                            for j in 0..2 {
                                let mut v = 0.0;
                                for r in 0..3 {
                                    for c in 0..3 {
                                        v += ba[r][i] * d[r][c] * bb[c][j];
                                    }
                                }
                                t.push((2 * conn[a] + i, 2 * conn[b] + j, sh.weight * v));
                            }
                        }
                    }
                }
            }
        }
        t
    }

    /// External force vector from edge tractions: `traction` is force per
    /// unit length (per unit out-of-plane thickness) applied on every edge
    /// of the named edge set; 2-point Gauss on edges.
    pub fn traction_forces(&self, edge_set: &str, traction: [f64; 2]) -> Vec<f64> {
        let mut f = vec![0.0; self.n_dofs()];
        let Some(edges) = self.mesh.edge_set(edge_set) else {
            return f;
        };
        let g = 1.0 / 3f64.sqrt();
        for pair in edges {
            let a = self.mesh.coords[pair[0]];
            let b = self.mesh.coords[pair[1]];
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            for &xi in &[-g, g] {
                let n0 = 0.5 * (1.0 - xi);
                let n1 = 0.5 * (1.0 + xi);
                let w = 0.5 * len;
                f[2 * pair[0]] += w * n0 * traction[0];
                f[2 * pair[0] + 1] += w * n0 * traction[1];
                f[2 * pair[1]] += w * n1 * traction[0];
                f[2 * pair[1] + 1] += w * n1 * traction[1];
            }
        }
        f
    }

    /// Total length of an edge set (used to convert a resultant force into
    /// a traction).
    pub fn edge_set_length(&self, edge_set: &str) -> f64 {
        self.mesh
            .edge_set(edge_set)
            .map(|edges| {
                edges
                    .iter()
                    .map(|p| {
                        let a = self.mesh.coords[p[0]];
                        let b = self.mesh.coords[p[1]];
                        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
                    })
                    .sum()
            })
            .unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{DamageModel, SurfaceParams};
    use crate::mesh::generate_rect;

    pub fn elastic_spec() -> MaterialSpec {
        MaterialSpec {
            kinematics: Kinematics::Full {
                bulk: 100.0,
                shear: 60.0,
            },
            split: Split::None,
            surfaces: vec![SurfaceParams {
                sigma_p: 1e12,
                h_kin: 0.0,
                h_iso: 0.0,
            }],
            beta: 0.0,
            eta_p: 0.0,
            eta_d: 1.0,
            w0: 1e12,
            damage_model: DamageModel::At2,
            gamma0: f64::INFINITY,
            fatigue_k: 0.5,
            ratchet_correction: true,
        }
    }

    /// Affine displacement fields must reproduce the homogeneous stress
    /// state: residual of interior dofs is zero (patch test).
    #[test]
    fn patch_test_single_and_2x2() {
        for n in [1usize, 2] {
            let mesh = generate_rect(1.0, 1.0, n, n);
            let model = FeModel::new(mesh, elastic_spec()).unwrap();
            let (exx, eyy, gxy) = (1e-3, -4e-4, 5e-4);
            let u: Vec<f64> = (0..model.n_nodes())
                .flat_map(|i| {
                    let [x, y] = model.mesh.coords[i];
                    [exx * x + 0.5 * gxy * y, eyy * y + 0.5 * gxy * x]
                })
                .collect();
            let mut states = model.virgin_states();
            for e in 0..model.mesh.n_elements() {
                for q in 0..4 {
                    states[e][q].strain = model.gp_strain(e, q, &u);
                }
            }
            // All gp strains equal the affine field.
            for e in 0..model.mesh.n_elements() {
                for q in 0..4 {
                    assert!((states[e][q].strain.xx - exx).abs() < 1e-12);
                    assert!((states[e][q].strain.yy - eyy).abs() < 1e-12);
                    assert!((states[e][q].strain.xy - 0.5 * gxy).abs() < 1e-12);
                }
            }
            let f = model.internal_forces(&states);
            // Interior nodes (none on the boundary) carry zero residual.
            for i in 0..model.n_nodes() {
                let [x, y] = model.mesh.coords[i];
                let interior = x > 1e-9 && x < 1.0 - 1e-9 && y > 1e-9 && y < 1.0 - 1e-9;
                if interior {
                    assert!(f[2 * i].abs() < 1e-12 && f[2 * i + 1].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_displacement_zero_residual() {
        let mesh = generate_rect(1.0, 1.0, 3, 3);
        let model = FeModel::new(mesh, elastic_spec()).unwrap();
        let states = model.virgin_states();
        let f = model.internal_forces(&states);
        assert!(f.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn fully_degraded_tension_carries_no_stress() {
        let mut spec = elastic_spec();
        spec.split = Split::VolDev;
        let mesh = generate_rect(1.0, 1.0, 1, 1);
        let model = FeModel::new(mesh, spec).unwrap();
        let mut states = model.virgin_states();
        for e in 0..model.mesh.n_elements() {
            for q in 0..4 {
                states[e][q].strain = SymTensor::diag(1e-3, 1e-3, 0.0);
                states[e][q].alpha = 1.0;
            }
        }
        let f = model.internal_forces(&states);
        assert!(f.iter().all(|v| v.abs() < 1e-12), "{f:?}");
    }

    #[test]
    fn assembly_linearity_in_elastic_regime() {
        let mesh = generate_rect(1.0, 1.0, 2, 2);
        let model = FeModel::new(mesh, elastic_spec()).unwrap();
        let n = model.n_dofs();
        let u1: Vec<f64> = (0..n).map(|i| 1e-3 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let u2: Vec<f64> = (0..n).map(|i| 1e-3 * ((i * 3 % 7) as f64 - 3.0)).collect();
        let f_of = |u: &[f64]| {
            let mut states = model.virgin_states();
            for e in 0..model.mesh.n_elements() {
                for q in 0..4 {
                    states[e][q].strain = model.gp_strain(e, q, u);
                }
            }
            model.internal_forces(&states)
        };
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let f1 = f_of(&u1);
        let f2 = f_of(&u2);
        let fs = f_of(&sum);
        for i in 0..n {
            assert!((fs[i] - f1[i] - f2[i]).abs() < 1e-12);
        }
    }

    /// Directional finite difference of the residual matches the assembled
    /// tangent away from the volumetric kink.
    #[test]
    fn tangent_matches_finite_difference() {
        let mut spec = elastic_spec();
        spec.split = Split::VolDev;
        let mesh = generate_rect(1.0, 1.0, 2, 2);
        let model = FeModel::new(mesh, spec).unwrap();
        let n = model.n_dofs();
        // Base displacement with nonzero strains everywhere (tensile).
        let u0: Vec<f64> = (0..model.n_nodes())
            .flat_map(|i| {
                let [x, y] = model.mesh.coords[i];
                [2e-3 * x + 1e-4 * y * y, 1.5e-3 * y + 2e-4 * x]
            })
            .collect();
        let dir: Vec<f64> = (0..n)
            .map(|i| ((i * 13 % 11) as f64 - 5.0) / 11.0)
            .collect();
        let f_of = |u: &[f64]| {
            let mut states = model.virgin_states();
            for e in 0..model.mesh.n_elements() {
                for q in 0..4 {
                    states[e][q].strain = model.gp_strain(e, q, u);
                    states[e][q].alpha = 0.3;
                }
            }
            model.internal_forces(&states)
        };
        let mut states = model.virgin_states();
        for e in 0..model.mesh.n_elements() {
            for q in 0..4 {
                states[e][q].strain = model.gp_strain(e, q, &u0);
                states[e][q].alpha = 0.3;
            }
        }
        let k = crate::linsolve::SparseSym::from_triplets(n, &model.stiffness_triplets(&states));
        let mut kd = vec![0.0; n];
        k.matvec(&dir, &mut kd);
        let h = 1e-6;
        let up: Vec<f64> = u0.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
        let um: Vec<f64> = u0.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
        let fp = f_of(&up);
        let fm = f_of(&um);
        let scale = kd.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        for i in 0..n {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            assert!(
                (fd - kd[i]).abs() <= 1e-5 * scale.max(1.0),
                "dof {i}: fd {fd} vs K.d {}",
                kd[i]
            );
        }
    }

    #[test]
    fn traction_resultant_is_load_times_length() {
        let mesh = generate_rect(2.0, 1.0, 4, 2);
        let model = FeModel::new(mesh, elastic_spec()).unwrap();
        let f = model.traction_forces("top", [0.0, 3.0]);
        let total: f64 = (0..model.n_nodes()).map(|i| f[2 * i + 1]).sum();
        assert!((total - 6.0).abs() < 1e-12);
        assert!((model.edge_set_length("top") - 2.0).abs() < 1e-12);
    }
}
