//! Symmetric second-order tensor algebra in 3D.
//!
//! All strain- and stress-like quantities are carried as full 3x3 symmetric
//! tensors even in plane strain, because deviatoric plastic flow generates a
//! nonzero out-of-plane component. Plane strain only constrains the total
//! strain (`zz = xz = yz = 0`).

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Symmetric 3x3 tensor stored by its six independent components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl SymTensor {
    pub const ZERO: SymTensor = SymTensor {
        xx: 0.0,
        yy: 0.0,
        zz: 0.0,
        xy: 0.0,
        xz: 0.0,
        yz: 0.0,
    };

    pub fn new(xx: f64, yy: f64, zz: f64, xy: f64, xz: f64, yz: f64) -> Self {
        Self {
            xx,
            yy,
            zz,
            xy,
            xz,
            yz,
        }
    }

    pub fn diag(xx: f64, yy: f64, zz: f64) -> Self {
        Self {
            xx,
            yy,
            zz,
            ..Self::ZERO
        }
    }

    /// Identity tensor.
    pub fn identity() -> Self {
        Self::diag(1.0, 1.0, 1.0)
    }

    /// Uniaxial tensor with only the `xx` component set. Used by the 1D
    /// reduction, where tensors collapse to scalars.
    pub fn uniaxial(xx: f64) -> Self {
        Self { xx, ..Self::ZERO }
    }

    /// In-plane plane-strain tensor (zz kept explicit).
    pub fn plane(xx: f64, yy: f64, zz: f64, xy: f64) -> Self {
        Self {
            xx,
            yy,
            zz,
            xy,
            ..Self::ZERO
        }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    /// Deviatoric part `t - tr(t)/3 I`.
    pub fn dev(&self) -> SymTensor {
        let m = self.trace() / 3.0;
        SymTensor {
            xx: self.xx - m,
            yy: self.yy - m,
            zz: self.zz - m,
            xy: self.xy,
            xz: self.xz,
            yz: self.yz,
        }
    }

    /// Full contraction `a : b`, counting off-diagonal pairs twice.
    pub fn ddot(&self, o: &SymTensor) -> f64 {
        self.xx * o.xx
            + self.yy * o.yy
            + self.zz * o.zz
            + 2.0 * (self.xy * o.xy + self.xz * o.xz + self.yz * o.yz)
    }

    /// Euclidean (Frobenius) norm of the full tensor.
    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    /// Unit tensor in the direction of `self`, or zero if `self` is zero.
    pub fn direction(&self) -> SymTensor {
        let n = self.norm();
        if n == 0.0 {
            SymTensor::ZERO
        } else {
            *self * (1.0 / n)
        }
    }
}

impl Add for SymTensor {
    type Output = SymTensor;
    fn add(self, o: SymTensor) -> SymTensor {
        SymTensor {
            xx: self.xx + o.xx,
            yy: self.yy + o.yy,
            zz: self.zz + o.zz,
            xy: self.xy + o.xy,
            xz: self.xz + o.xz,
            yz: self.yz + o.yz,
        }
    }
}

impl AddAssign for SymTensor {
    fn add_assign(&mut self, o: SymTensor) {
        *self = *self + o;
    }
}

impl Sub for SymTensor {
    type Output = SymTensor;
    fn sub(self, o: SymTensor) -> SymTensor {
        self + (-o)
    }
}

impl Neg for SymTensor {
    type Output = SymTensor;
    fn neg(self) -> SymTensor {
        self * -1.0
    }
}

impl Mul<f64> for SymTensor {
    type Output = SymTensor;
    fn mul(self, c: f64) -> SymTensor {
        SymTensor {
            xx: self.xx * c,
            yy: self.yy * c,
            zz: self.zz * c,
            xy: self.xy * c,
            xz: self.xz * c,
            yz: self.yz * c,
        }
    }
}

/// Macaulay brackets: `(max(x, 0), min(x, 0))` with `plus + minus = x`.
pub fn macaulay(x: f64) -> (f64, f64) {
    if x >= 0.0 {
        (x, 0.0)
    } else {
        (0.0, x)
    }
}
