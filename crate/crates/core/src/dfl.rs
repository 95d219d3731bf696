//! Dynamic feedback linearization of the thrust-extended quadrotor.
//!
//! With the thrust `ζ` driven through two integrators, the outputs
//! `(x, y, z, ψ)` have vector relative degree `(4, 4, 4, 2)` and
//!
//! ```text
//! [d⁴p/dt⁴; ψ̈] = drift(x̄) + Ā(x̄)·U
//! ```
//!
//! Writing `r(η) = R(η)·e₃` for the thrust direction, `ω = η̇`,
//! `c(ω)` for the gyroscopic Euler-rate coupling and `D = diag(d/Ix, d/Iy, d/Iz)`:
//!
//! ```text
//! p̈    = (ζ/m)·r − g·e₃
//! p⃛    = (ζ̇/m)·r + (ζ/m)·J_r·ω
//! p⁽⁴⁾ = (U₁/m)·r + 2(ζ̇/m)·J_r·ω + (ζ/m)·(ωᵀ∇²r·ω + J_r·c(ω) + J_r·D·U₂₃₄)
//! ```
//!
//! All partial derivatives of `r` below are closed-form.

use nalgebra::{Matrix3, Matrix4, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{check_attitude, BodyParams, ExtendedInput, ExtendedState, RigidState};

/// Thrust magnitude below which the decoupling matrix is declared singular (N).
pub const THRUST_EPSILON: f64 = 1e-3;

pub const FLAT_DIM: usize = 14;

/// Reference inputs of the linearized system: snap of each position axis
/// and yaw acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VirtualInput {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
}

impl VirtualInput {
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.v1, self.v2, self.v3, self.v4)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self {
            v1: v[0],
            v2: v[1],
            v3: v[2],
            v4: v[3],
        }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            v1: v[0],
            v2: v[1],
            v3: v[2],
            v4: v[3],
        }
    }
}

/// Chain-of-integrators coordinates:
/// `(x, ẋ, ẍ, x⃛, y, ẏ, ÿ, y⃛, z, ż, z̈, z⃛, ψ, ψ̇)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatState(pub SVector<f64, FLAT_DIM>);

/// Indices of `(x, y, z, ψ)` inside a [`FlatState`].
pub const POSITION_YAW_INDICES: [usize; 4] = [0, 4, 8, 12];

impl FlatState {
    pub fn zeros() -> Self {
        Self(SVector::zeros())
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[4], self.0[8])
    }

    pub fn yaw(&self) -> f64 {
        self.0[12]
    }

    /// Derivative `k` (0..=3) of each position axis.
    pub fn position_derivative(&self, k: usize) -> Vector3<f64> {
        Vector3::new(self.0[k], self.0[4 + k], self.0[8 + k])
    }
}

/// Thrust direction `r = R·e₃` with its Jacobian and Hessians over `(φ, θ, ψ)`.
struct ThrustDirection {
    r: Vector3<f64>,
    /// Column `j` is `∂r/∂η_j`.
    jac: Matrix3<f64>,
    /// `hess[i]` is `∇²r_i`.
    hess: [Matrix3<f64>; 3],
}

impl ThrustDirection {
    fn new(eulers: &Vector3<f64>) -> Self {
        let (sf, cf) = eulers[0].sin_cos();
        let (st, ct) = eulers[1].sin_cos();
        let (sp, cp) = eulers[2].sin_cos();

        let r1 = sf * sp + cf * cp * st;
        let r2 = cf * sp * st - sf * cp;
        let r3 = cf * ct;
        let r = Vector3::new(r1, r2, r3);

        let jac = Matrix3::new(
            cf * sp - sf * cp * st,
            cf * cp * ct,
            sf * cp - cf * sp * st,
            -sf * sp * st - cf * cp,
            cf * sp * ct,
            cf * cp * st + sf * sp,
            -sf * ct,
            -cf * st,
            0.0,
        );

        let h1 = {
            let fs = -sf * cp * ct;
            let fp = cf * cp + sf * sp * st;
            let sp_ = -cf * sp * ct;
            Matrix3::new(-r1, fs, fp, fs, -cf * cp * st, sp_, fp, sp_, -r1)
        };
        let h2 = {
            let fs = -sf * sp * ct;
            let fp = cf * sp - sf * cp * st;
            let sp_ = cf * cp * ct;
            Matrix3::new(-r2, fs, fp, fs, -cf * sp * st, sp_, fp, sp_, -r2)
        };
        let h3 = {
            let fs = sf * st;
            Matrix3::new(-r3, fs, 0.0, fs, -r3, 0.0, 0.0, 0.0, 0.0)
        };

        Self {
            r,
            jac,
            hess: [h1, h2, h3],
        }
    }

    /// `ωᵀ∇²r_i·ω` for each component.
    fn curvature(&self, w: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| w.dot(&(self.hess[i] * w)))
    }
}

/// Gyroscopic coupling of the Euler-rate dynamics with zero torque.
fn rate_coupling(w: &Vector3<f64>, params: &BodyParams) -> Vector3<f64> {
    let BodyParams { ix, iy, iz, .. } = *params;
    Vector3::new(
        (iy - iz) / ix * w[1] * w[2],
        (iz - ix) / iy * w[0] * w[2],
        (ix - iy) / iz * w[0] * w[1],
    )
}

fn check_regular(x: &ExtendedState) -> Result<()> {
    check_attitude(&x.rigid.eulers).map_err(|e| Error::Singular(e.to_string()))?;
    if !(x.thrust > THRUST_EPSILON) {
        return Err(Error::Singular(format!(
            "thrust {} at or below {THRUST_EPSILON} N",
            x.thrust
        )));
    }
    Ok(())
}

/// Decoupling matrix of the unextended plant (relative degree two in every
/// output). Its torque columns for the position rows vanish, so it is
/// always singular.
pub fn static_decoupling(x: &RigidState, params: &BodyParams) -> Matrix4<f64> {
    let dir = ThrustDirection::new(&x.eulers);
    let mut a = Matrix4::zeros();
    a.fixed_view_mut::<3, 1>(0, 0).copy_from(&(dir.r / params.m));
    a[(3, 3)] = params.d / params.iz;
    a
}

/// Output derivatives `(d⁴x, d⁴y, d⁴z, ψ̈)` with zero extended input.
pub fn drift_terms(x: &ExtendedState, params: &BodyParams) -> Result<Vector4<f64>> {
    check_regular(x)?;
    let dir = ThrustDirection::new(&x.rigid.eulers);
    let w = x.rigid.euler_rates;
    let c = rate_coupling(&w, params);
    let m = params.m;
    let snap = dir.jac * w * (2.0 * x.thrust_rate / m) + (dir.curvature(&w) + dir.jac * c) * (x.thrust / m);
    Ok(Vector4::new(snap[0], snap[1], snap[2], c[2]))
}

/// Extended decoupling matrix `Ā`: the map from `U` to the highest output derivatives.
pub fn decoupling_matrix(x: &ExtendedState, params: &BodyParams) -> Result<Matrix4<f64>> {
    check_regular(x)?;
    let dir = ThrustDirection::new(&x.rigid.eulers);
    let BodyParams { m, d, ix, iy, iz, .. } = *params;
    let torque_gain = Matrix3::from_diagonal(&Vector3::new(d / ix, d / iy, d / iz));
    let mut a = Matrix4::zeros();
    a.fixed_view_mut::<3, 1>(0, 0).copy_from(&(dir.r / m));
    a.fixed_view_mut::<3, 3>(0, 1)
        .copy_from(&(dir.jac * torque_gain * (x.thrust / m)));
    a[(3, 3)] = d / iz;
    Ok(a)
}

pub fn decoupling_inverse(x: &ExtendedState, params: &BodyParams) -> Result<Matrix4<f64>> {
    decoupling_matrix(x, params)?
        .try_inverse()
        .ok_or_else(|| Error::Singular("decoupling matrix not invertible".into()))
}

/// Linearizing control law `U = Ā⁻¹·(v − drift)`.
pub fn dfl_control(x: &ExtendedState, v: &VirtualInput, params: &BodyParams) -> Result<ExtendedInput> {
    let drift = drift_terms(x, params)?;
    let inv = decoupling_inverse(x, params)?;
    Ok(ExtendedInput::from_vector(&(inv * (v.as_vector() - drift))))
}

/// State map `Φ(x̄)` into chain-of-integrators coordinates.
pub fn flat_map(x: &ExtendedState, params: &BodyParams) -> Result<FlatState> {
    let r = &x.rigid;
    check_attitude(&r.eulers)?;
    let dir = ThrustDirection::new(&r.eulers);
    let m = params.m;
    let accel = dir.r * (x.thrust / m) - Vector3::new(0.0, 0.0, params.g);
    let jerk = dir.r * (x.thrust_rate / m) + dir.jac * r.euler_rates * (x.thrust / m);
    let mut z = SVector::<f64, FLAT_DIM>::zeros();
    for axis in 0..3 {
        z[4 * axis] = r.p[axis];
        z[4 * axis + 1] = r.v[axis];
        z[4 * axis + 2] = accel[axis];
        z[4 * axis + 3] = jerk[axis];
    }
    z[12] = r.eulers[2];
    z[13] = r.euler_rates[2];
    Ok(FlatState(z))
}
