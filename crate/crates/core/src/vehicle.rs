//! Nonlinear underactuated quadrotor plant with a second-order thrust
//! extension, and its RK4 integration.
//!
//! Extended state ordering (14 components):
//! `[x, y, z, φ, θ, ψ, vx, vy, vz, ζ, ζ̇, φ̇, θ̇, ψ̇]` where `ζ` is the total
//! thrust. The Euler rates are states in their own right; their derivatives
//! come only from the torque rows.

use nalgebra::{Matrix3, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 14;

/// Flat 14-vector in extended-state ordering.
pub type StateVector = SVector<f64, STATE_DIM>;

/// Physical parameters of the airframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// Mass (kg).
    pub m: f64,
    /// Rotor arm length (m).
    pub d: f64,
    pub ix: f64,
    pub iy: f64,
    pub iz: f64,
    /// Gravitational acceleration (m/s²).
    pub g: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            m: 0.7,
            d: 0.3,
            ix: 1.241,
            iy: 1.241,
            iz: 1.241,
            g: 9.81,
        }
    }
}

impl BodyParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m", self.m),
            ("d", self.d),
            ("ix", self.ix),
            ("iy", self.iy),
            ("iz", self.iz),
            ("g", self.g),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "body parameter {name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Thrust that balances gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.m * self.g
    }
}

/// Rigid-body state: position, ZYX Euler angles, inertial velocity, Euler rates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidState {
    pub p: Vector3<f64>,
    /// (φ, θ, ψ) in radians.
    pub eulers: Vector3<f64>,
    pub v: Vector3<f64>,
    /// (φ̇, θ̇, ψ̇) in rad/s.
    pub euler_rates: Vector3<f64>,
}

/// Rigid state augmented with the thrust and its rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExtendedState {
    pub rigid: RigidState,
    /// Total thrust (N).
    pub thrust: f64,
    /// Thrust rate (N/s).
    pub thrust_rate: f64,
}

/// Inputs of the extended plant: thrust second derivative and body torques.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtendedInput {
    /// Thrust second derivative (N/s²).
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
}

impl ExtendedInput {
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.u1, self.u2, self.u3, self.u4)
    }

    pub fn from_vector(u: &Vector4<f64>) -> Self {
        Self {
            u1: u[0],
            u2: u[1],
            u3: u[2],
            u4: u[3],
        }
    }
}

impl ExtendedState {
    /// Hover at `p` with heading `yaw`.
    pub fn hover(p: Vector3<f64>, yaw: f64, params: &BodyParams) -> Self {
        Self {
            rigid: RigidState {
                p,
                eulers: Vector3::new(0.0, 0.0, yaw),
                ..Default::default()
            },
            thrust: params.hover_thrust(),
            thrust_rate: 0.0,
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let r = &self.rigid;
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&r.p);
        x.fixed_rows_mut::<3>(3).copy_from(&r.eulers);
        x.fixed_rows_mut::<3>(6).copy_from(&r.v);
        x[9] = self.thrust;
        x[10] = self.thrust_rate;
        x.fixed_rows_mut::<3>(11).copy_from(&r.euler_rates);
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            rigid: RigidState {
                p: x.fixed_rows::<3>(0).into_owned(),
                eulers: x.fixed_rows::<3>(3).into_owned(),
                v: x.fixed_rows::<3>(6).into_owned(),
                euler_rates: x.fixed_rows::<3>(11).into_owned(),
            },
            thrust: x[9],
            thrust_rate: x[10],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Checks the pitch bound needed by the Euler kinematics.
pub fn check_pitch(eulers: &Vector3<f64>) -> Result<()> {
    let theta = eulers[1];
    if !theta.is_finite() || theta.abs() >= FRAC_PI_2 {
        return Err(Error::Domain(format!("pitch {theta} outside (-pi/2, pi/2)")));
    }
    Ok(())
}

/// Checks both roll and pitch bounds.
pub fn check_attitude(eulers: &Vector3<f64>) -> Result<()> {
    check_pitch(eulers)?;
    let phi = eulers[0];
    if !phi.is_finite() || phi.abs() >= FRAC_PI_2 {
        return Err(Error::Domain(format!("roll {phi} outside (-pi/2, pi/2)")));
    }
    Ok(())
}

/// ZYX rotation matrix from body to inertial frame.
pub fn rotation_matrix(eulers: &Vector3<f64>) -> Matrix3<f64> {
    let (sf, cf) = eulers[0].sin_cos();
    let (st, ct) = eulers[1].sin_cos();
    let (sp, cp) = eulers[2].sin_cos();
    Matrix3::new(
        cp * ct,
        cp * sf * st - cf * sp,
        sf * sp + cf * cp * st,
        ct * sp,
        cf * cp + sf * sp * st,
        cf * sp * st - cp * sf,
        -st,
        ct * sf,
        cf * ct,
    )
}

/// Time derivative of the extended state, in [`StateVector`] ordering.
pub fn derivatives(x: &ExtendedState, u: &ExtendedInput, params: &BodyParams) -> Result<StateVector> {
    let r = &x.rigid;
    check_pitch(&r.eulers)?;
    let BodyParams { m, d, ix, iy, iz, g } = *params;
    let thrust_dir = rotation_matrix(&r.eulers).column(2).into_owned();
    let accel = thrust_dir * (x.thrust / m) - Vector3::new(0.0, 0.0, g);
    let (pr, qr, rr) = (r.euler_rates[0], r.euler_rates[1], r.euler_rates[2]);
    let angular_accel = Vector3::new(
        (iy - iz) / ix * qr * rr + d / ix * u.u2,
        (iz - ix) / iy * pr * rr + d / iy * u.u3,
        (ix - iy) / iz * pr * qr + d / iz * u.u4,
    );

    let mut dx = StateVector::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&r.v);
    dx.fixed_rows_mut::<3>(3).copy_from(&r.euler_rates);
    dx.fixed_rows_mut::<3>(6).copy_from(&accel);
    dx[9] = x.thrust_rate;
    dx[10] = u.u1;
    dx.fixed_rows_mut::<3>(11).copy_from(&angular_accel);
    Ok(dx)
}

/// One classical RK4 step of a time-varying vector field over `dt`.
///
/// `field` receives the stage state and the stage time offset in `[0, dt]`.
pub fn rk4_with<F>(x: &ExtendedState, dt: f64, mut field: F) -> Result<ExtendedState>
where
    F: FnMut(&ExtendedState, f64) -> Result<StateVector>,
{
    let x0 = x.to_vector();
    let k1 = field(x, 0.0)?;
    let k2 = field(&ExtendedState::from_vector(&(x0 + k1 * (dt / 2.0))), dt / 2.0)?;
    let k3 = field(&ExtendedState::from_vector(&(x0 + k2 * (dt / 2.0))), dt / 2.0)?;
    let k4 = field(&ExtendedState::from_vector(&(x0 + k3 * dt)), dt)?;
    let next = x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    Ok(ExtendedState::from_vector(&next))
}

/// RK4 step with the input held constant over the step.
pub fn rk4_step(x: &ExtendedState, u: &ExtendedInput, dt: f64, params: &BodyParams) -> Result<ExtendedState> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!(
            "integration step must be non-negative, got {dt}"
        )));
    }
    if dt == 0.0 {
        return Ok(*x);
    }
    rk4_with(x, dt, |s, _| derivatives(s, u, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_state(rng: &mut ChaCha8Rng) -> ExtendedState {
        let mut v = StateVector::zeros();
        for i in 0..STATE_DIM {
            v[i] = rng.random_range(-1.0..1.0);
        }
        v[3] *= 0.8;
        v[4] *= 0.8;
        v[9] = rng.random_range(3.0..12.0);
        ExtendedState::from_vector(&v)
    }

    #[test]
    fn rotation_examples() {
        assert_abs_diff_eq!(rotation_matrix(&Vector3::zeros()), Matrix3::identity(), epsilon = 1e-15);
        let yaw = rotation_matrix(&Vector3::new(0.0, 0.0, PI / 2.0));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(yaw, expected, epsilon = 1e-15);
        let roll = rotation_matrix(&Vector3::new(PI / 6.0, 0.0, 0.0));
        let c = (3.0f64).sqrt() / 2.0;
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -0.5, 0.0, 0.5, c);
        assert_abs_diff_eq!(roll, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(roll * roll.transpose(), Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn rotation_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let e = Vector3::new(
                rng.random_range(-FRAC_PI_2..FRAC_PI_2),
                rng.random_range(-FRAC_PI_2..FRAC_PI_2),
                rng.random_range(-PI..PI),
            );
            let r = rotation_matrix(&e);
            assert!((r.transpose() * r - Matrix3::identity()).norm() <= 1e-12);
            assert!((r.determinant() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = BodyParams::default();
        let x = ExtendedState::hover(Vector3::zeros(), 0.0, &p);
        assert_abs_diff_eq!(p.hover_thrust(), 6.867, epsilon = 1e-12);
        let dx = derivatives(&x, &ExtendedInput::default(), &p).unwrap();
        assert_abs_diff_eq!(dx, StateVector::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn free_fall_and_roll_torque() {
        let p = BodyParams::default();
        let x = ExtendedState::default();
        let dx = derivatives(&x, &ExtendedInput::default(), &p).unwrap();
        assert_abs_diff_eq!(
            dx.fixed_rows::<3>(6).into_owned(),
            Vector3::new(0.0, 0.0, -9.81),
            epsilon = 1e-15
        );

        let hover = ExtendedState::hover(Vector3::zeros(), 0.0, &p);
        let u = ExtendedInput {
            u2: 1.0,
            ..Default::default()
        };
        let dx = derivatives(&hover, &u, &p).unwrap();
        assert_abs_diff_eq!(dx[11], 0.3 / 1.241, epsilon = 1e-15);
        assert_abs_diff_eq!(dx[11], 0.24174, epsilon = 1e-5);
        for i in (0..STATE_DIM).filter(|&i| i != 11) {
            assert_eq!(dx[i], 0.0);
        }
    }

    #[test]
    fn pitch_singularity_is_rejected() {
        let p = BodyParams::default();
        let mut x = ExtendedState::hover(Vector3::zeros(), 0.0, &p);
        x.rigid.eulers[1] = FRAC_PI_2;
        assert!(matches!(
            derivatives(&x, &ExtendedInput::default(), &p),
            Err(Error::Domain(_))
        ));
        assert!(rk4_step(&x, &ExtendedInput::default(), 0.05, &p).is_err());
    }

    #[test]
    fn rk4_examples() {
        let p = BodyParams::default();
        let hover = ExtendedState::hover(Vector3::new(1.0, 2.0, 3.0), 0.4, &p);
        let next = rk4_step(&hover, &ExtendedInput::default(), 0.05, &p).unwrap();
        assert_abs_diff_eq!(next.to_vector(), hover.to_vector(), epsilon = 1e-14);

        let fall = rk4_step(&ExtendedState::default(), &ExtendedInput::default(), 0.05, &p).unwrap();
        assert_abs_diff_eq!(fall.rigid.p[2], -9.81 * 0.05 * 0.05 / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fall.rigid.p[2], -0.01226, epsilon = 1e-5);
        assert_abs_diff_eq!(fall.rigid.v[2], -0.4905, epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_state(&mut rng);
        let u = ExtendedInput {
            u1: 0.3,
            u2: -0.2,
            u3: 0.1,
            u4: 0.5,
        };
        assert_eq!(rk4_step(&x, &u, 0.0, &p).unwrap(), x);
    }

    #[test]
    fn ballistic_energy_is_conserved() {
        let p = BodyParams::default();
        let mut x = ExtendedState::default();
        x.rigid.v = Vector3::new(1.0, -2.0, 3.0);
        x.rigid.p = Vector3::new(0.0, 0.0, 5.0);
        let energy = |s: &ExtendedState| 0.5 * p.m * s.rigid.v.norm_squared() + p.m * p.g * s.rigid.p[2];
        let e0 = energy(&x);
        for _ in 0..20 {
            x = rk4_step(&x, &ExtendedInput::default(), 0.05, &p).unwrap();
        }
        assert!(((energy(&x) - e0) / e0).abs() <= 1e-9);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = BodyParams::default();
        let mut x = ExtendedState::hover(Vector3::zeros(), 0.0, &p);
        x.rigid.eulers = Vector3::new(0.3, -0.2, 0.1);
        x.rigid.euler_rates = Vector3::new(1.0, -0.8, 0.5);
        x.thrust_rate = 2.0;
        let u = ExtendedInput {
            u1: 1.0,
            u2: 0.5,
            u3: -0.3,
            u4: 0.2,
        };
        let p = BodyParams { iz: 2.0, ..p };
        let step = |h: f64, n: usize| {
            let mut s = x;
            for _ in 0..n {
                s = rk4_step(&s, &u, h, &p).unwrap();
            }
            s.to_vector()
        };
        let dt = 0.2;
        let reference = step(dt / 100.0, 100);
        let coarse = (step(dt, 1) - reference).norm();
        let fine = (step(dt / 2.0, 2) - reference).norm();
        assert!(coarse / fine >= 16.0 * 0.9, "ratio {}", coarse / fine);
    }

    #[test]
    fn derivatives_are_affine_in_input() {
        let p = BodyParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let a = ExtendedInput::from_vector(&Vector4::from_fn(|_, _| rng.random_range(-5.0..5.0)));
            let b = ExtendedInput::from_vector(&Vector4::from_fn(|_, _| rng.random_range(-5.0..5.0)));
            let s = rng.random_range(-2.0..2.0);
            let mixed = ExtendedInput::from_vector(&(a.as_vector() * s + b.as_vector() * (1.0 - s)));
            let f = |u: &ExtendedInput| derivatives(&x, u, &p).unwrap();
            let lhs = f(&mixed);
            let rhs = f(&a) * s + f(&b) * (1.0 - s);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }
}
