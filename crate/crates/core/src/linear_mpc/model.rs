use nalgebra::DMatrix;

use crate::dfl::{FLAT_DIM, POSITION_YAW_INDICES};

pub const INPUT_DIM: usize = 4;

/// Chain-of-integrators model in flat coordinates and its forward-Euler
/// discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a_z: DMatrix<f64>,
    pub b_z: DMatrix<f64>,
    /// Selects `(x, y, z, ψ)`.
    pub c_z: DMatrix<f64>,
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    /// Sampling period (s); zero until discretized.
    pub delta: f64,
}

/// Continuous model: three 4-chains (x, y, z) and one 2-chain (ψ).
/// The discrete part is the identity/zero pair until [`discretize`] is called.
pub fn build_continuous() -> LinearModel {
    let mut a_z = DMatrix::zeros(FLAT_DIM, FLAT_DIM);
    let mut b_z = DMatrix::zeros(FLAT_DIM, INPUT_DIM);
    for axis in 0..3 {
        let base = 4 * axis;
        for j in 0..3 {
            a_z[(base + j, base + j + 1)] = 1.0;
        }
        b_z[(base + 3, axis)] = 1.0;
    }
    a_z[(12, 13)] = 1.0;
    b_z[(13, 3)] = 1.0;

    let mut c_z = DMatrix::zeros(INPUT_DIM, FLAT_DIM);
    for (row, &col) in POSITION_YAW_INDICES.iter().enumerate() {
        c_z[(row, col)] = 1.0;
    }

    LinearModel {
        a_z,
        b_z,
        c_z,
        a_d: DMatrix::identity(FLAT_DIM, FLAT_DIM),
        b_d: DMatrix::zeros(FLAT_DIM, INPUT_DIM),
        delta: 0.0,
    }
}

/// `A_d = I + δ·A_z`, `B_d = δ·B_z`.
pub fn discretize(model: &LinearModel, delta: f64) -> LinearModel {
    LinearModel {
        a_d: DMatrix::identity(FLAT_DIM, FLAT_DIM) + &model.a_z * delta,
        b_d: &model.b_z * delta,
        delta,
        ..model.clone()
    }
}
