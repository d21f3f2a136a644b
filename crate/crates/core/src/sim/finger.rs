//! Finger kinematics and the admittance update.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Fingertip kinematics in the hand-base frame.
#[derive(Debug, Clone, PartialEq)]
pub enum FingerModel {
    /// Three prismatic axes aligned with the base frame: `x = home + q`.
    Cartesian { home: Vector3<f64> },
    /// Abduction about the mount's `z` axis followed by three flexion
    /// joints about the rotated `y` axis, links along the rotated `x`.
    Serial {
        mount: Vector3<f64>,
        lengths: [f64; 3],
        lower: [f64; 4],
        upper: [f64; 4],
    },
}

impl FingerModel {
    /// Allegro-like proportions, mounted at `mount`.
    pub fn serial(mount: Vector3<f64>) -> Self {
        let limit = 1.6;
        Self::Serial {
            mount,
            lengths: [0.054, 0.038, 0.044],
            lower: [-0.6, -limit, -limit, -limit],
            upper: [0.6, limit, limit, limit],
        }
    }

    pub fn joint_count(&self) -> usize {
        match self {
            Self::Cartesian { .. } => 3,
            Self::Serial { .. } => 4,
        }
    }

    pub fn forward(&self, q: &DVector<f64>) -> Vector3<f64> {
        match self {
            Self::Cartesian { home } => home + Vector3::new(q[0], q[1], q[2]),
            Self::Serial { mount, lengths, .. } => {
                let (a1, a2, a3) = (q[1], q[1] + q[2], q[1] + q[2] + q[3]);
                let r = lengths[0] * a1.cos() + lengths[1] * a2.cos() + lengths[2] * a3.cos();
                let z = -(lengths[0] * a1.sin() + lengths[1] * a2.sin() + lengths[2] * a3.sin());
                mount + Vector3::new(r * q[0].cos(), r * q[0].sin(), z)
            }
        }
    }

    /// `3 x joint_count` derivative of [`Self::forward`].
    pub fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Self::Cartesian { .. } => DMatrix::identity(3, 3),
            Self::Serial { lengths, .. } => {
                let (a1, a2, a3) = (q[1], q[1] + q[2], q[1] + q[2] + q[3]);
                let [l1, l2, l3] = *lengths;
                let r = l1 * a1.cos() + l2 * a2.cos() + l3 * a3.cos();
                // dr/dq_k and dz/dq_k for the flexion joints
                let dr = [
                    -(l1 * a1.sin() + l2 * a2.sin() + l3 * a3.sin()),
                    -(l2 * a2.sin() + l3 * a3.sin()),
                    -(l3 * a3.sin()),
                ];
                let dz = [
                    -(l1 * a1.cos() + l2 * a2.cos() + l3 * a3.cos()),
                    -(l2 * a2.cos() + l3 * a3.cos()),
                    -(l3 * a3.cos()),
                ];
                let (c, s) = (q[0].cos(), q[0].sin());
                let mut j = DMatrix::zeros(3, 4);
                j[(0, 0)] = -r * s;
                j[(1, 0)] = r * c;
                for k in 0..3 {
                    j[(0, k + 1)] = dr[k] * c;
                    j[(1, k + 1)] = dr[k] * s;
                    j[(2, k + 1)] = dz[k];
                }
                j
            }
        }
    }

    pub fn clamp(&self, q: &mut DVector<f64>) {
        if let Self::Serial { lower, upper, .. } = self {
            for k in 0..4 {
                q[k] = q[k].clamp(lower[k], upper[k]);
            }
        }
    }

    /// Joint angles placing the fingertip at `target` (damped least squares
    /// from `seed`).
    pub fn inverse(&self, target: &Vector3<f64>, seed: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::Cartesian { home } => Ok(DVector::from_column_slice((target - home).as_slice())),
            Self::Serial { .. } => {
                let mut q = seed.clone();
                for _ in 0..200 {
                    let err = target - self.forward(&q);
                    if err.norm() < 1e-10 {
                        return Ok(q);
                    }
                    let j = self.jacobian(&q);
                    let jjt = &j * j.transpose() + Matrix3::identity() * 1e-8;
                    let step = j.transpose()
                        * jjt.try_inverse().ok_or_else(|| Error::Solver("singular finger Jacobian".into()))?
                        * err;
                    q += step;
                    self.clamp(&mut q);
                }
                Err(Error::Solver(format!("fingertip target {target:?} is out of reach")))
            }
        }
    }
}

/// Positive-definite admittance gain.
#[derive(Debug, Clone)]
pub struct AdmittanceGain {
    k: DMatrix<f64>,
    cholesky: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl AdmittanceGain {
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        if !k.is_square() {
            return Err(Error::config("controller.gain", "gain matrix must be square"));
        }
        if (&k - k.transpose()).amax() > 1e-12 * k.amax().max(1.0) {
            return Err(Error::config("controller.gain", "gain matrix must be symmetric"));
        }
        let cholesky = k
            .clone()
            .cholesky()
            .ok_or_else(|| Error::config("controller.gain", "gain matrix must be positive definite"))?;
        Ok(Self { k, cholesky })
    }

    pub fn diagonal(n: usize, value: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n, n) * value)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }
}

/// `dq = K^-1 J^T e`.
pub fn admittance_step(e: &DVector<f64>, j: &DMatrix<f64>, k: &AdmittanceGain) -> Result<DVector<f64>> {
    if j.nrows() != e.len() {
        return Err(Error::DimensionMismatch { expected: j.nrows(), got: e.len() });
    }
    if k.k.nrows() != j.ncols() {
        return Err(Error::DimensionMismatch { expected: j.ncols(), got: k.k.nrows() });
    }
    Ok(k.cholesky.solve(&j.tr_mul(e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn serial_jacobian_matches_finite_differences() {
        let finger = FingerModel::serial(Vector3::new(0.01, 0.02, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let q = DVector::from_fn(4, |_, _| rng.random_range(-1.2..1.2));
            let j = finger.jacobian(&q);
            let h = 1e-6;
            for k in 0..4 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[k] += h;
                qm[k] -= h;
                let fd = (finger.forward(&qp) - finger.forward(&qm)) / (2.0 * h);
                let col = j.column(k);
                let scale = col.norm().max(1e-3);
                assert!((fd - col).norm() / scale < 1e-6, "joint {k}");
            }
        }
    }

    #[test]
    fn serial_inverse_reaches_target() {
        let finger = FingerModel::serial(Vector3::zeros());
        let q0 = DVector::from_vec(vec![0.1, 0.4, 0.5, 0.3]);
        let target = finger.forward(&q0) + Vector3::new(0.003, -0.002, 0.001);
        let q = finger.inverse(&target, &q0).unwrap();
        assert!((finger.forward(&q) - target).norm() < 1e-9);
    }

    #[test]
    fn zero_error_gives_zero_step() {
        let k = AdmittanceGain::diagonal(3, 50.0).unwrap();
        let dq = admittance_step(&DVector::zeros(3), &DMatrix::identity(3, 3), &k).unwrap();
        assert_eq!(dq, DVector::zeros(3));
    }

    #[test]
    fn scalar_gain_identity_jacobian() {
        let k = AdmittanceGain::diagonal(3, 50.0).unwrap();
        let e = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let dq = admittance_step(&e, &DMatrix::identity(3, 3), &k).unwrap();
        assert!((dq - &e / 50.0).amax() < 1e-15);
    }

    #[test]
    fn matches_independent_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let k = &a * a.transpose() + DMatrix::identity(4, 4) * 0.5;
            let j = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
            let e = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let dq = admittance_step(&e, &j, &AdmittanceGain::new(k.clone()).unwrap()).unwrap();
            let reference = k.lu().solve(&(j.transpose() * &e)).unwrap();
            assert!((dq - reference).amax() < 1e-10);
        }
    }

    #[test]
    fn rejects_indefinite_gain() {
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0]));
        assert!(matches!(AdmittanceGain::new(k), Err(Error::Config { .. })));
    }
}
