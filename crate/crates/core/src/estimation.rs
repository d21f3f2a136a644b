//! Equilibrium-consistent force estimates from normal-only tactile readings.

use nalgebra::{DMatrix, DVector};

use crate::contact::ContactSet;
use crate::error::{Error, Result};
use crate::fe_plane::FePlane;

/// Per-intrinsic-contact normal-force magnitudes, N.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    magnitudes: Vec<f64>,
}

impl MeasurementVector {
    /// Negative raw readings are clamped to zero.
    pub fn new(raw: impl IntoIterator<Item = f64>) -> Self {
        Self {
            magnitudes: raw.into_iter().map(|m| m.max(0.0)).collect(),
        }
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    /// `f_m = sum_j m_j * extend(n_j)` over intrinsic contacts; extrinsic blocks are zero.
    pub fn force_vector(&self, contacts: &ContactSet) -> Result<DVector<f64>> {
        if self.len() != contacts.n_intrinsic() {
            return Err(Error::DimensionMismatch {
                expected: contacts.n_intrinsic(),
                got: self.len(),
            });
        }
        let mut f = DVector::zeros(contacts.force_dim());
        for (j, (c, m)) in contacts.intrinsic().iter().zip(&self.magnitudes).enumerate() {
            f.fixed_rows_mut::<3>(3 * j).copy_from(&(c.normal * *m));
        }
        Ok(f)
    }
}

/// Projects the measured normal forces onto the FE-plane.
///
/// Only valid without extrinsic contacts.
pub fn estimate_grasp_forces(
    plane: &FePlane,
    contacts: &ContactSet,
    m: &MeasurementVector,
) -> Result<DVector<f64>> {
    if contacts.n_extrinsic() > 0 {
        return Err(Error::InvalidArgument(
            "extrinsic contacts present; use estimate_extrinsic_forces".into(),
        ));
    }
    let f_m = m.force_vector(contacts)?;
    plane.project(&f_m)
}

/// Directions of the measurement sub-cone, one per extrinsic contact.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    /// `extend(n_e)` for every extrinsic contact.
    pub raw_directions: Vec<DVector<f64>>,
    /// `3n x n_e` with orthonormal columns, sign-aligned with the raw directions.
    pub basis: DMatrix<f64>,
}

pub fn build_subspace_basis(contacts: &ContactSet) -> Result<SubspaceBasis> {
    let n_e = contacts.n_extrinsic();
    if n_e == 0 {
        return Err(Error::InvalidArgument("no extrinsic contacts".into()));
    }
    let n = contacts.len();
    let offset = contacts.n_intrinsic();
    let raw_directions: Vec<_> = contacts
        .extrinsic()
        .iter()
        .enumerate()
        .map(|(i, c)| crate::contact::extend(&c.normal, offset + i, n))
        .collect::<Result<_>>()?;
    let stacked = DMatrix::from_columns(&raw_directions);
    let qr = stacked.clone().qr();
    let mut basis = qr.q();
    for k in 0..n_e {
        if basis.column(k).dot(&stacked.column(k)) < 0.0 {
            basis.column_mut(k).neg_mut();
        }
    }
    Ok(SubspaceBasis {
        raw_directions,
        basis,
    })
}

/// Nonnegative weights on the extrinsic directions that minimize
/// `||f_c - proj(f_c)||^2 + lambda * ||proj(f_c)||^2` for
/// `f_c = f_m + sum_i w_i * dir_i`.
pub fn solve_extrinsic_weights(
    plane: &FePlane,
    contacts: &ContactSet,
    m: &MeasurementVector,
    lambda: f64,
) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let sub = build_subspace_basis(contacts)?;
    let f_m = m.force_vector(contacts)?;
    let dim = contacts.force_dim();
    let f0 = &plane.particular_solution;
    let pi = plane.basis.transpose() * &plane.basis;
    let off = DMatrix::identity(dim, dim) - &pi;
    let s = &sub.basis;
    let root = lambda.sqrt();

    let n_e = s.ncols();
    let mut a = DMatrix::zeros(2 * dim, n_e);
    a.rows_mut(0, dim).copy_from(&(&off * s));
    a.rows_mut(dim, dim).copy_from(&(&pi * s * root));
    let mut b = DVector::zeros(2 * dim);
    b.rows_mut(0, dim).copy_from(&(-(&off * (&f_m - f0))));
    b.rows_mut(dim, dim)
        .copy_from(&(-(&pi * &f_m + &off * f0) * root));
    Ok(nnls(&a, &b))
}

/// Estimate for scenes with extrinsic contacts: the FE-plane projection of
/// the best candidate on the measurement sub-cone.
pub fn estimate_extrinsic_forces(
    plane: &FePlane,
    contacts: &ContactSet,
    m: &MeasurementVector,
    lambda: f64,
) -> Result<DVector<f64>> {
    let w = solve_extrinsic_weights(plane, contacts, m, lambda)?;
    let sub = build_subspace_basis(contacts)?;
    let candidate = m.force_vector(contacts)? + &sub.basis * w;
    plane.project(&candidate)
}

/// Lawson-Hanson active-set solve of `min ||A w - b||` subject to `w >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut w = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.amax().max(1.0) * b.amax().max(1.0);
    let at = a.transpose();

    for _ in 0..(3 * n + 10) {
        let grad = &at * (b - a * &w);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        loop {
            let z = passive_solve(a, b, &passive);
            let mut alpha: f64 = 1.0;
            let mut blocked = false;
            for k in 0..n {
                if passive[k] && z[k] <= 0.0 {
                    blocked = true;
                    alpha = alpha.min(w[k] / (w[k] - z[k]));
                }
            }
            if !blocked {
                w = z;
                break;
            }
            w += (&z - &w) * alpha;
            for k in 0..n {
                if passive[k] && w[k] <= tol {
                    passive[k] = false;
                    w[k] = 0.0;
                }
            }
        }
    }
    w
}

fn passive_solve(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..passive.len()).filter(|&k| passive[k]).collect();
    let mut out = DVector::zeros(passive.len());
    if cols.is_empty() {
        return out;
    }
    let sub = a.select_columns(&cols);
    let svd = sub.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    let z = svd.solve(b, eps).expect("U and V computed");
    for (i, &k) in cols.iter().enumerate() {
        out[k] = z[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{Contact, ObjectModel};
    use crate::fe_plane::compute_fe_plane;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn massless() -> ObjectModel {
        ObjectModel::with_gravity(0.1, Vector3::zeros(), Vector3::zeros()).unwrap()
    }

    fn pinch() -> ContactSet {
        ContactSet::new(vec![
            Contact::intrinsic(v(-0.03, 0.0, 0.0), v(1.0, 0.0, 0.0), 0.9, 0.1).unwrap(),
            Contact::intrinsic(v(0.03, 0.0, 0.0), v(-1.0, 0.0, 0.0), 0.9, 0.1).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn clamps_negative_readings() {
        assert_eq!(MeasurementVector::new([1.0, -0.3]).magnitudes(), &[1.0, 0.0]);
    }

    #[test]
    fn pinch_estimate_equalizes_readings() {
        let cs = pinch();
        let plane = compute_fe_plane(&cs, &massless()).unwrap();
        let est = estimate_grasp_forces(&plane, &cs, &MeasurementVector::new([1.0, 0.6])).unwrap();
        let normals = cs.normal_components(&est);
        assert!((normals[0] - 0.8).abs() < 1e-12);
        assert!((normals[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn grasp_estimate_properties() {
        let cs = pinch();
        let obj = ObjectModel::new(0.082, Vector3::zeros()).unwrap();
        let plane = compute_fe_plane(&cs, &obj).unwrap();
        let m = MeasurementVector::new([2.0, 1.1]);
        let f_m = m.force_vector(&cs).unwrap();
        let est = estimate_grasp_forces(&plane, &cs, &m).unwrap();
        assert!(plane.equilibrium_residual(&est) <= 1e-9);
        let resid = &est - &f_m;
        for r in 0..plane.dimension() {
            assert!(plane.basis.row(r).transpose().dot(&resid).abs() <= 1e-9);
        }
        // a plane point is its own estimate
        let again = plane.project(&est).unwrap();
        assert!((again - &est).norm() < 1e-9);
    }

    #[test]
    fn rejects_extrinsic_scene() {
        let cs = ContactSet::new(vec![
            Contact::intrinsic(v(0.0, 0.0, 0.05), v(0.0, 0.0, -1.0), 0.5, 0.1).unwrap(),
            Contact::extrinsic(v(0.0, 0.0, -0.05), v(0.0, 0.0, 1.0), 0.5).unwrap(),
        ])
        .unwrap();
        let plane = compute_fe_plane(&cs, &ObjectModel::new(0.1, Vector3::zeros()).unwrap()).unwrap();
        assert!(estimate_grasp_forces(&plane, &cs, &MeasurementVector::new([0.0])).is_err());
    }

    #[test]
    fn subspace_basis_shapes() {
        let cs = ContactSet::new(vec![
            Contact::intrinsic(v(0.05, 0.0, 0.0), v(-1.0, 0.0, 0.0), 0.5, 0.1).unwrap(),
            Contact::extrinsic(v(0.0, 0.0, -0.05), v(0.0, 0.0, 1.0), 0.5).unwrap(),
        ])
        .unwrap();
        let sub = build_subspace_basis(&cs).unwrap();
        assert_eq!(sub.basis.ncols(), 1);
        assert!((sub.basis.column(0) - crate::contact::extend(&Vector3::z(), 1, 2).unwrap()).norm() < 1e-12);

        let two = ContactSet::new(vec![
            Contact::extrinsic(v(0.05, 0.0, -0.05), v(0.0, 0.0, 1.0), 0.5).unwrap(),
            Contact::extrinsic(v(-0.05, 0.0, -0.05), v(0.0, 0.6, 0.8), 0.5).unwrap(),
        ])
        .unwrap();
        let sub = build_subspace_basis(&two).unwrap();
        for k in 0..2 {
            assert!((sub.basis.column(k) - &sub.raw_directions[k]).norm() < 1e-12);
        }
        assert!((sub.basis.transpose() * &sub.basis - DMatrix::identity(2, 2)).amax() < 1e-9);
        assert!(build_subspace_basis(&pinch()).is_err());
    }

    #[test]
    fn resting_object_carries_its_weight() {
        // two side fingers reading zero, table contact right below the CoM
        let cs = ContactSet::new(vec![
            Contact::intrinsic(v(0.04, 0.0, 0.0), v(-1.0, 0.0, 0.0), 0.8, 0.5).unwrap(),
            Contact::intrinsic(v(-0.04, 0.0, 0.0), v(1.0, 0.0, 0.0), 0.8, 0.5).unwrap(),
            Contact::extrinsic(v(0.0, 0.0, -0.04), v(0.0, 0.0, 1.0), 0.6).unwrap(),
        ])
        .unwrap();
        let obj = ObjectModel::new(0.15, Vector3::zeros()).unwrap();
        let plane = compute_fe_plane(&cs, &obj).unwrap();
        let readings = MeasurementVector::new([0.0, 0.0]);
        let est = estimate_extrinsic_forces(&plane, &cs, &readings, 0.0).unwrap();
        assert!(plane.equilibrium_residual(&est) <= 1e-9);
        let normals = cs.normal_components(&est);
        assert!((normals[2] - 1.4715).abs() < 1e-9, "{normals:?}");

        // the magnitude penalty pulls the table weight down, equilibrium still holds
        let pulled = estimate_extrinsic_forces(&plane, &cs, &readings, 1.0).unwrap();
        assert!(plane.equilibrium_residual(&pulled) <= 1e-9);
        let table = cs.normal_components(&pulled)[2];
        assert!(table > 0.0 && table < 1.4715, "{table}");
    }

    #[test]
    fn consistent_readings_are_reproduced_without_origin_pull() {
        let cs = ContactSet::new(vec![
            Contact::intrinsic(v(0.04, 0.0, 0.02), v(-1.0, 0.0, 0.0), 0.8, 0.5).unwrap(),
            Contact::intrinsic(v(-0.04, 0.0, 0.02), v(1.0, 0.0, 0.0), 0.8, 0.5).unwrap(),
            Contact::extrinsic(v(0.0, 0.0, -0.04), v(0.0, 0.0, 1.0), 0.6).unwrap(),
        ])
        .unwrap();
        let obj = ObjectModel::new(0.15, Vector3::zeros()).unwrap();
        let plane = compute_fe_plane(&cs, &obj).unwrap();
        // squeeze of 2 N plus the weight on the table is an exact equilibrium
        let m = MeasurementVector::new([2.0, 2.0]);
        let est = estimate_extrinsic_forces(&plane, &cs, &m, 0.0).unwrap();
        let normals = cs.normal_components(&est);
        assert!((normals[0] - 2.0).abs() < 1e-6 && (normals[1] - 2.0).abs() < 1e-6);
        assert!((normals[2] - 1.4715).abs() < 1e-6);
    }

    #[test]
    fn nnls_matches_projected_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let a = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let w = nnls(&a, &b);
            assert!(w.iter().all(|x| *x >= 0.0));
            // brute force over all active sets
            let mut best = f64::INFINITY;
            for mask in 0..8u32 {
                let cols: Vec<usize> = (0..3).filter(|k| mask & (1 << k) != 0).collect();
                let mut z = DVector::zeros(3);
                if !cols.is_empty() {
                    let sub = a.select_columns(&cols);
                    let sol = sub.clone().svd(true, true).solve(&b, 1e-14).unwrap();
                    if sol.iter().any(|x| *x < 0.0) {
                        continue;
                    }
                    for (i, &k) in cols.iter().enumerate() {
                        z[k] = sol[i];
                    }
                }
                best = best.min((&a * z - &b).norm_squared());
            }
            assert!(((&a * &w - &b).norm_squared() - best).abs() < 1e-10);
        }
    }
}
