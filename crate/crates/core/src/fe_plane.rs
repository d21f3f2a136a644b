//! The force-equilibrium plane: every stacked force `f` with
//! `A_fe^T f = -g`, parameterized by an orthonormal basis of the null space
//! of `A_fe^T` and a particular solution.

use nalgebra::{DMatrix, DVector, Vector6};

use crate::contact::{build_a_fe, build_gravity_wrench, ConstraintSet, ContactSet, ObjectModel};
use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct FePlane {
    /// `d_fe x 3n`, orthonormal rows spanning the null space of `A_fe^T`.
    pub basis: DMatrix<f64>,
    /// Minimum-norm solution of `A_fe^T f = -g`.
    pub particular_solution: DVector<f64>,
    pub a_fe: DMatrix<f64>,
    pub gravity_wrench: Vector6<f64>,
    pub rank: usize,
}

impl FePlane {
    pub fn dimension(&self) -> usize {
        self.basis.nrows()
    }

    pub fn force_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `basis * (f - f_0)`.
    pub fn to_fe_coords(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_force_dim(f.len())?;
        Ok(&self.basis * (f - &self.particular_solution))
    }

    /// `basis^T * x + f_0`.
    pub fn from_fe_coords(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: x.len(),
            });
        }
        Ok(self.basis.tr_mul(x) + &self.particular_solution)
    }

    /// Orthogonal projection of a force-space vector onto the plane.
    pub fn project(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.to_fe_coords(f)?;
        self.from_fe_coords(&x)
    }

    /// `||A_fe^T f + g||`.
    pub fn equilibrium_residual(&self, f: &DVector<f64>) -> f64 {
        let w = self.a_fe.tr_mul(f);
        (0..6).map(|k| (w[k] + self.gravity_wrench[k]).powi(2)).sum::<f64>().sqrt()
    }

    /// Re-expresses `C f >= d` over FE-coordinates: rows `C * basis^T`,
    /// offsets `d - C * f_0`.
    pub fn transform_constraints(&self, cs: &ConstraintSet) -> Result<ConstraintSet> {
        self.check_force_dim(cs.dim())?;
        let matrix = &cs.matrix * self.basis.transpose();
        let offsets = &cs.offsets - &cs.matrix * &self.particular_solution;
        ConstraintSet::new(matrix, offsets)
    }

    fn check_force_dim(&self, got: usize) -> Result<()> {
        if got != self.force_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.force_dim(),
                got,
            });
        }
        Ok(())
    }
}

/// Builds the FE-plane of a contact set holding `object` against gravity.
pub fn compute_fe_plane(contacts: &ContactSet, object: &ObjectModel) -> Result<FePlane> {
    let a_fe = build_a_fe(contacts, object);
    let gravity_wrench = build_gravity_wrench(object);
    let n = a_fe.nrows();

    // Pad A_fe^T with zero rows so the SVD returns a complete right basis.
    let rows = n.max(6);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (6, n)).copy_from(&a_fe.transpose());
    let svd = padded.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.max();
    let threshold = RANK_THRESHOLD * sigma_max;

    let mut rhs = DVector::zeros(rows);
    for k in 0..6 {
        rhs[k] = -gravity_wrench[k];
    }
    let mut particular_solution = DVector::zeros(n);
    let mut null_rows = Vec::new();
    let mut rank = 0;
    for k in 0..sigma.len() {
        if sigma_max > 0.0 && sigma[k] > threshold {
            rank += 1;
            let coeff = u.column(k).dot(&rhs) / sigma[k];
            particular_solution += v_t.row(k).transpose() * coeff;
        } else {
            null_rows.push(k);
        }
    }
    // The SVD of a rank-deficient A_fe^T can be off by ~1e-9; a couple of
    // refinement passes through the same factors recover full precision.
    let range: Vec<usize> = (0..sigma.len()).filter(|k| !null_rows.contains(k)).collect();
    let at = a_fe.transpose();
    for _ in 0..2 {
        let r = -gravity_wrench - &at * &particular_solution;
        for &k in &range {
            let coeff = u.column(k).rows(0, 6).dot(&r) / sigma[k];
            particular_solution += v_t.row(k).transpose() * coeff;
        }
    }
    let mut basis = DMatrix::zeros(null_rows.len(), n);
    for (r, &k) in null_rows.iter().enumerate() {
        basis.row_mut(r).copy_from(&v_t.row(k));
    }

    let plane = FePlane {
        basis,
        particular_solution,
        a_fe,
        gravity_wrench,
        rank,
    };
    let residual = plane.equilibrium_residual(&plane.particular_solution);
    if residual > 1e-9 * gravity_wrench.norm().max(1.0) {
        return Err(Error::NoEquilibrium { residual });
    }
    Ok(plane)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{build_constraint_set, Contact};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_contacts(rng: &mut ChaCha8Rng, n: usize) -> ContactSet {
        ContactSet::new(
            (0..n)
                .map(|_| {
                    let p = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
                    let nn = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    Contact::intrinsic(p, nn, 0.6, 0.2).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    /// Rank by Gaussian elimination with partial pivoting.
    fn echelon_rank(m: &DMatrix<f64>) -> usize {
        let mut a = m.clone();
        let (rows, cols) = a.shape();
        let scale = a.amax().max(1.0);
        let mut rank = 0;
        for col in 0..cols {
            if rank == rows {
                break;
            }
            let (piv, val) = (rank..rows)
                .map(|r| (r, a[(r, col)].abs()))
                .fold((rank, -1.0), |best, x| if x.1 > best.1 { x } else { best });
            if val <= 1e-9 * scale {
                continue;
            }
            a.swap_rows(rank, piv);
            for r in rank + 1..rows {
                let factor = a[(r, col)] / a[(rank, col)];
                for c in col..cols {
                    a[(r, c)] -= factor * a[(rank, c)];
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn dimensions_for_generic_contacts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obj = ObjectModel::new(0.2, Vector3::new(0.0, 0.0, 0.01)).unwrap();
        let plane = compute_fe_plane(&random_contacts(&mut rng, 3), &obj).unwrap();
        assert_eq!(plane.rank, 6);
        assert_eq!(plane.dimension(), 3);
        let plane = compute_fe_plane(&random_contacts(&mut rng, 2), &ObjectModel::with_gravity(0.2, Vector3::zeros(), Vector3::zeros()).unwrap()).unwrap();
        assert_eq!(plane.dimension(), 1);
    }

    #[test]
    fn invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.random_range(3..6);
            let cs = random_contacts(&mut rng, n);
            let obj = ObjectModel::new(rng.random_range(0.05..1.0), Vector3::new(0.01, 0.0, -0.02)).unwrap();
            let plane = compute_fe_plane(&cs, &obj).unwrap();
            let gram = &plane.basis * plane.basis.transpose();
            assert!((gram - DMatrix::identity(plane.dimension(), plane.dimension())).amax() < 1e-9);
            assert!(plane.equilibrium_residual(&plane.particular_solution) < 1e-9);
            assert!((plane.a_fe.tr_mul(&plane.basis.transpose())).amax() < 1e-9);
            assert_eq!(plane.dimension(), 3 * n - echelon_rank(&plane.a_fe));
        }
    }

    #[test]
    fn single_contact_cannot_balance_offset_gravity() {
        // Upward push off to the side of the CoM leaves an unbalanced torque.
        let cs = ContactSet::new(vec![Contact::extrinsic(Vector3::new(0.05, 0.0, -0.05), Vector3::z(), 0.5).unwrap()]).unwrap();
        let obj = ObjectModel::new(0.1, Vector3::zeros()).unwrap();
        assert!(matches!(compute_fe_plane(&cs, &obj), Err(Error::NoEquilibrium { .. })));
        // directly below the CoM the same contact works, with a 0-dimensional plane
        let cs = ContactSet::new(vec![Contact::extrinsic(Vector3::new(0.0, 0.0, -0.05), Vector3::z(), 0.5).unwrap()]).unwrap();
        let plane = compute_fe_plane(&cs, &obj).unwrap();
        assert_eq!(plane.dimension(), 0);
        assert!((plane.particular_solution[2] - 0.981).abs() < 1e-12);
    }

    #[test]
    fn coordinate_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cs = random_contacts(&mut rng, 4);
        let obj = ObjectModel::new(0.3, Vector3::zeros()).unwrap();
        let plane = compute_fe_plane(&cs, &obj).unwrap();
        let d = plane.dimension();
        let f0 = plane.particular_solution.clone();
        assert!(plane.to_fe_coords(&f0).unwrap().amax() < 1e-15);
        let b1 = &f0 + plane.basis.row(0).transpose();
        let x = plane.to_fe_coords(&b1).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && x.rows(1, d - 1).amax() < 1e-12);
        assert_eq!(plane.from_fe_coords(&DVector::zeros(d)).unwrap(), f0);
        for _ in 0..1000 {
            let x1 = DVector::from_fn(d, |_, _| rng.random_range(-10.0..10.0));
            let x2 = DVector::from_fn(d, |_, _| rng.random_range(-10.0..10.0));
            let f1 = plane.from_fe_coords(&x1).unwrap();
            assert!(plane.equilibrium_residual(&f1) <= 1e-9);
            let sum = plane.from_fe_coords(&(&x1 + &x2)).unwrap();
            let expect = &f1 + plane.from_fe_coords(&x2).unwrap() - &f0;
            assert!((sum - expect).amax() < 1e-12);
            let back = plane.from_fe_coords(&plane.to_fe_coords(&f1).unwrap()).unwrap();
            assert!((back - &f1).norm() <= 1e-9);
        }
        assert!(plane.to_fe_coords(&DVector::zeros(3)).is_err());
        assert!(plane.from_fe_coords(&DVector::zeros(d + 1)).is_err());
    }

    #[test]
    fn projection_is_idempotent_and_contracting() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cs = random_contacts(&mut rng, 3);
        let plane = compute_fe_plane(&cs, &ObjectModel::new(0.3, Vector3::zeros()).unwrap()).unwrap();
        for _ in 0..200 {
            let f = DVector::from_fn(9, |_, _| rng.random_range(-5.0..5.0));
            let p = plane.project(&f).unwrap();
            let pp = plane.project(&p).unwrap();
            assert!((&pp - &p).norm() < 1e-9);
            let f0 = &plane.particular_solution;
            assert!((&p - f0).norm() <= (&f - f0).norm() + 1e-12);
        }
    }

    #[test]
    fn constraint_transform_matches_substitution() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cs = random_contacts(&mut rng, 3);
        let plane = compute_fe_plane(&cs, &ObjectModel::new(0.3, Vector3::zeros()).unwrap()).unwrap();
        let set = build_constraint_set(&cs, 0.5, 12).unwrap();
        let set_fe = plane.transform_constraints(&set).unwrap();
        assert_eq!(set_fe.dim(), plane.dimension());
        let mut seen = [0usize; 2];
        for _ in 0..1000 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-20.0..20.0));
            let f = plane.from_fe_coords(&x).unwrap();
            let direct = set.is_feasible(&f, 0.0);
            let xf = plane.to_fe_coords(&f).unwrap();
            let slack_direct = set.slack(&f);
            let slack_fe = set_fe.slack(&xf);
            assert!((slack_direct - slack_fe).amax() < 1e-9);
            seen[direct as usize] += 1;
        }
        assert!(seen[0] > 0);
    }

    #[test]
    fn empty_constraint_set_transforms_to_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cs = random_contacts(&mut rng, 3);
        let plane = compute_fe_plane(&cs, &ObjectModel::new(0.3, Vector3::zeros()).unwrap()).unwrap();
        let empty = ConstraintSet::new(DMatrix::zeros(0, 9), DVector::zeros(0)).unwrap();
        let t = plane.transform_constraints(&empty).unwrap();
        assert_eq!(t.rows(), 0);
        assert!(t.is_feasible(&DVector::zeros(3), 0.0));
    }

    #[test]
    fn collinear_pinch_with_off_center_mass_is_solved_exactly() {
        // a tilted two-finger pinch: rank-deficient A_fe where the plain SVD
        // solve leaves a residual around 1e-9
        let com = Vector3::new(-0.0003567707775775967, -0.00017981355723125495, 0.0019719718508917935);
        let p1 = Vector3::new(-0.03035406309313084, -0.00022489688438755463, 0.0015714456609083422);
        let p2 = Vector3::new(0.02964052153797565, -0.00013473023007495527, 0.002372498040875245);
        let n = (p2 - p1).normalize();
        let contacts = ContactSet::new(vec![
            Contact::intrinsic(p1, n, 0.9, 0.5).unwrap(),
            Contact::intrinsic(p2, -n, 0.9, 0.5).unwrap(),
        ])
        .unwrap();
        let object = ObjectModel::new(0.082, com).unwrap();
        let plane = compute_fe_plane(&contacts, &object).unwrap();
        assert_eq!(plane.rank, 5);
        assert!(plane.equilibrium_residual(&plane.particular_solution) < 1e-14);
    }
}
