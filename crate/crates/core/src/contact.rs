//! Contacts, the force-equilibrium map and the linearized constraint set.
//!
//! Forces are stacked per contact into a vector of length `3 * n`, intrinsic
//! contacts first. Wrenches are taken about the object's center of mass.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of facets for the pyramidal friction cone.
pub const DEFAULT_CONE_SIDES: usize = 12;

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactKind {
    /// Fingertip with a tactile array; reports a normal-force magnitude.
    Intrinsic,
    /// Object-environment contact; no reading.
    Extrinsic,
}

/// A point contact on the object.
#[derive(Debug, Clone, PartialEq)]
pub struct Contact {
    /// Object frame, meters.
    pub position: Vector3<f64>,
    /// Unit normal pointing into the object.
    pub normal: Vector3<f64>,
    pub friction_coefficient: f64,
    pub kind: ContactKind,
    /// Normal-force measurement standard deviation in N; `None` for extrinsic contacts.
    pub measurement_sigma: Option<f64>,
}

impl Contact {
    pub fn intrinsic(
        position: Vector3<f64>,
        normal: Vector3<f64>,
        friction_coefficient: f64,
        measurement_sigma: f64,
    ) -> Result<Self> {
        if !measurement_sigma.is_finite() || measurement_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "intrinsic measurement sigma must be finite and >= 0, got {measurement_sigma}"
            )));
        }
        Self::build(
            position,
            normal,
            friction_coefficient,
            ContactKind::Intrinsic,
            Some(measurement_sigma),
        )
    }

    pub fn extrinsic(
        position: Vector3<f64>,
        normal: Vector3<f64>,
        friction_coefficient: f64,
    ) -> Result<Self> {
        Self::build(
            position,
            normal,
            friction_coefficient,
            ContactKind::Extrinsic,
            None,
        )
    }

    fn build(
        position: Vector3<f64>,
        normal: Vector3<f64>,
        friction_coefficient: f64,
        kind: ContactKind,
        measurement_sigma: Option<f64>,
    ) -> Result<Self> {
        let norm = normal.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidArgument("contact normal has zero length".into()));
        }
        if !(friction_coefficient >= 0.0) || !friction_coefficient.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "friction coefficient must be >= 0, got {friction_coefficient}"
            )));
        }
        if position.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("contact position is not finite".into()));
        }
        Ok(Self {
            position,
            normal: normal / norm,
            friction_coefficient,
            kind,
            measurement_sigma,
        })
    }

    pub fn is_intrinsic(&self) -> bool {
        self.kind == ContactKind::Intrinsic
    }

    /// Orthonormal tangent pair `(t1, t2)` with `t1 x t2 = normal`.
    ///
    /// `t1` is seeded by the coordinate axis least aligned with the normal
    /// (lowest index on ties), which makes the frame deterministic.
    pub fn tangent_frame(&self) -> (Vector3<f64>, Vector3<f64>) {
        tangent_frame(&self.normal)
    }
}

pub fn tangent_frame(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let mut axis = 0;
    for k in 1..3 {
        if normal[k].abs() < normal[axis].abs() {
            axis = k;
        }
    }
    let seed = Vector3::ith(axis, 1.0);
    let t1 = (seed - normal * normal.dot(&seed)).normalize();
    let t2 = normal.cross(&t1);
    (t1, t2)
}

/// Ordered contacts: intrinsic first, then extrinsic, each group in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSet {
    contacts: Vec<Contact>,
    n_intrinsic: usize,
}

impl ContactSet {
    pub fn new(contacts: Vec<Contact>) -> Result<Self> {
        if contacts.is_empty() {
            return Err(Error::InvalidArgument("contact set is empty".into()));
        }
        let (mut ordered, extrinsic): (Vec<_>, Vec<_>) =
            contacts.into_iter().partition(Contact::is_intrinsic);
        let n_intrinsic = ordered.len();
        ordered.extend(extrinsic);
        for c in &ordered {
            if (c.normal.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::InvalidArgument("contact normal is not unit length".into()));
            }
        }
        Ok(Self {
            contacts: ordered,
            n_intrinsic,
        })
    }

    pub fn contacts(&self) -> &[Contact] {
        &self.contacts
    }

    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    pub fn n_intrinsic(&self) -> usize {
        self.n_intrinsic
    }

    pub fn n_extrinsic(&self) -> usize {
        self.contacts.len() - self.n_intrinsic
    }

    pub fn intrinsic(&self) -> &[Contact] {
        &self.contacts[..self.n_intrinsic]
    }

    pub fn extrinsic(&self) -> &[Contact] {
        &self.contacts[self.n_intrinsic..]
    }

    /// Dimension of the stacked force space, `3 * (n_i + n_e)`.
    pub fn force_dim(&self) -> usize {
        3 * self.contacts.len()
    }

    /// Columns are `extend(n_j)` for every contact, in contact order.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut out = DMatrix::zeros(3 * n, n);
        for (j, c) in self.contacts.iter().enumerate() {
            out.fixed_view_mut::<3, 1>(3 * j, j).copy_from(&c.normal);
        }
        out
    }

    /// Splits a stacked force vector into per-contact 3-vectors.
    pub fn split_forces(&self, f: &DVector<f64>) -> Vec<Vector3<f64>> {
        (0..self.len())
            .map(|i| Vector3::new(f[3 * i], f[3 * i + 1], f[3 * i + 2]))
            .collect()
    }

    /// Normal component `n_i . f_i` of every contact.
    pub fn normal_components(&self, f: &DVector<f64>) -> Vec<f64> {
        self.contacts
            .iter()
            .enumerate()
            .map(|(i, c)| c.normal.dot(&f.fixed_rows::<3>(3 * i)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub mass: f64,
    pub center_of_mass: Vector3<f64>,
    pub gravity_acceleration: Vector3<f64>,
}

impl ObjectModel {
    pub fn new(mass: f64, center_of_mass: Vector3<f64>) -> Result<Self> {
        Self::with_gravity(mass, center_of_mass, Vector3::new(0.0, 0.0, -9.81))
    }

    pub fn with_gravity(
        mass: f64,
        center_of_mass: Vector3<f64>,
        gravity_acceleration: Vector3<f64>,
    ) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidArgument(format!("mass must be > 0, got {mass}")));
        }
        Ok(Self {
            mass,
            center_of_mass,
            gravity_acceleration,
        })
    }
}

/// Linear half-space constraints `matrix * x >= offsets`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub matrix: DMatrix<f64>,
    pub offsets: DVector<f64>,
}

impl ConstraintSet {
    pub fn new(matrix: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != offsets.len() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: offsets.len(),
            });
        }
        Ok(Self { matrix, offsets })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// `matrix * x - offsets`; all entries are `>= 0` for a feasible `x`.
    pub fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x - &self.offsets
    }

    pub fn min_slack(&self, x: &DVector<f64>) -> f64 {
        self.slack(x).min()
    }

    pub fn is_feasible(&self, x: &DVector<f64>, tolerance: f64) -> bool {
        self.rows() == 0 || self.min_slack(x) >= -tolerance
    }
}

/// Writes `normal` into block `contact_index` of a zero force-space vector.
pub fn extend(
    normal: &Vector3<f64>,
    contact_index: usize,
    total_contacts: usize,
) -> Result<DVector<f64>> {
    if contact_index >= total_contacts {
        return Err(Error::InvalidArgument(format!(
            "contact index {contact_index} out of range for {total_contacts} contacts"
        )));
    }
    let mut out = DVector::zeros(3 * total_contacts);
    out.fixed_rows_mut::<3>(3 * contact_index).copy_from(normal);
    Ok(out)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Gravity wrench about the center of mass: `(m * g_acc, 0)`.
pub fn build_gravity_wrench(object: &ObjectModel) -> Vector6<f64> {
    let f = object.gravity_acceleration * object.mass;
    Vector6::new(f.x, f.y, f.z, 0.0, 0.0, 0.0)
}

/// The `3n x 6` matrix whose transpose maps stacked forces to the net wrench
/// (force, torque about the center of mass).
pub fn build_a_fe(contacts: &ContactSet, object: &ObjectModel) -> DMatrix<f64> {
    let n = contacts.len();
    let mut a = DMatrix::zeros(3 * n, 6);
    for (i, c) in contacts.contacts().iter().enumerate() {
        let arm = c.position - object.center_of_mass;
        // block of A^T is [I; skew(arm)], so the block of A is [I, skew(arm)^T]
        a.fixed_view_mut::<3, 3>(3 * i, 0)
            .copy_from(&Matrix3::identity());
        a.fixed_view_mut::<3, 3>(3 * i, 3)
            .copy_from(&skew(&arm).transpose());
    }
    a
}

/// Inscribed `sides`-facet pyramid for one contact, as rows over that
/// contact's three force entries. Every row has offset zero.
///
/// Facet `j` has outward tangent direction at angle `2*pi*j/sides`; its
/// row is `mu * cos(pi/sides) * n - u_j`, so the pyramid touches the exact
/// cone along its edges and lies inside it everywhere else.
pub fn linearize_friction_cone(contact: &Contact, sides: usize) -> Result<Vec<Vector3<f64>>> {
    if sides < 3 {
        return Err(Error::InvalidArgument(format!(
            "friction pyramid needs at least 3 sides, got {sides}"
        )));
    }
    let (t1, t2) = contact.tangent_frame();
    let inradius = contact.friction_coefficient * (std::f64::consts::PI / sides as f64).cos();
    Ok((0..sides)
        .map(|j| {
            let angle = 2.0 * std::f64::consts::PI * j as f64 / sides as f64;
            let u = t1 * angle.cos() + t2 * angle.sin();
            contact.normal * inradius - u
        })
        .collect())
}

/// Stacks friction-pyramid rows for every contact, then one minimum
/// normal-force row per intrinsic contact.
pub fn build_constraint_set(
    contacts: &ContactSet,
    min_intrinsic_force: f64,
    sides: usize,
) -> Result<ConstraintSet> {
    if !(min_intrinsic_force >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "minimum intrinsic force must be >= 0, got {min_intrinsic_force}"
        )));
    }
    let n = contacts.len();
    let rows = sides * n + contacts.n_intrinsic();
    let mut matrix = DMatrix::zeros(rows, 3 * n);
    let mut offsets = DVector::zeros(rows);
    let mut r = 0;
    for (i, c) in contacts.contacts().iter().enumerate() {
        for row in linearize_friction_cone(c, sides)? {
            matrix
                .fixed_view_mut::<1, 3>(r, 3 * i)
                .copy_from(&row.transpose());
            r += 1;
        }
    }
    for (i, c) in contacts.intrinsic().iter().enumerate() {
        matrix
            .fixed_view_mut::<1, 3>(r, 3 * i)
            .copy_from(&c.normal.transpose());
        offsets[r] = min_intrinsic_force;
        r += 1;
    }
    ConstraintSet::new(matrix, offsets)
}

/// Appends `n_i . f_i <= max_force` for every intrinsic contact.
///
/// Keeps planned forces inside the sensors' calibrated range; without an
/// upper bound any amount of uncertainty can be absorbed by squeezing harder.
pub fn append_max_intrinsic_force(
    cs: &ConstraintSet,
    contacts: &ContactSet,
    max_force: f64,
) -> Result<ConstraintSet> {
    if cs.dim() != contacts.force_dim() {
        return Err(Error::DimensionMismatch {
            expected: contacts.force_dim(),
            got: cs.dim(),
        });
    }
    if !(max_force > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "maximum intrinsic force must be > 0, got {max_force}"
        )));
    }
    let base = cs.rows();
    let extra = contacts.n_intrinsic();
    let mut matrix = cs.matrix.clone().resize_vertically(base + extra, 0.0);
    let mut offsets = cs.offsets.clone().resize_vertically(base + extra, 0.0);
    for (i, c) in contacts.intrinsic().iter().enumerate() {
        matrix
            .fixed_view_mut::<1, 3>(base + i, 3 * i)
            .copy_from(&(-c.normal).transpose());
        offsets[base + i] = -max_force;
    }
    ConstraintSet::new(matrix, offsets)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn extend_is_linear(n1 in vec3(), n2 in vec3(), a in -3.0..3.0f64, b in -3.0..3.0f64, i in 0usize..4) {
            let lhs = extend(&(n1 * a + n2 * b), i, 4).unwrap();
            let rhs = extend(&n1, i, 4).unwrap() * a + extend(&n2, i, 4).unwrap() * b;
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }

        #[test]
        fn feasible_set_is_convex(
            n in vec3().prop_filter("nonzero", |n| n.norm() > 0.1),
            f1 in vec3(), f2 in vec3(), theta in 0.0..1.0f64, mu in 0.1..1.5f64,
        ) {
            let c = Contact::intrinsic(Vector3::zeros(), n, mu, 0.1).unwrap();
            let cs = ContactSet::new(vec![c.clone()]).unwrap();
            let set = build_constraint_set(&cs, 0.2, 12).unwrap();
            // push samples toward the cone axis so a useful fraction is feasible
            let a = DVector::from_column_slice((f1 + c.normal * 2.0).as_slice());
            let b = DVector::from_column_slice((f2 + c.normal * 2.0).as_slice());
            prop_assume!(set.is_feasible(&a, 0.0) && set.is_feasible(&b, 0.0));
            let mix = &a * theta + &b * (1.0 - theta);
            prop_assert!(set.is_feasible(&mix, 1e-12));
        }
    }
}
