//! Robust force planning: the measurement ellipsoid, its image on the
//! FE-plane, support-function tightening of the linear constraints and the
//! resulting linear programs.

pub mod lp;
pub mod socp;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::contact::{ConstraintSet, ContactSet};
use crate::error::{Error, Result};
use crate::fe_plane::FePlane;
use lp::{lp_solve, LinearProgram, LpOutcome};

const PINV_RELATIVE: f64 = 1e-10;

/// Diagonal of `D = Diag(1 / sigma^2)`; extrinsic entries are zero.
pub fn build_measurement_ellipsoid(contacts: &ContactSet) -> Result<DVector<f64>> {
    let mut d = DVector::zeros(contacts.len());
    for (j, c) in contacts.contacts().iter().enumerate() {
        if let Some(sigma) = c.measurement_sigma {
            if !(sigma > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "contact {j}: measurement sigma must be > 0 for the ellipsoid, got {sigma}"
                )));
            }
            d[j] = 1.0 / (sigma * sigma);
        }
    }
    Ok(d)
}

/// The measurement ellipsoid carried onto the FE-plane.
#[derive(Debug, Clone)]
pub struct UncertaintyModel {
    pub sigmas: Vec<Option<f64>>,
    /// Diagonal of `D`.
    pub d: DVector<f64>,
    /// `basis * N_mcone`, measurement weights to FE-coordinates.
    pub e_hat: DMatrix<f64>,
    /// `{x : x^T M x <= 1}` on `range(M)`.
    pub m: DMatrix<f64>,
    /// `M^+`; the support of the ellipsoid along `a` is `sqrt(a^T M^+ a)`.
    pub shape: DMatrix<f64>,
    /// Directions of the FE-plane flattened because extrinsic variance is unbounded.
    pub flattened_directions: usize,
    /// Rank of `M`.
    pub rank: usize,
}

impl UncertaintyModel {
    pub fn new(plane: &FePlane, contacts: &ContactSet) -> Result<Self> {
        let d = build_measurement_ellipsoid(contacts)?;
        let (m, shape, e_hat, flattened_directions) = propagate_ellipsoid(plane, contacts, &d)?;
        let rank = {
            let eig = shape.clone().symmetric_eigen();
            let top = eig.eigenvalues.amax();
            eig.eigenvalues.iter().filter(|v| top > 0.0 && **v > PINV_RELATIVE * top).count()
        };
        Ok(Self {
            sigmas: contacts.contacts().iter().map(|c| c.measurement_sigma).collect(),
            d,
            e_hat,
            m,
            shape,
            flattened_directions,
            rank,
        })
    }

    /// `L` with `L L^T = M^+`; `c + L z` for `||z|| = 1` traces the ellipsoid boundary.
    pub fn boundary_factor(&self) -> DMatrix<f64> {
        let eig = self.shape.clone().symmetric_eigen();
        let mut l = eig.eigenvectors.clone();
        for (k, lambda) in eig.eigenvalues.iter().enumerate() {
            l.column_mut(k).scale_mut(lambda.max(0.0).sqrt());
        }
        l
    }

    pub fn tighten(&self, cs_fe: &ConstraintSet) -> Result<ConstraintSet> {
        tighten_with_shape(cs_fe, &self.shape)
    }
}

/// Propagates `m^T D m <= 1` through `x = E_hat m` onto the FE-plane.
///
/// Returns `(M, M^+, E_hat, flattened)`. The back-map is the D-weighted
/// minimum-norm preimage, so `x^T M x <= m^T D m` for every measurement
/// deviation `m`. Contacts with unbounded variance (extrinsic, `D = 0`)
/// span directions along which the ellipsoid is infinitely long; those
/// directions are removed from `range(M)`.
pub fn propagate_ellipsoid(
    plane: &FePlane,
    contacts: &ContactSet,
    d: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, usize)> {
    if d.len() != contacts.len() {
        return Err(Error::DimensionMismatch { expected: contacts.len(), got: d.len() });
    }
    let dim = plane.dimension();
    let e_hat = &plane.basis * contacts.normal_matrix();

    let bounded: Vec<usize> = (0..d.len()).filter(|&j| d[j] > 0.0).collect();
    let unbounded: Vec<usize> = (0..d.len()).filter(|&j| d[j] <= 0.0).collect();

    // Q: orthonormal complement of the unbounded directions
    let (q, flattened) = if unbounded.is_empty() || dim == 0 {
        (DMatrix::identity(dim, dim), 0)
    } else {
        let ext = e_hat.select_columns(&unbounded);
        let complement = orthogonal_complement(&ext);
        let flattened = dim - complement.ncols();
        (complement, flattened)
    };

    let mut cov = DMatrix::zeros(dim, dim);
    for &j in &bounded {
        let col = e_hat.column(j);
        cov += col * col.transpose() / d[j];
    }
    let reduced = q.transpose() * &cov * &q;
    let shape = &q * &reduced * q.transpose();
    let m = &q * pseudo_inverse_sym(&reduced) * q.transpose();
    Ok((symmetrize(m), symmetrize(shape), e_hat, flattened))
}

/// `(E_hat^+)^T D E_hat^+` with the Moore-Penrose inverse.
///
/// Agrees with [`propagate_ellipsoid`] when every bounded contact has the
/// same variance or `E_hat` has full column rank.
pub fn min_norm_ellipsoid(e_hat: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let pinv = e_hat
        .clone()
        .pseudo_inverse(PINV_RELATIVE * e_hat.amax().max(1e-300))
        .expect("non-negative epsilon");
    symmetrize(pinv.transpose() * DMatrix::from_diagonal(d) * pinv)
}

/// Rewrites every row `a^T x >= b` as `a^T c >= b + sqrt(a^T M^+ a)`, the
/// condition for the whole ellipsoid around `c` to satisfy it.
pub fn tighten_constraints(cs_fe: &ConstraintSet, m: &DMatrix<f64>) -> Result<ConstraintSet> {
    tighten_with_shape(cs_fe, &pseudo_inverse_sym(m))
}

fn tighten_with_shape(cs_fe: &ConstraintSet, shape: &DMatrix<f64>) -> Result<ConstraintSet> {
    if shape.nrows() != cs_fe.dim() {
        return Err(Error::DimensionMismatch { expected: cs_fe.dim(), got: shape.nrows() });
    }
    let mut offsets = cs_fe.offsets.clone();
    for i in 0..cs_fe.rows() {
        let a = cs_fe.matrix.row(i).transpose();
        let support = (a.dot(&(shape * &a))).max(0.0).sqrt();
        offsets[i] += support;
    }
    ConstraintSet::new(cs_fe.matrix.clone(), offsets)
}

#[derive(Debug, Clone)]
pub struct ForcePlan {
    /// Ellipsoid center in FE-coordinates.
    pub center: DVector<f64>,
    /// Stacked desired force, `from_fe_coords(center)`.
    pub forces: DVector<f64>,
    /// Per-contact desired forces, N.
    pub desired_forces: Vec<Vector3<f64>>,
    pub feasible: bool,
    /// Smallest slack over the tightened constraints at the center, N.
    pub margin: f64,
    /// Sum of planned normal-force magnitudes, N.
    pub total_normal_force: f64,
    pub uncertainty_rank: usize,
    pub flattened_directions: usize,
}

impl ForcePlan {
    pub(crate) fn infeasible(uncertainty: &UncertaintyModel) -> Self {
        Self {
            center: DVector::zeros(0),
            forces: DVector::zeros(0),
            desired_forces: Vec::new(),
            feasible: false,
            margin: f64::NEG_INFINITY,
            total_normal_force: f64::NAN,
            uncertainty_rank: uncertainty.rank,
            flattened_directions: uncertainty.flattened_directions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanObjective {
    /// Any center satisfying the tightened constraints.
    Feasibility,
    /// Smallest total planned normal force.
    #[default]
    MinTotalNormal,
}

/// Finds any ellipsoid center satisfying the tightened constraints.
pub fn plan_grasp_forces(
    plane: &FePlane,
    cs: &ConstraintSet,
    contacts: &ContactSet,
    uncertainty: &UncertaintyModel,
) -> Result<ForcePlan> {
    plan_grasp_forces_with(plane, cs, contacts, uncertainty, PlanObjective::Feasibility)
}

/// Grasp planning with a selectable objective over the same feasible set.
pub fn plan_grasp_forces_with(
    plane: &FePlane,
    cs: &ConstraintSet,
    contacts: &ContactSet,
    uncertainty: &UncertaintyModel,
    objective: PlanObjective,
) -> Result<ForcePlan> {
    if contacts.n_extrinsic() > 0 {
        return Err(Error::InvalidArgument(
            "extrinsic contacts present; use plan_extrinsic_forces".into(),
        ));
    }
    let cost = match objective {
        PlanObjective::Feasibility => DVector::zeros(plane.dimension()),
        PlanObjective::MinTotalNormal => uncertainty.e_hat.column_sum(),
    };
    solve_plan(plane, cs, contacts, uncertainty, cost)
}

/// Minimizes the total planned normal force over the tightened constraints.
pub fn plan_extrinsic_forces(
    plane: &FePlane,
    cs: &ConstraintSet,
    contacts: &ContactSet,
    uncertainty: &UncertaintyModel,
) -> Result<ForcePlan> {
    if contacts.n_extrinsic() == 0 {
        return Err(Error::InvalidArgument("no extrinsic contacts".into()));
    }
    // sum_j n_j . f_j(c) = (E_hat 1)^T c + const
    let objective = uncertainty.e_hat.column_sum();
    solve_plan(plane, cs, contacts, uncertainty, objective)
}

fn solve_plan(
    plane: &FePlane,
    cs: &ConstraintSet,
    contacts: &ContactSet,
    uncertainty: &UncertaintyModel,
    objective: DVector<f64>,
) -> Result<ForcePlan> {
    let cs_fe = plane.transform_constraints(cs)?;
    let tight = uncertainty.tighten(&cs_fe)?;
    let program = LinearProgram {
        rows: tight.matrix.clone(),
        offsets: tight.offsets.clone(),
        objective,
    };
    let solution = lp_solve(&program)?;
    let center = match solution.outcome {
        LpOutcome::Optimal { x, .. } => x,
        LpOutcome::Infeasible => return Ok(ForcePlan::infeasible(uncertainty)),
        LpOutcome::Unbounded => {
            return Err(Error::Solver("planning LP is unbounded".into()));
        }
    };
    let forces = plane.from_fe_coords(&center)?;
    let margin = if tight.rows() == 0 { f64::INFINITY } else { tight.min_slack(&center) };
    Ok(ForcePlan {
        desired_forces: contacts.split_forces(&forces),
        total_normal_force: contacts.normal_components(&forces).iter().sum(),
        center,
        forces,
        feasible: true,
        margin,
        uncertainty_rank: uncertainty.rank,
        flattened_directions: uncertainty.flattened_directions,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub(crate) fn pseudo_inverse_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = symmetrize(m.clone()).symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(n, n);
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        if top > 0.0 && lambda.abs() > PINV_RELATIVE * top {
            let v = eig.eigenvectors.column(k);
            out += v * v.transpose() / *lambda;
        }
    }
    out
}

/// Orthonormal basis (as columns) of the orthogonal complement of `range(a)`.
fn orthogonal_complement(a: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = a.nrows();
    let cols = a.ncols().max(rows);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), (rows, a.ncols())).copy_from(a);
    let svd = padded.svd(true, false);
    let u = svd.u.expect("requested U");
    let top = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| !(top > 0.0 && svd.singular_values[k] > 1e-9 * top))
        .collect();
    u.select_columns(&keep)
}
