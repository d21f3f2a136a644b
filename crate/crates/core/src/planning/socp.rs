//! Baseline robust planner: exact quadratic friction cones, the equilibrium
//! equation kept as an equality over the full stacked force, and the
//! uncertainty ellipsoid entering through worst-case cone margins. Solved by
//! a log-barrier interior-point method.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Vector2};

use crate::contact::{ContactSet, ObjectModel};
use crate::error::{Error, Result};
use crate::fe_plane::FePlane;
use crate::planning::{ForcePlan, UncertaintyModel};

#[derive(Debug, Clone, Copy)]
pub struct SocpOptions {
    /// Barrier parameter growth per outer iteration.
    pub barrier_factor: f64,
    /// Stop centering when half the squared Newton decrement drops below this.
    pub newton_tolerance: f64,
    /// Stop when `(barrier degree) / t` drops below this.
    pub gap_tolerance: f64,
    pub max_newton_steps: usize,
}

impl Default for SocpOptions {
    fn default() -> Self {
        Self {
            barrier_factor: 10.0,
            newton_tolerance: 1e-8,
            gap_tolerance: 1e-7,
            max_newton_steps: 200,
        }
    }
}

/// Normal-force bounds on intrinsic contacts, N.
#[derive(Debug, Clone, Copy)]
pub struct ForceLimits {
    pub min_intrinsic: f64,
    pub max_intrinsic: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub plan: ForcePlan,
    pub elapsed: Duration,
    pub newton_steps: usize,
}

/// Solves the robust planning problem with exact cones, minimizing the total
/// normal force, and reports the wall-clock time of the solve.
pub fn socp_baseline_plan(
    plane: &FePlane,
    contacts: &ContactSet,
    object: &ObjectModel,
    uncertainty: &UncertaintyModel,
    limits: ForceLimits,
    options: &SocpOptions,
) -> Result<BaselineResult> {
    let start = Instant::now();
    let problem = RobustProblem::build(plane, contacts, object, uncertainty, limits)?;
    let mut steps = 0;
    let outcome = problem.solve(options, &mut steps)?;
    let elapsed = start.elapsed();

    let plan = match outcome {
        Some((f, margin)) => {
            let center = plane.to_fe_coords(&f)?;
            ForcePlan {
                desired_forces: contacts.split_forces(&f),
                total_normal_force: contacts.normal_components(&f).iter().sum(),
                center,
                forces: f,
                feasible: true,
                margin,
                uncertainty_rank: uncertainty.rank,
                flattened_directions: uncertainty.flattened_directions,
            }
        }
        None => ForcePlan::infeasible(uncertainty),
    };
    Ok(BaselineResult {
        plan,
        elapsed,
        newton_steps: steps,
    })
}

/// `a^T y + alpha >= ||B y + beta||`.
#[derive(Debug, Clone)]
struct Soc {
    a: DVector<f64>,
    alpha: f64,
    b: DMatrix<f64>,
    beta: Vector2<f64>,
}

/// `c^T y + gamma >= 0`.
#[derive(Debug, Clone)]
struct Linear {
    c: DVector<f64>,
    gamma: f64,
}

struct RobustProblem {
    dim: usize,
    socs: Vec<Soc>,
    linears: Vec<Linear>,
    eq: DMatrix<f64>,
    cost: DVector<f64>,
    start: DVector<f64>,
}

impl RobustProblem {
    fn build(
        plane: &FePlane,
        contacts: &ContactSet,
        object: &ObjectModel,
        uncertainty: &UncertaintyModel,
        limits: ForceLimits,
    ) -> Result<Self> {
        let dim = contacts.force_dim();
        let a_fe = crate::contact::build_a_fe(contacts, object);
        let g = crate::contact::build_gravity_wrench(object);

        // independent equality rows via SVD of A_fe^T
        let at = a_fe.transpose();
        let svd = at.clone().svd(true, true);
        let u = svd.u.as_ref().expect("requested U");
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let top = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| top > 0.0 && svd.singular_values[k] > 1e-9 * top)
            .collect();
        let mut eq = DMatrix::zeros(keep.len(), dim);
        let mut eq_rhs = DVector::zeros(keep.len());
        let mut start = DVector::zeros(dim);
        for (r, &k) in keep.iter().enumerate() {
            eq.row_mut(r).copy_from(&v_t.row(k));
            let proj = -u.column(k).dot(&g);
            eq_rhs[r] = proj / svd.singular_values[k];
            start += v_t.row(k).transpose() * eq_rhs[r];
        }
        let w = &at * &start;
        let residual = (0..6).map(|k| (w[k] + g[k]).powi(2)).sum::<f64>().sqrt();
        if residual > 1e-9 * g.norm().max(1.0) {
            return Err(Error::NoEquilibrium { residual });
        }

        // uncertainty mapped into force space
        let spread = plane.basis.transpose() * uncertainty.boundary_factor();

        let mut socs = Vec::new();
        let mut linears = Vec::new();
        let mut cost = DVector::zeros(dim);
        for (i, c) in contacts.contacts().iter().enumerate() {
            let (t1, t2) = c.tangent_frame();
            let block = spread.rows(3 * i, 3);
            let dn = block.tr_mul(&c.normal);
            let g_mat = DMatrix::from_columns(&[block.tr_mul(&t1), block.tr_mul(&t2)]);
            let kappa = worst_case_cone_margin(&g_mat, &(&dn * c.friction_coefficient));

            let mut a = DVector::zeros(dim);
            a.fixed_rows_mut::<3>(3 * i).copy_from(&(c.normal * c.friction_coefficient));
            let mut b = DMatrix::zeros(2, dim);
            b.fixed_view_mut::<1, 3>(0, 3 * i).copy_from(&t1.transpose());
            b.fixed_view_mut::<1, 3>(1, 3 * i).copy_from(&t2.transpose());
            socs.push(Soc { a, alpha: -kappa, b, beta: Vector2::zeros() });

            cost.fixed_rows_mut::<3>(3 * i).copy_from(&c.normal);

            if c.is_intrinsic() {
                let spread_n = dn.norm();
                let mut row = DVector::zeros(dim);
                row.fixed_rows_mut::<3>(3 * i).copy_from(&c.normal);
                linears.push(Linear { c: row.clone(), gamma: -(limits.min_intrinsic + spread_n) });
                if let Some(max) = limits.max_intrinsic {
                    linears.push(Linear { c: -row, gamma: max - spread_n });
                }
            }
        }

        Ok(Self { dim, socs, linears, eq, cost, start })
    }

    fn degree(&self) -> f64 {
        (2 * self.socs.len() + self.linears.len()) as f64
    }

    /// Returns the optimal force and its smallest constraint slack, or `None` if infeasible.
    fn solve(&self, options: &SocpOptions, steps: &mut usize) -> Result<Option<(DVector<f64>, f64)>> {
        let Some(feasible) = self.phase_one(options, steps)? else {
            return Ok(None);
        };
        let barrier = Barrier {
            socs: self.socs.clone(),
            linears: self.linears.clone(),
            eq: self.eq.clone(),
            cost: self.cost.clone(),
        };
        let mut y = feasible;
        let mut t = 1.0;
        loop {
            y = barrier.center(y, t, options, steps, |_| false)?;
            if self.degree() / t < options.gap_tolerance {
                break;
            }
            t *= options.barrier_factor;
        }
        let margin = barrier.min_slack(&y);
        Ok(Some((y, margin)))
    }

    /// Minimizes a shared slack `s` until the force is strictly feasible.
    fn phase_one(&self, options: &SocpOptions, steps: &mut usize) -> Result<Option<DVector<f64>>> {
        let n = self.dim + 1;
        let lift = |v: &DVector<f64>, extra: f64| {
            let mut out = DVector::zeros(n);
            out.rows_mut(0, self.dim).copy_from(v);
            out[self.dim] = extra;
            out
        };
        let socs: Vec<Soc> = self
            .socs
            .iter()
            .map(|s| Soc {
                a: lift(&s.a, 1.0),
                alpha: s.alpha,
                b: s.b.clone().resize_horizontally(n, 0.0),
                beta: s.beta,
            })
            .collect();
        let mut linears: Vec<Linear> = self
            .linears
            .iter()
            .map(|l| Linear { c: lift(&l.c, 1.0), gamma: l.gamma })
            .collect();
        // keep the slack bounded below
        linears.push(Linear { c: lift(&DVector::zeros(self.dim), 1.0), gamma: 1.0 });
        let eq = self.eq.clone().resize_horizontally(n, 0.0);
        let barrier = Barrier { socs, linears, eq, cost: lift(&DVector::zeros(self.dim), 1.0) };

        let violation = barrier.max_violation(&lift(&self.start, 0.0));
        let mut y = lift(&self.start, violation.max(0.0) + 1.0);
        let degree = (2 * barrier.socs.len() + barrier.linears.len()) as f64;
        let strictly_feasible = |y: &DVector<f64>| y[y.len() - 1] < 0.0;
        let mut t = 1.0;
        loop {
            y = barrier.center(y, t, options, steps, strictly_feasible)?;
            if strictly_feasible(&y) {
                return Ok(Some(y.rows(0, self.dim).into_owned()));
            }
            if degree / t < options.gap_tolerance {
                return Ok(None);
            }
            t *= options.barrier_factor;
        }
    }
}

struct Barrier {
    socs: Vec<Soc>,
    linears: Vec<Linear>,
    eq: DMatrix<f64>,
    cost: DVector<f64>,
}

impl Barrier {
    fn values(&self, y: &DVector<f64>) -> Option<f64> {
        let mut phi = 0.0;
        for s in &self.socs {
            let u = s.a.dot(y) + s.alpha;
            let v = &s.b * y + s.beta;
            let gap = u * u - v.norm_squared();
            if u <= 0.0 || gap <= 0.0 {
                return None;
            }
            phi -= gap.ln();
        }
        for l in &self.linears {
            let val = l.c.dot(y) + l.gamma;
            if val <= 0.0 {
                return None;
            }
            phi -= val.ln();
        }
        Some(phi)
    }

    fn max_violation(&self, y: &DVector<f64>) -> f64 {
        let soc = self
            .socs
            .iter()
            .map(|s| (&s.b * y + s.beta).norm() - (s.a.dot(y) + s.alpha));
        let lin = self.linears.iter().map(|l| -(l.c.dot(y) + l.gamma));
        soc.chain(lin).fold(f64::NEG_INFINITY, f64::max)
    }

    fn min_slack(&self, y: &DVector<f64>) -> f64 {
        -self.max_violation(y)
    }

    fn derivatives(&self, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = y.len();
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for s in &self.socs {
            let u = s.a.dot(y) + s.alpha;
            let v = &s.b * y + s.beta;
            let gap = u * u - v.norm_squared();
            let q = &s.a * (2.0 * u) - s.b.tr_mul(&v) * 2.0;
            grad -= &q / gap;
            hess += &q * q.transpose() / (gap * gap);
            hess -= (&s.a * s.a.transpose() - s.b.tr_mul(&s.b)) * (2.0 / gap);
        }
        for l in &self.linears {
            let val = l.c.dot(y) + l.gamma;
            grad -= &l.c / val;
            hess += &l.c * l.c.transpose() / (val * val);
        }
        (grad, hess)
    }

    /// Equality-constrained Newton centering of `t * cost + barrier` from a
    /// strictly feasible point that already satisfies the equalities.
    fn center(
        &self,
        mut y: DVector<f64>,
        t: f64,
        options: &SocpOptions,
        steps: &mut usize,
        stop: impl Fn(&DVector<f64>) -> bool,
    ) -> Result<DVector<f64>> {
        let n = y.len();
        let r = self.eq.nrows();
        let objective = |y: &DVector<f64>| self.values(y).map(|phi| t * self.cost.dot(y) + phi);
        let mut local = 0;
        loop {
            let (g_bar, h) = self.derivatives(&y);
            let grad = &self.cost * t + g_bar;
            let mut kkt = DMatrix::zeros(n + r, n + r);
            kkt.view_mut((0, 0), (n, n)).copy_from(&h);
            for k in 0..n {
                kkt[(k, k)] += 1e-12;
            }
            kkt.view_mut((n, 0), (r, n)).copy_from(&self.eq);
            kkt.view_mut((0, n), (n, r)).copy_from(&self.eq.transpose());
            let mut rhs = DVector::zeros(n + r);
            rhs.rows_mut(0, n).copy_from(&(-&grad));
            let sol = kkt
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Solver("singular KKT system in barrier step".into()))?;
            let step = sol.rows(0, n).into_owned();
            let decrement = step.dot(&(&h * &step));
            if decrement / 2.0 <= options.newton_tolerance {
                return Ok(y);
            }
            *steps += 1;
            local += 1;
            if local > options.max_newton_steps {
                return Err(Error::Solver(format!(
                    "barrier method did not converge within {} Newton steps",
                    options.max_newton_steps
                )));
            }
            let current = objective(&y).expect("iterate is strictly feasible");
            let slope = grad.dot(&step);
            let mut alpha = 1.0;
            loop {
                let trial = &y + &step * alpha;
                if let Some(val) = objective(&trial) {
                    // strict decrease: at large t, steps below the objective's
                    // rounding would otherwise be accepted forever
                    if val <= current + 0.25 * alpha * slope && val < current {
                        y = trial;
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    return Ok(y);
                }
            }
            if stop(&y) {
                return Ok(y);
            }
        }
    }
}

/// `max_{|theta| = 1} ||G theta - h||` for `G` with two columns.
fn worst_case_cone_margin(g: &DMatrix<f64>, h: &DVector<f64>) -> f64 {
    let eval = |phi: f64| (g.column(0) * phi.cos() + g.column(1) * phi.sin() - h).norm();
    const SAMPLES: usize = 64;
    let step = std::f64::consts::TAU / SAMPLES as f64;
    let (best, _) = (0..SAMPLES)
        .map(|k| (k as f64 * step, eval(k as f64 * step)))
        .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    // golden-section refinement around the best sample
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (best - step, best + step);
    for _ in 0..40 {
        let m1 = hi - ratio * (hi - lo);
        let m2 = lo + ratio * (hi - lo);
        if eval(m1) < eval(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    eval(0.5 * (lo + hi)).max(eval(best))
}
