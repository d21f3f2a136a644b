//! Quasi-static plant: penalty contacts with elastic stiction, and an object
//! pose that settles to force/torque balance after every finger motion.

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3, Vector6};

/// Wrench residual below which the object counts as settled, N and N m.
pub const SETTLE_TOLERANCE: f64 = 1e-6;
pub const MAX_SETTLE_ITERATIONS: usize = 200;
/// Balances torque against force in the settle residual, m.
const TORQUE_LENGTH: f64 = 0.05;
const MAX_TRANSLATION_STEP: f64 = 0.01;
const MAX_ROTATION_STEP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantContactKind {
    /// Fingertip with the given finger index.
    Finger(usize),
    /// Horizontal table at height `table_height`.
    Table,
}

#[derive(Debug, Clone)]
pub struct PlantContact {
    pub kind: PlantContactKind,
    /// Body frame.
    pub body_point: Vector3<f64>,
    /// Inward normal in the body frame (fingers only).
    pub body_normal: Vector3<f64>,
    pub friction: f64,
    /// Stiction anchor: body frame for fingers, world frame for the table.
    anchor: Option<Vector3<f64>>,
    /// Accumulated sliding distance, m.
    pub slip_distance: f64,
}

impl PlantContact {
    pub fn finger(index: usize, body_point: Vector3<f64>, body_normal: Vector3<f64>, friction: f64) -> Self {
        Self {
            kind: PlantContactKind::Finger(index),
            body_point,
            body_normal: body_normal.normalize(),
            friction,
            anchor: None,
            slip_distance: 0.0,
        }
    }

    pub fn table(body_point: Vector3<f64>, friction: f64) -> Self {
        Self {
            kind: PlantContactKind::Table,
            body_point,
            body_normal: Vector3::z(),
            friction,
            anchor: None,
            slip_distance: 0.0,
        }
    }
}

/// Per-contact state at a given object pose.
#[derive(Debug, Clone, Copy)]
pub struct ContactEval {
    /// Force on the object, world frame, N.
    pub force: Vector3<f64>,
    /// Application point, world frame.
    pub point: Vector3<f64>,
    /// Contact normal into the object, world frame.
    pub normal: Vector3<f64>,
    pub normal_force: f64,
    pub penetration: f64,
    /// Uncapped tangential spring force.
    tangential_spring: Vector3<f64>,
    /// World position of the anchor in use.
    anchor_world: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettleOutcome {
    pub settled: bool,
    pub iterations: usize,
    pub force_residual: f64,
    pub torque_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Plant {
    pub mass: f64,
    pub com_body: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub stiffness: f64,
    pub table_height: f64,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub contacts: Vec<PlantContact>,
    /// World fingertip positions, indexed by finger.
    pub tips: Vec<Vector3<f64>>,
}

impl Plant {
    pub fn com_world(&self) -> Vector3<f64> {
        self.orientation * self.com_body + self.position
    }

    fn eval_contact(
        &self,
        c: &PlantContact,
        position: &Vector3<f64>,
        orientation: &UnitQuaternion<f64>,
    ) -> ContactEval {
        let k = self.stiffness;
        let point = orientation * c.body_point + position;
        let (normal, penetration, anchor_world, other) = match c.kind {
            PlantContactKind::Finger(i) => {
                let n = orientation * c.body_normal;
                let x = self.tips[i];
                let depth = n.dot(&(x - point));
                let anchor = c.anchor.map(|a| orientation * a + position).unwrap_or(x - n * depth);
                (n, depth, anchor, x)
            }
            PlantContactKind::Table => {
                let n = Vector3::z();
                let depth = self.table_height - point.z;
                let foot = Vector3::new(point.x, point.y, self.table_height);
                let anchor = c.anchor.unwrap_or(foot);
                (n, depth, anchor, anchor)
            }
        };
        let normal_force = k * penetration.max(0.0);
        let projector = Matrix3::identity() - normal * normal.transpose();
        // force on the object pulls its side of the spring toward the other side
        let stretch = match c.kind {
            PlantContactKind::Finger(_) => other - anchor_world,
            PlantContactKind::Table => anchor_world - point,
        };
        let spring = projector * stretch * k;
        let cap = c.friction * normal_force;
        let tangential = if normal_force <= 0.0 {
            Vector3::zeros()
        } else if spring.norm() > cap {
            spring * (cap / spring.norm())
        } else {
            spring
        };
        let force = if normal_force > 0.0 { normal * normal_force + tangential } else { Vector3::zeros() };
        ContactEval {
            force,
            point,
            normal,
            normal_force,
            penetration,
            tangential_spring: if normal_force > 0.0 { spring } else { Vector3::zeros() },
            anchor_world,
        }
    }

    pub fn evaluate(&self) -> Vec<ContactEval> {
        self.evaluate_at(&self.position, &self.orientation)
    }

    fn evaluate_at(&self, position: &Vector3<f64>, orientation: &UnitQuaternion<f64>) -> Vec<ContactEval> {
        self.contacts.iter().map(|c| self.eval_contact(c, position, orientation)).collect()
    }

    /// Net force and torque about the CoM, including gravity.
    fn wrench_at(&self, position: &Vector3<f64>, orientation: &UnitQuaternion<f64>) -> Vector6<f64> {
        let com = orientation * self.com_body + position;
        let mut force = self.gravity * self.mass;
        let mut torque = Vector3::zeros();
        for e in self.evaluate_at(position, orientation) {
            force += e.force;
            torque += (e.point - com).cross(&e.force);
        }
        Vector6::new(force.x, force.y, force.z, torque.x, torque.y, torque.z)
    }

    pub fn net_wrench(&self) -> Vector6<f64> {
        self.wrench_at(&self.position, &self.orientation)
    }

    fn perturbed(&self, delta: &DVector<f64>) -> (Vector3<f64>, UnitQuaternion<f64>) {
        let dp = Vector3::new(delta[0], delta[1], delta[2]);
        let w = Vector3::new(delta[3], delta[4], delta[5]);
        (self.position + dp, UnitQuaternion::from_scaled_axis(w) * self.orientation)
    }

    fn scaled_residual(&self, position: &Vector3<f64>, orientation: &UnitQuaternion<f64>) -> DVector<f64> {
        let w = self.wrench_at(position, orientation);
        DVector::from_fn(6, |i, _| if i < 3 { w[i] } else { w[i] / TORQUE_LENGTH })
    }

    /// Moves the object to force/torque balance with the fingertips held
    /// fixed (Levenberg-Marquardt on the pose, finite-difference Jacobian).
    pub fn settle(&mut self) -> SettleOutcome {
        self.seed_anchors();
        let mut residual = self.scaled_residual(&self.position, &self.orientation);
        let mut damping = 1e-3;
        let mut iterations = 0;
        let done = |w: &Vector6<f64>| {
            w.fixed_rows::<3>(0).norm() <= SETTLE_TOLERANCE && w.fixed_rows::<3>(3).norm() <= SETTLE_TOLERANCE
        };
        while iterations < MAX_SETTLE_ITERATIONS {
            let wrench = self.net_wrench();
            if done(&wrench) {
                break;
            }
            iterations += 1;
            let mut jac = DMatrix::zeros(6, 6);
            let h = 1e-8;
            for k in 0..6 {
                let mut d = DVector::zeros(6);
                d[k] = h;
                let (p, q) = self.perturbed(&d);
                d[k] = -h;
                let (pm, qm) = self.perturbed(&d);
                let col = (self.scaled_residual(&p, &q) - self.scaled_residual(&pm, &qm)) / (2.0 * h);
                jac.set_column(k, &col);
            }
            let jtj = jac.tr_mul(&jac);
            let grad = jac.tr_mul(&residual);
            let mut accepted = false;
            for _ in 0..30 {
                let mut lhs = jtj.clone();
                for i in 0..6 {
                    lhs[(i, i)] += damping * jtj[(i, i)].max(1e-9) + 1e-12;
                }
                let Some(mut step) = lhs.lu().solve(&(-&grad)) else {
                    damping *= 10.0;
                    continue;
                };
                let t = step.fixed_rows::<3>(0).norm();
                if t > MAX_TRANSLATION_STEP {
                    step *= MAX_TRANSLATION_STEP / t;
                }
                let r = step.fixed_rows::<3>(3).norm();
                if r > MAX_ROTATION_STEP {
                    step *= MAX_ROTATION_STEP / r;
                }
                let (p, q) = self.perturbed(&step);
                let trial = self.scaled_residual(&p, &q);
                if trial.norm() < residual.norm() {
                    self.position = p;
                    self.orientation = UnitQuaternion::new_normalize(*q.quaternion());
                    residual = trial;
                    damping = (damping / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                damping *= 4.0;
            }
            if !accepted {
                break;
            }
        }
        let wrench = self.net_wrench();
        SettleOutcome {
            settled: done(&wrench),
            iterations,
            force_residual: wrench.fixed_rows::<3>(0).norm(),
            torque_residual: wrench.fixed_rows::<3>(3).norm(),
        }
    }

    /// Fixes stiction anchors after a settle: new contacts anchor where they
    /// touch, released contacts drop their anchor, and contacts whose spring
    /// exceeds the friction cap slide until it is exactly on the cap.
    pub fn commit_friction(&mut self) {
        let evals = self.evaluate();
        let (p, q) = (self.position, self.orientation);
        for (c, e) in self.contacts.iter_mut().zip(evals) {
            if e.normal_force <= 0.0 {
                c.anchor = None;
                continue;
            }
            let cap = c.friction * e.normal_force;
            let spring = e.tangential_spring;
            let mut anchor_world = e.anchor_world;
            if spring.norm() > cap {
                let excess = spring - spring * (cap / spring.norm());
                let slide = excess / self.stiffness;
                c.slip_distance += slide.norm();
                match c.kind {
                    // finger anchor moves toward the fingertip, table anchor toward the object point
                    PlantContactKind::Finger(_) => anchor_world += slide,
                    PlantContactKind::Table => anchor_world -= slide,
                }
            }
            c.anchor = Some(match c.kind {
                PlantContactKind::Finger(_) => q.inverse() * (anchor_world - p),
                PlantContactKind::Table => anchor_world,
            });
        }
    }

    /// New contacts stick where they first touch.
    fn seed_anchors(&mut self) {
        let evals = self.evaluate();
        let (p, q) = (self.position, self.orientation);
        for (c, e) in self.contacts.iter_mut().zip(&evals) {
            if c.anchor.is_none() && e.normal_force > 0.0 {
                c.anchor = Some(match c.kind {
                    PlantContactKind::Finger(_) => q.inverse() * (e.anchor_world - p),
                    PlantContactKind::Table => e.anchor_world,
                });
            }
        }
    }

    /// Rotation about world `y` of the body `x` axis, rad.
    pub fn pitch_angle(&self) -> f64 {
        let r = self.orientation.to_rotation_matrix();
        r[(0, 2)].atan2(r[(0, 0)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pinch(gravity: Vector3<f64>, squeeze: f64) -> Plant {
        let k = 5000.0;
        let depth = squeeze / k;
        Plant {
            mass: 0.1,
            com_body: Vector3::zeros(),
            gravity,
            stiffness: k,
            table_height: -1.0,
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            contacts: vec![
                PlantContact::finger(0, Vector3::new(-0.03, 0.0, 0.0), Vector3::x(), 0.9),
                PlantContact::finger(1, Vector3::new(0.03, 0.0, 0.0), -Vector3::x(), 0.9),
            ],
            tips: vec![Vector3::new(-0.03 + depth, 0.0, 0.0), Vector3::new(0.03 - depth, 0.0, 0.0)],
        }
    }

    #[test]
    fn resting_box_carries_its_weight_on_the_table() {
        let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        let mut plant = Plant {
            mass: 0.2,
            com_body: Vector3::new(0.0, 0.0, 0.02),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            stiffness: 5000.0,
            table_height: 0.0,
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            contacts: corners
                .iter()
                .map(|(x, y)| PlantContact::table(Vector3::new(0.02 * x, 0.02 * y, 0.0), 0.5))
                .collect(),
            tips: vec![],
        };
        let out = plant.settle();
        assert!(out.settled, "{out:?}");
        plant.commit_friction();
        let total: Vector3<f64> = plant.evaluate().iter().map(|e| e.force).sum();
        assert!((total.z - 0.2 * 9.81).abs() < 1e-6);
        assert!(plant.orientation.angle() < 1e-9);
        assert!(plant.position.x.abs() < 1e-12 && plant.position.y.abs() < 1e-12);
    }

    #[test]
    fn symmetric_pinch_has_equal_forces() {
        let mut plant = pinch(Vector3::new(0.0, 0.0, -9.81), 2.0);
        let out = plant.settle();
        assert!(out.settled, "{out:?}");
        plant.commit_friction();
        let evals = plant.evaluate();
        assert!((evals[0].normal_force - evals[1].normal_force).abs() < 1e-6);
        assert!((evals[0].force.z - evals[1].force.z).abs() < 1e-6);
    }

    #[test]
    fn pushing_one_finger_translates_until_balanced() {
        let mut plant = pinch(Vector3::zeros(), 2.0);
        plant.settle();
        plant.commit_friction();
        let before = plant.position.x;
        plant.tips[0].x += 0.0002;
        let out = plant.settle();
        assert!(out.settled, "{out:?}");
        // the object moves along the push and both springs share the extra squeeze
        assert!(plant.position.x > before + 0.5e-4 && plant.position.x < before + 1.5e-4);
        let evals = plant.evaluate();
        assert!((evals[0].normal_force - evals[1].normal_force).abs() < 1e-6);
    }

    #[test]
    fn no_drift_without_gravity() {
        let mut plant = pinch(Vector3::zeros(), 2.0);
        let start = (plant.position, plant.orientation);
        for _ in 0..1000 {
            assert!(plant.settle().settled);
            plant.commit_friction();
        }
        assert!((plant.position - start.0).norm() < 1e-12);
        assert!(plant.orientation.angle_to(&start.1) < 1e-12);
    }

    #[test]
    fn excess_tangential_load_slides_the_anchor() {
        let mut plant = pinch(Vector3::zeros(), 1.0);
        plant.settle();
        plant.commit_friction();
        // drag both fingers upward far beyond the stiction cap
        for tip in &mut plant.tips {
            tip.z += 0.01;
        }
        // hold the object in place by a heavy downward pull
        plant.gravity = Vector3::new(0.0, 0.0, -100.0);
        let evals_before = plant.evaluate();
        let cap = 0.9 * evals_before[0].normal_force;
        assert!(evals_before[0].force.z <= cap + 1e-12);
        plant.commit_friction();
        assert!(plant.contacts[0].slip_distance > 0.0);
        let after = plant.evaluate();
        assert!((after[0].force.z - cap).abs() < 1e-9);
    }

    #[test]
    fn settled_steps_balance_the_object() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut plant = pinch(Vector3::new(0.0, 0.0, -9.81), 3.0);
        let mut settled = 0;
        for _ in 0..200 {
            for tip in &mut plant.tips {
                *tip += Vector3::new(rng.random_range(-1e-4..1e-4), rng.random_range(-1e-4..1e-4), rng.random_range(-1e-4..1e-4));
            }
            let out = plant.settle();
            if out.settled {
                settled += 1;
                let w = plant.net_wrench();
                assert!(w.fixed_rows::<3>(0).norm() <= SETTLE_TOLERANCE);
                assert!(w.fixed_rows::<3>(3).norm() <= SETTLE_TOLERANCE);
            }
            plant.commit_friction();
        }
        assert!(settled > 150);
    }
}
