//! Taxel-level tactile fingertip: activation threshold, release hysteresis,
//! per-taxel force error and Gaussian noise, plus aggregation of the taxel
//! array into one contact point, normal and force per fingertip.
//!
//! The default layout is a synthetic 42-taxel hemisphere; real sensors'
//! layouts can be loaded from a CSV file with columns
//! `x_m,y_m,z_m,nx,ny,nz` in the fingertip frame.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper end of the calibrated sensing range, N.
pub const MAX_READING: f64 = 20.0;
pub const DEFAULT_TAXEL_COUNT: usize = 42;
pub const DEFAULT_FINGERTIP_RADIUS: f64 = 0.012;
/// Half-angle of the patch of taxels loaded by a point contact, rad.
pub const DEFAULT_PATCH_HALF_ANGLE: f64 = std::f64::consts::PI / 6.0;
/// Residual output below this is treated as fully decayed, N.
const HYSTERESIS_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TaxelSpec {
    /// Fingertip frame, m.
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub activation_threshold: f64,
    pub hysteresis_offset: f64,
    pub force_error_scale: f64,
    pub noise_std: f64,
    /// Decay time constant of the release tail, s.
    pub hysteresis_time_constant: f64,
    /// Fixed calibration offset of this taxel, drawn once from
    /// `[-force_error_scale, force_error_scale]`.
    pub error_offset: f64,
}

#[derive(Debug, Clone)]
pub struct TaxelState {
    pub last_true_force: f64,
    pub in_hysteresis: bool,
    /// Time since the taxel lost contact, s.
    pub since_release: f64,
    rng: ChaCha8Rng,
}

impl TaxelState {
    /// Fresh state with its own random stream derived from `seed`.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            last_true_force: 0.0,
            in_hysteresis: false,
            since_release: 0.0,
            rng,
        }
    }
}

/// One characterization shared by every taxel of a fingertip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxelCharacterization {
    pub activation_threshold_n: f64,
    pub hysteresis_offset_n: f64,
    pub force_error_scale_n: f64,
    pub noise_std_n: f64,
    pub hysteresis_time_constant_s: f64,
}

impl TaxelCharacterization {
    /// Every error channel disabled.
    pub fn noiseless() -> Self {
        Self {
            activation_threshold_n: 0.0,
            hysteresis_offset_n: 0.0,
            force_error_scale_n: 0.0,
            noise_std_n: 0.0,
            hysteresis_time_constant_s: 0.5,
        }
    }

    /// Draws each parameter uniformly from the characterized ranges.
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            activation_threshold_n: rng.random_range(0.1..=0.5),
            hysteresis_offset_n: rng.random_range(0.0..=0.2),
            force_error_scale_n: rng.random_range(0.1..=0.5),
            noise_std_n: rng.random_range(0.01..=0.03),
            hysteresis_time_constant_s: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("activation_threshold_n", self.activation_threshold_n, 0.0),
            ("hysteresis_offset_n", self.hysteresis_offset_n, 0.0),
            ("force_error_scale_n", self.force_error_scale_n, 0.0),
            ("noise_std_n", self.noise_std_n, 0.0),
        ];
        for (field, value, min) in checks {
            if !(value >= min) || !value.is_finite() {
                return Err(Error::config(field, format!("must be finite and >= {min}, got {value}")));
            }
        }
        if !(self.hysteresis_time_constant_s > 0.0) {
            return Err(Error::config(
                "hysteresis_time_constant_s",
                format!("must be > 0, got {}", self.hysteresis_time_constant_s),
            ));
        }
        Ok(())
    }
}

/// Positions and outward normals of a fingertip's taxels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxelLayout {
    pub positions: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
}

impl TaxelLayout {
    /// Synthetic layout: `count` taxels on a Fibonacci spiral over the
    /// hemisphere `z >= 0` of a sphere of `radius`, centered at the origin.
    pub fn hemisphere(count: usize, radius: f64) -> Self {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut positions = Vec::with_capacity(count);
        let mut normals = Vec::with_capacity(count);
        for k in 0..count {
            let z = 1.0 - (k as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            let n = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            normals.push(n);
            positions.push(n * radius);
        }
        Self { positions, normals }
    }

    pub fn default_fingertip() -> Self {
        Self::hemisphere(DEFAULT_TAXEL_COUNT, DEFAULT_FINGERTIP_RADIUS)
    }

    /// Reads a CSV layout with header `x_m,y_m,z_m,nx,ny,nz`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            x_m: f64,
            y_m: f64,
            z_m: f64,
            nx: f64,
            ny: f64,
            nz: f64,
        }
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let mut layout = Self { positions: Vec::new(), normals: Vec::new() };
        for (line, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            let n = Vector3::new(row.nx, row.ny, row.nz);
            let norm = n.norm();
            if !(norm > 1e-12) || !norm.is_finite() {
                return Err(Error::Parse(format!(
                    "{}: taxel {line} has a degenerate normal",
                    path.display()
                )));
            }
            layout.positions.push(Vector3::new(row.x_m, row.y_m, row.z_m));
            layout.normals.push(n / norm);
        }
        if layout.positions.is_empty() {
            return Err(Error::Parse(format!("{}: layout has no taxels", path.display())));
        }
        Ok(layout)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Advances one taxel by `dt` seconds under the given true normal force.
///
/// `cos_angle` is the cosine between the applied force and the taxel
/// normal; it scales the reading through the force-error channel, which is
/// disabled entirely when `force_error_scale` is zero.
pub fn simulate_taxel(
    spec: &TaxelSpec,
    state: &mut TaxelState,
    true_normal_force: f64,
    cos_angle: f64,
    dt: f64,
) -> f64 {
    let force = true_normal_force.max(0.0);
    let touching = force > 0.0 && force >= spec.activation_threshold;
    let previous = state.last_true_force;
    state.last_true_force = force;

    if touching {
        state.in_hysteresis = false;
        state.since_release = 0.0;
        let error = if spec.force_error_scale > 0.0 {
            spec.error_offset + (cos_angle.clamp(0.0, 1.0) - 1.0) * force
        } else {
            0.0
        };
        let noise = if spec.noise_std > 0.0 {
            Normal::new(0.0, spec.noise_std)
                .expect("finite positive std")
                .sample(&mut state.rng)
        } else {
            0.0
        };
        return (force + error + noise).clamp(0.0, MAX_READING);
    }

    let was_touching = previous > 0.0 && previous >= spec.activation_threshold;
    if was_touching {
        state.in_hysteresis = spec.hysteresis_offset > 0.0;
        state.since_release = 0.0;
    } else if state.in_hysteresis {
        state.since_release += dt;
    }
    if !state.in_hysteresis {
        return 0.0;
    }
    let tail = spec.hysteresis_offset * (-state.since_release / spec.hysteresis_time_constant).exp();
    if tail < HYSTERESIS_FLOOR {
        state.in_hysteresis = false;
        return 0.0;
    }
    tail.min(MAX_READING)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FingertipReading {
    Contact {
        /// Fingertip frame, m.
        contact_position: Vector3<f64>,
        contact_normal: Vector3<f64>,
        force_magnitude: f64,
        active_taxel_count: usize,
    },
    NoContact,
}

impl FingertipReading {
    pub fn force_magnitude(&self) -> f64 {
        match self {
            Self::Contact { force_magnitude, .. } => *force_magnitude,
            Self::NoContact => 0.0,
        }
    }
}

/// Reading-weighted average of taxel positions and normals.
pub fn aggregate_fingertip(taxels: &[(&TaxelSpec, f64)]) -> FingertipReading {
    let mut total = 0.0;
    let mut position = Vector3::zeros();
    let mut normal = Vector3::zeros();
    let mut active = 0;
    for (spec, reading) in taxels {
        let r = reading.max(0.0);
        if r > 0.0 {
            total += r;
            position += spec.position * r;
            normal += spec.normal * r;
            active += 1;
        }
    }
    if active == 0 {
        return FingertipReading::NoContact;
    }
    let norm = normal.norm();
    FingertipReading::Contact {
        contact_position: position / total,
        contact_normal: if norm > 0.0 { normal / norm } else { Vector3::z() },
        force_magnitude: total,
        active_taxel_count: active,
    }
}

/// A fingertip's taxel array with its per-taxel state.
#[derive(Debug, Clone)]
pub struct Fingertip {
    pub specs: Vec<TaxelSpec>,
    pub states: Vec<TaxelState>,
    pub patch_half_angle: f64,
    pub last_readings: Vec<f64>,
}

impl Fingertip {
    /// Builds the array; calibration offsets and noise streams are derived
    /// from `seed` and `finger` so every fingertip is reproducible.
    pub fn new(
        layout: &TaxelLayout,
        characterization: &TaxelCharacterization,
        seed: u64,
        finger: usize,
    ) -> Result<Self> {
        characterization.validate()?;
        if layout.is_empty() {
            return Err(Error::InvalidArgument("taxel layout is empty".into()));
        }
        let mut calibration = ChaCha8Rng::seed_from_u64(seed);
        calibration.set_stream((finger as u64) << 32 | 0xFFFF_FFFF);
        let scale = characterization.force_error_scale_n;
        let specs = layout
            .positions
            .iter()
            .zip(&layout.normals)
            .map(|(p, n)| TaxelSpec {
                position: *p,
                normal: *n,
                activation_threshold: characterization.activation_threshold_n,
                hysteresis_offset: characterization.hysteresis_offset_n,
                force_error_scale: scale,
                noise_std: characterization.noise_std_n,
                hysteresis_time_constant: characterization.hysteresis_time_constant_s,
                error_offset: if scale > 0.0 { calibration.random_range(-scale..=scale) } else { 0.0 },
            })
            .collect::<Vec<_>>();
        let states = (0..specs.len())
            .map(|k| TaxelState::new(seed, (finger as u64) << 32 | k as u64))
            .collect();
        Ok(Self {
            last_readings: vec![0.0; specs.len()],
            specs,
            states,
            patch_half_angle: DEFAULT_PATCH_HALF_ANGLE,
        })
    }

    /// Share of a point contact's normal force carried by each taxel, with
    /// the cosine between the contact direction and each taxel normal.
    pub fn distribute(&self, contact_direction: &Vector3<f64>, force: f64) -> Vec<(f64, f64)> {
        let dir = contact_direction.normalize();
        let cos_patch = self.patch_half_angle.cos();
        let cosines: Vec<f64> = self.specs.iter().map(|s| s.normal.dot(&dir)).collect();
        let mut weights: Vec<f64> = cosines.iter().map(|c| (c - cos_patch).max(0.0)).collect();
        let mut sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            // no taxel inside the patch: the nearest one takes the load
            let nearest = cosines
                .iter()
                .enumerate()
                .fold(0, |best, (k, c)| if *c > cosines[best] { k } else { best });
            weights[nearest] = 1.0;
            sum = 1.0;
        }
        weights
            .iter()
            .zip(&cosines)
            .map(|(w, c)| (force.max(0.0) * w / sum, *c))
            .collect()
    }

    /// Advances every taxel by `dt` under a point contact pressing along
    /// `-contact_direction` (outward fingertip-frame direction of the
    /// contact point) with normal force `force`; `None` means no contact.
    pub fn read(&mut self, contact: Option<(&Vector3<f64>, f64)>, dt: f64) -> FingertipReading {
        let loads = match contact {
            Some((dir, force)) if force > 0.0 => self.distribute(dir, force),
            _ => vec![(0.0, 1.0); self.specs.len()],
        };
        for (k, (load, cos)) in loads.into_iter().enumerate() {
            self.last_readings[k] = simulate_taxel(&self.specs[k], &mut self.states[k], load, cos, dt);
        }
        let pairs: Vec<(&TaxelSpec, f64)> =
            self.specs.iter().zip(self.last_readings.iter().copied()).collect();
        aggregate_fingertip(&pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(threshold: f64, hysteresis: f64, scale: f64, noise: f64) -> TaxelSpec {
        TaxelSpec {
            position: Vector3::new(0.0, 0.0, 0.012),
            normal: Vector3::z(),
            activation_threshold: threshold,
            hysteresis_offset: hysteresis,
            force_error_scale: scale,
            noise_std: noise,
            hysteresis_time_constant: 0.5,
            error_offset: 0.0,
        }
    }

    #[test]
    fn below_threshold_reads_zero() {
        let mut state = TaxelState::new(1, 0);
        assert_eq!(simulate_taxel(&spec(0.1, 0.2, 0.1, 0.02), &mut state, 0.05, 1.0, 0.01), 0.0);
    }

    #[test]
    fn release_leaves_decaying_tail() {
        let s = spec(0.1, 0.2, 0.0, 0.0);
        let mut state = TaxelState::new(1, 0);
        simulate_taxel(&s, &mut state, 2.0, 1.0, 0.01);
        let first = simulate_taxel(&s, &mut state, 0.0, 1.0, 0.01);
        assert!((first - 0.2).abs() < 1e-12);
        let mut previous = first;
        for _ in 0..400 {
            let r = simulate_taxel(&s, &mut state, 0.0, 1.0, 0.01);
            assert!(r <= previous);
            previous = r;
        }
        assert_eq!(previous, 0.0);
        assert!(!state.in_hysteresis);
    }

    #[test]
    fn steady_noise_matches_configured_std() {
        let s = spec(0.1, 0.0, 0.0, 0.02);
        let mut state = TaxelState::new(7, 3);
        let readings: Vec<f64> = (0..10_000).map(|_| simulate_taxel(&s, &mut state, 5.0, 1.0, 0.01)).collect();
        let mean = readings.iter().sum::<f64>() / readings.len() as f64;
        let var = readings.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (readings.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.02).abs() <= 0.2 * 0.02, "std {std}");
    }

    #[test]
    fn noiseless_taxel_is_identity_on_range() {
        let s = spec(0.0, 0.0, 0.0, 0.0);
        let mut state = TaxelState::new(0, 0);
        for k in 0..=200 {
            let f = k as f64 * 0.1;
            assert_eq!(simulate_taxel(&s, &mut state, f, 0.3, 0.01), f);
        }
        assert_eq!(simulate_taxel(&s, &mut state, 25.0, 1.0, 0.01), MAX_READING);
    }

    #[test]
    fn aggregate_single_and_symmetric() {
        let a = spec(0.0, 0.0, 0.0, 0.0);
        let mut b = a.clone();
        b.position = Vector3::new(0.01, 0.0, 0.0);
        b.normal = Vector3::x();
        match aggregate_fingertip(&[(&a, 1.5), (&b, 0.0)]) {
            FingertipReading::Contact { contact_position, contact_normal, force_magnitude, active_taxel_count } => {
                assert!((contact_position - a.position).norm() < 1e-15);
                assert_eq!(contact_normal, a.normal);
                assert_eq!(force_magnitude, 1.5);
                assert_eq!(active_taxel_count, 1);
            }
            FingertipReading::NoContact => panic!("expected contact"),
        }
        let mut c = a.clone();
        c.position = Vector3::new(-0.01, 0.0, 0.012);
        let mut d = a.clone();
        d.position = Vector3::new(0.01, 0.0, 0.012);
        let FingertipReading::Contact { contact_position, .. } = aggregate_fingertip(&[(&c, 2.0), (&d, 2.0)]) else {
            panic!("expected contact");
        };
        assert!((contact_position - Vector3::new(0.0, 0.0, 0.012)).norm() < 1e-15);
        assert_eq!(aggregate_fingertip(&[(&a, 0.0)]), FingertipReading::NoContact);
    }

    #[test]
    fn aggregate_is_homogeneous() {
        let layout = TaxelLayout::default_fingertip();
        let tip = Fingertip::new(&layout, &TaxelCharacterization::noiseless(), 0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let readings: Vec<f64> =
                (0..layout.len()).map(|_| if rng.random_bool(0.3) { rng.random_range(0.1..5.0) } else { 0.0 }).collect();
            let once: Vec<_> = tip.specs.iter().zip(readings.iter().copied()).collect();
            let twice: Vec<_> = tip.specs.iter().zip(readings.iter().map(|r| 2.0 * r)).collect();
            match (aggregate_fingertip(&once), aggregate_fingertip(&twice)) {
                (
                    FingertipReading::Contact { contact_position: p1, contact_normal: n1, force_magnitude: f1, .. },
                    FingertipReading::Contact { contact_position: p2, contact_normal: n2, force_magnitude: f2, .. },
                ) => {
                    assert!((p1 - p2).norm() < 1e-15 && (n1 - n2).norm() < 1e-12);
                    assert!((f2 - 2.0 * f1).abs() < 1e-12);
                }
                (FingertipReading::NoContact, FingertipReading::NoContact) => {}
                _ => panic!("activation pattern changed under scaling"),
            }
        }
    }

    #[test]
    fn default_layout_is_a_unit_normal_hemisphere() {
        let layout = TaxelLayout::default_fingertip();
        assert_eq!(layout.len(), 42);
        for (p, n) in layout.positions.iter().zip(&layout.normals) {
            assert!((n.norm() - 1.0).abs() < 1e-12 && n.z >= 0.0);
            assert!((p.norm() - DEFAULT_FINGERTIP_RADIUS).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_fingertip_reproduces_contact() {
        let layout = TaxelLayout::default_fingertip();
        let mut tip = Fingertip::new(&layout, &TaxelCharacterization::noiseless(), 0, 0).unwrap();
        for k in [0, 5, 17, 30] {
            let dir = layout.normals[k];
            let FingertipReading::Contact { contact_position, contact_normal, force_magnitude, .. } =
                tip.read(Some((&dir, 3.0)), 0.01)
            else {
                panic!("expected contact");
            };
            assert!((force_magnitude - 3.0).abs() < 1e-12);
            // the weighted average sits inside the shell, near the contact direction
            assert!(contact_normal.dot(&dir) > 0.95);
            assert!(contact_position.normalize().dot(&dir) > 0.95);
        }
    }

    #[test]
    fn same_seed_same_readings() {
        let layout = TaxelLayout::default_fingertip();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = TaxelCharacterization::sample(&mut rng);
        let run = |seed| {
            let mut tip = Fingertip::new(&layout, &ch, seed, 1).unwrap();
            (0..100)
                .map(|k| tip.read(Some((&Vector3::new(0.2, 0.1, 1.0), 1.0 + 0.01 * k as f64)), 0.01).force_magnitude())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn layout_csv_round_trip() {
        let layout = TaxelLayout::hemisphere(5, 0.01);
        let dir = std::env::temp_dir().join(format!("geodex-layout-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("layout.csv");
        let mut text = String::from("x_m,y_m,z_m,nx,ny,nz\n");
        for (p, n) in layout.positions.iter().zip(&layout.normals) {
            text += &format!("{:e},{:e},{:e},{:e},{:e},{:e}\n", p.x, p.y, p.z, n.x, n.y, n.z);
        }
        std::fs::write(&path, text).unwrap();
        let loaded = TaxelLayout::from_csv(&path).unwrap();
        assert_eq!(loaded.len(), 5);
        for (a, b) in loaded.positions.iter().zip(&layout.positions) {
            assert!((a - b).norm() < 1e-15);
        }
        std::fs::write(&path, "x_m,y_m,z_m,nx,ny,nz\n0,0,0,0,0,0\n").unwrap();
        assert!(TaxelLayout::from_csv(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
