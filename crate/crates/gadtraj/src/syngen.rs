//! Synthetic trajectory corpus with controllable anomaly fraction, noise
//! level and novelty injection.
//!
//! Normal trajectories are smooth paths: a start near the origin, a heading
//! from a small canonical set, constant speed with seeded jitter and mild
//! curvature. Abnormal trajectories break the pattern by one of three
//! mechanisms: mid-path direction reversal, random-walk dispersion, or an
//! abrupt teleport of one path segment.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GroupDataset, ScalerParams, Trajectory, TrajectoryPoint};
use crate::error::DataError;
use crate::seeds::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub num_trajectories: usize,
    pub trajectory_len: usize,
    pub anomaly_fraction: f64,
    pub noise_ratio: f64,
    pub novelty_ratio: f64,
    pub seed: u64,
    pub scale: SpatialScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialScale {
    /// Std of the start point around the origin.
    pub start_sigma: f64,
    /// Per-step displacement magnitude.
    pub base_velocity: f64,
    /// Std of the per-step Gaussian jitter.
    pub jitter_sigma: f64,
    /// Mild per-step turn in radians.
    pub curve_rate: f64,
}

impl Default for SpatialScale {
    fn default() -> Self {
        SpatialScale {
            start_sigma: 2.0,
            base_velocity: 1.8,
            jitter_sigma: 0.15,
            curve_rate: 0.004,
        }
    }
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_trajectories: 1000,
            trajectory_len: 72,
            anomaly_fraction: 0.05,
            noise_ratio: 0.0,
            novelty_ratio: 0.0,
            seed: 0,
            scale: SpatialScale::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_trajectories < 2 {
            return Err(DataError::Contract("need at least 2 trajectories".into()));
        }
        if self.trajectory_len < 2 {
            return Err(DataError::Contract("trajectory length must be at least 2".into()));
        }
        for (name, v) in [
            ("anomaly_fraction", self.anomaly_fraction),
            ("noise_ratio", self.noise_ratio),
            ("novelty_ratio", self.novelty_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DataError::Contract(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Box-Muller standard normal; keeps us on plain `gen::<f64>()` streams.
fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Canonical heading set for the regular pattern family.
const NORMAL_HEADINGS: [f64; 8] = [
    0.0,
    PI / 4.0,
    PI / 2.0,
    3.0 * PI / 4.0,
    PI,
    5.0 * PI / 4.0,
    3.0 * PI / 2.0,
    7.0 * PI / 4.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AnomalyKind {
    Reversal,
    Dispersion,
    Teleport,
}

fn smooth_path(
    len: usize,
    scale: &SpatialScale,
    headings: &[f64],
    weave_amp: f64,
    rng: &mut impl Rng,
) -> Vec<TrajectoryPoint> {
    let mut x = scale.start_sigma * gauss(rng);
    let mut y = scale.start_sigma * gauss(rng);
    let mut heading = headings[rng.gen_range(0..headings.len())];
    let turn = scale.curve_rate * rng.gen_range(0.2..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let weave_freq = if weave_amp > 0.0 { rng.gen_range(0.5..1.5) * 2.0 * PI / len as f64 } else { 0.0 };

    let mut points = Vec::with_capacity(len);
    points.push(TrajectoryPoint::xy(x, y));
    for t in 1..len {
        let theta = heading + weave_amp * (weave_freq * t as f64).sin();
        x += scale.base_velocity * theta.cos() + scale.jitter_sigma * gauss(rng);
        y += scale.base_velocity * theta.sin() + scale.jitter_sigma * gauss(rng);
        heading += turn;
        points.push(TrajectoryPoint::xy(x, y));
    }
    points
}

fn anomalous_path(
    len: usize,
    scale: &SpatialScale,
    kind: AnomalyKind,
    rng: &mut impl Rng,
) -> Vec<TrajectoryPoint> {
    match kind {
        AnomalyKind::Reversal => {
            let mut x = scale.start_sigma * gauss(rng);
            let mut y = scale.start_sigma * gauss(rng);
            let mut heading = NORMAL_HEADINGS[rng.gen_range(0..NORMAL_HEADINGS.len())];
            let turn = scale.curve_rate * rng.gen_range(0.2..1.0);
            let mut points = Vec::with_capacity(len);
            points.push(TrajectoryPoint::xy(x, y));
            for t in 1..len {
                if t == len / 2 {
                    heading += PI;
                }
                x += scale.base_velocity * heading.cos() + scale.jitter_sigma * gauss(rng);
                y += scale.base_velocity * heading.sin() + scale.jitter_sigma * gauss(rng);
                heading += turn;
                points.push(TrajectoryPoint::xy(x, y));
            }
            points
        }
        AnomalyKind::Dispersion => {
            let mut x = scale.start_sigma * gauss(rng);
            let mut y = scale.start_sigma * gauss(rng);
            let sigma = 5.0 * scale.jitter_sigma;
            let mut points = Vec::with_capacity(len);
            points.push(TrajectoryPoint::xy(x, y));
            for _ in 1..len {
                let theta = rng.gen_range(0.0..2.0 * PI);
                x += scale.base_velocity * theta.cos() + sigma * gauss(rng);
                y += scale.base_velocity * theta.sin() + sigma * gauss(rng);
                points.push(TrajectoryPoint::xy(x, y));
            }
            points
        }
        AnomalyKind::Teleport => {
            let mut points = smooth_path(len, scale, &NORMAL_HEADINGS, 0.0, rng);
            // Displace the middle third and return, an abrupt there-and-back
            // jump that no smooth path produces.
            let jump = 0.35 * len as f64 * scale.base_velocity;
            let dir = rng.gen_range(0.0..2.0 * PI);
            let (dx, dy) = (jump * dir.cos(), jump * dir.sin());
            let lo = len / 3;
            let hi = (2 * len) / 3;
            for p in &mut points[lo..hi] {
                p.attributes[0] += dx;
                p.attributes[1] += dy;
            }
            points
        }
    }
}

/// Generate a labeled corpus. The anomaly count is exactly
/// `round(M * anomaly_fraction)`; everything is deterministic under the seed.
pub fn generate_dataset(cfg: &GenConfig) -> Result<GroupDataset, DataError> {
    cfg.validate()?;
    let m = cfg.num_trajectories;
    let anomaly_count = (m as f64 * cfg.anomaly_fraction).round() as usize;

    // Role assignment from its own stream, then one derived stream per
    // trajectory so generation order never matters.
    let mut role_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xA001));
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut role_rng);
    let mut kinds: Vec<Option<AnomalyKind>> = vec![None; m];
    for (rank, &idx) in order.iter().take(anomaly_count).enumerate() {
        kinds[idx] = Some(match rank % 3 {
            0 => AnomalyKind::Reversal,
            1 => AnomalyKind::Dispersion,
            _ => AnomalyKind::Teleport,
        });
    }

    let mut trajectories = Vec::with_capacity(m);
    for idx in 0..m {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xB000 + idx as u64));
        let (points, label) = match kinds[idx] {
            None => (smooth_path(cfg.trajectory_len, &cfg.scale, &NORMAL_HEADINGS, 0.0, &mut rng), 0),
            Some(kind) => (anomalous_path(cfg.trajectory_len, &cfg.scale, kind, &mut rng), 1),
        };
        trajectories.push(Trajectory::new((idx + 1).to_string(), points, Some(label))?);
    }
    Ok(GroupDataset::new(trajectories))
}

/// Perturb a `noise_ratio` fraction of trajectories (chosen uniformly,
/// seeded) with zero-mean Gaussian offsets of magnitude
/// `noise_ratio * per-feature std` on every point. Labels are unchanged.
pub fn inject_noise(ds: &GroupDataset, noise_ratio: f64, seed: u64) -> Result<GroupDataset, DataError> {
    if !(0.0..=1.0).contains(&noise_ratio) {
        return Err(DataError::Contract(format!("noise_ratio must lie in [0,1], got {noise_ratio}")));
    }
    if noise_ratio == 0.0 {
        return Ok(ds.clone());
    }
    let m = ds.len();
    let count = (m as f64 * noise_ratio).round() as usize;
    let sigma: Vec<f64> = ScalerParams::feature_std(ds)
        .into_iter()
        .map(|s| s * noise_ratio)
        .collect();

    let mut pick_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xC001));
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut pick_rng);
    let mut chosen = vec![false; m];
    for &idx in order.iter().take(count) {
        chosen[idx] = true;
    }

    let mut out = ds.clone();
    for (idx, t) in out.trajectories.iter_mut().enumerate() {
        if !chosen[idx] {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xD000 + idx as u64));
        for p in &mut t.points {
            for (d, v) in p.attributes.iter_mut().enumerate() {
                *v += sigma[d] * gauss(&mut rng);
            }
        }
    }
    Ok(out)
}

/// Replace a `novelty_ratio` fraction of the normal trajectories with an
/// unseen-but-normal pattern family (offset headings with a gentle weave),
/// keeping label 0. Intended for evaluation splits.
pub fn inject_novelty(
    ds: &GroupDataset,
    novelty_ratio: f64,
    seed: u64,
    scale: &SpatialScale,
) -> Result<GroupDataset, DataError> {
    if !(0.0..=1.0).contains(&novelty_ratio) {
        return Err(DataError::Contract(format!(
            "novelty_ratio must lie in [0,1], got {novelty_ratio}"
        )));
    }
    if novelty_ratio == 0.0 {
        return Ok(ds.clone());
    }
    let normal_idx: Vec<usize> = ds
        .trajectories
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_abnormal())
        .map(|(i, _)| i)
        .collect();
    let count = (normal_idx.len() as f64 * novelty_ratio).round() as usize;

    let novel_headings: Vec<f64> = NORMAL_HEADINGS.iter().map(|h| h + PI / 8.0).collect();

    let mut pick_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xE001));
    let mut order = normal_idx;
    order.shuffle(&mut pick_rng);

    let mut out = ds.clone();
    for &idx in order.iter().take(count) {
        let t = &mut out.trajectories[idx];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xF000 + idx as u64));
        let len = t.points.len();
        t.points = smooth_path(len, scale, &novel_headings, 0.35, &mut rng);
        t.label = Some(0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anomaly_free_minimal_corpus() {
        let cfg = GenConfig {
            num_trajectories: 2,
            trajectory_len: 2,
            anomaly_fraction: 0.0,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.trajectories.iter().all(|t| t.label == Some(0)));
    }

    #[test]
    fn anomaly_count_is_exact_rounding() {
        let cfg = GenConfig { num_trajectories: 1000, trajectory_len: 8, ..GenConfig::default() };
        let ds = generate_dataset(&cfg).unwrap();
        let c = ds.count_labels();
        assert_eq!(c.abnormal, 50);
        assert_eq!(c.normal, 950);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig { num_trajectories: 30, trajectory_len: 10, seed: 9, ..GenConfig::default() };
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_are_binary() {
        let cfg = GenConfig { num_trajectories: 40, trajectory_len: 6, ..GenConfig::default() };
        let ds = generate_dataset(&cfg).unwrap();
        assert!(ds.trajectories.iter().all(|t| matches!(t.label, Some(0) | Some(1))));
    }

    #[test]
    fn noise_zero_is_identity() {
        let cfg = GenConfig { num_trajectories: 10, trajectory_len: 6, ..GenConfig::default() };
        let ds = generate_dataset(&cfg).unwrap();
        let noisy = inject_noise(&ds, 0.0, 1).unwrap();
        assert_eq!(ds, noisy);
    }

    #[test]
    fn noise_full_perturbs_every_trajectory() {
        let cfg = GenConfig { num_trajectories: 10, trajectory_len: 6, ..GenConfig::default() };
        let ds = generate_dataset(&cfg).unwrap();
        let noisy = inject_noise(&ds, 1.0, 1).unwrap();
        for (a, b) in ds.trajectories.iter().zip(&noisy.trajectories) {
            assert_ne!(a.points, b.points, "trajectory {} untouched", a.id);
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn noise_perturbs_expected_count() {
        let cfg = GenConfig { num_trajectories: 40, trajectory_len: 6, ..GenConfig::default() };
        let ds = generate_dataset(&cfg).unwrap();
        let noisy = inject_noise(&ds, 0.5, 3).unwrap();
        let changed = ds
            .trajectories
            .iter()
            .zip(&noisy.trajectories)
            .filter(|(a, b)| a.points != b.points)
            .count();
        assert_eq!(changed, 20);
    }

    #[test]
    fn novelty_keeps_label_zero_and_counts() {
        let cfg = GenConfig { num_trajectories: 100, trajectory_len: 8, ..GenConfig::default() };
        let ds = generate_dataset(&cfg).unwrap();
        let normals = ds.count_labels().normal;
        let nov = inject_novelty(&ds, 0.1, 4, &cfg.scale).unwrap();
        assert_eq!(nov.count_labels().normal, normals);
        assert_eq!(nov.count_labels().abnormal, ds.count_labels().abnormal);
        let replaced = ds
            .trajectories
            .iter()
            .zip(&nov.trajectories)
            .filter(|(a, b)| a.points != b.points)
            .count();
        assert_eq!(replaced, (normals as f64 * 0.1).round() as usize);
        // every replaced trajectory stays normal
        for (a, b) in ds.trajectories.iter().zip(&nov.trajectories) {
            if a.points != b.points {
                assert_eq!(b.label, Some(0));
            }
        }
    }

    #[test]
    fn novelty_zero_is_identity() {
        let cfg = GenConfig { num_trajectories: 10, trajectory_len: 6, ..GenConfig::default() };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(inject_novelty(&ds, 0.0, 2, &cfg.scale).unwrap(), ds);
    }
}
