//! Stratified train/valid/test splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::DataError;

use super::{GroupDataset, LabelCounts, Setting};

#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub train: GroupDataset,
    pub valid: GroupDataset,
    pub test: GroupDataset,
    pub warnings: Vec<String>,
    pub counts: SplitCounts,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SplitCounts {
    pub train: LabelCounts,
    pub valid: LabelCounts,
    pub test: LabelCounts,
}

/// Largest-remainder apportionment of `total` over non-negative weights.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 || total == 0 {
        let mut out = vec![0; weights.len()];
        if total > 0 && !weights.is_empty() {
            out[0] = total;
        }
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest: usize = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for idx in order {
        if rest == 0 {
            break;
        }
        out[idx] += 1;
        rest -= 1;
    }
    out
}

/// Split a dataset into train/valid/test with a target normal fraction per
/// split. Unlabeled trajectories count as normal. In the semi-supervised
/// setting the train split keeps normals only; its anomaly share is
/// displaced into valid and test.
pub fn split_dataset(
    ds: &GroupDataset,
    ratios: (f64, f64, f64),
    normal_ratio: f64,
    setting: Setting,
    seed: u64,
) -> Result<SplitBundle, DataError> {
    let (r_train, r_valid, r_test) = ratios;
    let sum = r_train + r_valid + r_test;
    if (sum - 1.0).abs() > 1e-9 || r_train < 0.0 || r_valid < 0.0 || r_test < 0.0 {
        return Err(DataError::Contract(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    if !(0.0..=1.0).contains(&normal_ratio) {
        return Err(DataError::Contract(format!(
            "normal_ratio must lie in [0,1], got {normal_ratio}"
        )));
    }
    if ds.is_empty() {
        return Err(DataError::Contract("cannot split an empty dataset".into()));
    }

    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Index pools; unlabeled trajectories behave as normal.
    let mut normals: Vec<usize> = Vec::new();
    let mut anomalies: Vec<usize> = Vec::new();
    for (i, t) in ds.trajectories.iter().enumerate() {
        if t.is_abnormal() {
            anomalies.push(i);
        } else {
            normals.push(i);
        }
    }
    normals.shuffle(&mut rng);
    anomalies.shuffle(&mut rng);

    let total = ds.len();
    let sizes = apportion(total, &[r_train, r_valid, r_test]);

    // Anomaly allocation toward the per-split target fraction 1 - normal_ratio.
    let desired: Vec<f64> = sizes.iter().map(|&m| m as f64 * (1.0 - normal_ratio)).collect();
    let desired_total: f64 = desired.iter().sum();
    let available = anomalies.len();
    if (available as f64) + 0.5 < desired_total {
        warnings.push(format!(
            "insufficient anomalies to reach normal_ratio {normal_ratio}: wanted ~{:.0}, have {available}; using best-effort proportional counts",
            desired_total
        ));
    }
    let mut anom_counts = if desired_total > 0.0 {
        apportion(available, &desired)
    } else {
        vec![0, 0, 0]
    };
    // Never allocate more anomalies to a split than its size.
    for i in 0..3 {
        if anom_counts[i] > sizes[i] {
            let overflow = anom_counts[i] - sizes[i];
            anom_counts[i] = sizes[i];
            // push overflow to the largest remaining split
            let j = (0..3)
                .filter(|&j| j != i)
                .max_by_key(|&j| sizes[j].saturating_sub(anom_counts[j]))
                .unwrap();
            anom_counts[j] += overflow;
        }
    }

    if setting == Setting::Semi && anom_counts[0] > 0 {
        // Displace the train split's anomalies into valid/test.
        let moved = anom_counts[0];
        anom_counts[0] = 0;
        let extra = apportion(moved, &[r_valid, r_test]);
        anom_counts[1] += extra[0];
        anom_counts[2] += extra[1];
    }

    let anom_total: usize = anom_counts.iter().sum();
    debug_assert_eq!(anom_total, available);

    // Normal counts fill up the split sizes; in semi the train size shrinks
    // by the displaced anomalies while valid/test grow.
    let mut normal_counts = [0usize; 3];
    match setting {
        Setting::Unsupervised => {
            for i in 0..3 {
                normal_counts[i] = sizes[i].saturating_sub(anom_counts[i]);
            }
        }
        Setting::Semi => {
            // Recreate the unsupervised normal share so displaced anomalies
            // change composition, not normal placement.
            let desired_unsup = if desired_total > 0.0 {
                apportion(available, &desired)
            } else {
                vec![0, 0, 0]
            };
            for i in 0..3 {
                normal_counts[i] = sizes[i].saturating_sub(desired_unsup[i].min(sizes[i]));
            }
        }
    }
    let assigned: usize = normal_counts.iter().sum();
    if assigned != normals.len() {
        // Rounding drift: give the difference to the train split.
        if assigned < normals.len() {
            normal_counts[0] += normals.len() - assigned;
        } else {
            let mut over = assigned - normals.len();
            for i in (0..3).rev() {
                let take = over.min(normal_counts[i]);
                normal_counts[i] -= take;
                over -= take;
            }
        }
    }

    let mut split_indices: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut n_iter = normals.into_iter();
    let mut a_iter = anomalies.into_iter();
    for i in 0..3 {
        split_indices[i].extend(n_iter.by_ref().take(normal_counts[i]));
        split_indices[i].extend(a_iter.by_ref().take(anom_counts[i]));
        // Keep the original dataset order inside each split.
        split_indices[i].sort_unstable();
    }

    let build = |indices: &[usize]| -> GroupDataset {
        let mut sub = GroupDataset::new(
            indices.iter().map(|&i| ds.trajectories[i].clone()).collect(),
        );
        sub.max_len = ds.max_len;
        sub.setting = Some(setting);
        sub
    };
    let train = build(&split_indices[0]);
    let valid = build(&split_indices[1]);
    let test = build(&split_indices[2]);

    let counts = SplitCounts {
        train: train.count_labels(),
        valid: valid.count_labels(),
        test: test.count_labels(),
    };
    for (name, c) in [("train", counts.train), ("valid", counts.valid), ("test", counts.test)] {
        let tot = c.total();
        if tot == 0 {
            continue;
        }
        let frac = (c.normal + c.unlabeled) as f64 / tot as f64;
        let target = if setting == Setting::Semi && name == "train" { 1.0 } else { normal_ratio };
        if (frac - target).abs() > 0.02 {
            warnings.push(format!(
                "{name} split normal fraction {frac:.3} deviates from target {target} (n={}, a={}, unlabeled={})",
                c.normal, c.abnormal, c.unlabeled
            ));
        }
    }

    Ok(SplitBundle { train, valid, test, warnings, counts })
}
