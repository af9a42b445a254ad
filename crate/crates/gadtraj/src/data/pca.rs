//! Pseudo-labeling of unlabeled trajectories by projecting flattened
//! trajectories onto the first principal component and thresholding the
//! z-scored projections.

use crate::error::DataError;

use super::{GroupDataset, PaddedGroup};

/// Label each trajectory abnormal (1) iff the z-score of its first-PC
/// projection falls outside the open interval (z_low, z_high).
pub fn pca_zscore_label(
    ds: &GroupDataset,
    z_low: f64,
    z_high: f64,
) -> Result<GroupDataset, DataError> {
    if ds.len() < 2 {
        return Err(DataError::Contract(
            "pca_zscore_label needs at least two trajectories".into(),
        ));
    }
    let z = pca_zscores(ds)?;
    let mut out = ds.clone();
    for (t, &zi) in out.trajectories.iter_mut().zip(&z) {
        t.label = Some(if zi > z_low && zi < z_high { 0 } else { 1 });
    }
    Ok(out)
}

/// Z-scores of the first-PC projections, in dataset order.
pub fn pca_zscores(ds: &GroupDataset) -> Result<Vec<f64>, DataError> {
    let seq_len = ds.max_len;
    let dim = ds.feature_dim();
    let width = seq_len * dim;
    let n = ds.len();

    // Accumulate in id-sorted order so the result is independent of
    // trajectory ordering, then map back.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ds.trajectories[a].id.cmp(&ds.trajectories[b].id));

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &i in &order {
        let padded = PaddedGroup::from_trajectory(&ds.trajectories[i], seq_len);
        rows.push(padded.features.data);
    }

    let mut mean = vec![0.0; width];
    for row in &rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    for row in rows.iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }

    let pc = first_principal_component(&rows, width);
    let mut proj_sorted = vec![0.0; n];
    for (k, row) in rows.iter().enumerate() {
        proj_sorted[k] = row.iter().zip(&pc).map(|(a, b)| a * b).sum();
    }

    let pmean = proj_sorted.iter().sum::<f64>() / n as f64;
    let pvar = proj_sorted.iter().map(|p| (p - pmean) * (p - pmean)).sum::<f64>() / n as f64;
    let pstd = pvar.sqrt();

    let mut z = vec![0.0; n];
    for (k, &orig) in order.iter().enumerate() {
        z[orig] = if pstd > 0.0 { (proj_sorted[k] - pmean) / pstd } else { 0.0 };
    }
    Ok(z)
}

/// Dominant eigenvector of the covariance of mean-centered rows, found by
/// power iteration (the only component the labeling needs).
fn first_principal_component(centered: &[Vec<f64>], width: usize) -> Vec<f64> {
    let n = centered.len() as f64;
    // Deterministic start with a mild ramp so it is not orthogonal to the
    // leading direction for symmetric inputs.
    let mut v: Vec<f64> = (0..width).map(|i| 1.0 + 1e-3 * i as f64).collect();
    normalize(&mut v);

    for _ in 0..500 {
        // w = Cov · v = Xᵀ (X v) / n without materializing the covariance.
        let mut xv = vec![0.0; centered.len()];
        for (k, row) in centered.iter().enumerate() {
            xv[k] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let mut w = vec![0.0; width];
        for (k, row) in centered.iter().enumerate() {
            let c = xv[k] / n;
            for (wi, ri) in w.iter_mut().zip(row) {
                *wi += c * ri;
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // zero-variance data: any direction works, projections are 0
            return v;
        }
        for wi in w.iter_mut() {
            *wi /= norm;
        }
        let dot: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        v = w;
        if 1.0 - dot.abs() < 1e-14 {
            break;
        }
    }
    v
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Trajectory, TrajectoryPoint};

    fn traj(id: &str, pts: &[(f64, f64)]) -> Trajectory {
        Trajectory::new(
            id,
            pts.iter().map(|&(x, y)| TrajectoryPoint::xy(x, y)).collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn identical_trajectories_all_normal() {
        let t = traj("a", &[(1.0, 2.0), (3.0, 4.0)]);
        let mut clones = Vec::new();
        for i in 0..5 {
            let mut c = t.clone();
            c.id = format!("p{i}");
            clones.push(c);
        }
        let ds = GroupDataset::new(clones);
        let labeled = pca_zscore_label(&ds, -2.1, 2.1).unwrap();
        assert!(labeled.trajectories.iter().all(|t| t.label == Some(0)));
    }

    #[test]
    fn rank_one_data_projects_exactly() {
        // Trajectories along a single direction: first PC captures all
        // variance, so z-scores match the 1-d standardization.
        let scales = [0.0, 1.0, 2.0, 3.0, 10.0];
        let trajs: Vec<Trajectory> = scales
            .iter()
            .enumerate()
            .map(|(i, &s)| traj(&format!("p{i}"), &[(s, 2.0 * s), (2.0 * s, s)]))
            .collect();
        let ds = GroupDataset::new(trajs);
        let z = pca_zscores(&ds).unwrap();
        let mean = scales.iter().sum::<f64>() / scales.len() as f64;
        let var = scales.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / scales.len() as f64;
        let std = var.sqrt();
        for (zi, &s) in z.iter().zip(&scales) {
            assert!((zi.abs() - ((s - mean) / std).abs()).abs() < 1e-9, "z={zi} s={s}");
        }
    }

    #[test]
    fn labels_invariant_to_ordering() {
        let mut trajs = Vec::new();
        for i in 0..20 {
            let off = if i == 19 { 50.0 } else { i as f64 * 0.1 };
            trajs.push(traj(&format!("p{i:02}"), &[(off, off), (off + 1.0, off)]));
        }
        let ds = GroupDataset::new(trajs.clone());
        trajs.reverse();
        let ds_rev = GroupDataset::new(trajs);

        let a = pca_zscore_label(&ds, -2.1, 2.1).unwrap();
        let b = pca_zscore_label(&ds_rev, -2.1, 2.1).unwrap();
        for t in &a.trajectories {
            let other = b.trajectories.iter().find(|o| o.id == t.id).unwrap();
            assert_eq!(t.label, other.label, "id {}", t.id);
        }
    }

    #[test]
    fn fewer_than_two_is_contract_error() {
        let ds = GroupDataset::new(vec![traj("only", &[(0.0, 0.0), (1.0, 1.0)])]);
        assert!(pca_zscore_label(&ds, -2.1, 2.1).is_err());
    }
}
