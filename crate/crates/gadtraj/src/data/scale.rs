//! Per-feature scaling fit on the training split.

use serde::{Deserialize, Serialize};

use crate::error::DataError;

use super::GroupDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    Standard,
    Robust,
}

impl ScalerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScalerKind::Standard => "standard",
            ScalerKind::Robust => "robust",
        }
    }
}

impl std::fmt::Display for ScalerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScalerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(ScalerKind::Standard),
            "robust" => Ok(ScalerKind::Robust),
            other => Err(format!("unknown scaler '{other}'")),
        }
    }
}

/// Fitted center/spread per feature dimension. Zero spreads are replaced
/// by 1 so constant columns pass through centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub kind: ScalerKind,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ScalerParams {
    /// Fit on a dataset: standard uses mean and population std, robust uses
    /// median and IQR with linearly interpolated quantiles.
    pub fn fit(ds: &GroupDataset, kind: ScalerKind) -> Result<Self, DataError> {
        let dim = ds.feature_dim();
        if ds.is_empty() || dim == 0 {
            return Err(DataError::Contract("cannot fit a scaler on an empty dataset".into()));
        }
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); dim];
        for t in &ds.trajectories {
            for p in &t.points {
                for (d, &v) in p.attributes.iter().enumerate() {
                    columns[d].push(v);
                }
            }
        }
        let mut center = Vec::with_capacity(dim);
        let mut scale = Vec::with_capacity(dim);
        for col in &mut columns {
            match kind {
                ScalerKind::Standard => {
                    let n = col.len() as f64;
                    let mean = col.iter().sum::<f64>() / n;
                    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let std = var.sqrt();
                    center.push(mean);
                    scale.push(if std > 0.0 { std } else { 1.0 });
                }
                ScalerKind::Robust => {
                    col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let median = quantile_sorted(col, 0.5);
                    let iqr = quantile_sorted(col, 0.75) - quantile_sorted(col, 0.25);
                    center.push(median);
                    scale.push(if iqr > 0.0 { iqr } else { 1.0 });
                }
            }
        }
        Ok(ScalerParams { kind, center, scale })
    }

    pub fn transform(&self, ds: &GroupDataset) -> GroupDataset {
        self.map(ds, |v, c, s| (v - c) / s)
    }

    pub fn inverse_transform(&self, ds: &GroupDataset) -> GroupDataset {
        self.map(ds, |v, c, s| v * s + c)
    }

    fn map(&self, ds: &GroupDataset, f: impl Fn(f64, f64, f64) -> f64) -> GroupDataset {
        let mut out = ds.clone();
        for t in &mut out.trajectories {
            for p in &mut t.points {
                for (d, v) in p.attributes.iter_mut().enumerate() {
                    *v = f(*v, self.center[d], self.scale[d]);
                }
            }
        }
        out
    }

    /// Per-feature population standard deviation of a dataset, used as the
    /// base magnitude for coordinate noise.
    pub fn feature_std(ds: &GroupDataset) -> Vec<f64> {
        let dim = ds.feature_dim();
        let mut sums = vec![0.0; dim];
        let mut count = 0usize;
        for t in &ds.trajectories {
            for p in &t.points {
                for (d, &v) in p.attributes.iter().enumerate() {
                    sums[d] += v;
                }
                count += 1;
            }
        }
        let n = count.max(1) as f64;
        let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
        let mut vars = vec![0.0; dim];
        for t in &ds.trajectories {
            for p in &t.points {
                for (d, &v) in p.attributes.iter().enumerate() {
                    vars[d] += (v - means[d]) * (v - means[d]);
                }
            }
        }
        vars.iter().map(|v| (v / n).sqrt()).collect()
    }
}

/// Quantile with linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fit on `ds` and transform it, returning the fitted parameters for
/// transforming the other splits.
pub fn scale_fit_transform(
    ds: &GroupDataset,
    kind: ScalerKind,
) -> Result<(GroupDataset, ScalerParams), DataError> {
    let params = ScalerParams::fit(ds, kind)?;
    Ok((params.transform(ds), params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Trajectory, TrajectoryPoint};

    fn one_column_dataset(values: &[f64]) -> GroupDataset {
        // One trajectory whose points carry the column values in feature 0.
        let points: Vec<TrajectoryPoint> =
            values.iter().map(|&v| TrajectoryPoint::new(vec![v])).collect();
        GroupDataset::new(vec![Trajectory::new("1", points, None).unwrap()])
    }

    #[test]
    fn standard_scaler_centers_and_scales() {
        // column [0, 2]: mean 1, population std 1 -> [-1, 1]
        let ds = one_column_dataset(&[0.0, 2.0]);
        let (scaled, params) = scale_fit_transform(&ds, ScalerKind::Standard).unwrap();
        let vals: Vec<f64> =
            scaled.trajectories[0].points.iter().map(|p| p.attributes[0]).collect();
        assert_eq!(vals, vec![-1.0, 1.0]);
        assert_eq!(params.center, vec![1.0]);
        assert_eq!(params.scale, vec![1.0]);
    }

    #[test]
    fn constant_column_divisor_forced_to_one() {
        let ds = one_column_dataset(&[4.0, 4.0, 4.0]);
        let (scaled, params) = scale_fit_transform(&ds, ScalerKind::Standard).unwrap();
        assert_eq!(params.scale, vec![1.0]);
        assert!(scaled.trajectories[0].points.iter().all(|p| p.attributes[0] == 0.0));
    }

    #[test]
    fn robust_scaler_hand_case() {
        // sorted [1,2,3,4,100]: median 3, q25 = 2, q75 = 4, IQR 2
        let ds = one_column_dataset(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        let (scaled, params) = ScalerParams::fit(&ds, ScalerKind::Robust)
            .map(|p| (p.transform(&ds), p))
            .unwrap();
        assert_eq!(params.center, vec![3.0]);
        assert_eq!(params.scale, vec![2.0]);
        let vals: Vec<f64> =
            scaled.trajectories[0].points.iter().map(|p| p.attributes[0]).collect();
        assert_eq!(vals[2], 0.0);
        assert!((vals[4] - 48.5).abs() < 1e-12);
        // center points stay near 0
        assert!(vals[0].abs() <= 1.0 && vals[3].abs() <= 1.0);
    }

    #[test]
    fn empty_dataset_is_contract_error() {
        let ds = GroupDataset::new(vec![]);
        assert!(ScalerParams::fit(&ds, ScalerKind::Standard).is_err());
    }

    #[test]
    fn inverse_recovers_inputs() {
        let ds = one_column_dataset(&[3.5, -1.25, 0.75, 9.0]);
        let (scaled, params) = scale_fit_transform(&ds, ScalerKind::Standard).unwrap();
        let back = params.inverse_transform(&scaled);
        for (a, b) in ds.trajectories[0].points.iter().zip(&back.trajectories[0].points) {
            assert!((a.attributes[0] - b.attributes[0]).abs() < 1e-9);
        }
    }
}
