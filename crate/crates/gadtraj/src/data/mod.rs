//! Trajectory and group dataset types, ingestion and preprocessing.

mod csv_io;
mod pca;
mod scale;
mod segment;
mod split;

pub use csv_io::{load_tabular_csv, save_tabular_csv, CsvSchema};
pub use pca::pca_zscore_label;
pub use scale::{scale_fit_transform, ScalerKind, ScalerParams};
pub use segment::{segment_trajectory, Segment};
pub use split::{split_dataset, SplitBundle};

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::tensor::Tensor;

/// Learning setting: whether training may contain (unlabeled) anomalies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Unsupervised,
    #[serde(alias = "semi-supervised")]
    Semi,
}

impl Setting {
    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Unsupervised => "unsupervised",
            Setting::Semi => "semi",
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One group member instance: a V-dimensional feature point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub attributes: Vec<f64>,
}

impl TrajectoryPoint {
    pub fn new(attributes: Vec<f64>) -> Self {
        TrajectoryPoint { attributes }
    }

    pub fn xy(x: f64, y: f64) -> Self {
        TrajectoryPoint { attributes: vec![x, y] }
    }

    pub fn dim(&self) -> usize {
        self.attributes.len()
    }
}

/// An ordered sequence of points forming one group, identified by a person id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub points: Vec<TrajectoryPoint>,
    /// 0 = normal, 1 = abnormal; `None` when unlabeled.
    pub label: Option<u8>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, points: Vec<TrajectoryPoint>, label: Option<u8>) -> Result<Self, DataError> {
        let id = id.into();
        if points.len() < 2 {
            return Err(DataError::TooShort { person: id, got: points.len() });
        }
        Ok(Trajectory { id, points, label })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_abnormal(&self) -> bool {
        self.label == Some(1)
    }
}

/// A set of trajectories viewed as a group anomaly detection dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDataset {
    pub trajectories: Vec<Trajectory>,
    pub setting: Option<Setting>,
    /// Padding length every group is brought to before model consumption.
    pub max_len: usize,
}

impl GroupDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        let max_len = trajectories.iter().map(|t| t.len()).max().unwrap_or(0);
        GroupDataset { trajectories, setting: None, max_len }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Feature dimensionality V, taken from the first point.
    pub fn feature_dim(&self) -> usize {
        self.trajectories
            .first()
            .and_then(|t| t.points.first())
            .map(|p| p.dim())
            .unwrap_or(0)
    }

    pub fn count_labels(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for t in &self.trajectories {
            match t.label {
                Some(1) => c.abnormal += 1,
                Some(_) => c.normal += 1,
                None => c.unlabeled += 1,
            }
        }
        c
    }

    /// Pad or truncate every trajectory to `self.max_len` model inputs.
    pub fn padded_groups(&self) -> Vec<PaddedGroup> {
        self.trajectories.iter().map(|t| PaddedGroup::from_trajectory(t, self.max_len)).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.trajectories.iter().map(|t| t.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<Option<u8>> {
        self.trajectories.iter().map(|t| t.label).collect()
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LabelCounts {
    pub normal: usize,
    pub abnormal: usize,
    pub unlabeled: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.normal + self.abnormal + self.unlabeled
    }
}

/// A trajectory padded to a fixed length with a validity mask, ready for the
/// models. Padding rows are zero vectors and masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedGroup {
    /// [seq_len, V] feature matrix.
    pub features: Tensor,
    /// true = real point, false = padding. Length seq_len.
    pub mask: Vec<bool>,
    pub id: String,
    pub label: Option<u8>,
}

impl PaddedGroup {
    pub fn from_trajectory(t: &Trajectory, seq_len: usize) -> Self {
        let dim = t.points.first().map(|p| p.dim()).unwrap_or(0);
        let take = t.points.len().min(seq_len);
        let mut data = vec![0.0; seq_len * dim];
        let mut mask = vec![false; seq_len];
        for (i, p) in t.points.iter().take(take).enumerate() {
            data[i * dim..(i + 1) * dim].copy_from_slice(&p.attributes);
            mask[i] = true;
        }
        PaddedGroup {
            features: Tensor::matrix(seq_len, dim, data),
            mask,
            id: t.id.clone(),
            label: t.label,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.mask.len()
    }

    pub fn true_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}
