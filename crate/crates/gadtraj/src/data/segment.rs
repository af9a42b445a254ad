//! Splitting a trajectory into fixed-length member segments.

use crate::error::DataError;

use super::{Trajectory, TrajectoryPoint};

/// A consecutive window of `L` points; short tails are zero-padded and
/// `valid_len` records how many points are real.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub points: Vec<TrajectoryPoint>,
    pub valid_len: usize,
}

/// Cut a trajectory into consecutive non-overlapping windows of `l` points.
/// With `l = 1` each point is its own group member.
pub fn segment_trajectory(t: &Trajectory, l: usize) -> Result<Vec<Segment>, DataError> {
    if l < 1 {
        return Err(DataError::Contract("segment length must be at least 1".into()));
    }
    let dim = t.points.first().map(|p| p.dim()).unwrap_or(0);
    let mut out = Vec::with_capacity(t.points.len().div_ceil(l));
    for chunk in t.points.chunks(l) {
        let mut points: Vec<TrajectoryPoint> = chunk.to_vec();
        let valid_len = points.len();
        while points.len() < l {
            points.push(TrajectoryPoint::new(vec![0.0; dim]));
        }
        out.push(Segment { points, valid_len });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(n: usize) -> Trajectory {
        let pts = (0..n).map(|i| TrajectoryPoint::xy(i as f64, 0.0)).collect();
        Trajectory::new("t", pts, None).unwrap()
    }

    #[test]
    fn unit_segments_are_points() {
        let segs = segment_trajectory(&traj(6), 1).unwrap();
        assert_eq!(segs.len(), 6);
        assert!(segs.iter().all(|s| s.points.len() == 1 && s.valid_len == 1));
    }

    #[test]
    fn exact_division() {
        let segs = segment_trajectory(&traj(6), 3).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].points[0].attributes[0], 3.0);
    }

    #[test]
    fn short_tail_is_padded() {
        let segs = segment_trajectory(&traj(7), 3).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[2].valid_len, 1);
        assert_eq!(segs[2].points.len(), 3);
        assert_eq!(segs[2].points[1].attributes, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_length_rejected() {
        assert!(segment_trajectory(&traj(4), 0).is_err());
    }
}
