//! Block Attention-anomaly Score: per-group, per-encoder-block scores
//! derived from recorded attention matrices.
//!
//! Per block: average each group's attention over heads, average those over
//! groups, rank groups by Frobenius distance from the block mean, average
//! the top-N most distant into an abnormal reference, and score each group
//! as the clamped ratio of its distance to the reference distance.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::model::AttentionStack;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BasDistance {
    /// Frobenius norm of the matrix difference (matrix euclidean).
    #[default]
    Frobenius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasConfig {
    pub ratio_topn: f64,
    pub distance: BasDistance,
}

impl Default for BasConfig {
    fn default() -> Self {
        BasConfig { ratio_topn: 0.05, distance: BasDistance::Frobenius }
    }
}

impl BasConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.ratio_topn > 0.0 && self.ratio_topn <= 1.0) {
            return Err(DataError::Contract(format!(
                "ratio_topn must lie in (0,1], got {}",
                self.ratio_topn
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BasReport {
    pub group_ids: Vec<String>,
    /// bas[m][b] in [0,1].
    pub bas: Vec<Vec<f64>>,
    /// Most-distant group indices per block, in rank order.
    pub topn_indices: Vec<Vec<usize>>,
    /// Mean attention matrix per block (a_b).
    pub block_means: Vec<Tensor>,
    /// Degenerate blocks (identical attention everywhere) that were scored 0.
    pub warnings: Vec<String>,
}

fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Head-mean attention for one group in one block, with padded query rows
/// zeroed so padding never dilutes the comparison.
fn head_mean(mats: &[Tensor], mask: &[bool]) -> Vec<f64> {
    let n = mats[0].data.len();
    let cols = mats[0].cols();
    let mut out = vec![0.0; n];
    for m in mats {
        for (o, v) in out.iter_mut().zip(&m.data) {
            *o += v;
        }
    }
    let h = mats.len() as f64;
    for o in out.iter_mut() {
        *o /= h;
    }
    for (i, &keep) in mask.iter().enumerate() {
        if !keep {
            out[i * cols..(i + 1) * cols].fill(0.0);
        }
    }
    out
}

pub fn compute_bas(stack: &AttentionStack, cfg: &BasConfig) -> Result<BasReport, DataError> {
    cfg.validate()?;
    let m = stack.num_groups();
    if m < 2 {
        return Err(DataError::Contract(format!("BAS needs at least 2 groups, got {m}")));
    }
    let blocks = stack.num_blocks();
    let heads = stack.num_heads();
    if blocks == 0 || heads == 0 {
        return Err(DataError::Contract("attention stack is empty".into()));
    }
    for g in &stack.groups {
        if g.mats.len() != blocks || g.mats.iter().any(|h| h.len() != heads) {
            return Err(DataError::Contract(format!(
                "group {} has a ragged attention stack",
                g.id
            )));
        }
    }

    let topn = ((cfg.ratio_topn * m as f64).round() as usize).max(1).min(m);

    let mut bas = vec![vec![0.0; blocks]; m];
    let mut topn_indices = Vec::with_capacity(blocks);
    let mut block_means = Vec::with_capacity(blocks);
    let mut warnings = Vec::new();

    for b in 0..blocks {
        let group_mats: Vec<Vec<f64>> = stack
            .groups
            .iter()
            .map(|g| head_mean(&g.mats[b], &g.mask))
            .collect();
        let width = group_mats[0].len();
        let shape = stack.groups[0].mats[b][0].shape.clone();

        let mut mean = vec![0.0; width];
        for gm in &group_mats {
            for (o, v) in mean.iter_mut().zip(gm) {
                *o += v;
            }
        }
        for o in mean.iter_mut() {
            *o /= m as f64;
        }

        let dists: Vec<f64> = group_mats.iter().map(|gm| frobenius(gm, &mean)).collect();

        // Descending by distance; ties broken by lower group index.
        let mut rank: Vec<usize> = (0..m).collect();
        rank.sort_by(|&x, &y| dists[y].partial_cmp(&dists[x]).unwrap().then(x.cmp(&y)));
        let top: Vec<usize> = rank[..topn].to_vec();

        let mut top_mean = vec![0.0; width];
        for &idx in &top {
            for (o, v) in top_mean.iter_mut().zip(&group_mats[idx]) {
                *o += v;
            }
        }
        for o in top_mean.iter_mut() {
            *o /= topn as f64;
        }
        let denom = frobenius(&top_mean, &mean);

        if denom == 0.0 {
            warnings.push(format!(
                "block {b}: all attention matrices identical; scores set to 0"
            ));
            // bas stays 0 for every group in this block
        } else {
            for (g, &d) in dists.iter().enumerate() {
                bas[g][b] = (d / denom).min(1.0);
            }
        }

        topn_indices.push(top);
        block_means.push(Tensor::from_vec(shape, mean));
    }

    Ok(BasReport {
        group_ids: stack.groups.iter().map(|g| g.id.clone()).collect(),
        bas,
        topn_indices,
        block_means,
        warnings,
    })
}

/// Write the scores as CSV plus one SVG scatter per block (group index vs
/// score, anomalies marked when labels are supplied). Returns the written
/// paths.
pub fn export_bas_report(
    report: &BasReport,
    labels: Option<&[Option<u8>]>,
    dir: &Path,
) -> Result<Vec<PathBuf>, DataError> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();

    let csv_path = dir.join("bas.csv");
    let file = File::create(&csv_path)
        .map_err(|source| DataError::Io { path: csv_path.clone(), source })?;
    let mut w = BufWriter::new(file);
    let io_err = |source| DataError::Io { path: csv_path.clone(), source };
    if labels.is_some() {
        writeln!(w, "group_id,block,bas,label").map_err(io_err)?;
    } else {
        writeln!(w, "group_id,block,bas").map_err(io_err)?;
    }
    for (g, id) in report.group_ids.iter().enumerate() {
        for (b, &score) in report.bas[g].iter().enumerate() {
            match labels {
                Some(ls) => {
                    let label = ls[g].map(|l| l.to_string()).unwrap_or_default();
                    writeln!(w, "{id},{b},{score},{label}").map_err(io_err)?;
                }
                None => writeln!(w, "{id},{b},{score}").map_err(io_err)?,
            }
        }
    }
    w.flush().map_err(io_err)?;
    written.push(csv_path);

    let blocks = report.bas.first().map(|r| r.len()).unwrap_or(0);
    for b in 0..blocks {
        let path = dir.join(format!("bas_block{b}.svg"));
        let svg = block_scatter_svg(report, labels, b);
        std::fs::write(&path, svg).map_err(|source| DataError::Io { path: path.clone(), source })?;
        written.push(path);
    }
    Ok(written)
}

fn block_scatter_svg(report: &BasReport, labels: Option<&[Option<u8>]>, block: usize) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const ML: f64 = 60.0; // left margin
    const MB: f64 = 50.0; // bottom margin
    const MT: f64 = 30.0;
    const MR: f64 = 20.0;
    let n = report.group_ids.len().max(1);
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">block {} attention-anomaly scores</text>\n",
        ML, block
    ));
    // axes
    s.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    s.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    ));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = H - MB - tick * plot_h;
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{ML}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            ML - 4.0
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{tick}</text>\n",
            ML - 8.0,
            y + 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">group index</text>\n",
        ML + plot_w / 2.0,
        H - 12.0
    ));
    for (g, row) in report.bas.iter().enumerate() {
        let x = ML + (g as f64 + 0.5) / n as f64 * plot_w;
        let y = H - MB - row[block].clamp(0.0, 1.0) * plot_h;
        let abnormal = labels.and_then(|ls| ls[g]).map(|l| l == 1).unwrap_or(false);
        let (fill, r) = if abnormal { ("crimson", 3.5) } else { ("steelblue", 2.5) };
        s.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r}\" fill=\"{fill}\" fill-opacity=\"0.8\"/>\n"
        ));
    }
    s.push_str("</svg>\n");
    s
}
