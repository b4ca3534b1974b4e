//! The sliding-window change-point procedure.
//!
//! 1. Compute the backward/forward statistics for `i = k..=n-k`.
//! 2. Classify both sides with the cut-off pair and form `Q_i`.
//! 3. Mark every length-`c` window holding at least `c*` indices with
//!    `Q_i != 0`; a run of consecutive marked windows spans one cluster.
//! 4. In each cluster the change point is the index where `|B_i - A_i|` is
//!    largest.
//!
//! Optionally the segments between change points are labelled with the
//! whole-segment excursion test, and change points whose neighbouring
//! segments share a label are dropped.

use serde::{Deserialize, Serialize};

use crate::calibration::SegmentQuantiles;
use crate::statistics::{
    sliding_stats, statistic_t_segment, DiffusionLabel, SlidingStats, ThresholdPair,
};
use crate::trajectory::{Segment, Trajectory};
use crate::{Error, Result};

/// Segments with fewer points than this are labelled `Undetermined`.
pub const MIN_LABEL_POINTS: usize = 10;

/// Default cluster window for window size `k`: `max(2, floor(k / 2))`.
pub fn default_c(k: usize) -> usize {
    (k / 2).max(2)
}

/// Default cluster count threshold: `ceil(0.75 c)`.
pub fn default_c_star(c: usize) -> usize {
    (3 * c).div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub k: usize,
    pub c: usize,
    pub c_star: usize,
    pub thresholds: ThresholdPair,
    pub alpha: f64,
}

impl DetectionConfig {
    /// Config with the default cluster parameters and `alpha = 0.05`.
    pub fn new(k: usize, thresholds: ThresholdPair) -> Self {
        let c = default_c(k);
        Self {
            k,
            c,
            c_star: default_c_star(c),
            thresholds,
            alpha: 0.05,
        }
    }

    pub fn with_cluster(mut self, c: usize, c_star: usize) -> Self {
        self.c = c;
        self.c_star = c_star;
        self
    }

    pub fn validate(&self, n_steps: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParam("window size must be at least 1".into()));
        }
        if 2 * self.k > n_steps {
            return Err(Error::WindowTooLarge { k: self.k, n_steps });
        }
        if self.c_star == 0 || self.c_star > self.c {
            return Err(Error::InvalidParam(format!(
                "cluster parameters need 1 <= c* <= c, got c = {}, c* = {}",
                self.c, self.c_star
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParam(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Contiguous range of grid indices `start..=end` grouping potential change
/// points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub start: usize,
    pub end: usize,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..=self.end).contains(&i)
    }
}

/// Groups the nonzero entries of `q` into clusters.
///
/// `q[j]` belongs to grid index `first_index + j`. A window start `m`
/// qualifies when `q[m..m + c]` holds at least `c_star` nonzero entries. A
/// run of consecutive qualifying starts `m..=m'` yields the cluster
/// `m..=m' + c - 1`, the largest range all of whose length-`c` windows
/// qualify. When two such ranges overlap, the earlier one stops just before
/// the later one begins.
pub fn find_clusters(q: &[i8], first_index: usize, c: usize, c_star: usize) -> Vec<Cluster> {
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    if c == 0 || q.len() < c {
        return Vec::new();
    }
    let mut count = q[..c].iter().filter(|&&v| v != 0).count();
    let mut previous: Option<usize> = None;
    for m in 0..=q.len() - c {
        if m > 0 {
            count -= (q[m - 1] != 0) as usize;
            count += (q[m + c - 1] != 0) as usize;
        }
        if count < c_star {
            continue;
        }
        match (previous, ranges.last_mut()) {
            (Some(p), Some(last)) if p + 1 == m => last.1 = m + c - 1,
            _ => ranges.push((m, m + c - 1)),
        }
        previous = Some(m);
    }
    let next_starts: Vec<usize> = ranges.iter().skip(1).map(|r| r.0).collect();
    ranges
        .iter()
        .enumerate()
        .map(|(j, &(s, e))| {
            let e = match next_starts.get(j) {
                Some(&next) if next <= e => next - 1,
                _ => e,
            };
            Cluster {
                start: first_index + s,
                end: first_index + e,
            }
        })
        .collect()
}

/// Index of the largest `|B_i - A_i|` inside each cluster, ties to the
/// smallest index.
pub fn estimate_change_points(stats: &SlidingStats, clusters: &[Cluster]) -> Vec<usize> {
    clusters
        .iter()
        .map(|cl| {
            let mut best = cl.start;
            let mut best_gap = (stats.b(cl.start) - stats.a(cl.start)).abs();
            for i in cl.start + 1..=cl.end {
                let gap = (stats.b(i) - stats.a(i)).abs();
                if gap > best_gap {
                    best = i;
                    best_gap = gap;
                }
            }
            best
        })
        .collect()
}

/// Label of one segment between consecutive change points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentLabel {
    pub start: usize,
    pub end: usize,
    pub label: DiffusionLabel,
    /// Excursion statistic of the segment, absent when undetermined.
    #[serde(rename = "T")]
    pub statistic: Option<f64>,
}

/// Segments delimited by `change_points` over the whole trajectory.
pub fn segments_between(n_steps: usize, change_points: &[usize]) -> Vec<Segment> {
    let mut bounds = Vec::with_capacity(change_points.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(change_points);
    bounds.push(n_steps);
    bounds
        .windows(2)
        .map(|w| Segment::new(w[0], w[1]))
        .collect()
}

/// Three-decision label of a single segment using the quantiles calibrated
/// for the nearest reference length.
pub fn label_segment(
    traj: &Trajectory,
    seg: Segment,
    quantiles: &SegmentQuantiles,
) -> SegmentLabel {
    let undetermined = SegmentLabel {
        start: seg.start,
        end: seg.end,
        label: DiffusionLabel::Undetermined,
        statistic: None,
    };
    if seg.n_points() < MIN_LABEL_POINTS {
        return undetermined;
    }
    match statistic_t_segment(traj, seg) {
        Ok(t) => SegmentLabel {
            label: quantiles.nearest(seg.n_steps()).classify(t),
            statistic: Some(t),
            ..undetermined
        },
        Err(_) => undetermined,
    }
}

pub fn label_segments(
    traj: &Trajectory,
    change_points: &[usize],
    quantiles: &SegmentQuantiles,
) -> Vec<SegmentLabel> {
    segments_between(traj.n_steps(), change_points)
        .into_iter()
        .map(|seg| label_segment(traj, seg, quantiles))
        .collect()
}

/// Repeatedly removes the first change point whose two neighbouring segments
/// carry the same determined label; the fused segment is relabelled with
/// `relabel`.
pub fn merge_same_label_with<F>(
    change_points: &[usize],
    labels: &[SegmentLabel],
    mut relabel: F,
) -> (Vec<usize>, Vec<SegmentLabel>)
where
    F: FnMut(Segment) -> SegmentLabel,
{
    let mut points = change_points.to_vec();
    let mut labels = labels.to_vec();
    debug_assert_eq!(labels.len(), points.len() + 1);
    while let Some(j) = labels
        .windows(2)
        .position(|w| w[0].label == w[1].label && w[0].label != DiffusionLabel::Undetermined)
    {
        let fused = Segment::new(labels[j].start, labels[j + 1].end);
        points.remove(j);
        labels.remove(j + 1);
        labels[j] = relabel(fused);
    }
    (points, labels)
}

pub fn merge_same_label(
    traj: &Trajectory,
    change_points: &[usize],
    labels: &[SegmentLabel],
    quantiles: &SegmentQuantiles,
) -> (Vec<usize>, Vec<SegmentLabel>) {
    merge_same_label_with(change_points, labels, |seg| {
        label_segment(traj, seg, quantiles)
    })
}

/// Result of one run of the procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointReport {
    pub config: DetectionConfig,
    pub clusters: Vec<Cluster>,
    /// One estimate per cluster, before any labelling.
    pub change_points: Vec<usize>,
    /// Segment labels for `change_points`; empty when labelling is off.
    pub raw_labels: Vec<SegmentLabel>,
    /// Change points that survive the same-label merge (equal to
    /// `change_points` when labelling is off).
    pub merged_change_points: Vec<usize>,
    pub merged_labels: Vec<SegmentLabel>,
}

impl ChangePointReport {
    /// Number of detected change points before merging.
    pub fn n_detected(&self) -> usize {
        self.change_points.len()
    }
}

/// Change points only, without labelling.
pub fn detect(
    traj: &Trajectory,
    config: &DetectionConfig,
) -> Result<(SlidingStats, Vec<Cluster>, Vec<usize>)> {
    config.validate(traj.n_steps())?;
    let stats = sliding_stats(traj, config.k, config.thresholds)?;
    let clusters = find_clusters(&stats.q, stats.first_index(), config.c, config.c_star);
    let points = estimate_change_points(&stats, &clusters);
    Ok((stats, clusters, points))
}

/// Runs the full procedure; `labelling` enables segment labelling and the
/// same-label merge.
pub fn run_procedure(
    traj: &Trajectory,
    config: &DetectionConfig,
    labelling: Option<&SegmentQuantiles>,
) -> Result<ChangePointReport> {
    let (_, clusters, change_points) = detect(traj, config)?;
    let (raw_labels, merged_change_points, merged_labels) = match labelling {
        Some(quantiles) => {
            let raw = label_segments(traj, &change_points, quantiles);
            let (points, labels) = merge_same_label(traj, &change_points, &raw, quantiles);
            (raw, points, labels)
        }
        None => (Vec::new(), change_points.clone(), Vec::new()),
    };
    Ok(ChangePointReport {
        config: *config,
        clusters,
        change_points,
        raw_labels,
        merged_change_points,
        merged_labels,
    })
}
