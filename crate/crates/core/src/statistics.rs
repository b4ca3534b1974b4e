//! The scaled maximum-excursion statistic and its sliding variants.
//!
//! For a trajectory of `m` steps the statistic is the largest distance from
//! the starting point divided by `sqrt(m * delta * sigma2_hat)`, where
//! `sigma2_hat` is the mean squared step per coordinate and per unit time.
//! Under Brownian motion its law depends only on `m`: small values point to
//! subdiffusion, large values to superdiffusion.

use serde::{Deserialize, Serialize};

use crate::trajectory::{Segment, Trajectory};
use crate::{Error, Result};

/// Diffusion type assigned to a (sub)trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiffusionLabel {
    Subdiffusive,
    Brownian,
    Superdiffusive,
    Undetermined,
}

/// Lower and upper cut-off values of the three-level classifier.
///
/// `gamma2` may be infinite, which disables the superdiffusive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl ThresholdPair {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(gamma1.is_finite() && gamma1 >= 0.0 && gamma1 < gamma2) || gamma2.is_nan() {
            return Err(Error::InvalidParam(format!(
                "cut-off values must satisfy 0 <= gamma1 < gamma2, got ({gamma1}, {gamma2})"
            )));
        }
        Ok(Self { gamma1, gamma2 })
    }

    /// Step function: 1 below `gamma1`, 2 above `gamma2`, 0 in between.
    pub fn phi(&self, x: f64) -> u8 {
        if x < self.gamma1 {
            1
        } else if x > self.gamma2 {
            2
        } else {
            0
        }
    }

    /// Three-decision label for a statistic value.
    pub fn classify(&self, x: f64) -> DiffusionLabel {
        match self.phi(x) {
            1 => DiffusionLabel::Subdiffusive,
            2 => DiffusionLabel::Superdiffusive,
            _ => DiffusionLabel::Brownian,
        }
    }
}

/// Diffusion coefficient estimate over `seg`: the sum of squared steps
/// divided by `m * d * delta`.
pub fn estimate_sigma2(traj: &Trajectory, seg: Segment) -> Result<f64> {
    traj.check_segment(seg)?;
    let m = seg.n_steps();
    let mut sum = 0.0;
    for j in seg.start + 1..=seg.end {
        sum += traj.squared_distance(j, j - 1);
    }
    if sum == 0.0 {
        return Err(Error::NoMotion);
    }
    Ok(sum / (m as f64 * traj.dim() as f64 * traj.grid().delta()))
}

/// Excursion statistic of the whole trajectory.
pub fn statistic_t(traj: &Trajectory) -> Result<f64> {
    statistic_t_segment(traj, traj.full_segment())
}

/// Excursion statistic of the points `seg.start..=seg.end`, measured from
/// `seg.start`.
pub fn statistic_t_segment(traj: &Trajectory, seg: Segment) -> Result<f64> {
    traj.check_segment(seg)?;
    if seg.n_steps() < 2 {
        return Err(Error::TooShort(format!(
            "statistic needs at least 2 steps, segment has {}",
            seg.n_steps()
        )));
    }
    let sigma2 = estimate_sigma2(traj, seg)?;
    let mut max = 0.0f64;
    for i in seg.start + 1..=seg.end {
        max = max.max(traj.distance(i, seg.start));
    }
    let span = seg.n_steps() as f64 * traj.grid().delta();
    Ok(max / (span * sigma2).sqrt())
}

/// Backward and forward statistics for every index `i` in `k..=n-k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStatistics {
    pub k: usize,
    /// `backward[j]` belongs to grid index `k + j`.
    pub backward: Vec<f64>,
    pub forward: Vec<f64>,
}

impl WindowStatistics {
    pub fn first_index(&self) -> usize {
        self.k
    }

    pub fn last_index(&self) -> usize {
        self.k + self.backward.len() - 1
    }

    pub fn len(&self) -> usize {
        self.backward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backward.is_empty()
    }
}

fn check_window(traj: &Trajectory, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParam("window size must be at least 1".into()));
    }
    if 2 * k > traj.n_steps() {
        return Err(Error::WindowTooLarge {
            k,
            n_steps: traj.n_steps(),
        });
    }
    Ok(())
}

/// Computes the backward statistic `B_i` and forward statistic `A_i` for each
/// `i` in `k..=n-k`.
///
/// Each side uses its own `k`-step window both for the maximal excursion from
/// `X_i` and for the diffusion estimate; both denominators use the time span
/// `k * delta`. Squared steps are accumulated moving outward from `i`, so the
/// backward pass of a time-reversed path reproduces the forward pass exactly.
pub fn window_statistics(traj: &Trajectory, k: usize) -> Result<WindowStatistics> {
    check_window(traj, k)?;
    let n = traj.n_steps();
    let dim = traj.dim() as f64;
    let delta = traj.grid().delta();
    // step_sq[j] = |X_j - X_{j-1}|^2 for j >= 1.
    let step_sq: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).map(|j| traj.squared_distance(j, j - 1)))
        .collect();
    let span_sqrt = (k as f64 * delta).sqrt();
    let norm = k as f64 * dim * delta;

    let count = n - 2 * k + 1;
    let mut backward = Vec::with_capacity(count);
    let mut forward = Vec::with_capacity(count);
    for i in k..=n - k {
        let mut max_b = 0.0f64;
        let mut sum_b = 0.0;
        let mut max_a = 0.0f64;
        let mut sum_a = 0.0;
        for j in 1..=k {
            max_b = max_b.max(traj.distance(i - j, i));
            sum_b += step_sq[i - j + 1];
            max_a = max_a.max(traj.distance(i + j, i));
            sum_a += step_sq[i + j];
        }
        if sum_b == 0.0 {
            return Err(Error::NoMotionWindow {
                index: i,
                side: "backward",
            });
        }
        if sum_a == 0.0 {
            return Err(Error::NoMotionWindow {
                index: i,
                side: "forward",
            });
        }
        backward.push(max_b / (span_sqrt * (sum_b / norm).sqrt()));
        forward.push(max_a / (span_sqrt * (sum_a / norm).sqrt()));
    }
    Ok(WindowStatistics {
        k,
        backward,
        forward,
    })
}

/// Window statistics with their classification and the disagreement signal
/// `Q_i = phi(A_i) - phi(B_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingStats {
    pub windows: WindowStatistics,
    pub thresholds: ThresholdPair,
    pub phi_b: Vec<u8>,
    pub phi_a: Vec<u8>,
    pub q: Vec<i8>,
}

impl SlidingStats {
    pub fn from_windows(windows: WindowStatistics, thresholds: ThresholdPair) -> Self {
        let phi_b: Vec<u8> = windows
            .backward
            .iter()
            .map(|&b| thresholds.phi(b))
            .collect();
        let phi_a: Vec<u8> = windows.forward.iter().map(|&a| thresholds.phi(a)).collect();
        let q = phi_a
            .iter()
            .zip(&phi_b)
            .map(|(&a, &b)| a as i8 - b as i8)
            .collect();
        Self {
            windows,
            thresholds,
            phi_b,
            phi_a,
            q,
        }
    }

    pub fn k(&self) -> usize {
        self.windows.k
    }

    pub fn first_index(&self) -> usize {
        self.windows.first_index()
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `B_i` at grid index `i`.
    pub fn b(&self, i: usize) -> f64 {
        self.windows.backward[i - self.first_index()]
    }

    /// `A_i` at grid index `i`.
    pub fn a(&self, i: usize) -> f64 {
        self.windows.forward[i - self.first_index()]
    }

    pub fn q_at(&self, i: usize) -> i8 {
        self.q[i - self.first_index()]
    }

    /// Rows `(i, B_i, A_i, Q_i)` in index order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, f64, f64, i8)> + '_ {
        let first = self.first_index();
        (0..self.len()).map(move |j| {
            (
                first + j,
                self.windows.backward[j],
                self.windows.forward[j],
                self.q[j],
            )
        })
    }
}

pub fn sliding_stats(
    traj: &Trajectory,
    k: usize,
    thresholds: ThresholdPair,
) -> Result<SlidingStats> {
    Ok(SlidingStats::from_windows(
        window_statistics(traj, k)?,
        thresholds,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsdPoint {
    pub lag: usize,
    pub time_lag: f64,
    pub msd: f64,
}

/// Time-averaged mean squared displacement for lags `1..=max_lag`.
pub fn empirical_msd(traj: &Trajectory, max_lag: usize) -> Result<Vec<MsdPoint>> {
    let n = traj.n_steps();
    if max_lag >= n {
        return Err(Error::TooShort(format!(
            "maximum lag {max_lag} needs more than {n} steps"
        )));
    }
    Ok((1..=max_lag)
        .map(|lag| {
            let count = n + 1 - lag;
            let sum: f64 = (0..count).map(|j| traj.squared_distance(j + lag, j)).sum();
            MsdPoint {
                lag,
                time_lag: lag as f64 * traj.grid().delta(),
                msd: sum / count as f64,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::simulators::gen_brownian;
    use crate::trajectory::TimeGrid;

    fn path(points: &[[f64; 2]], delta: f64) -> Trajectory {
        Trajectory::from_points(TimeGrid::new(0.0, delta, points.len() - 1).unwrap(), points)
            .unwrap()
    }

    fn brownian(n: usize, seed: u64) -> Trajectory {
        gen_brownian(&TimeGrid::unit(n).unwrap(), 2, 1.0, &mut seeded_rng(seed)).unwrap()
    }

    /// Direct transcription of the window definitions, recomputing every
    /// quantity from positions.
    fn naive_windows(traj: &Trajectory, k: usize) -> (Vec<f64>, Vec<f64>) {
        let n = traj.n_steps();
        let d = traj.dim() as f64;
        let dt = traj.grid().delta();
        let mut bs = Vec::new();
        let mut as_ = Vec::new();
        for i in k..=n - k {
            let mut mb = 0.0f64;
            let mut sb = 0.0;
            for j in 1..=k {
                let p = traj.position(i - j);
                let c = traj.position(i);
                mb = mb.max(
                    p.iter()
                        .zip(c)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt(),
                );
                let q = traj.position(i - j + 1);
                sb += q.iter().zip(p).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            }
            let mut ma = 0.0f64;
            let mut sa = 0.0;
            for j in 1..=k {
                let p = traj.position(i + j);
                let c = traj.position(i);
                ma = ma.max(
                    p.iter()
                        .zip(c)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt(),
                );
                let q = traj.position(i + j - 1);
                sa += p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            }
            let span = (k as f64 * dt).sqrt();
            bs.push(mb / (span * (sb / (k as f64 * d * dt)).sqrt()));
            as_.push(ma / (span * (sa / (k as f64 * d * dt)).sqrt()));
        }
        (bs, as_)
    }

    #[test]
    fn sigma2_hand_example() {
        let t = path(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], 1.0);
        assert_eq!(estimate_sigma2(&t, t.full_segment()).unwrap(), 0.5);
    }

    #[test]
    fn sigma2_no_motion() {
        let t = path(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]], 1.0);
        assert!(matches!(
            estimate_sigma2(&t, t.full_segment()),
            Err(Error::NoMotion)
        ));
        assert!(matches!(statistic_t(&t), Err(Error::NoMotion)));
    }

    #[test]
    fn sigma2_scales_quadratically() {
        let t = brownian(40, 1);
        let s = 3.5;
        let a = estimate_sigma2(&t, t.full_segment()).unwrap();
        let b = estimate_sigma2(&t.scaled(s), t.full_segment()).unwrap();
        assert!((b / a - s * s).abs() < 1e-12);
    }

    #[test]
    fn statistic_hand_example() {
        let t = path(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], 1.0);
        assert_eq!(statistic_t(&t).unwrap(), 2.0);
    }

    #[test]
    fn statistic_needs_two_steps() {
        let t = path(&[[0.0, 0.0], [1.0, 0.0]], 1.0);
        assert!(matches!(statistic_t(&t), Err(Error::TooShort(_))));
    }

    #[test]
    fn statistic_invariances() {
        let t = brownian(120, 2);
        let base = statistic_t(&t).unwrap();
        for s in [1e-3, 0.7, 1e3] {
            let v = statistic_t(&t.scaled(s)).unwrap();
            assert!((v - base).abs() <= 1e-12 * base);
        }
        let relabelled = t.with_delta(2.0).unwrap();
        let v = statistic_t(&relabelled).unwrap();
        assert!((v - base).abs() <= 1e-12 * base);
    }

    #[test]
    fn phi_step_function() {
        let th = ThresholdPair::new(0.74, 3.09).unwrap();
        assert_eq!(th.phi(0.5), 1);
        assert_eq!(th.phi(2.0), 0);
        assert_eq!(th.phi(4.0), 2);
        assert_eq!(th.phi(0.74), 0);
        assert_eq!(th.phi(3.09), 0);
    }

    #[test]
    fn threshold_pair_validation() {
        assert!(ThresholdPair::new(1.0, 1.0).is_err());
        assert!(ThresholdPair::new(-0.1, 1.0).is_err());
        assert!(ThresholdPair::new(0.0, f64::INFINITY).is_ok());
        assert!(ThresholdPair::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn sliding_matches_naive_bitwise() {
        for (seed, k) in [(3, 1), (4, 7), (5, 30), (6, 50)] {
            let t = brownian(100, seed);
            let w = window_statistics(&t, k).unwrap();
            let (b, a) = naive_windows(&t, k);
            assert_eq!(w.backward, b);
            assert_eq!(w.forward, a);
        }
    }

    #[test]
    fn sliding_index_range() {
        let t = brownian(100, 9);
        let s = sliding_stats(&t, 30, ThresholdPair::new(0.7, 3.0).unwrap()).unwrap();
        assert_eq!(s.first_index(), 30);
        assert_eq!(s.len(), 41);
        assert_eq!(s.windows.last_index(), 70);
        for (i, b, a, q) in s.rows() {
            assert!(b > 0.0 && a > 0.0);
            assert_eq!(q, s.phi_a[i - 30] as i8 - s.phi_b[i - 30] as i8);
        }
    }

    #[test]
    fn window_too_large() {
        let t = brownian(10, 1);
        assert!(matches!(
            window_statistics(&t, 6),
            Err(Error::WindowTooLarge { .. })
        ));
        assert!(window_statistics(&t, 5).is_ok());
        assert!(matches!(
            window_statistics(&t, 0),
            Err(Error::InvalidParam(_))
        ));
    }

    #[test]
    fn frozen_window_is_reported() {
        let mut pts: Vec<[f64; 2]> = (0..21).map(|k| [k as f64, 0.0]).collect();
        for p in pts.iter_mut().skip(12) {
            *p = [12.0, 0.0];
        }
        let t = path(&pts, 1.0);
        match window_statistics(&t, 5) {
            Err(Error::NoMotionWindow { index, side }) => {
                assert_eq!(index, 12);
                assert_eq!(side, "forward");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn time_reversal_swaps_sides() {
        let t = brownian(90, 12);
        let k = 15;
        let w = window_statistics(&t, k).unwrap();
        let r = window_statistics(&t.reversed(), k).unwrap();
        let len = w.len();
        for j in 0..len {
            assert_eq!(r.backward[j], w.forward[len - 1 - j]);
            assert_eq!(r.forward[j], w.backward[len - 1 - j]);
        }
    }

    #[test]
    fn msd_of_straight_path() {
        let pts: Vec<[f64; 2]> = (0..20).map(|k| [k as f64, 0.0]).collect();
        let t = path(&pts, 1.0);
        let msd = empirical_msd(&t, 5).unwrap();
        for p in msd {
            assert_eq!(p.msd, (p.lag * p.lag) as f64);
        }
        assert!(matches!(empirical_msd(&t, 19), Err(Error::TooShort(_))));
    }
}
