//! Monte Carlo calibration of the cut-off values.
//!
//! Under a fully Brownian trajectory, let `d_i = min(B_i, A_i)` and
//! `D_i = max(B_i, A_i)`. For each window start `r` in `k..=n-k-c+1` take
//! `s_r`, the `q`-th smallest of `d_r..d_{r+c-1}`, and `S_r`, the `q`-th
//! largest of `D_r..D_{r+c-1}`. The lower cut-off is the
//! `alpha/2` quantile of `min_r s_r` and the upper cut-off the
//! `1 - alpha/2` quantile of `max_r S_r`. The strict variant uses
//! `q = ceil(c*/2)` and provably bounds the false-detection probability by
//! `alpha`; the relaxed variant uses `q = c*` and is tighter in practice.
//!
//! Every replicate draws from its own `(seed, index)` stream and the
//! collected extremes are sorted before quantile extraction, so results are
//! identical for any number of worker threads.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{self, default_c, default_c_star, DetectionConfig};
use crate::rng::replicate_rng;
use crate::simulators::gen_brownian;
use crate::statistics::{statistic_t, window_statistics, ThresholdPair};
use crate::trajectory::{TimeGrid, Trajectory};
use crate::{Error, Result, DEFAULT_SEED, VERSION};

/// Schema version of the threshold cache file.
pub const CACHE_SCHEMA_VERSION: u32 = 1;

/// Replicates used when the caller does not specify a count.
pub const DEFAULT_REPLICATES: usize = 10_001;

/// Minimum replicates accepted by the calibration routines.
pub const MIN_CALIBRATION_REPLICATES: usize = 1_000;

/// Minimum replicates accepted by the type-I error estimate.
pub const MIN_TYPE1_REPLICATES: usize = 500;

/// Reference segment lengths for the labelling quantiles.
pub const LABEL_LENGTHS: [usize; 7] = [25, 50, 100, 150, 200, 300, 500];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Order statistic of rank `ceil(c*/2)`.
    Strict,
    /// Order statistic of rank `c*`.
    Relaxed,
    /// Quantiles of the whole-segment excursion statistic.
    SegmentTest,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(Variant::Strict),
            "relaxed" => Ok(Variant::Relaxed),
            "segment_test" | "segment-test" | "segment" => Ok(Variant::SegmentTest),
            other => Err(Error::InvalidParam(format!("unknown variant {other:?}"))),
        }
    }
}

/// Everything that determines a calibrated pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationKey {
    pub n: usize,
    pub k: usize,
    pub c: usize,
    pub c_star: usize,
    pub alpha: f64,
    pub variant: Variant,
    pub replicates: usize,
    pub seed: u64,
}

impl CalibrationKey {
    /// Key with default cluster parameters, `alpha = 0.05`, 10 001 replicates
    /// and the library's default seed.
    pub fn with_defaults(n: usize, k: usize, variant: Variant) -> Self {
        let c = default_c(k);
        Self {
            n,
            k,
            c,
            c_star: default_c_star(c),
            alpha: 0.05,
            variant,
            replicates: DEFAULT_REPLICATES,
            seed: DEFAULT_SEED,
        }
    }

    /// Key for the whole-segment quantiles at length `n`.
    pub fn segment_test(n: usize, alpha: f64, replicates: usize, seed: u64) -> Self {
        Self {
            n,
            k: 0,
            c: 0,
            c_star: 0,
            alpha,
            variant: Variant::SegmentTest,
            replicates,
            seed,
        }
    }

    /// Key matching a detection configuration on trajectories of `n` steps.
    pub fn for_config(
        n: usize,
        config: &DetectionConfig,
        variant: Variant,
        replicates: usize,
        seed: u64,
    ) -> Self {
        Self {
            n,
            k: config.k,
            c: config.c,
            c_star: config.c_star,
            alpha: config.alpha,
            variant,
            replicates,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.replicates < MIN_CALIBRATION_REPLICATES {
            return Err(Error::InvalidParam(format!(
                "calibration needs at least {MIN_CALIBRATION_REPLICATES} replicates, got {}",
                self.replicates
            )));
        }
        if self.variant == Variant::SegmentTest {
            if self.n < 2 {
                return Err(Error::InvalidParam(
                    "segment length must be at least 2".into(),
                ));
            }
            return Ok(());
        }
        if self.k == 0 || 2 * self.k > self.n {
            return Err(Error::InvalidParam(format!(
                "window size {} invalid for {} steps",
                self.k, self.n
            )));
        }
        if self.c == 0 || self.c > self.n - 2 * self.k + 1 {
            return Err(Error::InvalidParam(format!(
                "cluster window {} must lie in 1..={}",
                self.c,
                self.n - 2 * self.k + 1
            )));
        }
        if self.c_star == 0 || self.c_star > self.c {
            return Err(Error::InvalidParam(format!(
                "c* must lie in 1..={}, got {}",
                self.c, self.c_star
            )));
        }
        Ok(())
    }

    /// Ascending 1-based ranks `(q, c - q + 1)` of the order statistics taken
    /// on the minima and maxima; the second is the `q`-th largest.
    pub fn ranks(&self) -> Result<(usize, usize)> {
        let q = match self.variant {
            Variant::Strict => self.c_star.div_ceil(2),
            Variant::Relaxed => self.c_star,
            Variant::SegmentTest => {
                return Err(Error::InvalidParam(
                    "segment test has no order statistics".into(),
                ))
            }
        };
        if q == 0 || q >= self.c {
            return Err(Error::Degenerate(format!(
                "order-statistic rank {q} leaves no room in a window of {}",
                self.c
            )));
        }
        Ok((q, self.c - q + 1))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// 0-based position of the empirical quantile of order `p` in a sorted array
/// of `len` values: the 1-based index `floor(p * len)`, clamped to `1..=len`.
pub fn quantile_position(p: f64, len: usize) -> usize {
    let idx = (p * len as f64).floor() as usize;
    idx.clamp(1, len) - 1
}

fn sorted(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values
}

/// Brownian trajectory for replicate `index`.
pub fn null_replicate(
    n: usize,
    sigma: f64,
    delta: f64,
    seed: u64,
    index: u64,
) -> Result<Trajectory> {
    let grid = TimeGrid::new(0.0, delta, n)?;
    gen_brownian(&grid, 2, sigma, &mut replicate_rng(seed, index))
}

/// `(min_r s_r, max_r S_r)` for one trajectory's window statistics, with
/// 1-based ranks `low_rank` and `high_rank`.
pub fn window_extremes(
    backward: &[f64],
    forward: &[f64],
    c: usize,
    low_rank: usize,
    high_rank: usize,
) -> (f64, f64) {
    let d: Vec<f64> = backward
        .iter()
        .zip(forward)
        .map(|(b, a)| b.min(*a))
        .collect();
    let big: Vec<f64> = backward
        .iter()
        .zip(forward)
        .map(|(b, a)| b.max(*a))
        .collect();
    let mut buf = vec![0.0; c];
    let mut lowest = f64::INFINITY;
    let mut highest = f64::NEG_INFINITY;
    for r in 0..=d.len() - c {
        buf.copy_from_slice(&d[r..r + c]);
        let (_, s, _) = buf.select_nth_unstable_by(low_rank - 1, f64::total_cmp);
        lowest = lowest.min(*s);
        buf.copy_from_slice(&big[r..r + c]);
        let (_, s, _) = buf.select_nth_unstable_by(high_rank - 1, f64::total_cmp);
        highest = highest.max(*s);
    }
    (lowest, highest)
}

/// Calibrates several keys that differ only in `variant` on one shared set
/// of replicates, simulated with diffusion coefficient `sigma` and step
/// `delta`.
pub fn calibrate_variants_scaled(
    base: &CalibrationKey,
    variants: &[Variant],
    sigma: f64,
    delta: f64,
) -> Result<Vec<ThresholdPair>> {
    let keys: Vec<CalibrationKey> = variants
        .iter()
        .map(|&variant| CalibrationKey { variant, ..*base })
        .collect();
    let mut ranks = Vec::with_capacity(keys.len());
    for key in &keys {
        key.validate()?;
        ranks.push(key.ranks()?);
    }
    let per_replicate: Vec<Vec<(f64, f64)>> = (0..base.replicates as u64)
        .into_par_iter()
        .map(|idx| {
            let traj = null_replicate(base.n, sigma, delta, base.seed, idx)?;
            let w = window_statistics(&traj, base.k)?;
            Ok(ranks
                .iter()
                .map(|&(lo, hi)| window_extremes(&w.backward, &w.forward, base.c, lo, hi))
                .collect())
        })
        .collect::<Result<_>>()?;

    let n_rep = base.replicates;
    keys.iter()
        .enumerate()
        .map(|(v, key)| {
            let minima = sorted(per_replicate.iter().map(|r| r[v].0).collect());
            let maxima = sorted(per_replicate.iter().map(|r| r[v].1).collect());
            let gamma1 = minima[quantile_position(key.alpha / 2.0, n_rep)];
            let gamma2 = maxima[quantile_position(1.0 - key.alpha / 2.0, n_rep)];
            ThresholdPair::new(gamma1, gamma2).map_err(|_| {
                Error::Degenerate(format!(
                    "calibrated pair ({gamma1}, {gamma2}) is not ordered"
                ))
            })
        })
        .collect()
}

/// Strict and relaxed pairs from the same replicates.
pub fn calibrate_strict_and_relaxed(
    base: &CalibrationKey,
) -> Result<(ThresholdPair, ThresholdPair)> {
    let pairs = calibrate_variants_scaled(base, &[Variant::Strict, Variant::Relaxed], 1.0, 1.0)?;
    Ok((pairs[0], pairs[1]))
}

/// Cut-off pair for `key`, simulated with unit diffusion coefficient and
/// unit time step.
pub fn calibrate(key: &CalibrationKey) -> Result<ThresholdPair> {
    calibrate_scaled(key, 1.0, 1.0)
}

pub fn calibrate_scaled(key: &CalibrationKey, sigma: f64, delta: f64) -> Result<ThresholdPair> {
    match key.variant {
        Variant::SegmentTest => {
            calibrate_segment_test_scaled(key.n, key.alpha, key.replicates, key.seed, sigma, delta)
        }
        variant => Ok(calibrate_variants_scaled(key, &[variant], sigma, delta)?[0]),
    }
}

/// Quantiles `(q1, q2)` of orders `alpha/2` and `1 - alpha/2` of the
/// excursion statistic over Brownian trajectories of `n` steps.
pub fn calibrate_segment_test(
    n: usize,
    alpha: f64,
    replicates: usize,
    seed: u64,
) -> Result<ThresholdPair> {
    calibrate_segment_test_scaled(n, alpha, replicates, seed, 1.0, 1.0)
}

pub fn calibrate_segment_test_scaled(
    n: usize,
    alpha: f64,
    replicates: usize,
    seed: u64,
    sigma: f64,
    delta: f64,
) -> Result<ThresholdPair> {
    CalibrationKey::segment_test(n, alpha, replicates, seed).validate()?;
    let values = sorted(
        (0..replicates as u64)
            .into_par_iter()
            .map(|idx| statistic_t(&null_replicate(n, sigma, delta, seed, idx)?))
            .collect::<Result<_>>()?,
    );
    let q1 = values[quantile_position(alpha / 2.0, replicates)];
    let q2 = values[quantile_position(1.0 - alpha / 2.0, replicates)];
    ThresholdPair::new(q1, q2)
        .map_err(|_| Error::Degenerate(format!("segment quantiles ({q1}, {q2}) are not ordered")))
}

/// Labelling quantiles on a grid of reference lengths; lookups use the
/// nearest length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentQuantiles {
    pub alpha: f64,
    /// `(length, pair)` sorted by length.
    pub entries: Vec<(usize, ThresholdPair)>,
}

impl SegmentQuantiles {
    pub fn new(alpha: f64, mut entries: Vec<(usize, ThresholdPair)>) -> Result<Self> {
        check_alpha(alpha)?;
        if entries.is_empty() {
            return Err(Error::InvalidParam("no segment quantiles supplied".into()));
        }
        entries.sort_by_key(|(len, _)| *len);
        Ok(Self { alpha, entries })
    }

    /// Calibrates every length in [`LABEL_LENGTHS`].
    pub fn calibrate(alpha: f64, replicates: usize, seed: u64) -> Result<Self> {
        let entries = LABEL_LENGTHS
            .iter()
            .map(|&n| Ok((n, calibrate_segment_test(n, alpha, replicates, seed)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(alpha, entries)
    }

    /// Fetches every length in [`LABEL_LENGTHS`] through `source`.
    pub fn from_source<S: ThresholdSource + ?Sized>(
        source: &mut S,
        alpha: f64,
        replicates: usize,
        seed: u64,
    ) -> Result<Self> {
        let entries = LABEL_LENGTHS
            .iter()
            .map(|&n| {
                let key = CalibrationKey::segment_test(n, alpha, replicates, seed);
                Ok((n, source.thresholds(&key)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(alpha, entries)
    }

    /// Pair calibrated at the reference length closest to `n_steps`; ties
    /// go to the shorter length.
    pub fn nearest(&self, n_steps: usize) -> ThresholdPair {
        self.entries
            .iter()
            .min_by_key(|(len, _)| (len.abs_diff(n_steps), *len))
            .map(|(_, pair)| *pair)
            .expect("segment quantiles are never empty")
    }
}

/// Anything able to produce a cut-off pair for a key.
pub trait ThresholdSource {
    fn thresholds(&mut self, key: &CalibrationKey) -> Result<ThresholdPair>;
}

/// Calibrates on demand and memoizes in memory.
#[derive(Debug, Default)]
pub struct MemoryCalibrator {
    entries: Vec<(CalibrationKey, ThresholdPair)>,
    calibrations: usize,
}

impl MemoryCalibrator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of Monte Carlo calibrations actually run.
    pub fn calibrations_run(&self) -> usize {
        self.calibrations
    }

    pub fn insert(&mut self, key: CalibrationKey, pair: ThresholdPair) {
        self.entries.retain(|(k, _)| k != &key);
        self.entries.push((key, pair));
    }
}

impl ThresholdSource for MemoryCalibrator {
    fn thresholds(&mut self, key: &CalibrationKey) -> Result<ThresholdPair> {
        if let Some((_, pair)) = self.entries.iter().find(|(k, _)| k == key) {
            return Ok(*pair);
        }
        let pair = calibrate(key)?;
        self.calibrations += 1;
        self.entries.push((*key, pair));
        Ok(pair)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub key: CalibrationKey,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Seconds since the Unix epoch.
    pub created: u64,
}

/// On-disk table of calibrated pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub version: u32,
    #[serde(default)]
    pub library_version: String,
    pub entries: Vec<ThresholdEntry>,
}

impl Default for ThresholdTable {
    fn default() -> Self {
        Self {
            version: CACHE_SCHEMA_VERSION,
            library_version: VERSION.to_string(),
            entries: Vec::new(),
        }
    }
}

impl ThresholdTable {
    pub fn get(&self, key: &CalibrationKey) -> Option<ThresholdPair> {
        self.entries
            .iter()
            .find(|e| &e.key == key)
            .map(|e| ThresholdPair {
                gamma1: e.gamma1,
                gamma2: e.gamma2,
            })
    }

    pub fn insert(&mut self, key: CalibrationKey, pair: ThresholdPair) {
        self.entries.retain(|e| e.key != key);
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.entries.push(ThresholdEntry {
            key,
            gamma1: pair.gamma1,
            gamma2: pair.gamma2,
            created,
        });
    }

    /// Reads a table, failing with `CorruptCache` on parse or schema errors.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |reason: String| Error::CorruptCache {
            path: path.to_path_buf(),
            reason,
        };
        let table: ThresholdTable =
            serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        if table.version != CACHE_SCHEMA_VERSION {
            return Err(corrupt(format!(
                "schema version {} (expected {CACHE_SCHEMA_VERSION})",
                table.version
            )));
        }
        if let Some(bad) = table
            .entries
            .iter()
            .find(|e| e.gamma1.partial_cmp(&e.gamma2) != Some(std::cmp::Ordering::Less))
        {
            return Err(corrupt(format!(
                "entry with unordered pair ({}, {})",
                bad.gamma1, bad.gamma2
            )));
        }
        Ok(table)
    }

    /// Writes the table through a temporary file renamed into place.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let json = serde_json::to_string_pretty(self).expect("threshold table serializes");
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
        std::io::Write::write_all(&mut tmp, json.as_bytes()).map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }
}

/// How a cache file looked when it was opened.
#[derive(Debug, Clone, PartialEq)]
pub enum CacheStatus {
    Missing,
    Loaded,
    /// The file could not be used and will be rewritten.
    Corrupt(String),
}

/// Threshold table backed by a JSON file; misses are calibrated and
/// persisted immediately.
#[derive(Debug)]
pub struct ThresholdCache {
    path: PathBuf,
    table: ThresholdTable,
    status: CacheStatus,
    calibrations: usize,
}

impl ThresholdCache {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let (table, status) = if path.exists() {
            match ThresholdTable::read(&path) {
                Ok(table) => (table, CacheStatus::Loaded),
                Err(Error::CorruptCache { reason, .. }) => {
                    (ThresholdTable::default(), CacheStatus::Corrupt(reason))
                }
                Err(e) => return Err(e),
            }
        } else {
            (ThresholdTable::default(), CacheStatus::Missing)
        };
        Ok(Self {
            path,
            table,
            status,
            calibrations: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn status(&self) -> &CacheStatus {
        &self.status
    }

    pub fn table(&self) -> &ThresholdTable {
        &self.table
    }

    /// Number of Monte Carlo calibrations run through this handle.
    pub fn calibrations_run(&self) -> usize {
        self.calibrations
    }

    pub fn get_or_calibrate(&mut self, key: &CalibrationKey) -> Result<ThresholdPair> {
        self.get_or_insert_with(key, calibrate)
    }

    /// Returns the cached pair or computes it with `compute`, persisting the
    /// result.
    pub fn get_or_insert_with<F>(
        &mut self,
        key: &CalibrationKey,
        compute: F,
    ) -> Result<ThresholdPair>
    where
        F: FnOnce(&CalibrationKey) -> Result<ThresholdPair>,
    {
        if let Some(pair) = self.table.get(key) {
            return Ok(pair);
        }
        let pair = compute(key)?;
        self.calibrations += 1;
        self.table.insert(*key, pair);
        self.table.write_atomic(&self.path)?;
        Ok(pair)
    }
}

impl ThresholdSource for ThresholdCache {
    fn thresholds(&mut self, key: &CalibrationKey) -> Result<ThresholdPair> {
        self.get_or_calibrate(key)
    }
}

/// Cached pair for `key` in the file at `store`, calibrating on a miss.
pub fn cache_get_or_calibrate(
    store: impl Into<PathBuf>,
    key: &CalibrationKey,
) -> Result<ThresholdPair> {
    ThresholdCache::open(store)?.get_or_calibrate(key)
}

/// Empirical false-detection rate under Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Type1Estimate {
    pub replicates: usize,
    pub detections: usize,
    pub rate: f64,
    /// Binomial standard error of `rate`.
    pub std_error: f64,
}

impl Type1Estimate {
    pub fn from_counts(detections: usize, replicates: usize) -> Self {
        let rate = detections as f64 / replicates as f64;
        Self {
            replicates,
            detections,
            rate,
            std_error: (rate * (1.0 - rate) / replicates as f64).sqrt(),
        }
    }
}

/// Fraction of Brownian trajectories of `n` steps on which the procedure
/// reports at least one change point.
pub fn estimate_type1_error(
    n: usize,
    k: usize,
    c: usize,
    c_star: usize,
    thresholds: ThresholdPair,
    replicates: usize,
    seed: u64,
) -> Result<Type1Estimate> {
    if replicates < MIN_TYPE1_REPLICATES {
        return Err(Error::InvalidParam(format!(
            "type-I estimate needs at least {MIN_TYPE1_REPLICATES} replicates, got {replicates}"
        )));
    }
    let config = DetectionConfig::new(k, thresholds).with_cluster(c, c_star);
    config.validate(n)?;
    let detections = (0..replicates as u64)
        .into_par_iter()
        .map(|idx| {
            let traj = null_replicate(n, 1.0, 1.0, seed, idx)?;
            let (_, clusters, _) = detection::detect(&traj, &config)?;
            Ok(usize::from(!clusters.is_empty()))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(Type1Estimate::from_counts(detections, replicates))
}
