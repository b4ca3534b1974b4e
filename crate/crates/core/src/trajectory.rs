//! Trajectories sampled on a uniform time grid, and their CSV form.
//!
//! The CSV layout is a one-line header `t,x,y` or `t,x,y,z` followed by one
//! row per sampling time. Time units are carried opaquely: only the grid step
//! enters the statistics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Maximum relative deviation of a time step from the median step.
pub const GRID_TOLERANCE: f64 = 1e-6;

/// Uniform grid `t_k = t0 + k * delta` for `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    delta: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, delta: f64, n_steps: usize) -> Result<Self> {
        if !t0.is_finite() {
            return Err(Error::InvalidParam(format!(
                "grid origin {t0} is not finite"
            )));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidParam(format!(
                "time step must be positive, got {delta}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParam("grid needs at least one step".into()));
        }
        Ok(Self { t0, delta, n_steps })
    }

    /// Grid starting at 0 with unit step.
    pub fn unit(n_steps: usize) -> Result<Self> {
        Self::new(0.0, 1.0, n_steps)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn point(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.delta
    }

    /// Duration `t_n - t_0`.
    pub fn span(&self) -> f64 {
        self.n_steps as f64 * self.delta
    }
}

/// Inclusive index range `start..=end` on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// Number of steps covered.
    pub fn n_steps(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn n_points(&self) -> usize {
        self.n_steps() + 1
    }
}

/// Positions of a particle in 2 or 3 dimensions on a [`TimeGrid`].
///
/// Coordinates are stored row-major: point `k` occupies
/// `coords[k * dim..(k + 1) * dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    dim: usize,
    coords: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, dim: usize, coords: Vec<f64>) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidParam(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if coords.len() != grid.n_points() * dim {
            return Err(Error::InvalidParam(format!(
                "expected {} coordinates for {} points in {dim}-D, got {}",
                grid.n_points() * dim,
                grid.n_points(),
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "non-finite coordinate at point {}",
                pos / dim
            )));
        }
        Ok(Self { grid, dim, coords })
    }

    /// Builds a trajectory from a list of points sharing one dimension.
    pub fn from_points<P: AsRef<[f64]>>(grid: TimeGrid, points: &[P]) -> Result<Self> {
        let dim = points.first().map(|p| p.as_ref().len()).unwrap_or(0);
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (k, p) in points.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::InvalidParam(format!(
                    "point {k} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::new(grid, dim, coords)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn n_points(&self) -> usize {
        self.grid.n_points()
    }

    pub fn position(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Euclidean distance between points `a` and `b`.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.squared_distance(a, b).sqrt()
    }

    pub fn squared_distance(&self, a: usize, b: usize) -> f64 {
        let pa = self.position(a);
        let pb = self.position(b);
        let mut acc = 0.0;
        for (x, y) in pa.iter().zip(pb) {
            let d = x - y;
            acc += d * d;
        }
        acc
    }

    /// Copy with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            dim: self.dim,
            coords: self.coords.iter().map(|v| v * factor).collect(),
        }
    }

    /// Copy with the time direction reversed (point `k` becomes `n - k`).
    pub fn reversed(&self) -> Self {
        let mut coords = Vec::with_capacity(self.coords.len());
        for p in self.coords.chunks_exact(self.dim).rev() {
            coords.extend_from_slice(p);
        }
        Self {
            grid: self.grid,
            dim: self.dim,
            coords,
        }
    }

    /// Same positions on a grid with a different step.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        let grid = TimeGrid::new(self.grid.t0, delta, self.grid.n_steps)?;
        Ok(Self {
            grid,
            dim: self.dim,
            coords: self.coords.clone(),
        })
    }

    pub fn check_segment(&self, seg: Segment) -> Result<()> {
        if seg.start >= seg.end || seg.end > self.n_steps() {
            return Err(Error::OutOfBounds {
                start: seg.start,
                end: seg.end,
                n_steps: self.n_steps(),
            });
        }
        Ok(())
    }

    /// Points `seg.start..=seg.end`, with the grid origin moved to `t_start`.
    pub fn subtrajectory(&self, seg: Segment) -> Result<Self> {
        self.check_segment(seg)?;
        let grid = TimeGrid::new(self.grid.point(seg.start), self.grid.delta, seg.n_steps())?;
        let coords = self.coords[seg.start * self.dim..(seg.end + 1) * self.dim].to_vec();
        Ok(Self {
            grid,
            dim: self.dim,
            coords,
        })
    }

    pub fn full_segment(&self) -> Segment {
        Segment::new(0, self.n_steps())
    }
}

/// Reads a trajectory from a `t,x,y[,z]` CSV file.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

/// Parses `t,x,y[,z]` CSV from any reader.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| Error::MalformedRow {
        line: 1,
        reason: e.to_string(),
    })?;
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    let dim = match names
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["t", "x", "y"] => 2,
        ["t", "x", "y", "z"] => 3,
        _ => {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("expected header t,x,y or t,x,y,z, got {}", names.join(",")),
            })
        }
    };

    let mut times = Vec::new();
    let mut coords = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        if record.len() != dim + 1 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", dim + 1, record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("field {} is not a number: {field:?}", col + 1),
            })?;
            if !value.is_finite() {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("field {} is not finite", col + 1),
                });
            }
            if col == 0 {
                times.push(value);
            } else {
                coords.push(value);
            }
        }
    }

    if times.len() < 3 {
        return Err(Error::TooShort(format!(
            "need at least 3 points, found {}",
            times.len()
        )));
    }

    let diffs: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = diffs.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let delta = if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    if delta <= 0.0 {
        return Err(Error::NonUniformGrid {
            line: 2,
            deviation: f64::INFINITY,
        });
    }
    for (i, d) in diffs.iter().enumerate() {
        let deviation = ((d - delta) / delta).abs();
        if deviation > GRID_TOLERANCE {
            return Err(Error::NonUniformGrid {
                line: i + 3,
                deviation,
            });
        }
    }

    let grid = TimeGrid::new(times[0], delta, times.len() - 1)?;
    Trajectory::new(grid, dim, coords)
}

/// Writes `traj` as CSV. Values use the shortest representation that parses
/// back to the identical `f64`.
pub fn save_csv(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_csv(traj, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv<W: Write>(traj: &Trajectory, out: &mut W) -> std::io::Result<()> {
    let header = if traj.dim() == 3 { "t,x,y,z" } else { "t,x,y" };
    writeln!(out, "{header}")?;
    for (k, p) in traj.points().enumerate() {
        write!(out, "{}", traj.grid().point(k))?;
        for v in p {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Trajectory> {
        read_csv(text.as_bytes())
    }

    fn line3() -> Trajectory {
        Trajectory::from_points(
            TimeGrid::unit(2).unwrap(),
            &[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn loads_simple_file() {
        let t = parse("t,x,y\n0,0,0\n1,1,0\n2,2,0\n").unwrap();
        assert_eq!(t.grid().delta(), 1.0);
        assert_eq!(t.n_steps(), 2);
        assert_eq!(t.dim(), 2);
        assert_eq!(t.position(1), &[1.0, 0.0]);
    }

    #[test]
    fn loads_three_dimensional_file() {
        let t = parse("t,x,y,z\n0.5,0,0,1\n0.6,1,0,1\n0.7,2,0,1\n").unwrap();
        assert_eq!(t.dim(), 3);
        assert!((t.grid().delta() - 0.1).abs() < 1e-12);
        assert_eq!(t.grid().t0(), 0.5);
    }

    #[test]
    fn rejects_non_uniform_grid() {
        let err = parse("t,x,y\n0,0,0\n1,1,0\n2.5,2,0\n").unwrap_err();
        assert!(matches!(err, Error::NonUniformGrid { .. }), "{err}");
    }

    #[test]
    fn rejects_decreasing_time() {
        let err = parse("t,x,y\n0,0,0\n-1,1,0\n-2,2,0\n").unwrap_err();
        assert!(matches!(err, Error::NonUniformGrid { .. }), "{err}");
    }

    #[test]
    fn rejects_two_rows() {
        let err = parse("t,x,y\n0,0,0\n1,1,0\n").unwrap_err();
        assert!(matches!(err, Error::TooShort(_)));
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(matches!(
            parse("t,x,y\n0,0,0\n1,1\n2,2,0\n").unwrap_err(),
            Error::MalformedRow { line: 3, .. }
        ));
        assert!(matches!(
            parse("t,x,y\n0,0,0\n1,abc,0\n2,2,0\n").unwrap_err(),
            Error::MalformedRow { line: 3, .. }
        ));
        assert!(matches!(
            parse("time,x,y\n0,0,0\n1,1,0\n2,2,0\n").unwrap_err(),
            Error::MalformedRow { line: 1, .. }
        ));
    }

    #[test]
    fn save_writes_header_and_rows() {
        let t =
            Trajectory::from_points(TimeGrid::unit(1).unwrap(), &[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,x,y\n0,0,0\n1,1,0\n");
    }

    #[test]
    fn save_to_unwritable_path_fails() {
        let err = save_csv(&line3(), "/nonexistent-dir/for/sure/t.csv").unwrap_err();
        assert!(matches!(err, Error::IoFailure { .. }));
    }

    #[test]
    fn subtrajectory_bounds() {
        let t = line3();
        assert_eq!(t.subtrajectory(t.full_segment()).unwrap(), t);
        let s = t.subtrajectory(Segment::new(0, 1)).unwrap();
        assert_eq!(s.n_points(), 2);
        assert!(matches!(
            t.subtrajectory(Segment::new(2, 1)),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(matches!(
            t.subtrajectory(Segment::new(1, 3)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn subtrajectory_shifts_origin() {
        let grid = TimeGrid::new(10.0, 0.5, 4).unwrap();
        let pts: Vec<[f64; 2]> = (0..5).map(|k| [k as f64, -(k as f64)]).collect();
        let t = Trajectory::from_points(grid, &pts).unwrap();
        let s = t.subtrajectory(Segment::new(2, 4)).unwrap();
        assert_eq!(s.grid().t0(), 11.0);
        assert_eq!(s.position(0), &[2.0, -2.0]);
    }

    #[test]
    fn grid_and_trajectory_validation() {
        assert!(TimeGrid::new(0.0, 0.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        let grid = TimeGrid::unit(1).unwrap();
        assert!(Trajectory::new(grid, 2, vec![0.0, 0.0, f64::NAN, 0.0]).is_err());
        assert!(Trajectory::new(grid, 1, vec![0.0, 1.0]).is_err());
        assert!(Trajectory::new(grid, 2, vec![0.0, 1.0]).is_err());
    }
}
