//! Datasets of (state, input, noisy-next-state) triples and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use super::GpError;
use crate::process::Trajectory;

/// One observed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

/// An ordered collection of transition triples with fixed dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_x: usize,
    n_u: usize,
    points: Vec<DataPoint>,
}

impl Dataset {
    pub fn new(n_x: usize, n_u: usize) -> Self {
        Self {
            n_x,
            n_u,
            points: Vec::new(),
        }
    }

    /// An empty scalar-state, scalar-input dataset.
    pub fn scalar() -> Self {
        Self::new(1, 1)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn push(&mut self, x: Vec<f64>, u: Vec<f64>, y: Vec<f64>) -> Result<(), GpError> {
        if x.len() != self.n_x || u.len() != self.n_u || y.len() != self.n_x {
            return Err(GpError::DimensionMismatch {
                expected: format!("x:{} u:{} y:{}", self.n_x, self.n_u, self.n_x),
                got: format!("x:{} u:{} y:{}", x.len(), u.len(), y.len()),
            });
        }
        if x.iter().chain(&u).chain(&y).any(|v| !v.is_finite()) {
            return Err(GpError::NonFiniteEntry);
        }
        self.points.push(DataPoint { x, u, y });
        Ok(())
    }

    /// Convenience for scalar problems.
    pub fn push_scalar(&mut self, x: f64, u: f64, y: f64) -> Result<(), GpError> {
        self.push(vec![x], vec![u], vec![y])
    }

    /// Returns a new dataset with the trajectory `(xs, us, ys)` appended.
    ///
    /// In the rollout convention `ys[t]` is the sampled next state after
    /// applying `us[t]` at `xs[t]`. Duplicates are retained.
    pub fn augment(
        &self,
        xs: &[Vec<f64>],
        us: &[Vec<f64>],
        ys: &[Vec<f64>],
    ) -> Result<Dataset, GpError> {
        if xs.len() != us.len() || xs.len() != ys.len() {
            return Err(GpError::LengthMismatch {
                xs: xs.len(),
                us: us.len(),
                ys: ys.len(),
            });
        }
        let mut out = self.clone();
        for ((x, u), y) in xs.iter().zip(us).zip(ys) {
            out.push(x.clone(), u.clone(), y.clone())?;
        }
        Ok(out)
    }

    /// Scalar-problem variant of [`Dataset::augment`].
    pub fn augment_scalar(&self, xs: &[f64], us: &[f64], ys: &[f64]) -> Result<Dataset, GpError> {
        if xs.len() != us.len() || xs.len() != ys.len() {
            return Err(GpError::LengthMismatch {
                xs: xs.len(),
                us: us.len(),
                ys: ys.len(),
            });
        }
        let mut out = self.clone();
        for i in 0..xs.len() {
            out.push_scalar(xs[i], us[i], ys[i])?;
        }
        Ok(out)
    }

    /// Appends the visited portion of a rollout trajectory.
    pub fn augment_trajectory(&self, traj: &Trajectory) -> Result<Dataset, GpError> {
        let xs = &traj.states[..traj.len()];
        self.augment_scalar(xs, &traj.inputs, &traj.measurements)
    }

    /// CSV header `x_0..x_{nx-1},u_0..u_{nu-1},y_0..y_{nx-1}`.
    fn header(&self) -> Vec<String> {
        let mut cols = Vec::with_capacity(2 * self.n_x + self.n_u);
        cols.extend((0..self.n_x).map(|d| format!("x_{d}")));
        cols.extend((0..self.n_u).map(|d| format!("u_{d}")));
        cols.extend((0..self.n_x).map(|d| format!("y_{d}")));
        cols
    }

    /// Writes the dataset as CSV with round-tripping decimal formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GpError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header())?;
        for p in &self.points {
            let row: Vec<String> = p
                .x
                .iter()
                .chain(&p.u)
                .chain(&p.y)
                .map(|v| format!("{v}"))
                .collect();
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), GpError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a dataset, inferring the dimensions from the header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset, GpError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let n_x = cols.iter().take_while(|c| c.starts_with("x_")).count();
        let n_u = cols[n_x..].iter().take_while(|c| c.starts_with("u_")).count();
        let expected: Vec<String> = {
            let probe = Dataset::new(n_x, n_u);
            probe.header()
        };
        if n_x == 0 || n_u == 0 || cols != expected.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
            return Err(GpError::CsvSchema(format!("unexpected header {cols:?}")));
        }
        let mut out = Dataset::new(n_x, n_u);
        for record in r.records() {
            let record = record?;
            if record.len() != 2 * n_x + n_u {
                return Err(GpError::CsvSchema(format!(
                    "row has {} fields, expected {}",
                    record.len(),
                    2 * n_x + n_u
                )));
            }
            let vals: Vec<f64> = record
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| GpError::CsvSchema(format!("bad number {f:?}: {e}")))
                })
                .collect::<Result<_, _>>()?;
            out.push(
                vals[..n_x].to_vec(),
                vals[n_x..n_x + n_u].to_vec(),
                vals[n_x + n_u..].to_vec(),
            )?;
        }
        Ok(out)
    }

    pub fn load_csv(path: &Path) -> Result<Dataset, GpError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}
