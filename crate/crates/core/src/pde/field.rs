//! Gridded reference solutions and their on-disk format.
//!
//! File layout (version 1):
//!
//! ```text
//! NAPINN-FIELD 1\n
//! <one-line JSON header: kind, times, grid, channel_names, shape [n_t, n_x, n_y, channels]>\n
//! <n_t * n_x * n_y * channels little-endian f64 values, row-major in that shape>
//! ```

use std::io::{BufRead, Write};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::grid::SpatialGrid;
use super::manufactured::manufactured_solution_ac;
use super::problem::{BenchmarkKind, ProblemSpec};
use super::PdeError;

const MAGIC: &str = "NAPINN-FIELD 1";

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceField {
    pub kind: BenchmarkKind,
    pub times: Vec<f64>,
    pub grid: SpatialGrid,
    pub channel_names: Vec<String>,
    /// `[n_t, n_x, n_y, channels]`
    pub values: Array4<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: BenchmarkKind,
    times: Vec<f64>,
    grid: SpatialGrid,
    channel_names: Vec<String>,
    shape: [usize; 4],
}

impl ReferenceField {
    pub fn channels(&self) -> usize {
        self.values.shape()[3]
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Index of the recorded time closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Nearest grid node to `(x, y)`: its coordinates and channel values at snapshot `ti`.
    pub fn sample_nearest(&self, x: f64, y: f64, ti: usize) -> ((f64, f64), Vec<f64>) {
        let (i, j) = self.grid.nearest(x, y);
        let vals = (0..self.channels()).map(|c| self.values[[ti, i, j, c]]).collect();
        ((self.grid.x(i), self.grid.y(j)), vals)
    }

    /// Mean of `|value|` over every node and snapshot of one channel.
    pub fn mean_abs(&self, channel: usize) -> f64 {
        let lane = self.values.index_axis(ndarray::Axis(3), channel);
        lane.iter().map(|v| v.abs()).sum::<f64>() / lane.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), PdeError> {
        let s = self.values.shape();
        let header = Header {
            kind: self.kind,
            times: self.times.clone(),
            grid: self.grid,
            channel_names: self.channel_names.clone(),
            shape: [s[0], s[1], s[2], s[3]],
        };
        writeln!(w, "{MAGIC}")?;
        serde_json::to_writer(&mut w, &header).map_err(|e| PdeError::Format(e.to_string()))?;
        writeln!(w)?;
        for v in self.values.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self, PdeError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(PdeError::Format(format!("bad magic {:?}", line.trim_end())));
        }
        line.clear();
        r.read_line(&mut line)?;
        let h: Header = serde_json::from_str(line.trim_end()).map_err(|e| PdeError::Format(e.to_string()))?;
        let count: usize = h.shape.iter().product();
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let values = Array4::from_shape_vec(h.shape, data).map_err(|e| PdeError::Format(e.to_string()))?;
        Ok(Self {
            kind: h.kind,
            times: h.times,
            grid: h.grid,
            channel_names: h.channel_names,
            values,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PdeError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PdeError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// The Allen-Cahn manufactured solution sampled on a `grid_n x grid_n` grid at every snapshot.
pub fn allen_cahn_reference(spec: &ProblemSpec, grid_n: usize) -> ReferenceField {
    let grid = spec.grid(grid_n);
    let times = spec.snapshot_times();
    let mut values = Array4::zeros((times.len(), grid.nx, grid.ny, 1));
    for (ti, &t) in times.iter().enumerate() {
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                values[[ti, i, j, 0]] =
                    manufactured_solution_ac(grid.x(i), grid.y(j), t, spec.omega_t, spec.true_param).0;
            }
        }
    }
    ReferenceField {
        kind: spec.kind,
        times,
        grid,
        channel_names: vec!["u".into()],
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_is_bit_exact() {
        let spec = ProblemSpec::allen_cahn().with_snapshots(3);
        let f = allen_cahn_reference(&spec, 9);
        let mut buf = Vec::new();
        f.write(&mut buf).unwrap();
        let g = ReferenceField::read(buf.as_slice()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn nearest_sampling_returns_node_values() {
        let spec = ProblemSpec::allen_cahn().with_snapshots(2);
        let f = allen_cahn_reference(&spec, 11);
        let ((x, y), vals) = f.sample_nearest(0.52, 0.49, 0);
        assert_eq!((x, y), (0.5, 0.5));
        assert!((vals[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_abs_of_constant() {
        let spec = ProblemSpec::allen_cahn().with_snapshots(2);
        let mut f = allen_cahn_reference(&spec, 5);
        f.values.fill(-2.0);
        assert_eq!(f.mean_abs(0), 2.0);
    }
}
