//! Output files, run manifests and trajectory CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use pfdiff_core::{Cell, GridKind, NfeCount, Table, TimeGrid, TrajectoryRecord};
use serde::Serialize;

use crate::config::sha256_hex;
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Every file a subcommand writes goes through one `Writer`, which records
/// its content hash for the manifest.
#[derive(Debug)]
pub struct Writer {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Writer {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, content)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(OutputFile { path: name.to_string(), sha256: sha256_hex(content.as_bytes()) });
        Ok(())
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }
}

/// Enough to replay a run: the resolved config, the inputs it read and what
/// it wrote.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nfe_batches: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nfe_points: Option<u64>,
    pub wall_clock_s: f64,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, inputs: &[(String, String)]) -> Self {
        Self {
            tool: "pfdiff",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            schema: None,
            config,
            seed,
            inputs: inputs.iter().cloned().collect(),
            nfe_batches: None,
            nfe_points: None,
            wall_clock_s: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn with_nfe(mut self, nfe: NfeCount) -> Self {
        self.nfe_batches = Some(nfe.batches);
        self.nfe_points = Some(nfe.points);
        self
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn coord_header(first: &[&str], dim: usize) -> Vec<String> {
    first.iter().map(|s| s.to_string()).chain((0..dim).map(|d| format!("x{d}"))).collect()
}

/// `chain,x0,x1,...` with one row per chain.
pub fn states_table(states: &Array2<f64>) -> Table {
    let header = coord_header(&["chain"], states.ncols());
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new("endpoints/1", &refs);
    for (c, row) in states.rows().into_iter().enumerate() {
        t.push(std::iter::once(Cell::from(c)).chain(row.iter().map(|v| Cell::from(*v))).collect());
    }
    t
}

/// `t,chain,x0,x1,...` with rows ordered by time point, then chain.
pub fn trajectory_table(traj: &TrajectoryRecord) -> Table {
    let header = coord_header(&["t", "chain"], traj.dim());
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new("trajectory/1", &refs);
    for (&time, states) in traj.grid().points().iter().zip(traj.states()) {
        for (c, row) in states.rows().into_iter().enumerate() {
            t.push([Cell::from(time), Cell::from(c)].into_iter().chain(row.iter().map(|v| Cell::from(*v))).collect());
        }
    }
    t
}

/// Reads a CSV written by [`trajectory_table`].
pub fn read_trajectory(path: &Path, t_count: usize) -> Result<TrajectoryRecord, CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').collect();
    if header.len() < 3 || header[0] != "t" || header[1] != "chain" {
        return Err(bad("expected a `t,chain,x0,...` header".into()));
    }
    let dim = header.len() - 2;
    let mut points: Vec<usize> = Vec::new();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(bad(format!("line {}: expected {} fields", n + 2, header.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("line {}: bad number `{s}`", n + 2)));
        let t: usize = fields[0].parse().map_err(|_| bad(format!("line {}: bad time `{}`", n + 2, fields[0])))?;
        if points.last() != Some(&t) {
            points.push(t);
            blocks.push(Vec::new());
        }
        let block = blocks.last_mut().expect("pushed above");
        for f in &fields[2..] {
            block.push(num(f)?);
        }
    }
    let grid = TimeGrid::from_points(GridKind::Uniform, t_count, points).map_err(|e| bad(e.to_string()))?;
    let states = blocks
        .into_iter()
        .map(|b| {
            let rows = b.len() / dim;
            Array2::from_shape_vec((rows, dim), b).map_err(|e| bad(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    TrajectoryRecord::new(grid, states, None).map_err(|e| bad(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn trajectory_csv_round_trips() {
        let grid = TimeGrid::from_points(GridKind::Uniform, 1000, vec![999, 400, 0]).unwrap();
        let states = vec![array![[0.1, -2.0], [1.0 / 3.0, 5e-7]], array![[1.5, 2.5], [3.5, 4.5]], array![[0.0, -0.0], [1e300, 7.0]]];
        let traj = TrajectoryRecord::new(grid, states, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        std::fs::write(&path, trajectory_table(&traj).to_csv()).unwrap();
        let back = read_trajectory(&path, 1000).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn writer_hashes_what_it_writes() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = Writer::new(&dir.path().join("nested")).unwrap();
        w.write("a.csv", "x\n1\n").unwrap();
        assert_eq!(w.files()[0].sha256, sha256_hex(b"x\n1\n"));
        assert_eq!(std::fs::read_to_string(dir.path().join("nested/a.csv")).unwrap(), "x\n1\n");
    }
}
