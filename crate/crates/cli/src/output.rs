//! CSV and report writers and the hashed summary of an output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use bwsurge_core::stationary::StationaryDistribution;
use bwsurge_core::{FluidSolution, ScaledTrajectory};

use crate::CliError;

/// Seed of one sub-experiment: the first 8 bytes of
/// `sha256(seed || purpose)`.
pub fn sub_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn num(v: f64) -> String {
    format!("{v:.12e}")
}

/// A CSV table built in memory: header plus rows of preformatted cells.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| num(v)).collect());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.header.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// `t, y1..yc, x{c+1}..xN, blocked_count`.
pub fn trajectory_table(traj: &ScaledTrajectory) -> Table {
    let c = traj.surge_count;
    let n = c + traj.stable.first().map_or(0, Vec::len);
    let header = std::iter::once("t".to_string())
        .chain((1..=c).map(|i| format!("y{i}")))
        .chain((c + 1..=n).map(|i| format!("x{i}")))
        .chain(std::iter::once("blocked_count".to_string()));
    let mut t = Table::new(header);
    for j in 0..traj.times.len() {
        let mut row = vec![num(traj.times[j])];
        row.extend(traj.surge[j].iter().map(|&v| num(v)));
        row.extend(traj.stable[j].iter().map(|v| v.to_string()));
        row.push(traj.blocked[j].to_string());
        t.push(row);
    }
    t
}

/// `t, u1..uc, phibar_1..phibar_c, boundary_flags`. Flags are one `0`/`1`
/// character per coordinate.
pub fn fluid_table(sol: &FluidSolution) -> Table {
    let c = sol.u.first().map_or(0, Vec::len);
    let header = std::iter::once("t".to_string())
        .chain((1..=c).map(|i| format!("u{i}")))
        .chain((1..=c).map(|i| format!("phibar_{i}")))
        .chain(std::iter::once("boundary_flags".to_string()));
    let mut t = Table::new(header);
    for j in 0..sol.times.len() {
        let mut row = vec![num(sol.times[j])];
        row.extend(sol.u[j].iter().map(|&v| num(v)));
        row.extend(sol.phibar[j].iter().map(|&v| num(v)));
        row.push(sol.at_boundary[j].iter().map(|&b| if b { '1' } else { '0' }).collect());
        t.push(row);
    }
    t
}

/// `y{c+1}..yN, probability` for every state of the truncated support.
pub fn stationary_table(dist: &StationaryDistribution, surge_count: usize) -> Table {
    let header = (0..dist.dims.len())
        .map(|i| format!("x{}", surge_count + i + 1))
        .chain(std::iter::once("probability".to_string()));
    let mut t = Table::new(header);
    for (y, p) in dist.iter() {
        let mut row: Vec<String> = y.iter().map(|v| v.to_string()).collect();
        row.push(num(p));
        t.push(row);
    }
    t
}

/// Files written by one command, hashed into `summary.txt`.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        fs::write(&path, contents)?;
        if !self.written.contains(&path) {
            self.written.push(path.clone());
        }
        Ok(path)
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<PathBuf, CliError> {
        self.write(name, &table.render())
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.written
    }

    /// Write `summary.txt` with one `sha256  file` line per output, in the
    /// order written.
    pub fn finish(self) -> Result<Vec<PathBuf>, CliError> {
        let mut s = String::new();
        for p in &self.written {
            let digest = Sha256::digest(fs::read(p)?);
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            let name = p.file_name().expect("written files have names").to_string_lossy();
            let _ = writeln!(s, "{hex}  {name}");
        }
        fs::write(self.root.join("summary.txt"), s)?;
        Ok(self.written)
    }
}
