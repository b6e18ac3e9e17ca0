//! CSV tables and number formatting shared by all writers.

use std::fs;
use std::io;
use std::path::Path;

use crate::evolution::Trajectory;

/// Seventeen significant digits, enough to round-trip an `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self { headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| num(v)).collect());
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()
    }
}

/// `t` plus every logged observable, one row per snapshot.
pub fn trajectory_table(traj: &Trajectory) -> Table {
    let names: Vec<String> = traj.log.first().map(|m| m.keys().cloned().collect()).unwrap_or_default();
    let mut table = Table::new(std::iter::once("t".to_string()).chain(names.iter().cloned()));
    for (t, m) in traj.times.iter().zip(&traj.log) {
        let mut row = vec![num(*t)];
        row.extend(names.iter().map(|n| num(m.get(n).copied().unwrap_or(f64::NAN))));
        table.push(row);
    }
    table
}

/// Writes `snapshots/t_<index>.csv` with columns `y,value`; returns the count.
pub fn write_snapshots(traj: &Trajectory, dir: &Path) -> io::Result<usize> {
    let snap = dir.join("snapshots");
    fs::create_dir_all(&snap)?;
    for (i, s) in traj.states.iter().enumerate() {
        let mut table = Table::new(["y", "value"]);
        for (y, v) in s.grid().nodes().iter().zip(s.values()) {
            table.push_numbers(&[*y, *v]);
        }
        table.write(&snap.join(format!("t_{i}.csv")))?;
    }
    Ok(traj.states.len())
}
