//! Dense `(state, action) → f64` tables and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            data: vec![value; n_states * n_actions],
        }
    }

    pub fn from_fn(n_states: usize, n_actions: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(n_states, n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                t.set(s, a, f(s, a));
            }
        }
        t
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.data[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.data[s * self.n_actions + a] = value;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.data[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Table) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    /// Sup-norm distance. Panics on a shape mismatch.
    pub fn max_abs_diff(&self, other: &Table) -> f64 {
        assert!(self.same_shape(other), "table shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// First non-finite entry, if any.
    pub fn find_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i / self.n_actions, i % self.n_actions))
    }

    /// Writes `state,action,<value_column>` rows in state-major order.
    pub fn write_csv_to<W: Write>(&self, writer: W, value_column: &str) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["state", "action", value_column])?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                w.write_record([s.to_string(), a.to_string(), self.get(s, a).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path, value_column: &str) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file, value_column)
            .map_err(|e| Error::csv(path, e))
    }

    /// Reads a table written by [`Table::write_csv_to`]. Every `(s, a)` pair
    /// up to the largest indices seen must appear exactly once.
    pub fn read_csv_from<R: Read>(reader: R, value_column: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(|e| Error::csv("<table>", e))?.clone();
        let expected = ["state", "action", value_column];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(Error::domain(format!(
                "unexpected table header {:?}, wanted {:?}",
                headers.iter().collect::<Vec<_>>(),
                expected
            )));
        }
        let mut rows: Vec<(usize, usize, f64)> = Vec::new();
        for record in r.records() {
            let record = record.map_err(|e| Error::csv("<table>", e))?;
            let parse_err = |what: &str| Error::domain(format!("bad {what} in row {:?}", record));
            let s: usize = record[0].trim().parse().map_err(|_| parse_err("state"))?;
            let a: usize = record[1].trim().parse().map_err(|_| parse_err("action"))?;
            let v: f64 = record[2].trim().parse().map_err(|_| parse_err("value"))?;
            rows.push((s, a, v));
        }
        let n_states = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let n_actions = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if rows.len() != n_states * n_actions {
            return Err(Error::domain(format!(
                "table has {} rows but spans {n_states}x{n_actions} entries",
                rows.len()
            )));
        }
        let mut seen = vec![false; rows.len()];
        let mut table = Table::zeros(n_states, n_actions);
        for (s, a, v) in rows {
            let idx = s * n_actions + a;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::domain(format!("duplicate entry for ({s}, {a})")));
            }
            table.set(s, a, v);
        }
        Ok(table)
    }

    pub fn read_csv(path: &Path, value_column: &str) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv_from(file, value_column)
    }
}
