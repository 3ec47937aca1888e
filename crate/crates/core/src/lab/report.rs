use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

/// One pass/fail check of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub criterion: String,
    pub passed: bool,
}

impl Gate {
    /// `|value - reference| <= bound * sqrt(se^2 + ref_se^2)`.
    pub fn z(name: impl Into<String>, value: f64, se: f64, reference: f64, ref_se: f64, bound: f64) -> Self {
        let s = (se * se + ref_se * ref_se).sqrt();
        let diff = (value - reference).abs();
        let (passed, criterion) = if s == 0.0 {
            (diff <= 1e-12 * reference.abs().max(1.0), "exact".to_string())
        } else {
            let z = (value - reference) / s;
            (z.abs() <= bound, format!("z={z:.3} bound={bound}"))
        };
        Self { name: name.into(), value, reference, criterion, passed }
    }

    /// `|value - reference| <= rel * |reference|`.
    pub fn relative(name: impl Into<String>, value: f64, reference: f64, rel: f64) -> Self {
        let err = (value - reference).abs() / reference.abs();
        Self { name: name.into(), value, reference, criterion: format!("rel_err={err:.4} bound={rel}"), passed: err <= rel }
    }

    /// `|value - reference| <= tol`.
    pub fn absolute(name: impl Into<String>, value: f64, reference: f64, tol: f64) -> Self {
        let err = (value - reference).abs();
        Self { name: name.into(), value, reference, criterion: format!("abs_err={err:.4} bound={tol}"), passed: err <= tol }
    }

    pub fn check(name: impl Into<String>, value: f64, reference: f64, passed: bool, criterion: impl Into<String>) -> Self {
        Self { name: name.into(), value, reference, criterion: criterion.into(), passed }
    }

    /// Tab-separated failure record.
    pub fn failure_line(&self) -> String {
        format!("FAIL\t{}\tvalue={}\treference={}\t{}", self.name, self.value, self.reference, self.criterion)
    }
}

/// CSV table with a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// File suffix; empty for the primary table.
    pub suffix: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(suffix: &'static str, header: &[&'static str]) -> Self {
        Self { suffix, header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, comment: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {comment}");
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    /// Path of this table given the primary output path.
    pub fn path_for(&self, out: &Path) -> PathBuf {
        if self.suffix.is_empty() {
            return out.to_path_buf();
        }
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.with_file_name(format!("{stem}.{}.csv", self.suffix))
    }

    pub fn write(&self, out: &Path, comment: &str) -> Result<PathBuf> {
        let path = self.path_for(out);
        let mut f = std::fs::File::create(&path)?;
        f.write_all(self.render(comment).as_bytes())?;
        Ok(path)
    }
}

/// Shortest round-trip decimal form, with `-0` written as `0`.
pub fn num(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v}")
}

/// Outcome of one experiment run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub tables: Vec<Table>,
    pub gates: Vec<Gate>,
    /// Human-readable lines for the terminal.
    pub notes: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Gate> {
        self.gates.iter().filter(|g| !g.passed)
    }

    pub fn gate(&self, name: &str) -> Option<&Gate> {
        self.gates.iter().find(|g| g.name == name)
    }
}
