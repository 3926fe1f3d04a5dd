//! Fixed-column CSV tables for every report type.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::bar::{ExtractionReport, TermReport};
use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::identities::IdentityReport;
use crate::palm::EstimateCI;
use crate::wasserstein::DecayFit;

/// A header row plus string cells; numbers use the shortest round-trip form
/// (exponent notation for very small or large magnitudes) so output is
/// byte-stable for identical inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn io(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        self.write(File::create(path).map_err(|e| io(format!("{}: {e}", path.display())))?)
    }

    /// Parses a table previously written by [`write`](Self::write).
    pub fn read_file(path: &Path) -> Result<Self> {
        let mut r =
            csv::Reader::from_path(path).map_err(|e| io(format!("{}: {e}", path.display())))?;
        let header = r
            .headers()
            .map_err(io)?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec.map_err(io)?.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn flag(b: bool) -> String {
    b.to_string()
}

pub fn identity_table(report: &IdentityReport) -> Table {
    let mut t = Table::new(&["identity_id", "estimate", "half_width", "target", "pass"]);
    for r in &report.rows {
        t.push(vec![
            r.id.clone(),
            num(r.estimate.point),
            num(r.estimate.half_width),
            num(r.target),
            flag(r.pass),
        ]);
    }
    t
}

/// Term rows followed by one `residual` row per function.
pub fn term_table(reports: &[TermReport]) -> Table {
    let mut t = Table::new(&["model", "f_id", "term_id", "estimate", "half_width"]);
    for r in reports {
        let rows = r.terms.iter().map(|x| (x.id.as_str(), &x.estimate));
        for (id, e) in rows.chain(std::iter::once(("residual", &r.residual))) {
            t.push(vec![
                r.model.clone(),
                r.f_id.clone(),
                id.to_string(),
                num(e.point),
                num(e.half_width),
            ]);
        }
    }
    t
}

pub fn extraction_table(reports: &[ExtractionReport]) -> Table {
    let mut t = Table::new(&[
        "model",
        "f_id",
        "term_id",
        "estimate",
        "half_width",
        "main_term",
        "majorant",
        "pass",
    ]);
    for r in reports.iter().flat_map(|r| &r.rows) {
        t.push(vec![
            r.model.clone(),
            r.f_id.clone(),
            r.term_id.clone(),
            num(r.lhs.point),
            num(r.lhs.half_width),
            num(r.main.point),
            num(r.majorant.point),
            flag(r.pass),
        ]);
    }
    t
}

pub fn bound_table(rows: &[(String, BoundReport)]) -> Table {
    let mut t = Table::new(&[
        "model_id", "mode", "eps0", "epsA", "epsD", "total", "theta", "sigma2", "delta",
    ]);
    for (id, b) in rows {
        t.push(vec![
            id.clone(),
            b.mode.name().to_string(),
            num(b.eps0),
            num(b.eps_a),
            num(b.eps_d),
            num(b.total),
            num(b.theta),
            num(b.inputs.sigma2),
            num(b.inputs.delta),
        ]);
    }
    t
}

/// One cell of an empirical distance versus bound comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct W1Row {
    pub config_id: String,
    pub delta: f64,
    pub w1: EstimateCI,
    pub bound_total: f64,
    pub pass: bool,
}

pub fn w1_table(rows: &[W1Row]) -> Table {
    let mut t = Table::new(&["config_id", "delta", "w1", "w1_ci", "bound_total", "pass"]);
    for r in rows {
        t.push(vec![
            r.config_id.clone(),
            num(r.delta),
            num(r.w1.point),
            num(r.w1.half_width),
            num(r.bound_total),
            flag(r.pass),
        ]);
    }
    t
}

pub fn decay_table(rows: &[(String, DecayFit, bool)]) -> Table {
    let mut t = Table::new(&["series", "slope", "slope_se", "points", "pass"]);
    for (id, f, pass) in rows {
        t.push(vec![
            id.clone(),
            num(f.slope),
            num(f.slope_se),
            f.points.to_string(),
            flag(*pass),
        ]);
    }
    t
}

/// Generic `(quantity, estimate, half_width)` table.
pub fn estimate_table(rows: &[(String, EstimateCI)]) -> Table {
    let mut t = Table::new(&["quantity", "estimate", "half_width"]);
    for (id, e) in rows {
        t.push(vec![id.clone(), num(e.point), num(e.half_width)]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x".into(), num(0.1 + 0.2)]);
        let dir = std::env::temp_dir().join(format!("gcstein-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("t.csv");
        t.write_file(&p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "a,b\nx,0.30000000000000004\n"
        );
        assert_eq!(Table::read_file(&p).unwrap(), t);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
