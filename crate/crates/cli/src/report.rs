//! Error reports of single runs and the consolidated comparison table.

use std::fmt::Write as _;

use cspapi::metrics::{frobenius, relative_l2};
use ndarray::{ArrayBase, Data, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Relative errors of one reconstruction route.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VariantErrors {
    /// Noisy against clean compressed data.
    pub rel_data_error: f64,
    /// Recovered against true circular means.
    pub rel_cs_error: f64,
    /// Image against the full-array FBP baseline.
    pub rel_fbp_error: f64,
    /// Image against the phantom itself.
    pub rel_image_error: f64,
}

impl VariantErrors {
    fn fields(&self) -> [(&'static str, f64); 4] {
        [
            ("rel_data_error", self.rel_data_error),
            ("rel_cs_error", self.rel_cs_error),
            ("rel_fbp_error", self.rel_fbp_error),
            ("rel_image_error", self.rel_image_error),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub label: String,
    pub optimized: VariantErrors,
    pub random: VariantErrors,
    pub full: VariantErrors,
}

impl ErrorReport {
    pub fn is_valid(&self) -> bool {
        [self.optimized, self.random, self.full]
            .iter()
            .flat_map(|v| v.fields())
            .all(|(_, x)| x.is_finite() && x >= 0.0)
    }

    /// `metric,optimized,random,full`, one row per error kind.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,optimized,random,full\n");
        let (o, r, f) = (self.optimized.fields(), self.random.fields(), self.full.fields());
        for i in 0..o.len() {
            let _ = writeln!(out, "{},{},{},{}", o[i].0, o[i].1, r[i].1, f[i].1);
        }
        out
    }
}

/// `‖a - b‖ / ‖b‖`, taken as zero when both sides vanish.
pub fn relative_error<S1, S2, D>(a: &ArrayBase<S1, D>, b: &ArrayBase<S2, D>) -> CliResult<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if frobenius(b.view()) == 0.0 && frobenius(a.view()) == 0.0 && a.shape() == b.shape() {
        return Ok(0.0);
    }
    Ok(relative_l2(a, b)?)
}

const COLUMNS: [&str; 6] = [
    "optimized_data",
    "optimized_cs",
    "optimized_fbp",
    "random_data",
    "random_cs",
    "random_fbp",
];

/// One row per run, data / CS / FBP errors for the optimized and the random matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub rows: Vec<(String, [f64; 6])>,
}

impl Table {
    pub fn from_reports(reports: &[ErrorReport]) -> CliResult<Self> {
        if reports.is_empty() {
            return Err(CliError::Config("evaluate needs at least one report".into()));
        }
        let rows = reports
            .iter()
            .map(|r| {
                let (o, x) = (r.optimized, r.random);
                (
                    r.label.clone(),
                    [
                        o.rel_data_error,
                        o.rel_cs_error,
                        o.rel_fbp_error,
                        x.rel_data_error,
                        x.rel_cs_error,
                        x.rel_fbp_error,
                    ],
                )
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), COLUMNS.len())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("run,{}\n", COLUMNS.join(","));
        for (label, v) in &self.rows {
            let cells: Vec<String> = v.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{},{}", csv_field(label), cells.join(","));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(3);
        let mut out = format!("{:width$}  {:>23}  {:>23}\n", "", "optimized A", "random A");
        let _ = writeln!(
            out,
            "{:width$}  {:>7} {:>7} {:>7}  {:>7} {:>7} {:>7}",
            "run", "data", "cs", "fbp", "data", "cs", "fbp"
        );
        for (label, v) in &self.rows {
            let _ = writeln!(
                out,
                "{label:width$}  {:>7.4} {:>7.4} {:>7.4}  {:>7.4} {:>7.4} {:>7.4}",
                v[0], v[1], v[2], v[3], v[4], v[5]
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
