//! Run records and their JSONL and CSV serializations.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use weyl_persistence::bounds::BoundReport;
use weyl_persistence::persistence::{ExponentFit, FitPoint, PersistenceEstimate, SlepianCheck};

use crate::config::{ExperimentConfig, Format};
use crate::error::CliError;

/// Build identifier baked in at compile time.
pub const BUILD_ID: &str = match option_env!("WEYL_PERSIST_BUILD_ID") {
    Some(id) => id,
    None => "unknown",
};

/// One result line. Every field depends only on the configuration, never on
/// the worker count or the wall clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResultLine {
    Estimate {
        label: String,
        params: BTreeMap<String, f64>,
        trials: u64,
        successes: u64,
        p_hat: f64,
        ci: [f64; 2],
        log_p: f64,
        scale: f64,
        master_seed: u64,
        stream_index: u64,
    },
    Fit {
        label: String,
        slope: f64,
        stderr: f64,
        intercept: f64,
        r2: f64,
        points: Vec<FitPoint>,
    },
    Derived {
        label: String,
        value: f64,
        stderr: f64,
    },
    Report {
        name: String,
        worst_margin: f64,
        worst_point: BTreeMap<String, f64>,
        pass: bool,
        tolerance: f64,
        swept_box: String,
        evaluated: usize,
        details: BTreeMap<String, f64>,
    },
    Slepian {
        n: u64,
        full: f64,
        product: f64,
        combined_half_width: f64,
        margin: f64,
        pass: bool,
    },
    EdgeRate {
        n: u64,
        neg_log_b_over_sqrt_n: f64,
        neg_log_c_over_sqrt_n: f64,
    },
}

impl ResultLine {
    pub fn estimate(label: &str, params: &[(&str, f64)], e: &PersistenceEstimate) -> Self {
        ResultLine::Estimate {
            label: label.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            trials: e.trials,
            successes: e.successes,
            p_hat: e.p_hat,
            ci: [e.ci_low, e.ci_high],
            log_p: e.log_p,
            scale: e.scale,
            master_seed: e.seed.master_seed,
            stream_index: e.seed.stream_index,
        }
    }

    pub fn fit(label: &str, f: &ExponentFit) -> Self {
        ResultLine::Fit {
            label: label.to_string(),
            slope: f.slope,
            stderr: f.slope_stderr,
            intercept: f.intercept,
            r2: f.r_squared,
            points: f.points.clone(),
        }
    }

    pub fn report(r: &BoundReport) -> Self {
        ResultLine::Report {
            name: r.name.clone(),
            worst_margin: r.worst_margin,
            worst_point: r.worst_point.clone(),
            pass: r.pass,
            tolerance: r.tolerance,
            swept_box: r.swept_box.clone(),
            evaluated: r.evaluated,
            details: r.details.clone(),
        }
    }

    pub fn slepian(n: u64, s: &SlepianCheck) -> Self {
        ResultLine::Slepian {
            n,
            full: s.full,
            product: s.product,
            combined_half_width: s.combined_half_width,
            margin: s.margin,
            pass: s.pass,
        }
    }
}

/// Header of a run: what was asked for and how long it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    #[serde(rename = "type")]
    pub kind: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub build: String,
    pub timestamp_unix: u64,
    pub duration_secs: f64,
    /// Set when the run stopped early; the results before it are kept.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub header: RunHeader,
    pub results: Vec<ResultLine>,
}

impl RunRecord {
    /// The result lines as JSONL, without the header.
    pub fn results_jsonl(&self) -> String {
        let mut out = String::new();
        for line in &self.results {
            out.push_str(&serde_json::to_string(line).expect("result lines serialize"));
            out.push('\n');
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        out.push_str(&self.results_jsonl());
        out
    }

    /// Flat projection with one row per result line; fields a row's type
    /// does not carry are left empty.
    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in self.results.iter().flat_map(csv_rows) {
            writer.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let bytes = writer.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn render(&self, format: Format) -> Result<String, CliError> {
        match format {
            Format::Jsonl => Ok(self.to_jsonl()),
            Format::Csv => self.to_csv(),
        }
    }
}

#[derive(Debug, Default, Serialize)]
struct CsvRow {
    kind: &'static str,
    label: String,
    n: Option<u64>,
    scale: Option<f64>,
    trials: Option<u64>,
    successes: Option<u64>,
    p_hat: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    log_p: Option<f64>,
    value: Option<f64>,
    stderr: Option<f64>,
    intercept: Option<f64>,
    r2: Option<f64>,
    product: Option<f64>,
    half_width: Option<f64>,
    margin: Option<f64>,
    pass: Option<bool>,
}

fn csv_rows(line: &ResultLine) -> Vec<CsvRow> {
    let row = match line {
        ResultLine::Estimate { label, params, trials, successes, p_hat, ci, log_p, scale, .. } => CsvRow {
            kind: "estimate",
            label: label.clone(),
            n: params.get("n").map(|n| *n as u64),
            scale: Some(*scale),
            trials: Some(*trials),
            successes: Some(*successes),
            p_hat: Some(*p_hat),
            ci_low: Some(ci[0]),
            ci_high: Some(ci[1]),
            log_p: Some(*log_p),
            ..Default::default()
        },
        ResultLine::Fit { label, slope, stderr, intercept, r2, .. } => CsvRow {
            kind: "fit",
            label: label.clone(),
            value: Some(*slope),
            stderr: Some(*stderr),
            intercept: Some(*intercept),
            r2: Some(*r2),
            ..Default::default()
        },
        ResultLine::Derived { label, value, stderr } => CsvRow {
            kind: "derived",
            label: label.clone(),
            value: Some(*value),
            stderr: Some(*stderr),
            ..Default::default()
        },
        ResultLine::Report { name, worst_margin, pass, .. } => CsvRow {
            kind: "report",
            label: name.clone(),
            margin: Some(*worst_margin),
            pass: Some(*pass),
            ..Default::default()
        },
        ResultLine::Slepian { n, full, product, combined_half_width, margin, pass } => CsvRow {
            kind: "slepian",
            label: "slepian".into(),
            n: Some(*n),
            p_hat: Some(*full),
            product: Some(*product),
            half_width: Some(*combined_half_width),
            margin: Some(*margin),
            pass: Some(*pass),
            ..Default::default()
        },
        ResultLine::EdgeRate { n, neg_log_b_over_sqrt_n, neg_log_c_over_sqrt_n } => {
            let edge = |label: &str, value: f64| CsvRow {
                kind: "edge_rate",
                label: label.into(),
                n: Some(*n),
                value: Some(value),
                ..Default::default()
            };
            return vec![edge("B", *neg_log_b_over_sqrt_n), edge("C", *neg_log_c_over_sqrt_n)];
        }
    };
    vec![row]
}

/// Writes `contents` to a sibling temporary file and renames it over `path`,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let file_name = path.file_name().ok_or_else(|| CliError::Io(format!("{} has no file name", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents.as_bytes())?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
