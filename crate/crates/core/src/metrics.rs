//! Session records, per-interface aggregation and mode-vs-mode comparison
//! tables.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no records to aggregate")]
    EmptyGroup,
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("interface labels differ between modes: {0}")]
    LabelMismatch(String),
    #[error("zero baseline")]
    ZeroBaseline,
    #[error("no aggregate for mode {mode} / {im}")]
    Missing { mode: u8, im: String },
}

/// Seconds spent on each task group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskTimes {
    pub bolts: f64,
    pub busbar: f64,
    pub cover: f64,
    pub modules: f64,
}

impl TaskTimes {
    pub fn total(&self) -> f64 {
        self.bolts + self.busbar + self.cover + self.modules
    }

    fn values(&self) -> [f64; 4] {
        [self.bolts, self.busbar, self.cover, self.modules]
    }
}

/// One trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    /// 1 = manual, 2 = semi-autonomous.
    pub mode: u8,
    pub im_label: String,
    pub per_task_s: TaskTimes,
    pub sorted_bolts: u32,
    pub violations: u64,
}

impl SessionRecord {
    pub fn validate(&self, bolt_count: Option<u32>) -> Result<(), MetricsError> {
        if !matches!(self.mode, 1 | 2) {
            return Err(MetricsError::InvalidRecord(format!("mode {} is not 1 or 2", self.mode)));
        }
        if self.per_task_s.values().iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(MetricsError::InvalidRecord("task durations must be finite and >= 0".into()));
        }
        if let Some(max) = bolt_count {
            if self.sorted_bolts > max {
                return Err(MetricsError::InvalidRecord(format!(
                    "sorted_bolts {} exceeds bolt count {max}",
                    self.sorted_bolts
                )));
            }
        }
        Ok(())
    }
}

/// Means over the trials of one (mode, interface) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: u8,
    pub im_label: String,
    pub trials: usize,
    pub per_task_s: TaskTimes,
    /// Sum of the per-task means.
    pub total_s: f64,
    pub sorted_bolts: f64,
    pub violations: f64,
}

// Sorting before summing makes the mean independent of record order.
fn mean(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.into_iter().sum::<f64>() / n
}

/// Aggregates records that all belong to one group.
pub fn aggregate_group(records: &[SessionRecord]) -> Result<Aggregate, MetricsError> {
    let first = records.first().ok_or(MetricsError::EmptyGroup)?;
    for r in records {
        r.validate(None)?;
        if r.mode != first.mode || r.im_label != first.im_label {
            return Err(MetricsError::InvalidRecord("records span several groups".into()));
        }
    }
    let field = |f: fn(&SessionRecord) -> f64| mean(records.iter().map(f).collect());
    let per_task_s = TaskTimes {
        bolts: field(|r| r.per_task_s.bolts),
        busbar: field(|r| r.per_task_s.busbar),
        cover: field(|r| r.per_task_s.cover),
        modules: field(|r| r.per_task_s.modules),
    };
    Ok(Aggregate {
        mode: first.mode,
        im_label: first.im_label.clone(),
        trials: records.len(),
        total_s: per_task_s.total(),
        per_task_s,
        sorted_bolts: field(|r| r.sorted_bolts as f64),
        violations: field(|r| r.violations as f64),
    })
}

/// Groups by `(mode, im_label)` and aggregates each group, sorted by key.
pub fn aggregate(records: &[SessionRecord]) -> Result<Vec<Aggregate>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let mut groups: BTreeMap<(u8, &str), Vec<SessionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.mode, r.im_label.as_str())).or_default().push(r.clone());
    }
    groups.values().map(|g| aggregate_group(g)).collect()
}

/// Signed percent changes from mode 1 to mode 2 for one interface.
/// `None` marks a zero baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub im_label: String,
    pub d_time_pct: Option<f64>,
    pub d_bolts_pct: Option<f64>,
    pub d_violations_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Unweighted mean of each column over rows with a defined value.
    pub average: ComparisonRow,
}

pub fn percent_change(from: f64, to: f64) -> Option<f64> {
    if from == 0.0 {
        None
    } else {
        Some((to - from) / from * 100.0)
    }
}

fn column_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Pairs mode-1 and mode-2 aggregates by interface label. Rows follow the
/// order of `mode1`. Values are unrounded; see [`round2`].
pub fn compare(mode1: &[Aggregate], mode2: &[Aggregate]) -> Result<Comparison, MetricsError> {
    let mut labels1: Vec<&str> = mode1.iter().map(|a| a.im_label.as_str()).collect();
    let mut labels2: Vec<&str> = mode2.iter().map(|a| a.im_label.as_str()).collect();
    labels1.sort_unstable();
    labels2.sort_unstable();
    if labels1 != labels2 {
        return Err(MetricsError::LabelMismatch(format!("{labels1:?} vs {labels2:?}")));
    }
    let rows: Vec<ComparisonRow> = mode1
        .iter()
        .map(|a| {
            let b = mode2.iter().find(|b| b.im_label == a.im_label).expect("labels checked above");
            ComparisonRow {
                im_label: a.im_label.clone(),
                d_time_pct: percent_change(a.total_s, b.total_s),
                d_bolts_pct: percent_change(a.sorted_bolts, b.sorted_bolts),
                d_violations_pct: percent_change(a.violations, b.violations),
            }
        })
        .collect();
    let average = ComparisonRow {
        im_label: "Average Change".into(),
        d_time_pct: column_mean(rows.iter().map(|r| r.d_time_pct)),
        d_bolts_pct: column_mean(rows.iter().map(|r| r.d_bolts_pct)),
        d_violations_pct: column_mean(rows.iter().map(|r| r.d_violations_pct)),
    };
    Ok(Comparison { rows, average })
}

/// Time reduction of `mode2` relative to `mode1`, in percent. Negative
/// values mean `mode2` was slower.
pub fn headline(mode1: &Aggregate, mode2: &Aggregate) -> Result<f64, MetricsError> {
    if mode1.total_s == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((mode1.total_s - mode2.total_s) / mode1.total_s * 100.0)
}

pub fn find<'a>(aggs: &'a [Aggregate], mode: u8, im: &str) -> Result<&'a Aggregate, MetricsError> {
    aggs.iter()
        .find(|a| a.mode == mode && a.im_label == im)
        .ok_or_else(|| MetricsError::Missing { mode, im: im.into() })
}

pub fn round2(x: f64) -> f64 {
    libm::round(x * 100.0) / 100.0
}

/// `mm:ss`, flooring fractional seconds.
pub fn format_mmss(seconds: f64) -> String {
    let s = libm::floor(seconds.max(0.0)) as u64;
    format!("{:02}:{:02}", s / 60, s % 60)
}

/// `+2.85%`, `-40.00%`; undefined values render as `n/a`.
pub fn format_pct(x: Option<f64>) -> String {
    match x {
        None => "n/a".into(),
        Some(v) => {
            let r = round2(v);
            // avoid "-0.00%"
            let r = if r == 0.0 { 0.0 } else { r };
            if r >= 0.0 {
                format!("+{r:.2}%")
            } else {
                format!("{r:.2}%")
            }
        }
    }
}

/// A rendered report table: a title, column headings and string cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn im_labels(aggs: &[Aggregate]) -> Vec<String> {
    let mut labels: Vec<String> = aggs.iter().map(|a| a.im_label.clone()).collect();
    labels.sort();
    labels.dedup();
    labels
}

fn cell(agg: Option<&Aggregate>, f: impl Fn(&Aggregate) -> String) -> String {
    agg.map(f).unwrap_or_default()
}

/// Total time, sorted bolts and violations per interface and mode.
pub fn task_performance_table(aggs: &[Aggregate]) -> Table {
    let mut header = vec!["IM".to_string()];
    for mode in [1, 2] {
        for h in ["Average Time", "Average Sorted Bolts", "Average Joint Limit Violations"] {
            header.push(format!("Mode {mode} {h}"));
        }
    }
    let rows = im_labels(aggs)
        .into_iter()
        .map(|im| {
            let mut row = vec![im.clone()];
            for mode in [1, 2] {
                let a = find(aggs, mode, &im).ok();
                row.push(cell(a, |a| format_mmss(a.total_s)));
                row.push(cell(a, |a| format!("{:.2}", a.sorted_bolts)));
                row.push(cell(a, |a| format!("{:.2}", a.violations)));
            }
            row
        })
        .collect();
    Table { title: "Task Performance (mm:ss)".into(), header, rows }
}

/// Mean time per task group, per interface and mode.
pub fn task_times_table(aggs: &[Aggregate]) -> Table {
    let mut header = vec!["IM".to_string()];
    for mode in [1, 2] {
        for h in ["Bolts", "Busbar", "Cover Case", "Battery Cells"] {
            header.push(format!("Mode {mode} {h}"));
        }
    }
    let rows = im_labels(aggs)
        .into_iter()
        .map(|im| {
            let mut row = vec![im.clone()];
            for mode in [1, 2] {
                let a = find(aggs, mode, &im).ok();
                for k in 0..4 {
                    row.push(cell(a, |a| format_mmss(a.per_task_s.values()[k])));
                }
            }
            row
        })
        .collect();
    Table { title: "Tasks Average Times (mm:ss)".into(), header, rows }
}

pub fn comparison_table(cmp: &Comparison) -> Table {
    let header = ["Method", "Average Time", "Average Sorted Bolts", "Average Joint Limit Violations"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = cmp
        .rows
        .iter()
        .chain(core::iter::once(&cmp.average))
        .map(|r| {
            vec![
                r.im_label.clone(),
                format_pct(r.d_time_pct),
                format_pct(r.d_bolts_pct),
                format_pct(r.d_violations_pct),
            ]
        })
        .collect();
    Table { title: "Comparison between IMs on the different modes".into(), header, rows }
}
