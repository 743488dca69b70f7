use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, Regime, TaskRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Base,
    Adv,
}

impl Variant {
    pub fn adversarial(self) -> bool {
        self == Variant::Adv
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Base => "base",
            Variant::Adv => "adv",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Variant::Base),
            "adv" => Ok(Variant::Adv),
            _ => Err(EvalError::Config(format!("unknown variant {s:?}"))),
        }
    }
}

/// Test-split AUROC of one `(task, regime, variant, seed)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: TaskRef,
    pub regime: Regime,
    pub variant: Variant,
    pub seed: u64,
    /// `None` marks a missing cell; `note` says why.
    pub auroc: Option<f64>,
    pub queries: usize,
    pub note: Option<String>,
}

impl EvalResult {
    pub fn missing(task: TaskRef, regime: Regime, variant: Variant, seed: u64, note: impl Into<String>) -> Self {
        Self { task, regime, variant, seed, auroc: None, queries: 0, note: Some(note.into()) }
    }
}

/// Seed-averaged AUROC of one `(task, regime, variant)`. `delta` is set on
/// adv rows as adv minus base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub regime: Regime,
    pub variant: Variant,
    pub auroc: Option<f64>,
    pub seeds: usize,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// One row per `(regime, variant)`, averaging `rows` over tasks.
    pub averages: Vec<ReportRow>,
}

pub const AVERAGE_LABEL: &str = "average";

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn with_deltas(mut rows: Vec<ReportRow>) -> Vec<ReportRow> {
    let base: BTreeMap<(String, Regime), Option<f64>> = rows
        .iter()
        .filter(|r| r.variant == Variant::Base)
        .map(|r| ((r.task.clone(), r.regime), r.auroc))
        .collect();
    for r in rows.iter_mut().filter(|r| r.variant == Variant::Adv) {
        if let (Some(a), Some(Some(b))) = (r.auroc, base.get(&(r.task.clone(), r.regime))) {
            r.delta = Some(a - b);
        }
    }
    rows
}

impl Report {
    pub fn from_results(results: &[EvalResult]) -> Self {
        let mut cells: BTreeMap<(String, Regime, Variant), Vec<f64>> = BTreeMap::new();
        for r in results {
            let e = cells.entry((r.task.to_string(), r.regime, r.variant)).or_default();
            if let Some(a) = r.auroc {
                e.push(a);
            }
        }
        let rows: Vec<ReportRow> = cells
            .into_iter()
            .map(|((task, regime, variant), v)| ReportRow { task, regime, variant, auroc: mean(&v), seeds: v.len(), delta: None })
            .collect();
        let mut avg: BTreeMap<(Regime, Variant), Vec<f64>> = BTreeMap::new();
        for r in &rows {
            let e = avg.entry((r.regime, r.variant)).or_default();
            if let Some(a) = r.auroc {
                e.push(a);
            }
        }
        let averages = avg
            .into_iter()
            .map(|((regime, variant), v)| ReportRow {
                task: AVERAGE_LABEL.into(),
                regime,
                variant,
                auroc: mean(&v),
                seeds: v.len(),
                delta: None,
            })
            .collect();
        Self { rows: with_deltas(rows), averages: with_deltas(averages) }
    }

    pub fn lookup(&self, task: &str, regime: Regime, variant: Variant) -> Option<&ReportRow> {
        self.rows.iter().chain(&self.averages).find(|r| r.task == task && r.regime == regime && r.variant == variant)
    }

    fn all_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().chain(&self.averages)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,regime,variant,auroc,seeds,delta\n");
        for r in self.all_rows() {
            writeln!(out, "{},{},{},{},{},{}", r.task, r.regime, r.variant, fmt_opt(r.auroc), r.seeds, fmt_opt(r.delta))
                .unwrap();
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| task | regime | variant | AUROC | seeds | adv − base |\n|---|---|---|---|---|---|\n");
        for r in self.all_rows() {
            let task = if r.task == AVERAGE_LABEL { format!("**{}**", r.task) } else { r.task.clone() };
            let auroc = r.auroc.map_or_else(|| "missing".to_string(), |a| format!("{a:.4}"));
            let delta = r.delta.map_or_else(String::new, |d| format!("{d:+.4}"));
            writeln!(out, "| {task} | {} | {} | {auroc} | {} | {delta} |", r.regime, r.variant, r.seeds).unwrap();
        }
        out
    }

    /// Grouped bars of average AUROC per regime, one bar per variant.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 320.0, 40.0);
        let groups: Vec<Regime> = {
            let mut g: Vec<Regime> = self.averages.iter().map(|r| r.regime).collect();
            g.dedup();
            g
        };
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        );
        writeln!(out, "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", h - pad, w - pad, h - pad).unwrap();
        let plot_h = h - 2.0 * pad;
        let slot = if groups.is_empty() { 0.0 } else { (w - 2.0 * pad) / groups.len() as f64 };
        for (gi, regime) in groups.iter().enumerate() {
            let x0 = pad + gi as f64 * slot;
            for (vi, variant) in [Variant::Base, Variant::Adv].into_iter().enumerate() {
                let Some(a) = self.averages.iter().find(|r| r.regime == *regime && r.variant == variant).and_then(|r| r.auroc)
                else {
                    continue;
                };
                let bw = slot / 3.0;
                let x = x0 + slot / 6.0 + vi as f64 * bw;
                let bh = a * plot_h;
                let fill = if variant == Variant::Base { "#8da0cb" } else { "#fc8d62" };
                writeln!(
                    out,
                    "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{bw:.1}\" height=\"{bh:.1}\" fill=\"{fill}\"><title>{regime} {variant}: {a:.4}</title></rect>",
                    h - pad - bh
                )
                .unwrap();
            }
            writeln!(out, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{regime}</text>", x0 + slot / 2.0, h - pad + 16.0).unwrap();
        }
        writeln!(out, "<text x=\"{pad}\" y=\"20\">AUROC by regime (blue base, orange adv)</text>\n</svg>").unwrap();
        out
    }

    /// Writes `report.csv`, `report.md` and, if asked, `report.svg`.
    pub fn write(&self, dir: &Path, emit_plot: bool) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        std::fs::write(dir.join("report.md"), self.to_markdown())?;
        if emit_plot {
            std::fs::write(dir.join("report.svg"), self.to_svg())?;
        }
        Ok(())
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6}"))
}

#[derive(Serialize, Deserialize)]
struct ResultRecord {
    database: String,
    task: String,
    regime: Regime,
    variant: Variant,
    seed: u64,
    auroc: Option<f64>,
    queries: usize,
    note: Option<String>,
}

/// Per-seed results as CSV.
const RESULT_HEADER: [&str; 8] = ["database", "task", "regime", "variant", "seed", "auroc", "queries", "note"];

pub fn write_results(path: &Path, results: &[EvalResult]) -> Result<(), EvalError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(RESULT_HEADER).map_err(csv_err)?;
    for r in results {
        w.serialize(ResultRecord {
            database: r.task.database.clone(),
            task: r.task.task.clone(),
            regime: r.regime,
            variant: r.variant,
            seed: r.seed,
            auroc: r.auroc,
            queries: r.queries,
            note: r.note.clone(),
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<EvalResult>, EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize::<ResultRecord>()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(EvalResult {
                task: TaskRef::new(rec.database, rec.task),
                regime: rec.regime,
                variant: rec.variant,
                seed: rec.seed,
                auroc: rec.auroc,
                queries: rec.queries,
                note: rec.note.filter(|n| !n.is_empty()),
            })
        })
        .collect()
}

fn csv_err(e: csv::Error) -> EvalError {
    EvalError::Config(format!("results file: {e}"))
}
