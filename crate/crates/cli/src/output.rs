//! Result files. Every payload is a pure function of the config and seed;
//! wall-clock data goes to `metadata.json` only.

use std::fs;
use std::path::{Path, PathBuf};

use sae_core::sim::{GroupRow, MethodTable, StudyTables, Summary};
use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::error::CliError;

pub const PARTIAL_MARKER: &str = ".partial";

/// 17 significant digits, enough to recover the exact f64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn io_err(path: &Path, e: impl ToString) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes files into one directory. A `.partial` marker exists from the first
/// write until [`OutputDir::finish`], so an interrupted run is recognisable.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    formats: Vec<Format>,
}

impl OutputDir {
    pub fn create(dir: &Path, formats: &[Format]) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let marker = dir.join(PARTIAL_MARKER);
        fs::write(&marker, b"").map_err(|e| io_err(&marker, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            formats: formats.to_vec(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Atomic within the directory: write to a temporary name, then rename.
    pub fn write_file(&self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| io_err(&target, e))
    }

    /// `stem.csv` and/or `stem.json`, depending on the configured formats.
    pub fn write_table<T: Serialize + ?Sized>(&self, stem: &str, csv: &CsvTable, json: &T) -> Result<(), CliError> {
        for format in &self.formats {
            match format {
                Format::Csv => self.write_file(&format!("{stem}.csv"), csv.render().as_bytes())?,
                Format::Json => {
                    let mut text = serde_json::to_string_pretty(json).map_err(|e| io_err(&self.dir, e))?;
                    text.push('\n');
                    self.write_file(&format!("{stem}.json"), text.as_bytes())?
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        let marker = self.dir.join(PARTIAL_MARKER);
        fs::remove_file(&marker).map_err(|e| io_err(&marker, e))
    }
}

/// A header plus rows of already-formatted cells.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

/// Contents of `tables_t1t2.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T12File {
    pub m: usize,
    pub replications: usize,
    pub flagged: usize,
    pub tail_fallbacks: usize,
    pub per_area: Vec<sae_core::sim::AreaT12>,
    pub t1: Summary,
    pub t2: Summary,
    pub groups: Vec<GroupRow>,
}

/// One row of `groups.*`; `method` is empty for T1 and T2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLine {
    pub method: String,
    pub group: String,
    pub measure: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDiagnostics {
    pub method: String,
    pub failures: usize,
    pub negative: usize,
    pub tilts_accepted: usize,
    pub stencil_shrinks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub seed: u64,
    pub replications: usize,
    pub flagged: usize,
    pub tail_fallbacks: usize,
    pub methods: Vec<MethodDiagnostics>,
}

fn summary_cells(s: &Summary) -> Vec<String> {
    vec![
        fmt_f64(s.median),
        fmt_f64(s.mean),
        fmt_opt(s.median_se),
        fmt_opt(s.mean_se),
    ]
}

/// Everything-area rows come first under group `all`.
fn group_lines(tables: &StudyTables) -> Vec<GroupLine> {
    let line = |method: &str, group: &str, measure: &str, summary: Summary| GroupLine {
        method: method.into(),
        group: group.into(),
        measure: measure.into(),
        summary,
    };
    let mut out = vec![line("", "all", "T1", tables.t1), line("", "all", "T2", tables.t2)];
    out.extend(
        tables
            .t12_groups
            .iter()
            .map(|g| line("", &g.group, &g.measure, g.summary)),
    );
    for m in &tables.methods {
        out.push(line(&m.method, "all", "T3", m.t3));
        out.push(line(&m.method, "all", "T4", m.t4));
        out.extend(
            m.groups
                .iter()
                .map(|g| line(&m.method, &g.group, &g.measure, g.summary)),
        );
    }
    out
}

pub fn write_study(out: &OutputDir, tables: &StudyTables, seed: u64) -> Result<(), CliError> {
    let mut t12 = CsvTable::new(&["area", "t1", "t2", "t1_skipped", "replications"]);
    for (i, a) in tables.t12.iter().enumerate() {
        t12.push(vec![
            (i + 1).to_string(),
            fmt_f64(a.t1),
            fmt_f64(a.t2),
            a.t1_skipped.to_string(),
            a.replications.to_string(),
        ]);
    }
    let t12_json = T12File {
        m: tables.m,
        replications: tables.replications,
        flagged: tables.flagged,
        tail_fallbacks: tables.tail_fallbacks,
        per_area: tables.t12.clone(),
        t1: tables.t1,
        t2: tables.t2,
        groups: tables.t12_groups.clone(),
    };
    out.write_table("tables_t1t2", &t12, &t12_json)?;

    let mut t34 = CsvTable::new(&["method", "area", "t3", "t4", "replications"]);
    for m in &tables.methods {
        for (i, a) in m.per_area.iter().enumerate() {
            t34.push(vec![
                m.method.clone(),
                (i + 1).to_string(),
                fmt_f64(a.t3),
                fmt_f64(a.t4),
                a.replications.to_string(),
            ]);
        }
    }
    out.write_table("tables_t3t4", &t34, &tables.methods)?;

    let lines = group_lines(tables);
    let mut groups = CsvTable::new(&["method", "group", "measure", "median", "mean", "median_se", "mean_se"]);
    for g in &lines {
        let mut row = vec![g.method.clone(), g.group.clone(), g.measure.clone()];
        row.extend(summary_cells(&g.summary));
        groups.push(row);
    }
    out.write_table("groups", &groups, &lines)?;

    let diag = Diagnostics {
        seed,
        replications: tables.replications,
        flagged: tables.flagged,
        tail_fallbacks: tables.tail_fallbacks,
        methods: tables
            .methods
            .iter()
            .map(|m| MethodDiagnostics {
                method: m.method.clone(),
                failures: m.failures,
                negative: m.negative,
                tilts_accepted: m.tilts_accepted,
                stencil_shrinks: m.stencil_shrinks,
            })
            .collect(),
    };
    let mut d = CsvTable::new(&["scope", "name", "value"]);
    for (name, v) in [
        ("seed", seed),
        ("replications", diag.replications as u64),
        ("flagged", diag.flagged as u64),
        ("tail_fallbacks", diag.tail_fallbacks as u64),
    ] {
        d.push(vec!["study".into(), name.into(), v.to_string()]);
    }
    for m in &diag.methods {
        for (name, v) in [
            ("failures", m.failures),
            ("negative", m.negative),
            ("tilts_accepted", m.tilts_accepted),
            ("stencil_shrinks", m.stencil_shrinks),
        ] {
            d.push(vec![m.method.clone(), name.into(), v.to_string()]);
        }
    }
    out.write_table("diagnostics", &d, &diag)
}

/// Rebuilds the tables from `tables_t1t2.json` and `tables_t3t4.json`.
pub fn read_study(dir: &Path) -> Result<StudyTables, CliError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|e| io_err(&path, e))
    };
    let t12: T12File = serde_json::from_str(&read("tables_t1t2.json")?).map_err(|e| io_err(dir, e))?;
    let methods: Vec<MethodTable> = serde_json::from_str(&read("tables_t3t4.json")?).map_err(|e| io_err(dir, e))?;
    Ok(StudyTables {
        m: t12.m,
        replications: t12.replications,
        flagged: t12.flagged,
        tail_fallbacks: t12.tail_fallbacks,
        t12: t12.per_area,
        t1: t12.t1,
        t2: t12.t2,
        t12_groups: t12.groups,
        methods,
    })
}

/// Fixed-width summary for the terminal.
pub fn pretty_study(tables: &StudyTables) -> String {
    let mut s = format!(
        "m = {}, R = {} ({} flagged)\n{:<10}{:>8}{:>12}{:>12}\n",
        tables.m, tables.replications, tables.flagged, "", "measure", "median", "mean"
    );
    for g in group_lines(tables).iter().filter(|g| g.group == "all") {
        let who = if g.method.is_empty() { "ebp" } else { &g.method };
        s += &format!(
            "{:<10}{:>8}{:>12.4}{:>12.4}\n",
            who, g.measure, g.summary.median, g.summary.mean
        );
    }
    s
}
