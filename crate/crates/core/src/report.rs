//! Tables, SVG figures and the run manifest.
//!
//! Percentages are rounded half-up from exact integer ratios, never from
//! floating-point shares, so a given count/total always renders the same way.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{ModalityRow, PhiMatrix, PhiValue, SkillFrequencyTable, SpecShare, TierFilter};
use crate::classify::Specialization;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unsupported table format `{0}`")]
    UnsupportedFormat(String),
    #[error("nothing to render: {0}")]
    EmptyInput(String),
    #[error("stage `{0}` has no output file")]
    MissingStage(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Md,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Md => "md",
        }
    }
}

impl FromStr for TableFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Md),
            other => Err(ReportError::UnsupportedFormat(other.to_string())),
        }
    }
}

/// `count / total` as a percentage with `decimals` places, rounded half-up.
/// A zero total renders as zero.
pub fn percent(count: usize, total: usize, decimals: u32) -> String {
    let scale = 10u128.pow(decimals);
    let scaled = if total == 0 { 0 } else { (2 * count as u128 * 100 * scale + total as u128) / (2 * total as u128) };
    if decimals == 0 {
        format!("{scaled}%")
    } else {
        format!("{}.{:0width$}%", scaled / scale, scaled % scale, width = decimals as usize)
    }
}

/// Integer with comma thousands separators.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// The tables this module knows how to lay out.
#[derive(Debug, Clone, Copy)]
pub enum Table<'a> {
    /// One row per specialization: n, then "Name (NN%)" cells by rank.
    Skills(&'a [SkillFrequencyTable]),
    /// One row per modality: n, both denominators, then top-3 "SPEC (NN.N%)".
    Modalities(&'a [ModalityRow]),
    /// One row per (tier, specialization).
    Shares(&'a [(TierFilter, Vec<SpecShare>)]),
}

struct Grid {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn skills_grid(tables: &[SkillFrequencyTable]) -> Grid {
    let k = tables.iter().map(|t| t.rows.len()).max().unwrap_or(0).max(1);
    let mut header = vec!["Specialization".to_string(), "n".to_string()];
    header.extend((1..=k).map(|i| format!("#{i} Skill")));
    let rows = tables
        .iter()
        .map(|t| {
            let mut row = vec![t.spec.name().to_string(), thousands(t.universe)];
            row.extend((0..k).map(|i| match t.rows.get(i) {
                Some(r) => format!("{} ({})", r.canonical, percent(r.count, t.universe, 0)),
                None => String::new(),
            }));
            row
        })
        .collect();
    Grid { header, rows }
}

fn modalities_grid(rows: &[ModalityRow]) -> Grid {
    let header =
        ["Modality", "n", "Share of tier rows", "Share of retained rows", "#1", "#2", "#3"].map(String::from).to_vec();
    let rows = rows
        .iter()
        .map(|m| {
            let mut row = vec![
                m.modality.clone(),
                thousands(m.total_mentions),
                percent(m.total_mentions, m.tier_rows, 1),
                percent(m.total_mentions, m.retained_rows, 1),
            ];
            row.extend((0..3).map(|i| match m.top_specs.get(i) {
                Some(r) => format!("{} ({})", r.spec.abbrev(), percent(r.count, r.universe, 1)),
                None => String::new(),
            }));
            row
        })
        .collect();
    Grid { header, rows }
}

fn shares_grid(tiers: &[(TierFilter, Vec<SpecShare>)]) -> Grid {
    let header = ["Tier", "Specialization", "Abbreviation", "n", "Total", "Share"].map(String::from).to_vec();
    let rows = tiers
        .iter()
        .flat_map(|(tier, shares)| {
            shares.iter().map(move |s| {
                vec![
                    tier.as_str().to_string(),
                    s.spec.name().to_string(),
                    s.spec.abbrev().to_string(),
                    thousands(s.count),
                    thousands(s.total),
                    percent(s.count, s.total, 1),
                ]
            })
        })
        .collect();
    Grid { header, rows }
}

fn markdown(grid: &Grid) -> String {
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    let mut out = line(&grid.header);
    out.push_str(&line(&vec!["---".to_string(); grid.header.len()]));
    for row in &grid.rows {
        out.push_str(&line(row));
    }
    out
}

fn csv_text(grid: &Grid) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(&grid.header).expect("in-memory write");
    for row in &grid.rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

pub fn render_table(table: Table<'_>, format: TableFormat, allow_empty: bool) -> Result<String, ReportError> {
    let grid = match table {
        Table::Skills(t) => skills_grid(t),
        Table::Modalities(m) => modalities_grid(m),
        Table::Shares(s) => shares_grid(s),
    };
    if grid.rows.is_empty() && !allow_empty {
        return Err(ReportError::EmptyInput("table has no rows".into()));
    }
    Ok(match format {
        TableFormat::Md => markdown(&grid),
        TableFormat::Csv => csv_text(&grid),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    let io = |source| ReportError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}

pub fn emit_table(table: Table<'_>, format: TableFormat, path: &Path, allow_empty: bool) -> Result<(), ReportError> {
    write_file(path, &render_table(table, format, allow_empty)?)
}

/// Phi grid as CSV: specialization abbreviations on both axes, `undefined`
/// for undefined cells, empty on the diagonal.
pub fn phi_csv(phi: &PhiMatrix) -> String {
    let mut header = vec!["spec".to_string()];
    header.extend(Specialization::ALL.iter().map(|s| s.abbrev().to_string()));
    let rows = Specialization::ALL
        .iter()
        .map(|&r| {
            let mut row = vec![r.abbrev().to_string()];
            row.extend(Specialization::ALL.iter().map(|&c| match phi.get(r, c) {
                None => String::new(),
                Some(PhiValue::Defined(v)) => format!("{v:.6}"),
                Some(PhiValue::Undefined(_)) => "undefined".to_string(),
            }));
            row
        })
        .collect();
    csv_text(&Grid { header, rows })
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub const BAR_WIDTH: f64 = 600.0;
const BAR_LABEL_WIDTH: f64 = 260.0;
const BAR_HEIGHT: f64 = 24.0;
const BAR_GAP: f64 = 10.0;

/// Horizontal bar chart, one bar per share in the given order. Bar width is
/// `share * BAR_WIDTH`.
pub fn bar_chart_svg(shares: &[SpecShare]) -> Result<String, ReportError> {
    if shares.is_empty() {
        return Err(ReportError::EmptyInput("no shares to chart".into()));
    }
    let top = 40.0;
    let height = top + shares.len() as f64 * (BAR_HEIGHT + BAR_GAP) + 20.0;
    let width = BAR_LABEL_WIDTH + BAR_WIDTH + 140.0;
    let total = shares[0].total;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.0}" y="24" font-size="15" font-weight="bold">Aligned positions by specialization (n = {})</text>"#,
        BAR_LABEL_WIDTH,
        thousands(total)
    );
    for (i, s) in shares.iter().enumerate() {
        let y = top + i as f64 * (BAR_HEIGHT + BAR_GAP);
        let w = if s.total == 0 { 0.0 } else { s.count as f64 / s.total as f64 * BAR_WIDTH };
        let label_y = y + BAR_HEIGHT / 2.0 + 4.5;
        let _ = writeln!(
            svg,
            r#"<text x="{:.0}" y="{label_y:.1}" text-anchor="end">{}</text>"#,
            BAR_LABEL_WIDTH - 8.0,
            xml_escape(s.spec.name())
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{BAR_LABEL_WIDTH:.0}" y="{y:.1}" width="{w:.2}" height="{BAR_HEIGHT:.0}" fill="#3b6ea8" data-spec="{}"/>"##,
            s.spec.abbrev()
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{label_y:.1}">{} ({})</text>"#,
            BAR_LABEL_WIDTH + w + 6.0,
            thousands(s.count),
            percent(s.count, s.total, 1)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn render_bar_chart(shares: &[SpecShare], out: &Path) -> Result<(), ReportError> {
    write_file(out, &bar_chart_svg(shares)?)
}

const NEGATIVE: (f64, f64, f64) = (33.0, 102.0, 172.0);
const MIDPOINT: (f64, f64, f64) = (247.0, 247.0, 247.0);
const POSITIVE: (f64, f64, f64) = (178.0, 24.0, 43.0);

/// Diverging color anchored at -1, 0 and +1.
pub fn diverging_color(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (end, t) = if v < 0.0 { (NEGATIVE, -v) } else { (POSITIVE, v) };
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(MIDPOINT.0, end.0), mix(MIDPOINT.1, end.1), mix(MIDPOINT.2, end.2))
}

fn two_decimals(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

const CELL: f64 = 64.0;

/// Phi heatmap: lower triangle over all retained rows, upper triangle over
/// Strong rows. Undefined cells are hatched and carry their reason as a
/// tooltip.
pub fn heatmap_svg(phi: &PhiMatrix) -> String {
    let left = 70.0;
    let top = 70.0;
    let size = left + CELL * 8.0 + 30.0;
    let height = top + CELL * 8.0 + 60.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{height:.0}" viewBox="0 0 {size:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    svg.push_str(concat!(
        r#"<defs><pattern id="hatch" width="8" height="8" patternUnits="userSpaceOnUse" patternTransform="rotate(45)">"#,
        r##"<rect width="8" height="8" fill="#ffffff"/><line x1="0" y1="0" x2="0" y2="8" stroke="#999999" stroke-width="3"/>"##,
        "</pattern></defs>\n"
    ));
    let _ = writeln!(
        svg,
        r#"<text x="{left:.0}" y="24" font-size="14" font-weight="bold">Phi coefficients: lower = all aligned (n = {}), upper = strong only (n = {})</text>"#,
        thousands(phi.lower_rows),
        thousands(phi.upper_rows)
    );
    for (i, spec) in Specialization::ALL.iter().enumerate() {
        let c = left + CELL * i as f64 + CELL / 2.0;
        let r = top + CELL * i as f64 + CELL / 2.0 + 4.0;
        let _ =
            writeln!(svg, r#"<text x="{c:.0}" y="{:.0}" text-anchor="middle">{}</text>"#, top - 10.0, spec.abbrev());
        let _ = writeln!(svg, r#"<text x="{:.0}" y="{r:.0}" text-anchor="end">{}</text>"#, left - 8.0, spec.abbrev());
    }
    for (i, row) in Specialization::ALL.iter().enumerate() {
        for (j, col) in Specialization::ALL.iter().enumerate() {
            let x = left + CELL * j as f64;
            let y = top + CELL * i as f64;
            let subset = match i.cmp(&j) {
                std::cmp::Ordering::Greater => "all",
                std::cmp::Ordering::Less => "strong",
                std::cmp::Ordering::Equal => "diagonal",
            };
            let attrs = format!(
                r##"x="{x:.0}" y="{y:.0}" width="{CELL:.0}" height="{CELL:.0}" stroke="#ffffff" data-row="{}" data-col="{}" data-subset="{subset}""##,
                row.abbrev(),
                col.abbrev()
            );
            match phi.get(*row, *col) {
                None => {
                    let _ = writeln!(svg, r##"<rect {attrs} fill="#d9d9d9"/>"##);
                }
                Some(PhiValue::Undefined(reason)) => {
                    let _ = writeln!(
                        svg,
                        r#"<rect {attrs} fill="url(#hatch)"><title>{}</title></rect>"#,
                        xml_escape(reason)
                    );
                }
                Some(PhiValue::Defined(v)) => {
                    let _ = writeln!(svg, r#"<rect {attrs} fill="{}"/>"#, diverging_color(*v));
                    let ink = if v.abs() > 0.6 { "#ffffff" } else { "#111111" };
                    let _ = writeln!(
                        svg,
                        r#"<text x="{:.0}" y="{:.0}" text-anchor="middle" fill="{ink}">{}</text>"#,
                        x + CELL / 2.0,
                        y + CELL / 2.0 + 4.0,
                        two_decimals(*v)
                    );
                }
            }
        }
    }
    let legend_y = top + CELL * 8.0 + 25.0;
    for (k, v) in [-1.0, -0.5, 0.0, 0.5, 1.0].iter().enumerate() {
        let x = left + k as f64 * 90.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.0}" y="{legend_y:.0}" width="20" height="14" fill="{}"/><text x="{:.0}" y="{:.0}">{}</text>"#,
            diverging_color(*v),
            x + 26.0,
            legend_y + 11.0,
            two_decimals(*v)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn render_heatmap(phi: &PhiMatrix, out: &Path) -> Result<(), ReportError> {
    write_file(out, &heatmap_svg(phi))
}

/// Hash of the sorted posting ids.
pub fn corpus_id<'a, I: IntoIterator<Item = &'a str>>(ids: I) -> String {
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_unstable();
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Path relative to the output directory.
    pub file: String,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub corpus_id: String,
    /// Role (`classifier`, `judge`) to model id.
    pub model_ids: BTreeMap<String, String>,
    /// Template name to hash.
    pub prompt_hashes: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub counts: BTreeMap<String, usize>,
    pub generated_at: String,
}

/// Write `manifest.json` under `out_dir` after checking every stage file.
pub fn write_manifest(manifest: &RunManifest, out_dir: &Path) -> Result<PathBuf, ReportError> {
    for stage in &manifest.stages {
        if !out_dir.join(&stage.file).is_file() {
            return Err(ReportError::MissingStage(stage.stage.clone()));
        }
    }
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&path, &text)?;
    Ok(path)
}
