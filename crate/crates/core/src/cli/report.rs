use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{DeletionMode, DiagonalMode};
use crate::backends::Mode;
use crate::personas::Condition;

use super::{csv_bytes, fixed, read_csv, read_json, write_file, write_json, CliError};

pub const ROW_VALID: &str = "Percentage of valid responses (%)";
pub const ROW_CLC: &str = "Cross-Language Consistency (CLC)";
pub const ROW_IGD: &str = "Inter-Group Differentiation (IGD)";

const VEGA_LITE_SCHEMA: &str = "https://vega.github.io/schema/vega-lite/v5.json";

/// `backends/<id>/metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    #[serde(default)]
    pub backend_id: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub mode: Option<Mode>,
    pub valid_pct: f64,
    pub clc: Option<f64>,
    pub igd: Option<f64>,
    #[serde(default)]
    pub deletion: Option<DeletionMode>,
    #[serde(default)]
    pub clc_diagonal: Option<DiagonalMode>,
    #[serde(default)]
    pub estimates: usize,
    #[serde(default)]
    pub confident: usize,
    #[serde(default)]
    pub excluded: usize,
    #[serde(default)]
    pub invalid: usize,
    #[serde(default)]
    pub missing_cells: usize,
    #[serde(default)]
    pub cross_language_disagreement: BTreeMap<String, Option<f64>>,
    #[serde(default = "yes")]
    pub complete: bool,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
struct ManifestView {
    backends: Vec<BackendView>,
}

#[derive(Deserialize)]
struct BackendView {
    id: String,
    #[serde(default = "yes")]
    complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportSummary {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Renders the comparison table, heatmaps and intersection plots from the
/// files in `run_dir` alone.
pub fn cmd_report(run_dir: &Path, out_dir: &Path) -> Result<ReportSummary, CliError> {
    let manifest: ManifestView = read_json(&run_dir.join("manifest.json"))?;
    let mut files = Vec::new();
    let mut columns = Vec::new();

    for b in &manifest.backends {
        let src = run_dir.join("backends").join(&b.id);
        let metrics: MetricsFile = read_json(&src.join("metrics.json"))?;
        let values = read_correlation(&src.join("correlation.csv"))?;
        let upset = read_csv(&src.join("upset.csv"))?;

        let dst = out_dir.join(&b.id);
        let labels: Vec<String> = Condition::all().iter().map(|c| c.display_label()).collect();
        let title = format!("{}: phi correlation between persona conditions", b.id);

        let mut emit = |name: &str, bytes: Vec<u8>| -> Result<(), CliError> {
            let p = dst.join(name);
            write_file(&p, bytes)?;
            files.push(p);
            Ok(())
        };
        emit("heatmap.csv", heatmap_csv(&labels, &values))?;
        emit("heatmap_long.csv", heatmap_long_csv(&values))?;
        emit("heatmap.svg", render_heatmap_svg(&title, &labels, &values).into_bytes())?;
        emit("heatmap.vl.json", pretty(&heatmap_spec(&b.id)))?;
        let rows: Vec<Vec<String>> = upset.1;
        let header: Vec<&str> = upset.0.iter().map(String::as_str).collect();
        emit("upset.csv", csv_bytes(&header, &rows))?;
        emit("upset.vl.json", pretty(&upset_spec(&b.id)))?;

        let name = if b.complete && metrics.complete {
            b.id.clone()
        } else {
            format!("{} (partial)", b.id)
        };
        columns.push((name, metrics));
    }

    let md = out_dir.join("table.md");
    write_file(&md, table_markdown(&columns))?;
    let csv = out_dir.join("table.csv");
    write_file(&csv, table_csv(&columns))?;
    let json_path = out_dir.join("table.json");
    let summary: BTreeMap<&str, serde_json::Value> = columns
        .iter()
        .map(|(n, m)| (n.as_str(), json!({"valid_pct": m.valid_pct, "clc": m.clc, "igd": m.igd})))
        .collect();
    write_json(&json_path, &summary)?;
    files.extend([md, csv, json_path]);
    Ok(ReportSummary {
        out_dir: out_dir.to_path_buf(),
        files,
    })
}

fn pretty(v: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s.into_bytes()
}

fn read_correlation(path: &Path) -> Result<Vec<Vec<Option<f64>>>, CliError> {
    let (header, rows) = read_csv(path)?;
    let expected: Vec<String> = Condition::all().iter().map(|c| c.label()).collect();
    if header.len() != 13 || header[1..] != expected[..] {
        return Err(CliError::artifact(path, "unexpected correlation header"));
    }
    if rows.len() != 12 {
        return Err(CliError::artifact(path, format!("expected 12 rows, found {}", rows.len())));
    }
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            if row.first() != Some(&expected[i]) || row.len() != 13 {
                return Err(CliError::artifact(path, format!("row {} is malformed", i + 1)));
            }
            row[1..]
                .iter()
                .map(|cell| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse()
                            .map(Some)
                            .map_err(|_| CliError::artifact(path, format!("bad value {cell:?}")))
                    }
                })
                .collect()
        })
        .collect()
}

fn cell_text(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| fixed(x, decimals)).unwrap_or_else(|| "n/a".into())
}

pub(crate) fn table_markdown(columns: &[(String, MetricsFile)]) -> String {
    let mut s = String::from("| Metric |");
    for (name, _) in columns {
        let _ = write!(s, " {name} |");
    }
    s.push_str("\n| --- |");
    for _ in columns {
        s.push_str(" ---: |");
    }
    s.push('\n');
    for (label, row) in table_rows(columns) {
        let _ = write!(s, "| {label} |");
        for v in row {
            let _ = write!(s, " {v} |");
        }
        s.push('\n');
    }
    s
}

fn table_rows(columns: &[(String, MetricsFile)]) -> Vec<(&'static str, Vec<String>)> {
    vec![
        (ROW_VALID, columns.iter().map(|(_, m)| fixed(m.valid_pct, 1)).collect()),
        (ROW_CLC, columns.iter().map(|(_, m)| cell_text(m.clc, 2)).collect()),
        (ROW_IGD, columns.iter().map(|(_, m)| cell_text(m.igd, 2)).collect()),
    ]
}

fn table_csv(columns: &[(String, MetricsFile)]) -> Vec<u8> {
    let mut header = vec!["metric"];
    header.extend(columns.iter().map(|(n, _)| n.as_str()));
    let rows: Vec<Vec<String>> = table_rows(columns)
        .into_iter()
        .map(|(label, vals)| std::iter::once(label.to_owned()).chain(vals).collect())
        .collect();
    csv_bytes(&header, &rows)
}

fn heatmap_csv(labels: &[String], values: &[Vec<Option<f64>>]) -> Vec<u8> {
    let mut header = vec![""];
    header.extend(labels.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = labels
        .iter()
        .zip(values)
        .map(|(l, row)| {
            std::iter::once(l.clone())
                .chain(row.iter().map(|v| v.map(|x| fixed(x, 2)).unwrap_or_default()))
                .collect()
        })
        .collect();
    csv_bytes(&header, &rows)
}

fn heatmap_long_csv(values: &[Vec<Option<f64>>]) -> Vec<u8> {
    let all = Condition::all();
    let mut rows = Vec::new();
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            rows.push(vec![
                all[i].display_label(),
                all[j].display_label(),
                v.map(|x| fixed(x, 6)).unwrap_or_default(),
            ]);
        }
    }
    csv_bytes(&["row", "col", "r"], &rows)
}

fn heatmap_spec(id: &str) -> serde_json::Value {
    let order: Vec<String> = Condition::all().iter().map(|c| c.display_label()).collect();
    json!({
        "$schema": VEGA_LITE_SCHEMA,
        "title": format!("{id}: phi correlation between persona conditions"),
        "data": {"url": "heatmap_long.csv"},
        "width": 480,
        "height": 480,
        "encoding": {
            "x": {"field": "col", "type": "ordinal", "sort": order, "title": null},
            "y": {"field": "row", "type": "ordinal", "sort": order, "title": null}
        },
        "layer": [
            {
                "mark": "rect",
                "encoding": {
                    "color": {
                        "field": "r",
                        "type": "quantitative",
                        "scale": {"domain": [-1, 1], "scheme": "redblue", "reverse": true}
                    }
                }
            },
            {
                "mark": {"type": "text", "fontSize": 9},
                "encoding": {"text": {"field": "r", "type": "quantitative", "format": ".2f"}}
            }
        ]
    })
}

fn upset_spec(id: &str) -> serde_json::Value {
    json!({
        "$schema": VEGA_LITE_SCHEMA,
        "title": format!("{id}: joint labels across EN, PL, RU"),
        "data": {"url": "upset.csv"},
        "mark": "bar",
        "encoding": {
            "column": {"field": "group", "type": "nominal"},
            "x": {"field": "pattern", "type": "ordinal", "title": "EN PL RU"},
            "y": {"field": "count", "type": "quantitative"}
        }
    })
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Diverging blue-white-red fill for a correlation in [-1, 1].
fn fill(v: Option<f64>) -> String {
    let Some(v) = v else { return "#cccccc".into() };
    let t = v.clamp(-1.0, 1.0);
    let (end, k) = if t >= 0.0 { ((178.0, 24.0, 43.0), t) } else { ((33.0, 102.0, 172.0), -t) };
    let mix = |e: f64| (255.0 + (e - 255.0) * k).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(end.0), mix(end.1), mix(end.2))
}

const CELL: usize = 36;
const LEFT: usize = 200;
const TOP: usize = 200;

/// Self-contained SVG heatmap of a square matrix.
pub fn render_heatmap_svg(title: &str, labels: &[String], values: &[Vec<Option<f64>>]) -> String {
    let n = labels.len();
    let width = LEFT + n * CELL + 20;
    let height = TOP + n * CELL + 20;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r##"<rect width="{width}" height="{height}" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, xml_escape(title));
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + i * CELL + CELL / 2 + 4;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            LEFT - 6,
            xml_escape(label)
        );
        let x = LEFT + i * CELL + CELL / 2 + 4;
        let _ = writeln!(
            s,
            r#"<text transform="translate({x},{}) rotate(-60)">{}</text>"#,
            TOP - 6,
            xml_escape(label)
        );
    }
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let (x, y) = (LEFT + j * CELL, TOP + i * CELL);
            let text = cell_text(*v, 2);
            let ink = if v.is_some_and(|r| r.abs() > 0.6) { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}"><title>{} / {}: {text}</title></rect>"#,
                fill(*v),
                xml_escape(&labels[i]),
                xml_escape(&labels[j])
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" font-size="9" fill="{ink}">{text}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 3
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
