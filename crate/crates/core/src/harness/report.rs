use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{aggregate, data_equivalence, Aggregate, CurveMode, CurvePoint, EquivStatus, Equivalence};
use crate::error::Result;
use crate::field::RealField;

pub const CURVE_HEADER: [&str; 7] = ["system", "mode", "model_id", "n_examples", "seed", "lr", "test_error"];
pub const SUMMARY_SCHEMA: u32 = 1;

/// Files written by [`emit_report`], relative to its output directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Writes the curve table; an empty table still gets its header row.
pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    wtr.write_record(CURVE_HEADER)?;
    for p in points {
        wtr.serialize(p)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CURVE_HEADER {
        return Err(crate::Error::Format(format!("unexpected curve header {header:?}")));
    }
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Blue through white to red for `t` in `[-1, 1]`.
pub fn diverging_color(t: f64) -> [u8; 3] {
    const NEG: [f64; 3] = [33.0, 102.0, 172.0];
    const MID: [f64; 3] = [247.0, 247.0, 247.0];
    const POS: [f64; 3] = [178.0, 24.0, 43.0];
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    let (end, a) = if t < 0.0 { (NEG, -t) } else { (POS, t) };
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        rgb[c] = (MID[c] + a * (end[c] - MID[c])).round() as u8;
    }
    rgb
}

/// Binary PPM, `w` pixels wide and `h` tall, symmetric color range.
pub fn write_ppm(field: &RealField<f64>, path: &Path) -> Result<()> {
    let scale = field.max_abs();
    let mut bytes = format!("P6\n{} {}\n255\n", field.w(), field.h()).into_bytes();
    for &v in field.values() {
        let t = if scale > 0.0 { v / scale } else { 0.0 };
        bytes.extend_from_slice(&diverging_color(t));
    }
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: [f64; 4] = [70.0, 170.0, 30.0, 50.0];

fn log_span(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| *v > 0.0 && v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.log10()), hi.max(v.log10())));
    if !lo.is_finite() {
        return None;
    }
    Some(if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) })
}

/// Log-log test error against downstream examples for one system; series
/// are seed means per (mode, model). Zero-shot is a dashed horizontal line.
pub fn render_svg(points: &[CurvePoint], system: &str) -> String {
    let aggs: Vec<Aggregate> = aggregate(points).into_iter().filter(|a| a.system == system).collect();
    let mut series: BTreeMap<(CurveMode, String), Vec<(f64, f64)>> = BTreeMap::new();
    for a in &aggs {
        series
            .entry((a.mode, a.model_id.clone()))
            .or_default()
            .push((a.n_examples as f64, a.mean));
    }
    let [left, right, top, bottom] = MARGIN;
    let (pw, ph) = (WIDTH - left - right, HEIGHT - top - bottom);
    let xs = log_span(aggs.iter().filter(|a| a.n_examples > 0).map(|a| a.n_examples as f64)).unwrap_or((0.0, 1.0));
    let ys = log_span(aggs.iter().map(|a| a.mean)).unwrap_or((-1.0, 0.0));
    let (ylo, yhi) = (ys.0.floor(), ys.1.ceil());
    let px = |n: f64| left + (n.log10() - xs.0) / (xs.1 - xs.0).max(1e-12) * pw;
    let py = |e: f64| top + (yhi - e.log10()) / (yhi - ylo).max(1e-12) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" font-size="13">{}</text>"#, left, escape(system));
    let _ = writeln!(
        s,
        r#"<rect x="{left:.1}" y="{top:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="black"/>"#
    );
    let mut ns: Vec<usize> = aggs.iter().map(|a| a.n_examples).filter(|&n| n > 0).collect();
    ns.sort_unstable();
    ns.dedup();
    for n in ns {
        let x = px(n as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#,
            top + ph,
            top + ph + 4.0,
            top + ph + 16.0
        );
    }
    for k in ylo as i64..=yhi as i64 {
        let y = py(10f64.powi(k as i32));
        let _ = writeln!(
            s,
            r##"<line x1="{left:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{k}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">downstream examples</text>"#,
        left + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">test error</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, ((mode, model), pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let ly = top + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{} {}</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 36.0,
            ly + 4.0,
            mode,
            escape(model)
        );
        let trained: Vec<&(f64, f64)> = pts.iter().filter(|p| p.0 > 0.0).collect();
        if trained.is_empty() {
            if let Some(&(_, e)) = pts.first() {
                let _ = writeln!(
                    s,
                    r#"<line x1="{left:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="{color}" stroke-width="2" stroke-dasharray="6 4"/>"#,
                    py(e),
                    left + pw
                );
            }
            continue;
        }
        let path: Vec<String> = trained.iter().map(|&&(n, e)| format!("{:.2},{:.2}", px(n), py(e))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &&(n, e) in &trained {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(n), py(e));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn file_stem(system: &str) -> String {
    system
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct EquivRow<'a> {
    system: &'a str,
    model_id: &'a str,
    n_tl: usize,
    tl_error: f64,
    n_scratch: Option<f64>,
    status: EquivStatus,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: u32,
    rows: usize,
    aggregates: &'a [Aggregate],
    equivalence: &'a [EquivRow<'a>],
    files: Vec<String>,
    inputs: &'a BTreeMap<String, String>,
}

/// From-scratch against fine-tuned seed means, per (system, model).
pub fn equivalence_tables(aggs: &[Aggregate]) -> Vec<(String, String, Vec<Equivalence>)> {
    let mut keys: Vec<(String, String)> = aggs.iter().map(|a| (a.system.clone(), a.model_id.clone())).collect();
    keys.dedup();
    let curve = |mode: CurveMode, sys: &str, model: &str| -> Vec<(usize, f64)> {
        aggs.iter()
            .filter(|a| a.mode == mode && a.system == sys && a.model_id == model && a.n_examples > 0)
            .map(|a| (a.n_examples, a.mean))
            .collect()
    };
    keys.into_iter()
        .filter_map(|(sys, model)| {
            let tl = curve(CurveMode::FineTune, &sys, &model);
            let eq = data_equivalence(&curve(CurveMode::FromScratch, &sys, &model), &tl).ok()?;
            (!tl.is_empty()).then_some((sys, model, eq))
        })
        .collect()
}

/// Writes `curves.csv`, then derives every table and figure from the
/// re-read CSV, plus one PPM per named field and `summary.json`.
pub fn emit_report(
    points: &[CurvePoint],
    fields: &[(String, RealField<f64>)],
    inputs: &BTreeMap<String, String>,
    out_dir: &Path,
) -> Result<ReportBundle> {
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let curves_path = out_dir.join("curves.csv");
    write_curve_csv(&curves_path, points)?;
    files.push(PathBuf::from("curves.csv"));
    let rows = read_curve_csv(&curves_path)?;
    let mut inputs = inputs.clone();
    inputs.insert("curves.csv".into(), sha256_hex(&fs::read(&curves_path)?));

    let aggs = aggregate(&rows);
    let mut wtr = csv::Writer::from_path(out_dir.join("aggregates.csv"))?;
    if aggs.is_empty() {
        wtr.write_record(["system", "mode", "model_id", "n_examples", "count", "mean", "q1", "median", "q3"])?;
    }
    for a in &aggs {
        wtr.serialize(a)?;
    }
    wtr.flush()?;
    files.push(PathBuf::from("aggregates.csv"));

    let tables = equivalence_tables(&aggs);
    let equiv: Vec<EquivRow> = tables
        .iter()
        .flat_map(|(sys, model, eqs)| eqs.iter().map(move |eq| EquivRow {
                system: sys,
                model_id: model,
                n_tl: eq.n_tl,
                tl_error: eq.tl_error,
                n_scratch: eq.n_scratch,
                status: eq.status,
            }))
        .collect();
    let mut wtr = csv::Writer::from_path(out_dir.join("equivalence.csv"))?;
    if equiv.is_empty() {
        wtr.write_record(["system", "model_id", "n_tl", "tl_error", "n_scratch", "status"])?;
    }
    for row in &equiv {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    files.push(PathBuf::from("equivalence.csv"));

    let mut systems: Vec<&str> = rows.iter().map(|p| p.system.as_str()).collect();
    systems.sort_unstable();
    systems.dedup();
    for sys in systems {
        let name = PathBuf::from(format!("curves_{}.svg", file_stem(sys)));
        fs::write(out_dir.join(&name), render_svg(&rows, sys))?;
        files.push(name);
    }
    for (label, field) in fields {
        let name = PathBuf::from(format!("{}.ppm", file_stem(label)));
        write_ppm(field, &out_dir.join(&name))?;
        files.push(name);
    }

    let summary = Summary {
        schema: SUMMARY_SCHEMA,
        rows: rows.len(),
        aggregates: &aggs,
        equivalence: &equiv,
        files: files.iter().map(|f| f.display().to_string()).collect(),
        inputs: &inputs,
    };
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    files.push(PathBuf::from("summary.json"));
    Ok(ReportBundle {
        dir: out_dir.to_path_buf(),
        files,
    })
}
