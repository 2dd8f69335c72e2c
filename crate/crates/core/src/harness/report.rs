//! Flat CSV tables, plain SVG charts and a hashed manifest per run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bounds::{BoundsReport, RegretRate};
use super::drift::DriftStudy;
use super::experiments::{AblationTable, ScalabilityRow, SweepRow, TimingRow};
use super::train::TrainingLog;
use crate::{Error, Result};

/// Bumped whenever a CSV column changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCsv {
    pub policy: String,
    pub x: f64,
    pub delivery_mean: f64,
    pub delivery_std: f64,
    pub fidelity_mean: f64,
    pub fidelity_std: f64,
    pub fidelity_n: usize,
    pub reward_mean: f64,
    pub memory_mean: f64,
}

impl From<&SweepRow> for SweepCsv {
    fn from(r: &SweepRow) -> Self {
        Self {
            policy: r.policy.clone(),
            x: r.x,
            delivery_mean: r.delivery.mean,
            delivery_std: r.delivery.std,
            fidelity_mean: r.fidelity.mean,
            fidelity_std: r.fidelity.std,
            fidelity_n: r.fidelity.n,
            reward_mean: r.reward.mean,
            memory_mean: r.memory.mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCsv {
    pub variant: String,
    pub policy: String,
    pub fidelity_mean: f64,
    pub fidelity_std: f64,
    pub fidelity_n: usize,
    pub delivery_mean: f64,
    pub delivery_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCsv {
    pub delta: f64,
    pub delta_t: f64,
    pub regret: f64,
    pub regret_bound: f64,
    pub lipschitz: f64,
    pub max_value_diff: f64,
    pub stability_bound: f64,
    pub stability_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationCsv {
    pub instance: usize,
    pub k: usize,
    pub epsilon: f64,
    pub l_v: f64,
    pub error: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridBoundCsv {
    pub instance: usize,
    pub level: f64,
    pub mean_kl: f64,
    pub max_kl: f64,
    pub mean_alpha: f64,
    pub min_margin: f64,
    pub min_margin_sup: f64,
    pub holds: bool,
    pub holds_sup: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCsv {
    pub t: usize,
    pub avg_regret: f64,
}

pub fn write_bounds(dir: &Path, report: &BoundsReport) -> Result<()> {
    let agg: Vec<AggregationCsv> = report
        .aggregation
        .iter()
        .map(|r| AggregationCsv {
            instance: r.instance,
            k: r.row.k,
            epsilon: r.row.epsilon,
            l_v: r.row.l_v,
            error: r.row.error,
            bound: r.row.bound,
            holds: r.row.holds,
        })
        .collect();
    write_csv(&dir.join("aggregation_bound.csv"), &agg)?;
    let hyb: Vec<HybridBoundCsv> = report
        .hybrid
        .iter()
        .map(|r| HybridBoundCsv {
            instance: r.instance,
            level: r.row.level,
            mean_kl: r.row.mean_kl,
            max_kl: r.row.max_kl,
            mean_alpha: r.row.mean_alpha,
            min_margin: r.row.min_margin,
            min_margin_sup: r.row.min_margin_sup,
            holds: r.row.holds,
            holds_sup: r.row.holds_sup,
        })
        .collect();
    write_csv(&dir.join("hybrid_bound.csv"), &hyb)
}

pub fn write_regret(path: &Path, rate: &RegretRate) -> Result<()> {
    let rows: Vec<RegretCsv> = rate
        .t
        .iter()
        .zip(&rate.avg_regret)
        .map(|(&t, &avg_regret)| RegretCsv { t, avg_regret })
        .collect();
    write_csv(path, &rows)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(path, &rows.iter().map(SweepCsv::from).collect::<Vec<_>>())
}

pub fn write_ablation(path: &Path, table: &AblationTable) -> Result<()> {
    let rows: Vec<AblationCsv> = table
        .rows
        .iter()
        .map(|r| AblationCsv {
            variant: r.variant.clone(),
            policy: r.policy.clone(),
            fidelity_mean: r.fidelity.mean,
            fidelity_std: r.fidelity.std,
            fidelity_n: r.fidelity.n,
            delivery_mean: r.delivery.mean,
            delivery_std: r.delivery.std,
        })
        .collect();
    write_csv(path, &rows)
}

pub fn write_drift(path: &Path, study: &DriftStudy) -> Result<()> {
    let rows: Vec<DriftCsv> = study
        .traces
        .iter()
        .map(|t| DriftCsv {
            delta: t.delta,
            delta_t: t.delta * t.instantaneous.len() as f64,
            regret: t.total(),
            regret_bound: t.regret_bound,
            lipschitz: t.lipschitz,
            max_value_diff: t.value_diffs.iter().copied().fold(0.0, f64::max),
            stability_bound: t.stability_bound,
            stability_holds: t.stability_holds,
        })
        .collect();
    write_csv(path, &rows)
}

pub fn write_timing(path: &Path, rows: &[TimingRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_scalability(path: &Path, rows: &[ScalabilityRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_training(path: &Path, log: &TrainingLog) -> Result<()> {
    write_csv(path, &log.rows)
}

/// One series of `(x, y)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 9] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf",
];

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart; every point carries its data coordinates as attributes.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#,
        h - m,
        w - m,
        h - m,
        h - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 15.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{}</text>"#, sx(v), h - m + 15.0, fmt_tick(v));
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, m - 5.0, sy(v), fmt_tick(v));
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &ser.points {
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" data-series="{}" data-x="{x}" data-y="{y}"/>"#,
                    sx(x),
                    sy(y),
                    escape(&ser.name)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            w - m + 5.0,
            m + 15.0 * i as f64,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart with one bar per label.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let (_, y1) = bounds(bars.iter().map(|b| b.1).chain(std::iter::once(0.0)));
    let slot = (w - 2.0 * m) / bars.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let bh = if v.is_finite() { v.max(0.0) / y1 * (h - 2.0 * m) } else { 0.0 };
        let x = m + slot * i as f64 + 0.1 * slot;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="{}" data-label="{}" data-y="{v}"/>"#,
            h - m - bh,
            0.8 * slot,
            PALETTE[i % PALETTE.len()],
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x + 0.4 * slot,
            h - m + 15.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// `(series, x, y)` of every point drawn in a chart produced here.
pub fn chart_points(svg: &str) -> Vec<(String, f64, f64)> {
    let attr = |line: &str, key: &str| -> Option<String> {
        let start = line.find(&format!("{key}=\""))? + key.len() + 2;
        let end = line[start..].find('"')? + start;
        Some(line[start..end].to_string())
    };
    svg.lines()
        .filter(|l| l.starts_with("<circle"))
        .filter_map(|l| {
            Some((
                attr(l, "data-series")?,
                attr(l, "data-x")?.parse().ok()?,
                attr(l, "data-y")?.parse().ok()?,
            ))
        })
        .collect()
}

/// Series per policy from a sweep CSV, using `column` as y.
pub fn sweep_series(rows: &[SweepCsv], column: &str) -> Result<Vec<Series>> {
    let pick = |r: &SweepCsv| -> Result<f64> {
        Ok(match column {
            "delivery_mean" => r.delivery_mean,
            "fidelity_mean" => r.fidelity_mean,
            "reward_mean" => r.reward_mean,
            "memory_mean" => r.memory_mean,
            other => return Err(Error::InvalidParam(format!("no sweep column {other}"))),
        })
    };
    let mut by: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !by.contains_key(r.policy.as_str()) {
            order.push(&r.policy);
        }
        by.entry(&r.policy).or_default().push((r.x, pick(r)?));
    }
    Ok(order
        .into_iter()
        .map(|p| Series {
            name: p.into(),
            points: by.remove(p).unwrap_or_default(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    /// Wall-clock measurements differ between reruns.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub crate_version: String,
    pub command: String,
    /// SHA-256 of the serialized configuration below.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seeds: &[u64]) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            schema_version: CSV_SCHEMA_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: sha256_hex(serde_json::to_string(&config)?.as_bytes()),
            config,
            seeds: seeds.to_vec(),
            files: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)?)
    }
}

fn is_nondeterministic(name: &str) -> bool {
    name.contains("timing") || name.contains("scalability")
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingRuns(dir.display().to_string()));
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub csv_files: usize,
    pub charts: Vec<String>,
}

/// Chart every sweep-shaped CSV in `dir` and refresh the manifest's file
/// hashes. A directory without CSVs is `MissingRuns`.
pub fn emit_report(dir: &Path) -> Result<ReportSummary> {
    let files = csv_files(dir)?;
    if files.is_empty() {
        return Err(Error::MissingRuns(dir.display().to_string()));
    }
    let mut charts = Vec::new();
    for f in &files {
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("chart").to_string();
        let svg = if let Ok(rows) = read_csv::<SweepCsv>(f) {
            let column = if stem.contains("demand") { "delivery_mean" } else { "fidelity_mean" };
            Some(line_chart(&stem, "x", column, &sweep_series(&rows, column)?))
        } else if let Ok(rows) = read_csv::<AblationCsv>(f) {
            let bars: Vec<(String, f64)> = rows.iter().map(|r| (r.variant.clone(), r.fidelity_mean)).collect();
            Some(bar_chart(&stem, "fidelity_mean", &bars))
        } else if let Ok(rows) = read_csv::<DriftCsv>(f) {
            let pts = rows.iter().map(|r| (r.delta_t, r.regret)).collect();
            Some(line_chart(&stem, "delta_t", "regret", &[Series {
                name: "regret".into(),
                points: pts,
            }]))
        } else if let Ok(rows) = read_csv::<RegretCsv>(f) {
            let pts = rows.iter().map(|r| (r.t as f64, r.avg_regret)).collect();
            Some(line_chart(&stem, "t", "avg_regret", &[Series {
                name: "avg_regret".into(),
                points: pts,
            }]))
        } else if let Ok(rows) = read_csv::<TimingRow>(f) {
            let mut by: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
            for r in rows {
                by.entry(r.policy).or_default().push((r.nodes as f64, r.median_ns));
            }
            let series: Vec<Series> = by.into_iter().map(|(name, points)| Series { name, points }).collect();
            Some(line_chart(&stem, "nodes", "median_ns", &series))
        } else {
            None
        };
        if let Some(svg) = svg {
            let name = format!("{stem}.svg");
            std::fs::write(dir.join(&name), svg)?;
            charts.push(name);
        }
    }
    let mut manifest = Manifest::read(dir).unwrap_or(Manifest::new("report", &serde_json::Value::Null, &[])?);
    manifest.files = files
        .iter()
        .map(|f| -> Result<FileEntry> {
            let name = f.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok(FileEntry {
                deterministic: !is_nondeterministic(&name),
                sha256: sha256_hex(&std::fs::read(f)?),
                name,
            })
        })
        .collect::<Result<_>>()?;
    manifest.write(dir)?;
    Ok(ReportSummary {
        csv_files: files.len(),
        charts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn chart_points_round_trip() {
        let s = vec![Series {
            name: "a<b".into(),
            points: vec![(1.0, 0.5), (2.0, 0.25)],
        }];
        let svg = line_chart("t", "x", "y", &s);
        let pts = chart_points(&svg);
        assert_eq!(pts, vec![("a&lt;b".into(), 1.0, 0.5), ("a&lt;b".into(), 2.0, 0.25)]);
    }
}
