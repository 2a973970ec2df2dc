//! Per-item result rows written as CSV and JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::attacks::{run_attack, AttackConfig, AttackKind, AttackRecord};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{psnr, ssim, GradientOracle, SSIM_MIN_SIZE};

pub const CSV_HEADER: &str = "item,attack,rg,psnr,ssim,linf,mae_star,bound_ok,wall_time_s";
pub const CSV_FILE: &str = "report.csv";
pub const JSON_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub item: String,
    pub attack: String,
    pub rg: f64,
    pub psnr: f64,
    /// Absent for images smaller than the SSIM window.
    pub ssim: Option<f64>,
    pub linf: f64,
    pub mae_star: f64,
    /// Absent for attacks without a spectral bound.
    pub bound_ok: Option<bool>,
    pub wall_time_s: f64,
}

impl ReportRow {
    pub fn from_record(item: impl Into<String>, original: &Image, record: &AttackRecord) -> Result<Self> {
        let ssim = if original.height().min(original.width()) >= SSIM_MIN_SIZE {
            Some(ssim(original, &record.adversarial)?)
        } else {
            None
        };
        Ok(Self {
            item: item.into(),
            attack: record.kind.name().to_string(),
            rg: record.rg,
            psnr: psnr(original, &record.adversarial)?,
            ssim,
            linf: record.linf,
            mae_star: record.mae_star_pert,
            bound_ok: record.bound_ok,
            wall_time_s: record.wall_time,
        })
    }

    fn csv_line(&self, out: &mut String) {
        let bound = match self.bound_ok {
            Some(true) => "true",
            Some(false) => "false",
            None => "na",
        };
        let ssim = self.ssim.map_or_else(|| "na".to_string(), fmt_sig);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(&self.item),
            csv_field(&self.attack),
            fmt_sig(self.rg),
            fmt_sig(self.psnr),
            ssim,
            fmt_sig(self.linf),
            fmt_sig(self.mae_star),
            bound,
            fmt_sig(self.wall_time_s),
        );
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Formats like C's `%.9g`.
pub fn fmt_sig(v: f64) -> String {
    const DIGITS: i32 = 9;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..DIGITS).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub column: String,
    pub count: usize,
    pub mean: f64,
    /// Half-width of the normal 95% interval, zero for a single value.
    pub ci95: f64,
}

impl Aggregate {
    pub fn of(column: &str, values: &[f64]) -> Option<Self> {
        let vals: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            return None;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let ci95 = if vals.len() < 2 {
            0.0
        } else {
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * var.sqrt() / n.sqrt()
        };
        Some(Self {
            column: column.to_string(),
            count: vals.len(),
            mean,
            ci95,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
}

impl RunReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            row.csv_line(&mut out);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidParameter(format!("report serialization: {e}")))
    }

    /// Writes `report.csv` and `report.json` into `dir`, creating it.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(CSV_FILE);
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(JSON_FILE);
        fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        Ok(())
    }
}

/// Builds a report in row order. Fails if there are no rows or if any
/// spectral-attack row broke its bound.
pub fn emit_report(rows: Vec<ReportRow>, config: serde_json::Value) -> Result<RunReport> {
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let ioi = AttackKind::Ioi.name();
    if let Some(bad) = rows.iter().find(|r| r.attack == ioi && r.bound_ok != Some(true)) {
        return Err(Error::InvariantViolation(format!(
            "item {} exceeds the perturbation bound (linf {}, mae* {})",
            bad.item,
            fmt_sig(bad.linf),
            fmt_sig(bad.mae_star)
        )));
    }
    let column = |name: &str, get: fn(&ReportRow) -> Option<f64>| {
        let vals: Vec<f64> = rows.iter().filter_map(get).collect();
        Aggregate::of(name, &vals)
    };
    let aggregates = [
        column("rg", |r| Some(r.rg)),
        column("psnr", |r| Some(r.psnr)),
        column("ssim", |r| r.ssim),
        column("linf", |r| Some(r.linf)),
        column("mae_star", |r| Some(r.mae_star)),
        column("wall_time_s", |r| Some(r.wall_time_s)),
    ]
    .into_iter()
    .flatten()
    .collect();
    Ok(RunReport {
        config,
        rows,
        aggregates,
    })
}

/// Attacks each named image in order and turns the records into rows.
pub fn attack_rows(
    items: &[(String, Image)],
    oracle: &dyn GradientOracle,
    cfg: &AttackConfig,
) -> Result<Vec<ReportRow>> {
    items
        .iter()
        .map(|(name, img)| ReportRow::from_record(name.clone(), img, &run_attack(img, oracle, cfg)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(item: &str, rg: f64) -> ReportRow {
        ReportRow {
            item: item.into(),
            attack: "fgsm".into(),
            rg,
            psnr: 30.0,
            ssim: None,
            linf: 0.1,
            mae_star: 0.05,
            bound_ok: None,
            wall_time_s: 0.001,
        }
    }

    #[test]
    fn sig_formatting_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-2.5, "-2.5"),
            (f64::INFINITY, "inf"),
            (99.9999999999, "100"),
        ];
        for (v, want) in cases {
            assert_eq!(fmt_sig(v), want, "{v}");
        }
    }

    #[test]
    fn csv_layout() {
        let mut r = row("a,b", 0.25);
        r.bound_ok = Some(true);
        r.attack = "ioi".into();
        let report = emit_report(vec![r, row("b", -0.5)], serde_json::json!({})).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "\"a,b\",ioi,0.25,30,na,0.1,0.05,true,0.001");
        assert_eq!(lines[2], "b,fgsm,-0.5,30,na,0.1,0.05,na,0.001");
    }

    #[test]
    fn aggregates_use_sample_deviation() {
        let report = emit_report(vec![row("a", 1.0), row("b", 3.0)], serde_json::Value::Null).unwrap();
        let rg = report.aggregates.iter().find(|a| a.column == "rg").unwrap();
        assert_eq!(rg.mean, 2.0);
        assert!((rg.ci95 - 1.96 * 2f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
        assert!(report.aggregates.iter().all(|a| a.column != "ssim"));
        let single = emit_report(vec![row("a", 1.0)], serde_json::Value::Null).unwrap();
        assert!(single.aggregates.iter().all(|a| a.ci95 == 0.0));
    }

    #[test]
    fn empty_and_violating_reports_fail() {
        assert!(matches!(
            emit_report(vec![], serde_json::Value::Null),
            Err(Error::EmptyReport)
        ));
        let mut r = row("x", 0.0);
        r.attack = "ioi".into();
        r.bound_ok = Some(false);
        assert!(matches!(
            emit_report(vec![r], serde_json::Value::Null),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn json_mirrors_rows() {
        let report = emit_report(vec![row("a", 1.0), row("b", 2.0)], serde_json::json!({"seed": 1})).unwrap();
        let v: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 2);
        assert_eq!(v["rows"][1]["item"], "b");
        assert_eq!(v["rows"][0]["ssim"], serde_json::Value::Null);
        assert_eq!(v["config"]["seed"], 1);
    }

    #[test]
    fn attack_rows_keep_input_order() {
        let items: Vec<(String, Image)> = (0..3)
            .map(|i| (format!("img{i}"), crate::fixtures::random_image(i, 12, 12, 3)))
            .collect();
        let m = crate::metrics::LaplaceMetric::default();
        let rows = attack_rows(&items, &m, &AttackConfig::default()).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.item.as_str()).collect();
        assert_eq!(names, ["img0", "img1", "img2"]);
        assert!(rows
            .iter()
            .all(|r| r.attack == "ioi" && r.bound_ok == Some(true) && r.ssim.is_some()));
    }

    #[test]
    fn writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let report = emit_report(vec![row("a", 1.0)], serde_json::Value::Null).unwrap();
        report.write_to(&dir.path().join("out")).unwrap();
        let csv = fs::read_to_string(dir.path().join("out").join(CSV_FILE)).unwrap();
        assert_eq!(csv, report.to_csv());
        assert!(dir.path().join("out").join(JSON_FILE).exists());
    }
}
