//! Post-hoc analysis of run logs: fitted DDP curves, KAR, stage boundaries,
//! and an SVG chart of all three.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::RunLog;
use crate::metrics::{detect_stages, kar_series, lsq_polyfit, DdpRecord, FittedCurve, KarSample, MetricsConfig, StageBoundaries};

pub const SVG_WIDTH: u32 = 800;
pub const SVG_HEIGHT: u32 = 480;

#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub ddp: Vec<DdpRecord>,
    pub lsc_e: FittedCurve,
    pub lsc_h: FittedCurve,
    pub kar: Vec<KarSample>,
    pub stages: StageBoundaries,
}

/// Fits both DDP series, derives KAR and detects the learning periods.
pub fn analyze_log(log: &RunLog, cfg: &MetricsConfig) -> Result<Analysis> {
    cfg.validate()?;
    let ddp = log.ddp_records();
    let need = cfg.fit_degree + 2;
    if ddp.len() < need {
        return Err(Error::TooFewPoints { need, got: ddp.len() });
    }
    let ts: Vec<f64> = ddp.iter().map(|r| r.t).collect();
    let es: Vec<f64> = ddp.iter().map(|r| r.ddp_e).collect();
    let hs: Vec<f64> = ddp.iter().map(|r| r.ddp_h).collect();
    let lsc_e = lsq_polyfit(&ts, &es, cfg.fit_degree)?;
    let lsc_h = lsq_polyfit(&ts, &hs, cfg.fit_degree)?;
    let kar = kar_series(&ddp, cfg)?;
    let stages = detect_stages(&kar, cfg)?;
    Ok(Analysis { ddp, lsc_e, lsc_h, kar, stages })
}

/// Reads a run log, analyzes it and writes `ddp.csv`, `kar.csv`,
/// `stages.json` and `curves.svg` into `out_dir`.
pub fn analyze(log_path: impl AsRef<Path>, cfg: &MetricsConfig, out_dir: impl AsRef<Path>) -> Result<Analysis> {
    let log = RunLog::read(log_path)?;
    let analysis = analyze_log(&log, cfg)?;
    analysis.write_to(out_dir)?;
    Ok(analysis)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl Analysis {
    pub fn ddp_csv(&self) -> Result<String> {
        let mut out = String::from("epoch,ddp_e,ddp_h,lsc_e,lsc_h\n");
        for r in &self.ddp {
            let (le, lh) = (self.lsc_e.eval(r.t)?, self.lsc_h.eval(r.t)?);
            writeln!(out, "{},{},{},{},{}", r.t, r.ddp_e, r.ddp_h, le, lh).expect("string write");
        }
        Ok(out)
    }

    pub fn kar_csv(&self) -> String {
        let mut out = String::from("epoch,kar\n");
        for k in &self.kar {
            writeln!(out, "{},{}", k.t, k.kar).expect("string write");
        }
        out
    }

    pub fn stages_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.stages).expect("boundaries serialize");
        text.push('\n');
        text
    }

    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("ddp.csv"), &self.ddp_csv()?)?;
        write_file(&dir.join("kar.csv"), &self.kar_csv())?;
        write_file(&dir.join("stages.json"), &self.stages_json())?;
        write_file(&dir.join("curves.svg"), &self.curves_svg()?)
    }

    /// Raw DDP points, fitted curves and dashed lines at the stage
    /// boundaries, on a fixed 800x480 canvas.
    pub fn curves_svg(&self) -> Result<String> {
        let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
        let (w, h) = (SVG_WIDTH as f64, SVG_HEIGHT as f64);
        let (t0, t1) = (self.lsc_e.t_min, self.lsc_e.t_max);
        let span = if t1 > t0 { t1 - t0 } else { 1.0 };
        let x = |t: f64| left + (t - t0) / span * (w - left - right);
        let y = |v: f64| top + (1.0 - v.clamp(0.0, 1.0)) * (h - top - bottom);

        let mut s = String::new();
        let out = &mut s;
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .expect("string write");
        writeln!(out, r#"<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>"#).expect("string write");
        writeln!(
            out,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">DDP and fitted curves</text>"#,
            w / 2.0
        )
        .expect("string write");

        for i in 0..=4 {
            let v = i as f64 / 4.0;
            writeln!(
                out,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
                left,
                y(v),
                w - right,
                y(v),
                left - 6.0,
                y(v) + 4.0
            )
            .expect("string write");
        }
        writeln!(
            out,
            r#"<polyline points="{left:.2},{:.2} {left:.2},{:.2} {:.2},{:.2}" fill="none" stroke="black"/>"#,
            top,
            h - bottom,
            w - right,
            h - bottom
        )
        .expect("string write");
        for (t, label) in [(t0, t0), (t1, t1)] {
            writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
                x(t),
                h - bottom + 16.0
            )
            .expect("string write");
        }
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
            (left + w - right) / 2.0,
            h - 12.0
        )
        .expect("string write");

        for (b, name) in [(self.stages.t1_end, "t1_end"), (self.stages.t2_end, "t2_end")] {
            let bx = x(b as f64);
            writeln!(
                out,
                r##"<line x1="{bx:.2}" y1="{top:.2}" x2="{bx:.2}" y2="{:.2}" stroke="#555555" stroke-dasharray="6,4"/><text x="{:.2}" y="{:.2}">{name}={b}</text>"##,
                h - bottom,
                bx + 4.0,
                top + 12.0
            )
            .expect("string write");
        }

        let series: [(&str, &FittedCurve, fn(&DdpRecord) -> f64, &str); 2] = [
            ("ddp_e", &self.lsc_e, |r| r.ddp_e, "#1f77b4"),
            ("ddp_h", &self.lsc_h, |r| r.ddp_h, "#d62728"),
        ];
        for (i, (name, curve, pick, color)) in series.iter().enumerate() {
            for r in &self.ddp {
                writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, x(r.t), y(pick(r)))
                    .expect("string write");
            }
            let mut points = Vec::with_capacity(201);
            for j in 0..=200 {
                let t = t0 + span * j as f64 / 200.0;
                let t = t.min(t1);
                points.push(format!("{:.2},{:.2}", x(t), y(curve.eval(t)?)));
            }
            writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, points.join(" "))
                .expect("string write");
            let ly = top + 16.0 * i as f64;
            writeln!(
                out,
                r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{name}</text>"#,
                w - right - 110.0,
                w - right - 90.0,
                w - right - 84.0,
                ly + 4.0
            )
            .expect("string write");
        }
        writeln!(out, "</svg>").expect("string write");
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdpDelta {
    pub epoch: usize,
    pub ddp_e: f64,
    pub ddp_h: f64,
}

/// Per-epoch `a - b` differences over the epochs both logs contain.
pub fn report_erasing_ddp(a: &RunLog, b: &RunLog) -> Result<Vec<DdpDelta>> {
    let theirs: std::collections::BTreeMap<usize, (f64, f64)> =
        b.epochs().map(|r| (r.epoch, (r.ddp_e, r.ddp_h))).collect();
    let deltas: Vec<DdpDelta> = a
        .epochs()
        .filter_map(|r| {
            theirs.get(&r.epoch).map(|&(e, h)| DdpDelta { epoch: r.epoch, ddp_e: r.ddp_e - e, ddp_h: r.ddp_h - h })
        })
        .collect();
    if deltas.is_empty() {
        return Err(Error::invalid("the two run logs share no epochs"));
    }
    Ok(deltas)
}

pub fn deltas_csv(deltas: &[DdpDelta]) -> String {
    let mut out = String::from("epoch,ddp_e_delta,ddp_h_delta\n");
    for d in deltas {
        writeln!(out, "{},{},{}", d.epoch, d.ddp_e, d.ddp_h).expect("string write");
    }
    out
}

/// Reads two run logs and writes their DDP deltas as CSV to `out`.
pub fn compare_logs(a: impl AsRef<Path>, b: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<Vec<DdpDelta>> {
    let deltas = report_erasing_ddp(&RunLog::read(a)?, &RunLog::read(b)?)?;
    write_file(out.as_ref(), &deltas_csv(&deltas))?;
    Ok(deltas)
}
