//! Hand-written SVG figures: hypnogram step plots, confusion heatmaps and
//! ROC/PR curves. Output depends only on the inputs, so figures diff cleanly.

use std::fmt::Write as _;

use msdan::evaluation::{ClassCurve, MetricsReport};
use msdan::StageLabel;

/// One hypnogram track: `(epoch index, stage)` pairs sorted by epoch.
pub struct Track<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub stages: &'a [(usize, StageLabel)],
}

/// Vertical order of stages, top to bottom.
const HYPNOGRAM_ROWS: [StageLabel; 5] = [StageLabel::W, StageLabel::R, StageLabel::N1, StageLabel::N2, StageLabel::N3];

fn row_of(s: StageLabel) -> usize {
    HYPNOGRAM_ROWS.iter().position(|&r| r == s).expect("every stage has a row")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Step plot of stage against time in hours. Later tracks draw on top, with
/// a small vertical offset so coincident segments stay visible.
pub fn hypnogram_svg(title: &str, tracks: &[Track<'_>]) -> String {
    let (w, h, left, top, right, bottom) = (900.0, 260.0, 60.0, 30.0, 20.0, 40.0);
    let last = tracks.iter().flat_map(|t| t.stages.last().map(|s| s.0 + 1)).max().unwrap_or(1).max(1);
    let hours = last as f64 * 30.0 / 3600.0;
    let px = |epoch: f64| left + (w - left - right) * epoch / last as f64;
    let row_h = (h - top - bottom) / (HYPNOGRAM_ROWS.len() - 1) as f64;
    let py = |s: StageLabel| top + row_h * row_of(s) as f64;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="18" font-size="14">{}</text>"#, escape(title));
    for st in HYPNOGRAM_ROWS {
        let y = py(st);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, w - right);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 8.0, y + 4.0, st.name());
    }
    let ticks = hours.ceil() as usize;
    for hr in 0..=ticks {
        let epoch = hr as f64 * 120.0;
        if epoch > last as f64 {
            break;
        }
        let x = px(epoch);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{hr}h</text>"#, h - bottom + 18.0);
    }
    for (ti, t) in tracks.iter().enumerate() {
        let off = ti as f64 * 3.0;
        let mut d = String::new();
        let mut prev: Option<usize> = None;
        for &(e, st) in t.stages {
            let y = py(st) + off;
            let gap = prev.is_none_or(|p| e != p + 1);
            let _ = write!(d, "{}{:.1},{:.1} L{:.1},{:.1} ", if gap { "M" } else { "L" }, px(e as f64), y, px(e as f64 + 1.0), y);
            prev = Some(e);
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#, d.trim_end(), t.color);
        let ly = top + 12.0 * ti as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{}" text-anchor="end">{}</text>"#,
            w - right,
            t.color,
            escape(t.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Confusion matrix heatmap in the report's row and column order; cells
/// are shaded by row-normalized frequency.
pub fn confusion_svg(report: &MetricsReport) -> String {
    let cell = 70.0;
    let (left, top) = (70.0, 60.0);
    let n = report.confusion.len();
    let size = left + cell * n as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{:.0}" font-family="sans-serif" font-size="12">"#,
        top + cell * n as f64 + 40.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="20">predicted</text><text x="10" y="{:.0}">true</text>"#, top - 10.0);
    for (j, c) in report.confusion_columns.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, left + cell * (j as f64 + 0.5), top - 10.0, c.name());
    }
    for (i, row) in report.confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        let y = top + cell * i as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 8.0, y + cell / 2.0 + 4.0, report.confusion_rows[i].name());
        for (j, &v) in row.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { v as f64 / total as f64 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let x = left + cell * j as f64;
            let text = if frac > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r##"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#999"/><text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{text}">{v}</text>"##,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

const STAGE_COLORS: [&str; 5] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"];

/// One-vs-rest ROC (`roc = true`) or PR curves for every stage present.
pub fn curves_svg(curves: &[Option<ClassCurve>], roc: bool) -> String {
    let (size, pad) = (420.0, 50.0);
    let span = size - 2.0 * pad;
    let map = |x: f64, y: f64| (pad + span * x, size - pad - span * y);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r##"<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#333"/>"##);
    let (xl, yl) = if roc { ("false positive rate", "true positive rate") } else { ("recall", "precision") };
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xl}</text>"#, size / 2.0, size - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{:.1}" transform="rotate(-90 15 {:.1})" text-anchor="middle">{yl}</text>"#, size / 2.0, size / 2.0);
    for (i, c) in curves.iter().enumerate() {
        let Some(c) = c else { continue };
        let pts = if roc { &c.roc } else { &c.pr };
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| {
                let (a, b) = map(x, y);
                format!("{}{a:.1},{b:.1}", if k == 0 { "M" } else { "L" })
            })
            .collect();
        let color = STAGE_COLORS[i % STAGE_COLORS.len()];
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        let area = if roc { c.roc_auc } else { c.pr_auc };
        let (lx, ly) = (pad + span - 5.0, size - pad - 10.0 - 15.0 * i as f64);
        let _ = writeln!(s, r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="end" fill="{color}">{} {area:.3}</text>"#, c.stage.name());
    }
    s.push_str("</svg>\n");
    s
}

/// `stage,x,y` rows for the ROC (`roc = true`) or PR points of every curve.
pub fn curves_csv(curves: &[Option<ClassCurve>], roc: bool) -> String {
    let mut s = String::from(if roc { "stage,fpr,tpr\n" } else { "stage,recall,precision\n" });
    for c in curves.iter().flatten() {
        for &(x, y) in if roc { &c.roc } else { &c.pr } {
            let _ = writeln!(s, "{},{x},{y}", c.stage.name());
        }
    }
    s
}
