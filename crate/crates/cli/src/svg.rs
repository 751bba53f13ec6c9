//! Whole-night figure: hypnogram above the depth curve, arousal shading whose
//! opacity equals the per-epoch arousal proportion, and a metrics box.

use std::fmt::Write as _;

use sdi_core::biomarkers::NightMetrics;
use sdi_core::Stage;

const WIDTH: f64 = 1200.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const HYP_TOP: f64 = 40.0;
const HYP_H: f64 = 120.0;
const SDI_TOP: f64 = 190.0;
const SDI_H: f64 = 240.0;
const HEIGHT: f64 = SDI_TOP + SDI_H + 50.0;

pub struct Figure<'a> {
    pub title: &'a str,
    pub sdi: &'a [f64],
    pub stages: Option<&'a [Stage]>,
    pub arousal: Option<&'a [f64]>,
    pub metrics: NightMetrics,
    pub ap: f64,
}

/// Hypnogram row, top to bottom.
fn stage_row(s: Stage) -> f64 {
    match s {
        Stage::W => 0.0,
        Stage::R => 1.0,
        Stage::N1 => 2.0,
        Stage::N2 => 3.0,
        Stage::N3 => 4.0,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render(f: &Figure<'_>) -> String {
    let n = f.sdi.len().max(1);
    let plot_w = WIDTH - LEFT - RIGHT;
    let dx = plot_w / n as f64;
    let x = |i: usize| LEFT + i as f64 * dx;
    let mut s = String::new();
    let w = &mut s;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{LEFT}" y="22" font-size="15">{}</text>"#, escape(f.title)).unwrap();

    // hypnogram
    writeln!(w, r#"<g id="hypnogram">"#).unwrap();
    writeln!(w, r#"<rect x="{LEFT}" y="{HYP_TOP}" width="{plot_w}" height="{HYP_H}" fill="none" stroke="black"/>"#).unwrap();
    let row_h = HYP_H / 4.0;
    for (label, row) in [("W", 0.0), ("REM", 1.0), ("N1", 2.0), ("N2", 3.0), ("N3", 4.0)] {
        writeln!(w, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 6.0, HYP_TOP + row * row_h + 4.0).unwrap();
    }
    match f.stages {
        Some(st) => {
            let mut d = String::new();
            for (i, &stage) in st.iter().enumerate() {
                let y = HYP_TOP + stage_row(stage) * row_h;
                let cmd = if i == 0 { 'M' } else { 'L' };
                write!(d, "{cmd}{:.2},{y:.2} L{:.2},{y:.2} ", x(i), x(i + 1)).unwrap();
            }
            writeln!(w, r#"<path d="{}" fill="none" stroke="black" stroke-width="1.2"/>"#, d.trim_end()).unwrap();
            for (i, _) in st.iter().enumerate().filter(|(_, s)| s.is_rem()) {
                writeln!(
                    w,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="3" fill="crimson"/>"#,
                    x(i),
                    HYP_TOP + row_h - 1.5,
                    dx
                )
                .unwrap();
            }
        }
        None => {
            writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="gray">no stage labels</text>"#, LEFT + plot_w / 2.0, HYP_TOP + HYP_H / 2.0).unwrap();
        }
    }
    writeln!(w, "</g>").unwrap();

    // depth curve with arousal shading
    writeln!(w, r#"<g id="sdi">"#).unwrap();
    if let Some(a) = f.arousal {
        writeln!(w, r#"<g id="arousal-shading" fill="gray">"#).unwrap();
        for (i, &p) in a.iter().enumerate().filter(|(_, p)| **p > 0.0) {
            writeln!(
                w,
                r#"<rect x="{:.2}" y="{SDI_TOP}" width="{:.2}" height="{SDI_H}" fill-opacity="{:.3}"/>"#,
                x(i),
                dx,
                p.clamp(0.0, 1.0)
            )
            .unwrap();
        }
        writeln!(w, "</g>").unwrap();
    }
    writeln!(w, r#"<rect x="{LEFT}" y="{SDI_TOP}" width="{plot_w}" height="{SDI_H}" fill="none" stroke="black"/>"#).unwrap();
    for t in [0.0, 0.5, 1.0] {
        let y = SDI_TOP + (1.0 - t) * SDI_H;
        writeln!(w, r#"<text x="{}" y="{:.2}" text-anchor="end">{t:.1}</text>"#, LEFT - 6.0, y + 4.0).unwrap();
    }
    writeln!(
        w,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">SDI</text>"#,
        SDI_TOP + SDI_H / 2.0,
        SDI_TOP + SDI_H / 2.0
    )
    .unwrap();
    let mut d = String::new();
    for (i, &v) in f.sdi.iter().enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        write!(d, "{cmd}{:.2},{:.2} ", x(i) + dx / 2.0, SDI_TOP + (1.0 - v.clamp(0.0, 1.0)) * SDI_H).unwrap();
    }
    writeln!(w, r#"<path id="sdi-curve" d="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#, d.trim_end()).unwrap();
    writeln!(w, "</g>").unwrap();

    // time axis in hours
    let hours = n as f64 * 30.0 / 3600.0;
    let mut h = 0.0;
    while h <= hours + 1e-9 {
        let xh = LEFT + plot_w * h / hours.max(1e-9);
        writeln!(w, r#"<text x="{xh:.2}" y="{:.2}" text-anchor="middle">{h:.0} h</text>"#, SDI_TOP + SDI_H + 18.0).unwrap();
        h += 1.0;
    }

    // metrics box
    let bx = WIDTH - RIGHT - 170.0;
    let by = SDI_TOP + 8.0;
    writeln!(w, r#"<g id="metrics">"#).unwrap();
    writeln!(w, r#"<rect x="{bx}" y="{by}" width="162" height="78" fill="white" fill-opacity="0.85" stroke="black"/>"#).unwrap();
    let lines = [
        format!("TST {:.1} min", f.metrics.tst),
        format!("SE {:.1} %", f.metrics.se * 100.0),
        format!("AUC {:.1}", f.metrics.auc),
        format!("AP {:.3}", f.ap),
    ];
    for (k, line) in lines.iter().enumerate() {
        writeln!(w, r#"<text x="{}" y="{}">{line}</text>"#, bx + 8.0, by + 18.0 + 17.0 * k as f64).unwrap();
    }
    writeln!(w, "</g>").unwrap();
    writeln!(w, "</svg>").unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_has_all_panels() {
        let sdi = [0.1, 0.5, 0.9, 0.4];
        let stages = [Stage::W, Stage::N2, Stage::N3, Stage::R];
        let arousal = [0.0, 0.25, 0.0, 1.0];
        let metrics = NightMetrics { tst: 1.5, se: 0.75, auc: 0.95, sleep_epochs: 3 };
        let svg = render(&Figure { title: "a<b", sdi: &sdi, stages: Some(&stages), arousal: Some(&arousal), metrics, ap: 0.1 });
        for needle in ["id=\"hypnogram\"", "id=\"sdi-curve\"", "id=\"arousal-shading\"", "fill-opacity=\"0.250\"", "TST", "SE", "AUC", "AP", "a&lt;b"] {
            assert!(svg.contains(needle), "{needle}");
        }
        // only epochs with arousal get shaded
        assert_eq!(svg.matches("fill-opacity=\"").count(), 3);
    }
}
