use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::minimax::RunRecord;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Plot area in SVG coordinates: `(x0, y0, width, height)` with `y0` at the top.
pub(crate) const PLOT_AREA: (f64, f64, f64, f64) = (LEFT, TOP, WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);

/// SVG line chart of every mixture weight `p_i` against step, on a fixed
/// `[0, 1]` weight axis.
pub fn render_weight_plot(record: &RunRecord) -> Result<String> {
    if !record.has_weights {
        return Err(Error::InvalidArgument("record has no mixture-weight columns".into()));
    }
    let rows: Vec<_> = record.rows.iter().filter(|r| r.p.is_some()).collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("record has no rows to plot".into()));
    }
    let (x0, y0, w, h) = PLOT_AREA;
    let max_step = rows.iter().map(|r| r.step).max().unwrap_or(0).max(1) as f64;
    let sx = |step: usize| x0 + w * step as f64 / max_step;
    let sy = |p: f64| y0 + h * (1.0 - p.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{x0:.2}" y="{y0:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#000000"/>"##
    );
    for i in 0..=5 {
        let p = i as f64 / 5.0;
        let y = sy(p);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="#000000"/><text x="{:.2}" y="{:.2}" text-anchor="end">{p:.1}</text>"##,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        );
    }
    for i in 0..=4 {
        let step = (max_step * i as f64 / 4.0).round() as usize;
        let x = sx(step);
        let yb = y0 + h;
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{yb:.2}" x2="{x:.2}" y2="{:.2}" stroke="#000000"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{step}</text>"##,
            yb + 5.0,
            yb + 20.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#,
        x0 + w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">weight</text>"#,
        y0 + h / 2.0,
        y0 + h / 2.0
    );
    for i in 0..record.dim_lambda {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.step), sy(r.p.as_ref().expect("filtered")[i])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = y0 + 10.0 + 20.0 * i as f64;
        let lx = x0 + w + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">p_{i}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes [`render_weight_plot`] to `path`.
pub fn emit_weight_plot(record: &RunRecord, path: &Path) -> Result<()> {
    let svg = render_weight_plot(record)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}

/// Weight-axis value at the last point of each polyline in a rendered plot.
pub fn polyline_final_weights(svg: &str) -> Vec<f64> {
    let (_, y0, _, h) = PLOT_AREA;
    svg.lines()
        .filter_map(|l| l.split("points=\"").nth(1))
        .filter_map(|rest| rest.split('"').next())
        .filter_map(|pts| pts.split(' ').next_back())
        .filter_map(|pt| {
            let (_, y) = pt.split_once(',')?;
            Some(1.0 - (y.parse::<f64>().ok()? - y0) / h)
        })
        .collect()
}
