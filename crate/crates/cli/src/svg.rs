//! Self-contained SVG heatmaps of single-valued maps.

use std::fmt::Write as _;

/// Steps in the gray-to-red color ramp.
pub const RAMP_STEPS: usize = 256;

const CELL: usize = 8;
const BAR_W: usize = 16;
const MARGIN: usize = 8;
const NO_DATA: &str = "#ffffff";

/// Color of ramp step `i`: mid gray at 0, pure red at 255.
pub fn ramp(i: usize) -> (u8, u8, u8) {
    let i = i.min(RAMP_STEPS - 1) as u32;
    let r = 128 + i * 127 / 255;
    let gb = 128 - i * 128 / 255;
    (r as u8, gb as u8, gb as u8)
}

fn hex((r, g, b): (u8, u8, u8)) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Ramp step of `v` on `[0, max]`; everything maps to step 0 when `max` is 0.
pub fn step(v: f64, max: f64) -> usize {
    if max <= 0.0 {
        return 0;
    }
    ((v / max).clamp(0.0, 1.0) * (RAMP_STEPS - 1) as f64).round() as usize
}

/// One `<rect class="px">` per pixel (row-major, NaN drawn white) and a
/// vertical color bar labelled `0` and `max`. `max` defaults to the largest
/// finite value, or 0 if there is none.
pub fn heatmap(values: &[f64], height: usize, width: usize, title: &str, max: Option<f64>) -> String {
    assert_eq!(values.len(), height * width, "values must be height × width");
    let max = max.unwrap_or_else(|| values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max));
    let map_w = width * CELL;
    let map_h = height * CELL;
    let bar_x = MARGIN + map_w + MARGIN;
    let total_w = bar_x + BAR_W + 72;
    let total_h = (map_h.max(RAMP_STEPS) + 2 * MARGIN) + 16;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" viewBox="0 0 {total_w} {total_h}" shape-rendering="crispEdges">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, r#"<g id="map" transform="translate({MARGIN},{MARGIN})">"#);
    for r in 0..height {
        for c in 0..width {
            let v = values[r * width + c];
            let fill = if v.is_finite() { hex(ramp(step(v, max))) } else { NO_DATA.to_string() };
            let _ = writeln!(
                s,
                r#"<rect class="px" x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{fill}"/>"#,
                c * CELL,
                r * CELL
            );
        }
    }
    s.push_str("</g>\n");
    let _ = writeln!(s, r#"<g id="legend" transform="translate({bar_x},{MARGIN})">"#);
    // top of the bar is the maximum
    for i in 0..RAMP_STEPS {
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="0" y="{}" width="{BAR_W}" height="1" fill="{}"/>"#,
            RAMP_STEPS - 1 - i,
            hex(ramp(i))
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="legend-max" x="{}" y="10" font-size="10" font-family="sans-serif">{}</text>"#,
        BAR_W + 4,
        fmt_label(max)
    );
    let _ = writeln!(
        s,
        r#"<text class="legend-min" x="{}" y="{}" font-size="10" font-family="sans-serif">0</text>"#,
        BAR_W + 4,
        RAMP_STEPS
    );
    s.push_str("</g>\n</svg>\n");
    s
}

fn fmt_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v:.4}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
