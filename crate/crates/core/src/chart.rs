//! Tiny self-contained SVG line charts for the robustness reports.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const COLORS: [&str; 6] = ["#4363d8", "#e6194b", "#3cb44b", "#f58231", "#911eb4", "#469990"];

/// Render named series as polylines with axes, ticks and a legend.
/// Returns the SVG document as a string.
pub fn render_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    let (x_min, x_max) = bounds(points.iter().map(|p| p.0));
    let (y_min, y_max) = bounds(points.iter().map(|p| p.1));
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = move |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = move |y: f64| MARGIN_T + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    ));
    svg.push('\n');
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    svg.push('\n');
    svg.push_str(&format!(
        r#"<text x="{}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        escape(title)
    ));
    svg.push('\n');

    // axes
    svg.push_str(&format!(
        r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/><line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        l = MARGIN_L,
        t = MARGIN_T,
        b = MARGIN_T + plot_h,
        r = MARGIN_L + plot_w
    ));
    svg.push('\n');

    // ticks and grid
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        svg.push_str(&format!(
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            sx(fx),
            MARGIN_T + plot_h + 18.0,
            format_tick(fx)
        ));
        svg.push_str(&format!(
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            sy(fy) + 4.0,
            format_tick(fy)
        ));
        svg.push_str(&format!(
            r##"<line x1="{l}" y1="{y:.1}" x2="{r}" y2="{y:.1}" stroke="#dddddd"/>"##,
            l = MARGIN_L,
            r = MARGIN_L + plot_w,
            y = sy(fy)
        ));
        svg.push('\n');
    }

    // axis labels
    svg.push_str(&format!(
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(y_label)
    ));
    svg.push('\n');

    for (idx, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        ));
        for &(x, y) in pts {
            svg.push_str(&format!(
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            ));
        }
        // legend entry
        let ly = MARGIN_T + 14.0 + idx as f64 * 20.0;
        svg.push_str(&format!(
            r#"<line x1="{lx}" y1="{ly:.1}" x2="{}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            MARGIN_L + plot_w + 40.0,
            MARGIN_L + plot_w + 46.0,
            ly + 4.0,
            escape(name),
            lx = MARGIN_L + plot_w + 12.0,
        ));
        svg.push('\n');
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        min = min.min(v);
        max = max.max(v);
    }
    if !min.is_finite() || !max.is_finite() {
        return (0.0, 1.0);
    }
    if min == max {
        return (min - 0.5, max + 0.5);
    }
    let pad = (max - min) * 0.05;
    (min - pad, max + pad)
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_and_legend() {
        let svg = render_line_chart(
            "relative cost",
            "communication radius (m)",
            "cost / expert",
            &[
                ("gcnn".into(), vec![(1.5, 2.0), (2.0, 1.6), (2.5, 1.4)]),
                ("grnn".into(), vec![(1.5, 1.8), (2.0, 1.5), (2.5, 1.3)]),
            ],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("gcnn") && svg.contains("grnn"));
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let svg = render_line_chart("flat", "x", "y", &[("a".into(), vec![(1.0, 2.0), (2.0, 2.0)])]);
        assert!(!svg.contains("NaN"));
    }
}
