//! Dependency-free SVG scatter plots.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

pub struct Scatter<'a> {
    pub points: &'a [(f64, f64)],
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub title: &'a str,
    /// Draw the y = x reference line.
    pub identity_line: bool,
    /// Draw a fitted line `y = slope * x + intercept` with a caption.
    pub fit: Option<(f64, f64, String)>,
}

fn nice_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

pub fn render(plot: &Scatter) -> String {
    let (x0, x1) = nice_range(plot.points.iter().map(|p| p.0));
    let (y0, y1) = nice_range(plot.points.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = write!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(plot.title)
    );

    // axes
    let _ = write!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">{:.1}</text>"#,
            sx(fx),
            HEIGHT - MARGIN + 18.0,
            fx
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="11">{:.1}</text>"#,
            MARGIN - 6.0,
            sy(fy) + 4.0,
            fy
        );
    }
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 14.0,
        escape(plot.x_label)
    );
    let _ = write!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(plot.y_label)
    );

    if plot.identity_line {
        let lo = x0.max(y0);
        let hi = x1.min(y1);
        if lo < hi {
            let _ = write!(
                svg,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="5,4"/>"#,
                sx(lo),
                sy(lo),
                sx(hi),
                sy(hi)
            );
        }
    }
    if let Some((slope, intercept, label)) = &plot.fit {
        let ya = slope * x0 + intercept;
        let yb = slope * x1 + intercept;
        let _ = write!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="crimson"/>"#,
            sx(x0),
            sy(ya.clamp(y0, y1)),
            sx(x1),
            sy(yb.clamp(y0, y1))
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="12" fill="crimson">{}</text>"#,
            WIDTH - MARGIN,
            MARGIN + 16.0,
            escape(label)
        );
    }

    for &(x, y) in plot.points {
        let _ = write!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="steelblue" fill-opacity="0.6"/>"#,
            sx(x),
            sy(y)
        );
    }
    svg.push_str("</svg>");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
