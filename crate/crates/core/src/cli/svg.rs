//! Standalone SVG charts for evaluation and Appendix-A outputs.

use std::fmt::Write;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();
    s
}

fn axes(s: &mut String) {
    writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN
    )
    .unwrap();
}

/// Vertical bars on a fixed [0, 1] axis.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let mut s = open(title);
    axes(&mut s);
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let slot = (WIDTH - 2.0 * MARGIN) / bars.len().max(1) as f64;
    for (i, (label, value)) in bars.iter().enumerate() {
        let h = value.clamp(0.0, 1.0) * plot_h;
        let x = MARGIN + slot * (i as f64 + 0.15);
        writeln!(
            s,
            r##"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#4c72b0"/>"##,
            HEIGHT - MARGIN - h,
            slot * 0.7
        )
        .unwrap();
        let cx = MARGIN + slot * (i as f64 + 0.5);
        writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN + 16.0,
            escape(label)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{value:.3}</text>"#,
            HEIGHT - MARGIN - h - 4.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Points over fixed axis ranges; points outside are clipped to the frame.
pub fn scatter(title: &str, points: &[(f32, f32)], x_range: (f32, f32), y_range: (f32, f32)) -> String {
    let mut s = open(title);
    axes(&mut s);
    let sx = |x: f32| {
        let t = ((x - x_range.0) / (x_range.1 - x_range.0)).clamp(0.0, 1.0) as f64;
        MARGIN + t * (WIDTH - 2.0 * MARGIN)
    };
    let sy = |y: f32| {
        let t = ((y - y_range.0) / (y_range.1 - y_range.0)).clamp(0.0, 1.0) as f64;
        HEIGHT - MARGIN - t * (HEIGHT - 2.0 * MARGIN)
    };
    for &(x, y) in points {
        if x.is_finite() && y.is_finite() {
            writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="#c44e52" fill-opacity="0.6"/>"##,
                sx(x),
                sy(y)
            )
            .unwrap();
        }
    }
    for (label, x, y, anchor) in [
        (format!("{}", x_range.0), MARGIN, HEIGHT - MARGIN + 16.0, "start"),
        (format!("{}", x_range.1), WIDTH - MARGIN, HEIGHT - MARGIN + 16.0, "end"),
        (format!("{}", y_range.0), MARGIN - 4.0, HEIGHT - MARGIN, "end"),
        (format!("{}", y_range.1), MARGIN - 4.0, MARGIN + 4.0, "end"),
    ] {
        writeln!(
            s,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{label}</text>"#
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
