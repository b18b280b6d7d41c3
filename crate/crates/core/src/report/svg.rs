use std::fmt::Write;

/// Minimal SVG writer. Coordinates are printed with two decimals so the
/// output is byte-stable.
pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

pub const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            w.max(0.0),
            h.max(0.0)
        );
    }

    pub fn outline(&mut self, x: f64, y: f64, w: f64, h: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="{stroke}" stroke-width="{width:.2}"/>"#
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"/>"#
        );
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let mut p = String::new();
        for (x, y) in pts {
            let _ = write!(p, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="2"/>"#,
            p.trim_end()
        );
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{fill}"/>"#);
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size:.1}" text-anchor="{anchor}" font-family="sans-serif">{}</text>"#,
            escape(s)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.0} {:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

/// White to dark blue for `v` in `[0, 1]`; grey for missing values.
pub fn heat_color(v: Option<f64>) -> String {
    match v {
        None => "#cccccc".to_string(),
        Some(v) => {
            let t = v.clamp(0.0, 1.0);
            let r = (255.0 * (1.0 - 0.85 * t)).round() as u8;
            let g = (255.0 * (1.0 - 0.65 * t)).round() as u8;
            let b = (255.0 * (1.0 - 0.3 * t)).round() as u8;
            format!("#{r:02x}{g:02x}{b:02x}")
        }
    }
}

/// Vertical axis with ticks at 0, 0.25, .., 1 scaled to `[lo, hi]`.
pub fn y_axis(svg: &mut Svg, x: f64, top: f64, bottom: f64, lo: f64, hi: f64) {
    svg.line(x, top, x, bottom, "black");
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = bottom - (bottom - top) * k as f64 / 4.0;
        svg.line(x - 4.0, y, x, y, "black");
        svg.text(x - 6.0, y + 4.0, 10.0, "end", &format!("{v:.2}"));
    }
}
