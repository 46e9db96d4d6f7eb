//! Self-contained SVG line plots and heatmaps.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Draw unconnected dots instead of a line.
    pub markers: bool,
}

impl Series {
    pub fn line(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points, markers: false }
    }

    pub fn dots(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points, markers: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Dashed vertical markers.
    pub verticals: Vec<f64>,
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn axes(&self, s: &mut String, title: &str, xl: &str, yl: &str) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            let _ = writeln!(s, r#"<line x1="{xp:.1}" y1="{y0}" x2="{xp:.1}" y2="{}" stroke="black"/>"#, y0 + 5.0);
            let _ = writeln!(
                s,
                r#"<text x="{xp:.1}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
                y0 + 19.0,
                tick(xv)
            );
            let _ = writeln!(s, r#"<line x1="{}" y1="{yp:.1}" x2="{x0}" y2="{yp:.1}" stroke="black"/>"#, x0 - 5.0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" font-size="12" text-anchor="end">{}</text>"#,
                x0 - 8.0,
                yp + 4.0,
                tick(yv)
            );
        }
        let _ =
            writeln!(s, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            H - 14.0,
            escape(xl)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            (y0 + y1) / 2.0,
            escape(yl)
        );
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).chain(self.verticals.iter().copied());
        let fr = Frame { x: range(xs), y: range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1))) };
        let mut s = header();
        fr.axes(&mut s, &self.title, &self.x_label, &self.y_label);
        for &v in &self.verticals {
            let x = fr.px(v);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{}" stroke="#888" stroke-dasharray="4 3"/>"##,
                H - BOTTOM
            );
        }
        for (k, ser) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let finite = ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite());
            if ser.markers {
                for &(x, y) in finite {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, fr.px(x), fr.py(y));
                }
            } else {
                let pts: Vec<String> = finite.map(|&(x, y)| format!("{:.2},{:.2}", fr.px(x), fr.py(y))).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    pts.join(" ")
                );
            }
            let ly = TOP + 16.0 + 16.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly}" font-size="12" fill="{color}" text-anchor="end">{}</text>"#,
                W - RIGHT - 8.0,
                escape(&ser.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Heatmap {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Column coordinates.
    pub x: Vec<f64>,
    /// Row coordinates.
    pub y: Vec<f64>,
    /// `z[row][col]`, expected in `[0, 1]`.
    pub z: Vec<Vec<f64>>,
}

fn viridis_like(v: f64) -> String {
    let t = v.clamp(0.0, 1.0);
    let r = (68.0 + t * (253.0 - 68.0)) as u8;
    let g = (1.0 + t * (231.0 - 1.0)) as u8;
    let b = (84.0 + (1.0 - t) * (150.0 - 84.0) - t * 47.0).clamp(0.0, 255.0) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

impl Heatmap {
    pub fn to_svg(&self) -> String {
        let fr = Frame { x: range(self.x.iter().copied()), y: range(self.y.iter().copied()) };
        let mut s = header();
        let (nx, ny) = (self.x.len().max(1), self.y.len().max(1));
        let cw = (W - LEFT - RIGHT) / nx as f64;
        let ch = (H - TOP - BOTTOM) / ny as f64;
        for (r, row) in self.z.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                let x = LEFT + k as f64 * cw;
                let y = H - BOTTOM - (r + 1) as f64 * ch;
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    cw + 0.3,
                    ch + 0.3,
                    viridis_like(v)
                );
            }
        }
        fr.axes(&mut s, &self.title, &self.x_label, &self.y_label);
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_wellformed() {
        let p = LinePlot {
            title: "a < b".into(),
            series: vec![Series::line("s", vec![(0.0, 0.0), (1.0, 1.0)]), Series::dots("d", vec![(0.5, 0.5)])],
            verticals: vec![0.5],
            ..Default::default()
        };
        let svg = p.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b") && svg.contains("polyline") && svg.contains("stroke-dasharray"));
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn heatmap_cells() {
        let h = Heatmap { x: vec![0.0, 1.0], y: vec![0.0], z: vec![vec![0.0, 1.0]], ..Default::default() };
        assert_eq!(h.to_svg().matches("<rect x=").count(), 3);
        assert_eq!(viridis_like(-1.0), viridis_like(0.0));
    }
}
