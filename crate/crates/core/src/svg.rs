//! Minimal SVG output: scatter plots with covariance ellipses, line plots.

use std::fmt::Write;

use nalgebra::{Matrix2, SymmetricEigen};

use crate::datagen::MixtureSpec;
use crate::tensor::Tensor;

const SIZE: f64 = 480.0;
const PAD: f64 = 36.0;

struct Frame {
    lo: (f64, f64),
    hi: (f64, f64),
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let w = SIZE - 2.0 * PAD;
        let px = PAD + (x - self.lo.0) / (self.hi.0 - self.lo.0) * w;
        let py = SIZE - PAD - (y - self.lo.1) / (self.hi.1 - self.lo.1) * w;
        (px, py)
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        x >= self.lo.0 && x <= self.hi.0 && y >= self.lo.1 && y <= self.hi.1
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        SIZE / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, f: &Frame) {
    let _ = writeln!(
        out,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{w}\" height=\"{w}\" fill=\"none\" stroke=\"#888\"/>",
        w = SIZE - 2.0 * PAD
    );
    let _ = writeln!(
        out,
        "<text x=\"{PAD}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>",
        SIZE - PAD + 14.0,
        f.lo.0,
        SIZE - PAD,
        SIZE - PAD + 14.0,
        f.hi.0
    );
    let _ = writeln!(
        out,
        "<text x=\"4\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>\
         <text x=\"4\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>",
        SIZE - PAD,
        f.lo.1,
        PAD + 10.0,
        f.hi.1
    );
}

/// Scatter of the first two columns. With a 2-D mixture, its three-sigma
/// ellipses are drawn and the view is fixed around them; points outside
/// the view are dropped.
pub fn scatter(points: &Tensor, mixture: Option<&MixtureSpec>, title: &str) -> String {
    let frame = match mixture.filter(|m| m.dim() == 2) {
        Some(m) => {
            let mut lo = (f64::INFINITY, f64::INFINITY);
            let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (mean, cov) in m.means.iter().zip(&m.covariances) {
                let rx = 4.5 * cov[0].sqrt();
                let ry = 4.5 * cov[3].sqrt();
                lo = (lo.0.min(mean[0] - rx), lo.1.min(mean[1] - ry));
                hi = (hi.0.max(mean[0] + rx), hi.1.max(mean[1] + ry));
            }
            let half = (hi.0 - lo.0).max(hi.1 - lo.1) / 2.0;
            let c = ((lo.0 + hi.0) / 2.0, (lo.1 + hi.1) / 2.0);
            Frame {
                lo: (c.0 - half, c.1 - half),
                hi: (c.0 + half, c.1 + half),
            }
        }
        None => quantile_frame(points),
    };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &frame);
    if points.cols() >= 2 {
        for i in 0..points.rows() {
            let r = points.row(i);
            if frame.inside(r[0], r[1]) {
                let (x, y) = frame.map(r[0], r[1]);
                let _ = writeln!(out, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.2\" fill=\"#1f5fa8\" fill-opacity=\"0.45\"/>");
            }
        }
    }
    if let Some(m) = mixture.filter(|m| m.dim() == 2) {
        for (mean, cov) in m.means.iter().zip(&m.covariances) {
            let eig = SymmetricEigen::new(Matrix2::new(cov[0], cov[1], cov[2], cov[3]));
            let scale = (SIZE - 2.0 * PAD) / (frame.hi.0 - frame.lo.0);
            let rx = 3.0 * eig.eigenvalues[0].max(0.0).sqrt() * scale;
            let ry = 3.0 * eig.eigenvalues[1].max(0.0).sqrt() * scale;
            let v = eig.eigenvectors.column(0);
            let angle = -v[1].atan2(v[0]).to_degrees();
            let (cx, cy) = frame.map(mean[0], mean[1]);
            let _ = writeln!(
                out,
                "<ellipse cx=\"{cx:.2}\" cy=\"{cy:.2}\" rx=\"{rx:.2}\" ry=\"{ry:.2}\" transform=\"rotate({angle:.2} {cx:.2} {cy:.2})\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\"/>"
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn quantile_frame(points: &Tensor) -> Frame {
    let q = |j: usize| -> (f64, f64) {
        let mut v: Vec<f64> = (0..points.rows()).map(|i| points.row(i)[j]).filter(|v| v.is_finite()).collect();
        if v.is_empty() {
            return (-1.0, 1.0);
        }
        v.sort_by(f64::total_cmp);
        let at = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        let (a, b) = (at(0.01), at(0.99));
        let m = 0.1 * (b - a).max(1e-9);
        (a - m, b + m)
    };
    if points.cols() < 2 {
        return Frame { lo: (-1.0, -1.0), hi: (1.0, 1.0) };
    }
    let (x, y) = (q(0), q(1));
    Frame {
        lo: (x.0, y.0),
        hi: (x.1, y.1),
    }
}

/// Line plot of named series sharing one axis frame.
pub fn lines(series: &[(&str, Vec<(f64, f64)>)], title: &str) -> String {
    let pts = series.iter().flat_map(|s| s.1.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        lo = (lo.0.min(p.0), lo.1.min(p.1));
        hi = (hi.0.max(p.0), hi.1.max(p.1));
    }
    if !lo.0.is_finite() {
        lo = (0.0, 0.0);
        hi = (1.0, 1.0);
    }
    if hi.0 <= lo.0 {
        hi.0 = lo.0 + 1.0;
    }
    if hi.1 <= lo.1 {
        hi.1 = lo.1 + 1.0;
    }
    let frame = Frame { lo, hi };
    let colors = ["#1f5fa8", "#c0392b", "#27ae60", "#8e44ad", "#d35400"];
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &frame);
    for (k, (name, s)) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let path: Vec<String> = s
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| {
                let (px, py) = frame.map(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            path.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>",
            PAD + 6.0,
            PAD + 14.0 * (k as f64 + 1.0),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
