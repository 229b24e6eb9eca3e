//! Deterministic standalone-SVG rendering of planar trajectories together
//! with the zero level set of the scenario's barrier function.

use anyhow::{bail, Result};
use cbfpds::geometry::State;
use cbfpds::scenario::Scenario;
use nalgebra::dvector;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 720.0;
const MARGIN: f64 = 48.0;
const CONTOUR_RES: usize = 160;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - 2.0 * MARGIN);
        // SVG y grows downward.
        let py = HEIGHT - MARGIN
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - 2.0 * MARGIN);
        (px, py)
    }
}

/// Renders the safe-set boundary (marching squares on the barrier's zero
/// level set) and the given trajectories as one self-contained SVG string.
pub fn render(s: &Scenario, trajectories: &[Vec<State>]) -> Result<String> {
    if s.dim != 2 {
        bail!("plotting is only implemented for planar scenarios");
    }
    let (lo, hi) = s.bounding_box()?;
    // Pad the box a little so the contour is not clipped at the edge.
    let pad = 0.05;
    let frame = Frame {
        x_min: lo[0] - pad * (hi[0] - lo[0]),
        x_max: hi[0] + pad * (hi[0] - lo[0]),
        y_min: lo[1] - pad * (hi[1] - lo[1]),
        y_max: hi[1] + pad * (hi[1] - lo[1]),
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&axes(&frame));

    for (ax, ay, bx, by) in contour_segments(s, &frame)? {
        let (px1, py1) = frame.map(ax, ay);
        let (px2, py2) = frame.map(bx, by);
        svg.push_str(&format!(
            "<line x1=\"{px1:.2}\" y1=\"{py1:.2}\" x2=\"{px2:.2}\" y2=\"{py2:.2}\" \
             stroke=\"#444444\" stroke-width=\"1.5\"/>\n"
        ));
    }

    for (i, traj) in trajectories.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = traj
            .iter()
            .map(|x| {
                let (px, py) = frame.map(x[0], x[1]);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            points.join(" ")
        ));
        if let (Some(first), Some(last)) = (traj.first(), traj.last()) {
            let (sx, sy) = frame.map(first[0], first[1]);
            let (ex, ey) = frame.map(last[0], last[1]);
            svg.push_str(&format!(
                "<circle cx=\"{sx:.2}\" cy=\"{sy:.2}\" r=\"4\" fill=\"{color}\"/>\n"
            ));
            svg.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"8\" height=\"8\" fill=\"{color}\"/>\n",
                ex - 4.0,
                ey - 4.0
            ));
        }
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

fn axes(frame: &Frame) -> String {
    let mut out = String::new();
    // Frame border.
    out.push_str(&format!(
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"#bbbbbb\"/>\n",
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    ));
    // Coordinate axes, when they cross the window.
    if frame.x_min < 0.0 && frame.x_max > 0.0 {
        let (px, _) = frame.map(0.0, 0.0);
        out.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{MARGIN}\" x2=\"{px:.2}\" y2=\"{}\" \
             stroke=\"#dddddd\"/>\n",
            HEIGHT - MARGIN
        ));
    }
    if frame.y_min < 0.0 && frame.y_max > 0.0 {
        let (_, py) = frame.map(0.0, 0.0);
        out.push_str(&format!(
            "<line x1=\"{MARGIN}\" y1=\"{py:.2}\" x2=\"{}\" y2=\"{py:.2}\" \
             stroke=\"#dddddd\"/>\n",
            WIDTH - MARGIN
        ));
    }
    // Corner labels of the data window.
    out.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{}\" font-size=\"12\" fill=\"#666666\">({:.2}, {:.2})</text>\n",
        HEIGHT - MARGIN + 16.0,
        frame.x_min,
        frame.y_min
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#666666\" text-anchor=\"end\">\
         ({:.2}, {:.2})</text>\n",
        WIDTH - MARGIN,
        MARGIN - 8.0,
        frame.x_max,
        frame.y_max
    ));
    out
}

/// Marching squares on the barrier's zero level set over the padded window.
fn contour_segments(s: &Scenario, frame: &Frame) -> Result<Vec<(f64, f64, f64, f64)>> {
    let n = CONTOUR_RES;
    let dx = (frame.x_max - frame.x_min) / n as f64;
    let dy = (frame.y_max - frame.y_min) / n as f64;
    // Sample h on the grid once.
    let mut values = vec![0.0f64; (n + 1) * (n + 1)];
    for j in 0..=n {
        for i in 0..=n {
            let x = frame.x_min + i as f64 * dx;
            let y = frame.y_min + j as f64 * dy;
            values[j * (n + 1) + i] = s.h(&dvector![x, y])?;
        }
    }
    let v = |i: usize, j: usize| values[j * (n + 1) + i];
    // Linear interpolation of the zero crossing between two grid values.
    let lerp = |a: f64, b: f64| if (b - a).abs() < 1e-300 { 0.5 } else { -a / (b - a) };

    let mut segments = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let x0 = frame.x_min + i as f64 * dx;
            let y0 = frame.y_min + j as f64 * dy;
            let c = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            // Edge crossing points, ordered bottom/right/top/left.
            let mut pts: Vec<(f64, f64)> = Vec::new();
            if (c[0] > 0.0) != (c[1] > 0.0) {
                pts.push((x0 + lerp(c[0], c[1]) * dx, y0));
            }
            if (c[1] > 0.0) != (c[2] > 0.0) {
                pts.push((x0 + dx, y0 + lerp(c[1], c[2]) * dy));
            }
            if (c[2] > 0.0) != (c[3] > 0.0) {
                pts.push((x0 + lerp(c[3], c[2]) * dx, y0 + dy));
            }
            if (c[3] > 0.0) != (c[0] > 0.0) {
                pts.push((x0, y0 + lerp(c[0], c[3]) * dy));
            }
            // Ambiguous saddle cells (4 crossings) are split pairwise; the
            // grid is fine enough that either split looks identical.
            for pair in pts.chunks(2) {
                if let [a, b] = pair {
                    segments.push((a.0, a.1, b.0, b.1));
                }
            }
        }
    }
    Ok(segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_disc_contour_and_determinism() {
        let s = cbfpds::scenario::builtin("unit-disc", 1.0).unwrap();
        let traj = vec![vec![dvector![0.0, 0.0], dvector![0.5, 0.5]]];
        let svg1 = render(&s, &traj).unwrap();
        let svg2 = render(&s, &traj).unwrap();
        assert_eq!(svg1, svg2);
        assert!(svg1.starts_with("<svg"));
        assert!(svg1.contains("<polyline"));
        // The circle h = 1 - |x|^2 must produce plenty of contour segments.
        assert!(svg1.matches("<line").count() > 100);
    }
}
