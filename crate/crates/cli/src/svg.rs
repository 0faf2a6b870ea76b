//! Top-down plot of a run: pool outline, estimated track (dotted), optional
//! truth track, origin mark and litter triangles. X to the right, Y up.

use std::fmt::Write;

use poolmap_core::io::PoseRecord;
use poolmap_core::mapper::LitterMap;

const PX_PER_M: f64 = 150.0;
const MARGIN_PX: f64 = 40.0;

pub struct Plot<'a> {
    pub pool_length_m: f64,
    pub pool_width_m: f64,
    pub estimates: &'a [PoseRecord],
    pub truth: Option<&'a [PoseRecord]>,
    pub map: Option<&'a LitterMap<f64>>,
    pub litter_truth: Option<&'a LitterMap<f64>>,
}

struct Frame {
    hx: f64,
    hy: f64,
}

impl Frame {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (MARGIN_PX + (x + self.hx) * PX_PER_M, MARGIN_PX + (self.hy - y) * PX_PER_M)
    }
}

fn polyline(out: &mut String, f: &Frame, poses: &[PoseRecord], style: &str) {
    if poses.is_empty() {
        return;
    }
    let pts: Vec<String> = poses
        .iter()
        .map(|p| {
            let (x, y) = f.px(p.state[0], p.state[1]);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, pts.join(" "));
}

pub fn render(plot: &Plot) -> String {
    let f = Frame {
        hx: plot.pool_length_m / 2.0,
        hy: plot.pool_width_m / 2.0,
    };
    let w = plot.pool_length_m * PX_PER_M + 2.0 * MARGIN_PX;
    let h = plot.pool_width_m * PX_PER_M + 2.0 * MARGIN_PX;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let (x0, y0) = f.px(-f.hx, f.hy);
    let _ = writeln!(
        out,
        r##"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="#dbeefa" stroke="#205080" stroke-width="2"/>"##,
        plot.pool_length_m * PX_PER_M,
        plot.pool_width_m * PX_PER_M
    );

    if let Some(truth) = plot.truth {
        polyline(&mut out, &f, truth, r##"stroke="#909090" stroke-width="1""##);
    }
    polyline(&mut out, &f, plot.estimates, r##"stroke="black" stroke-width="1.5" stroke-dasharray="2 3""##);

    let (ox, oy) = f.px(0.0, 0.0);
    let _ = writeln!(
        out,
        r##"<g id="origin" stroke="#c00000" stroke-width="2"><line x1="{:.1}" y1="{oy:.1}" x2="{:.1}" y2="{oy:.1}"/><line x1="{ox:.1}" y1="{:.1}" x2="{ox:.1}" y2="{:.1}"/></g>"##,
        ox - 6.0,
        ox + 6.0,
        oy - 6.0,
        oy + 6.0
    );

    if let Some(litter) = plot.litter_truth {
        for item in litter.items() {
            let (x, y) = f.px(item.position.x, item.position.y);
            let _ = writeln!(out, r##"<circle class="truth" cx="{x:.1}" cy="{y:.1}" r="6" fill="none" stroke="#208020" stroke-width="1.5"/>"##);
        }
    }
    if let Some(map) = plot.map {
        for item in map.items() {
            let (x, y) = f.px(item.position.x, item.position.y);
            let _ = writeln!(
                out,
                r##"<polygon class="litter" points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}" fill="#e08000"/><text x="{:.1}" y="{:.1}">{}</text>"##,
                x,
                y - 7.0,
                x - 6.0,
                y + 5.0,
                x + 6.0,
                y + 5.0,
                x + 8.0,
                y + 4.0,
                item.label
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
