//! Minimal SVG plots of BEV heatmaps and boxes.

use std::fmt::Write;

use mvdet::bev_init::{BevGridSpec, Heatmap, Peak};
use mvdet::boxes::Box3D;

const PX: f64 = 12.0;

/// Maps ego (x forward, y left) to image coordinates with x up.
struct View {
    spec: BevGridSpec,
    scale: f64,
}

impl View {
    fn new(spec: BevGridSpec, width_px: f64) -> Self {
        let scale = width_px / (spec.y_range[1] - spec.y_range[0]);
        Self { spec, scale }
    }

    fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        ((self.spec.y_range[1] - y) * self.scale, (self.spec.x_range[1] - x) * self.scale)
    }

    fn size(&self) -> (f64, f64) {
        (
            (self.spec.y_range[1] - self.spec.y_range[0]) * self.scale,
            (self.spec.x_range[1] - self.spec.x_range[0]) * self.scale,
        )
    }
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.1} {h:.1}\">\n"
    )
}

fn box_polygon(v: &View, b: &Box3D, style: &str) -> String {
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw) = (b.size[1] / 2.0, b.size[0] / 2.0);
    let pts: Vec<String> = [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)]
        .iter()
        .map(|&(lx, ly)| {
            let (px, py) = v.to_px(b.center[0] + c * lx - s * ly, b.center[1] + s * lx + c * ly);
            format!("{px:.1},{py:.1}")
        })
        .collect();
    format!("<polygon points=\"{}\" {style}/>\n", pts.join(" "))
}

/// Ground truth in green, predictions in red with opacity by score.
pub fn bev_boxes(spec: &BevGridSpec, gt: &[Box3D], preds: &[Box3D]) -> String {
    let v = View::new(*spec, 480.0);
    let (w, h) = v.size();
    let mut s = header(w, h);
    let _ = writeln!(s, "<rect width=\"{w:.1}\" height=\"{h:.1}\" fill=\"white\" stroke=\"black\"/>");
    let (ex, ey) = v.to_px(0.0, 0.0);
    let _ = writeln!(s, "<circle cx=\"{ex:.1}\" cy=\"{ey:.1}\" r=\"4\" fill=\"black\"/>");
    for b in gt {
        s += &box_polygon(&v, b, "fill=\"none\" stroke=\"green\" stroke-width=\"2\"");
    }
    for b in preds {
        s += &box_polygon(
            &v,
            b,
            &format!("fill=\"red\" fill-opacity=\"{:.2}\" stroke=\"red\"", 0.15 + 0.5 * b.score),
        );
    }
    s += "</svg>\n";
    s
}

/// Heatmap cells in grey levels, selected peaks as blue dots, ground-truth
/// centers as green crosses.
pub fn heatmap(hm: &Heatmap, peaks: &[Peak], gt: &[Box3D]) -> String {
    let spec = hm.spec;
    let v = View::new(spec, PX * spec.width() as f64);
    let (w, h) = v.size();
    let mut s = header(w, h);
    let cell = spec.cell_size();
    for j in 0..spec.height() {
        for i in 0..spec.width() {
            let c = spec.bev_center(j, i);
            let (px, py) = v.to_px(c[0] + cell[0] / 2.0, c[1] + cell[1] / 2.0);
            let g = (255.0 * (1.0 - hm.values.at(&[j, i]).clamp(0.0, 1.0))) as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{px:.1}\" y=\"{py:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"rgb({g},{g},{g})\"/>",
                cell[1] * v.scale,
                cell[0] * v.scale
            );
        }
    }
    for p in peaks {
        let (px, py) = v.to_px(p.xy[0], p.xy[1]);
        let _ = writeln!(s, "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"3\" fill=\"royalblue\"/>");
    }
    for b in gt {
        let (px, py) = v.to_px(b.center[0], b.center[1]);
        let _ = writeln!(
            s,
            "<path d=\"M{:.1},{:.1} l8,8 M{:.1},{:.1} l8,-8\" stroke=\"limegreen\" stroke-width=\"2\"/>",
            px - 4.0,
            py - 4.0,
            px - 4.0,
            py + 4.0
        );
    }
    s += "</svg>\n";
    s
}
