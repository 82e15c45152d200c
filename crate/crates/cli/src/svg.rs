//! Static SVG figures: ECG overlays, regression scatters and activation maps.

use std::fmt::Write;

use cardiotwin_core::eikonal::ActivationTimeMap;
use cardiotwin_core::geometry::TetMesh;
use cardiotwin_core::pseudo_ecg::{EcgRecord, LEAD_NAMES, N_LEADS};

const GT_COLOR: &str = "#222222";
const PRED_COLOR: &str = "#e0609a";

fn header(w: f64, h: f64, hash: Option<&str>) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    if let Some(hash) = hash {
        let _ = writeln!(s, "<!-- config_hash={hash} -->");
    }
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Polyline path through the valid samples of `lead`, in panel coordinates.
pub fn lead_path(
    values: &[f64],
    mask: &[bool],
    dt: f64,
    t_max: f64,
    y_scale: f64,
    origin: (f64, f64),
    size: (f64, f64),
) -> String {
    let mut d = String::new();
    let mut pen_down = false;
    for (k, (v, m)) in values.iter().zip(mask).enumerate() {
        if !m {
            pen_down = false;
            continue;
        }
        let x = origin.0 + size.0 * (k as f64 * dt) / t_max;
        let y = origin.1 + size.1 * 0.5 * (1.0 - v / y_scale);
        let _ = write!(d, "{}{x:.2},{y:.2} ", if pen_down { 'L' } else { 'M' });
        pen_down = true;
    }
    d.trim_end().to_string()
}

/// Eight panels, ground truth in dark grey and prediction in pink.
/// A lead with no valid samples is drawn flat and labelled "masked".
pub fn ecg_overlay(
    pred: &EcgRecord,
    gt: Option<&EcgRecord>,
    title: &str,
    hash: Option<&str>,
) -> String {
    let (pw, ph, margin) = (320.0, 110.0, 30.0);
    let (w, h) = (2.0 * pw + 3.0 * margin, 4.0 * ph + 5.0 * margin + 20.0);
    let mut s = header(w, h, hash);
    let _ = writeln!(
        s,
        "<text x=\"{margin}\" y=\"20\" font-size=\"14\">{}</text>",
        escape(title)
    );
    let records: Vec<&EcgRecord> = gt.into_iter().chain(std::iter::once(pred)).collect();
    // the time axis ends at the last valid sample of any record, padding is not drawn
    let n = records
        .iter()
        .flat_map(|r| r.mask.iter())
        .filter_map(|m| m.iter().rposition(|&v| v))
        .max()
        .map_or_else(
            || records.iter().map(|r| r.n_samples()).max().unwrap_or(1),
            |k| k + 1,
        )
        .max(1);
    let t_max = n as f64 * pred.dt;
    let y_scale = records
        .iter()
        .map(|r| r.peak())
        .fold(0.0, f64::max)
        .max(1e-12)
        * 1.1;
    for l in 0..N_LEADS {
        let x0 = margin + (l % 2) as f64 * (pw + margin);
        let y0 = 20.0 + margin + (l / 2) as f64 * (ph + margin);
        let _ = writeln!(
            s,
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#cccccc\"/>"
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\">{}</text>",
            x0 + 4.0,
            y0 + 12.0,
            LEAD_NAMES[l]
        );
        let masked = records.iter().all(|r| r.mask[l].iter().all(|m| !m));
        if masked {
            let y = y0 + ph / 2.0;
            let _ = writeln!(
                s,
                "<path d=\"M{x0:.2},{y:.2} L{:.2},{y:.2}\" stroke=\"#999999\" fill=\"none\"/>",
                x0 + pw
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" fill=\"#999999\">masked</text>",
                x0 + pw / 2.0 - 20.0,
                y - 4.0
            );
            continue;
        }
        for (r, color) in records.iter().zip(if gt.is_some() {
            [GT_COLOR, PRED_COLOR]
        } else {
            [PRED_COLOR, PRED_COLOR]
        }) {
            let d = lead_path(
                &r.leads[l],
                &r.mask[l],
                r.dt,
                t_max,
                y_scale,
                (x0, y0),
                (pw, ph),
            );
            if !d.is_empty() {
                let _ = writeln!(
                    s,
                    "<path d=\"{d}\" stroke=\"{color}\" fill=\"none\" stroke-width=\"1.2\"/>"
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Extracts the `d` attribute of every path, in document order.
pub fn path_data(svg: &str) -> Vec<String> {
    svg.match_indices("<path d=\"")
        .map(|(i, m)| {
            let rest = &svg[i + m.len()..];
            rest[..rest.find('"').unwrap_or(rest.len())].to_string()
        })
        .collect()
}

/// Formats R² the way scatter plots annotate it.
pub fn r2_label(r2: f64) -> String {
    format!("R\u{b2} = {r2:.4}")
}

pub struct ScatterFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn scatter(
    x: &[f64],
    y: &[f64],
    fit: &ScatterFit,
    labels: (&str, &str),
    hash: Option<&str>,
) -> String {
    let (w, h, m) = (480.0, 400.0, 60.0);
    let mut s = header(w, h, hash);
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    };
    let (x_lo, x_hi) = range(x);
    let (y_lo, y_hi) = range(y);
    let px = |v: f64| m + (w - 1.5 * m) * (v - x_lo) / (x_hi - x_lo);
    let py = |v: f64| h - m - (h - 1.5 * m) * (v - y_lo) / (y_hi - y_lo);
    let _ = writeln!(
        s,
        "<rect x=\"{m}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#cccccc\"/>",
        m / 2.0,
        w - 1.5 * m,
        h - 1.5 * m
    );
    for (a, b) in x.iter().zip(y) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#4477aa\" fill-opacity=\"0.7\"/>",
            px(*a),
            py(*b)
        );
    }
    let line = |v: f64| fit.slope * v + fit.intercept;
    let _ = writeln!(
        s,
        "<path d=\"M{:.2},{:.2} L{:.2},{:.2}\" stroke=\"#cc3311\" fill=\"none\" stroke-width=\"1.5\"/>",
        px(x_lo),
        py(line(x_lo)),
        px(x_hi),
        py(line(x_hi))
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        m + (w - 1.5 * m) / 2.0,
        h - 20.0,
        escape(labels.0)
    );
    let _ = writeln!(
        s,
        "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">{}</text>",
        h / 2.0,
        h / 2.0,
        escape(labels.1)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" class=\"r2\">{}</text>",
        m + 8.0,
        m / 2.0 + 16.0,
        r2_label(fit.r2)
    );
    s.push_str("</svg>\n");
    s
}

fn ramp(u: f64) -> String {
    // blue to yellow through teal
    let u = u.clamp(0.0, 1.0);
    let r = (68.0 + u * (253.0 - 68.0)) as u8;
    let g = (1.0 + u * (231.0 - 1.0)) as u8;
    let b = (84.0 + (1.0 - (2.0 * u - 1.0).abs()) * 80.0 - u * 47.0) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Nodes projected onto the x-z plane, coloured from earliest to latest activation.
pub fn activation_map(mesh: &TetMesh, atm: &ActivationTimeMap, hash: Option<&str>) -> String {
    let (w, h, m) = (420.0, 520.0, 30.0);
    let mut s = header(w, h, hash);
    let nodes = mesh.nodes();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in nodes {
        for (k, c) in [p[0], p[2]].into_iter().enumerate() {
            lo[k] = lo[k].min(c);
            hi[k] = hi[k].max(c);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let scale = (w - 2.0 * m).min(h - 3.0 * m) / span;
    let times = &atm.times;
    let t_max = times.iter().copied().fold(0.0, f64::max).max(1e-12);
    // draw back to front along y so nearer nodes end on top
    let mut order: Vec<usize> = (0..nodes.len().min(times.len())).collect();
    order.sort_by(|&a, &b| nodes[b][1].total_cmp(&nodes[a][1]).then(a.cmp(&b)));
    for i in order {
        let p = nodes[i];
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.2\" fill=\"{}\"/>",
            m + (p[0] - lo[0]) * scale,
            2.0 * m + (hi[1] - p[2]) * scale,
            ramp(times[i] / t_max)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{m}\" y=\"20\">activation time, 0 to {:.1} ms</text>",
        t_max * 1e3
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_samples_break_the_path() {
        let d = lead_path(
            &[0.0, 1.0, 0.5, 0.2],
            &[true, true, false, true],
            1.0,
            4.0,
            1.0,
            (0.0, 0.0),
            (4.0, 2.0),
        );
        assert_eq!(d, "M0.00,1.00 L1.00,0.00 M3.00,0.80");
    }

    #[test]
    fn r2_annotation_format() {
        assert_eq!(r2_label(0.73149), "R\u{b2} = 0.7315");
    }
}
