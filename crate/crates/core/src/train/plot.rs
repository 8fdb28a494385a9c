//! Four-panel SVG overlay of training curves (train/val accuracy, train/val
//! loss), one line per variant.

use std::fmt::Write as _;

use super::TrainingCurve;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Renders named curves as a standalone SVG document.
pub fn render_svg(curves: &[(String, TrainingCurve)]) -> String {
    type Field = fn(&super::EpochRecord) -> f64;
    let panels: [(&str, Field); 4] = [
        ("training accuracy", |r| r.train_acc),
        ("validation accuracy", |r| r.val_acc),
        ("training loss", |r| r.train_loss),
        ("validation loss", |r| r.val_loss),
    ];
    let width = 2.0 * (PANEL_W + 2.0 * MARGIN);
    let height = 2.0 * (PANEL_H + 2.0 * MARGIN) + 30.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let epochs = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0).max(1) as f64;
    for (k, (title, get)) in panels.iter().enumerate() {
        let ox = (k % 2) as f64 * (PANEL_W + 2.0 * MARGIN) + MARGIN;
        let oy = (k / 2) as f64 * (PANEL_H + 2.0 * MARGIN) + MARGIN;
        let is_acc = k < 2;
        let ymax = if is_acc {
            1.0
        } else {
            curves
                .iter()
                .flat_map(|(_, c)| c.records.iter().map(get))
                .filter(|v| v.is_finite())
                .fold(0.0f64, f64::max)
                .max(1e-6)
        };
        let _ = writeln!(
            svg,
            r#"<rect x="{ox}" y="{oy}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{title}</text>"#,
            ox + PANEL_W / 2.0,
            oy - 8.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{ymax:.2}</text>"#,
            ox - 4.0,
            oy + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">0</text>"#,
            ox - 4.0,
            oy + PANEL_H
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">epoch {}</text>"#,
            ox + PANEL_W,
            oy + PANEL_H + 14.0,
            epochs as usize
        );
        for (i, (_, curve)) in curves.iter().enumerate() {
            if curve.is_empty() {
                continue;
            }
            let pts: Vec<String> = curve
                .records
                .iter()
                .map(|r| {
                    let x = ox + PANEL_W * r.epoch as f64 / epochs;
                    let y = oy + PANEL_H * (1.0 - (get(r) / ymax).clamp(0.0, 1.0));
                    format!("{x:.1},{y:.1}")
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                COLORS[i % COLORS.len()],
                pts.join(" ")
            );
        }
    }
    let ly = height - 14.0;
    for (i, (name, _)) in curves.iter().enumerate() {
        let x = MARGIN + i as f64 * 90.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            x + 20.0,
            COLORS[i % COLORS.len()],
            x + 24.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::EpochRecord;

    #[test]
    fn one_polyline_per_nonempty_curve() {
        let c = TrainingCurve {
            records: vec![EpochRecord {
                epoch: 1,
                train_acc: 0.5,
                val_acc: 0.4,
                train_loss: 0.7,
                val_loss: 0.8,
                seconds: 0.0,
            }],
        };
        let svg = render_svg(&[("#01".into(), c), ("#02".into(), TrainingCurve::default())]);
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
