//! Minimal static SVG charts over a daily axis.

use std::fmt::Write;

use chrono::NaiveDate;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 260.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 40.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Bars,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(NaiveDate, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub style: Style,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if !(0.01..10_000.0).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn bounds(panel: &Panel) -> (f64, f64) {
    let mut lo: f64 = 0.0;
    let mut hi: f64 = 0.0;
    for s in &panel.series {
        for &(_, v) in &s.points {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    (lo - if lo < 0.0 { pad } else { 0.0 }, hi + pad)
}

/// Stacks `panels` vertically over a shared date axis.
pub fn render(title: &str, panels: &[Panel]) -> String {
    let dates: Vec<NaiveDate> = panels
        .iter()
        .flat_map(|p| p.series.iter().flat_map(|s| s.points.iter().map(|q| q.0)))
        .collect();
    let first = dates.iter().min().copied();
    let last = dates.iter().max().copied();
    let span = match (first, last) {
        (Some(a), Some(b)) => (b - a).num_days().max(1) as f64,
        _ => 1.0,
    };
    let plot_w = WIDTH - LEFT - RIGHT;
    let height = TOP + panels.len() as f64 * PANEL_HEIGHT;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        esc(title)
    );

    for (k, panel) in panels.iter().enumerate() {
        let y0 = TOP + k as f64 * PANEL_HEIGHT;
        let plot_h = PANEL_HEIGHT - BOTTOM - 20.0;
        let top = y0 + 20.0;
        let (lo, hi) = bounds(panel);
        let x_of = |d: NaiveDate| {
            LEFT + plot_w * (d - first.expect("dates exist")).num_days() as f64 / span
        };
        let y_of = |v: f64| top + plot_h * (hi - v) / (hi - lo);

        let _ = writeln!(
            s,
            r#"<text x="{LEFT}" y="{}" font-size="12">{}</text>"#,
            y0 + 14.0,
            esc(&panel.title)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#888"/>"##
        );
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            let y = y_of(v);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + plot_w,
                LEFT - 6.0,
                y + 4.0,
                tick_label(v)
            );
        }
        if lo < 0.0 && hi > 0.0 {
            let y = y_of(0.0);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#444" stroke-dasharray="3,3"/>"##,
                LEFT + plot_w
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
            top + plot_h / 2.0,
            top + plot_h / 2.0,
            esc(&panel.y_label)
        );
        if let (Some(a), Some(b)) = (first, last) {
            let mid = a + chrono::Duration::days((b - a).num_days() / 2);
            for d in [a, mid, b] {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{d}</text>"#,
                    x_of(d),
                    top + plot_h + 16.0
                );
            }
        }

        let bar_w = (plot_w / (span + 1.0) / panel.series.len().max(1) as f64 * 0.8).max(1.0);
        for (j, series) in panel.series.iter().enumerate() {
            let color = PALETTE[j % PALETTE.len()];
            match panel.style {
                Style::Line => {
                    let pts: Vec<String> = series
                        .points
                        .iter()
                        .filter(|p| p.1.is_finite())
                        .map(|&(d, v)| format!("{:.2},{:.2}", x_of(d), y_of(v)))
                        .collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                        pts.join(" ")
                    );
                    for p in &pts {
                        let (x, y) = p.split_once(',').expect("formatted pair");
                        let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2" fill="{color}"/>"#);
                    }
                }
                Style::Bars => {
                    let base = y_of(0.0f64.clamp(lo, hi));
                    for &(d, v) in series.points.iter().filter(|p| p.1.is_finite()) {
                        let x =
                            x_of(d) - bar_w * panel.series.len() as f64 / 2.0 + bar_w * j as f64;
                        let y = y_of(v);
                        let _ = writeln!(
                            s,
                            r#"<rect x="{x:.2}" y="{:.2}" width="{bar_w:.2}" height="{:.2}" fill="{color}"/>"#,
                            y.min(base),
                            (y - base).abs()
                        );
                    }
                }
            }
            let ly = top + 14.0 * (j as f64 + 1.0);
            let lx = LEFT + plot_w + 12.0;
            let _ = writeln!(
                s,
                r#"<rect x="{lx}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{}" y="{ly:.2}">{}</text>"#,
                ly - 9.0,
                lx + 14.0,
                esc(&series.name)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 11, day).unwrap()
    }

    #[test]
    fn renders_every_series_and_panel() {
        let panels = vec![
            Panel {
                title: "mcc".into(),
                y_label: "MCC".into(),
                style: Style::Line,
                series: vec![
                    Series {
                        name: "a<b".into(),
                        points: vec![(d(1), 0.1), (d(2), -0.2), (d(3), 0.3)],
                    },
                    Series {
                        name: "c".into(),
                        points: vec![(d(1), 0.0), (d(3), f64::NAN)],
                    },
                ],
            },
            Panel {
                title: "volume".into(),
                y_label: "units".into(),
                style: Style::Bars,
                series: vec![Series {
                    name: "v".into(),
                    points: vec![(d(1), 5.0), (d(2), 7.0)],
                }],
            },
        ];
        let svg = render("t", &panels);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("NaN"));
        assert!(svg.contains("2017-11-02"));
        assert_eq!(render("t", &panels), svg);
    }

    #[test]
    fn empty_panels_still_render() {
        let svg = render(
            "empty",
            &[Panel {
                title: "x".into(),
                y_label: "y".into(),
                style: Style::Line,
                series: vec![],
            }],
        );
        assert!(svg.contains("</svg>"));
    }

    #[test]
    fn tick_labels_switch_to_exponent() {
        assert_eq!(tick_label(0.5), "0.500");
        assert_eq!(tick_label(123456.0), "1.23e5");
        assert_eq!(tick_label(0.0), "0");
    }
}
