//! Risk-return scatter as a standalone SVG: realised volatility on x,
//! mean monthly return on y, one point per (family, N), one colour per family.

use std::fmt::Write;

use dewsp_core::backtest::PerformanceCurve;
use dewsp_core::portfolio::PortfolioKind;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

fn colour(kind: PortfolioKind) -> &'static str {
    match kind {
        PortfolioKind::Dewsp => "#d62728",
        PortfolioKind::HewspTv => "#1f77b4",
        PortfolioKind::HewspT => "#17becf",
        PortfolioKind::HewspV => "#9467bd",
        PortfolioKind::Rewsp => "#7f7f7f",
        PortfolioKind::Ewwp => "#2ca02c",
        PortfolioKind::Msrp => "#ff7f0e",
        PortfolioKind::Mvp => "#8c564b",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round tick step giving roughly five intervals over `span`.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.08 * (hi - lo) } else { lo.abs().max(1e-3) * 0.1 };
    (lo - pad, hi + pad)
}

/// Renders the scatter; `title` is shown above the plot area.
pub fn risk_return_svg(title: &str, curves: &[PerformanceCurve]) -> String {
    let points = || curves.iter().flat_map(|c| c.points.iter());
    let (x0, x1) = padded_range(points().map(|p| p.vol));
    let (y0, y1) = padded_range(points().map(|p| p.mean));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| MARGIN_TOP + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );

    let step = tick_step(x1 - x0);
    let mut t = (x0 / step).ceil() * step;
    while t <= x1 {
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ddd"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"##,
            MARGIN_TOP,
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 16.0,
            format_tick(t, step)
        );
        t += step;
    }
    let step = tick_step(y1 - y0);
    let mut t = (y0 / step).ceil() * step;
    while t <= y1 {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            format_tick(t, step)
        );
        t += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Realized risk (monthly volatility)</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">Realized return (monthly mean)</text>"#,
        MARGIN_TOP + plot_h / 2.0
    );

    for curve in curves {
        let c = colour(curve.kind);
        for p in &curve.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{c}" fill-opacity="0.8"><title>{} N={}: r={:.5}, sigma={:.5}</title></circle>"#,
                sx(p.vol),
                sy(p.mean),
                curve.kind,
                p.n,
                p.mean,
                p.vol
            );
        }
    }

    for (i, curve) in curves.iter().enumerate() {
        let y = MARGIN_TOP + 10.0 + 20.0 * i as f64;
        let x = WIDTH - MARGIN_RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<circle cx="{x}" cy="{y}" r="5" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            colour(curve.kind),
            x + 12.0,
            y + 4.0,
            curve.kind
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize + 1;
    format!("{:.*}", decimals, if v.abs() < step * 1e-9 { 0.0 } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dewsp_core::backtest::CurvePoint;

    #[test]
    fn one_circle_per_point_plus_legend() {
        let curves = vec![
            PerformanceCurve {
                kind: PortfolioKind::Dewsp,
                points: (1..=3)
                    .map(|n| CurvePoint {
                        n,
                        mean: 0.01 / n as f64,
                        vol: 0.05 / n as f64,
                        sharpe: Some(0.2),
                    })
                    .collect(),
            },
            PerformanceCurve {
                kind: PortfolioKind::Mvp,
                points: vec![CurvePoint {
                    n: 3,
                    mean: 0.002,
                    vol: 0.01,
                    sharpe: Some(0.2),
                }],
            },
        ];
        let svg = risk_return_svg("OOS <test>", &curves);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 4 + 2);
        assert!(svg.contains("OOS &lt;test&gt;"));
        assert!(svg.contains(colour(PortfolioKind::Dewsp)));
    }
}
