//! Static SVG figures from the CSV tables of a report directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::output::{read_rows, DecayRow, EnergyRow};
use crate::Failure;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        let pad = 0.5 * y0.abs().max(1.0);
        y0 -= pad;
        y1 += pad;
    }
    (x0, x1, y0, y1)
}

fn render(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<polyline points="{l},{t} {l},{b} {r},{b}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#,
            sx(xv),
            b + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#,
            l - 4.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        if ser.points.len() == 1 {
            let (x, y) = ser.points[0];
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = t + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            r - 120.0,
            r - 100.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, r - 96.0, ly + 4.0, ser.label);
    }
    s.push_str("</svg>\n");
    s
}

/// Fitted log-profiles, one curve per epsilon, against the fit abscissa.
fn decay_figure(rows: &[DecayRow]) -> String {
    let series: Vec<Series> = rows
        .iter()
        .map(|r| Series {
            label: format!("eps = {}", r.epsilon),
            points: (0..=50)
                .map(|k| {
                    let t = 10.0 * k as f64 / 50.0;
                    (t, (r.intercept - r.rate * t) / std::f64::consts::LN_10)
                })
                .collect(),
        })
        .collect();
    render("decay fits", "fit abscissa", "log10 (u1 + u2)", &series)
}

fn energy_figure(rows: &[EnergyRow]) -> Option<String> {
    let mut pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.epsilon.map(|e| (e, r.energy))).collect();
    if pts.is_empty() {
        return None;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(render(
        "energy against epsilon",
        "epsilon",
        "J / eps^N",
        &[Series {
            label: "J / eps^N".into(),
            points: pts,
        }],
    ))
}

/// Writes decay.svg and energy.svg into `out` from the tables in `dir`.
pub fn plot(dir: &Path, out: &Path) -> Result<Vec<String>, Failure> {
    let decay = dir.join("decay.csv");
    let energies = dir.join("energies.csv");
    if !decay.exists() && !energies.exists() {
        return Err(Failure::Validation(format!(
            "no decay.csv or energies.csv in {}",
            dir.display()
        )));
    }
    fs::create_dir_all(out).map_err(|e| Failure::Io(e.to_string()))?;
    let mut files = Vec::new();
    if decay.exists() {
        let rows: Vec<DecayRow> = read_rows(&decay)?;
        if !rows.is_empty() {
            fs::write(out.join("decay.svg"), decay_figure(&rows)).map_err(|e| Failure::Io(e.to_string()))?;
            files.push("decay.svg".to_string());
        }
    }
    if energies.exists() {
        let rows: Vec<EnergyRow> = read_rows(&energies)?;
        if let Some(svg) = energy_figure(&rows) {
            fs::write(out.join("energy.svg"), svg).map_err(|e| Failure::Io(e.to_string()))?;
            files.push("energy.svg".to_string());
        }
    }
    if files.is_empty() {
        return Err(Failure::Validation("tables contain nothing to plot".into()));
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_series_gets_a_nondegenerate_range() {
        let s = [Series {
            label: "a".into(),
            points: vec![(1.0, 2.0)],
        }];
        let (x0, x1, y0, y1) = bounds(&s);
        assert!(x1 > x0 && y1 > y0);
        assert!(render("t", "x", "y", &s).contains("<circle"));
    }

    #[test]
    fn energy_figure_skips_rows_without_epsilon() {
        let row = |epsilon| EnergyRow {
            config_hash: "h".into(),
            kind: "k".into(),
            n: 1,
            p: 2.0,
            beta: 0.0,
            alpha1: 1.0,
            alpha2: 1.0,
            epsilon,
            energy: 1.0,
            residual: 0.0,
            sup1: 1.0,
            sup2: 0.0,
            standard: true,
        };
        assert!(energy_figure(&[row(None)]).is_none());
        assert!(energy_figure(&[row(Some(0.1)), row(Some(0.2))]).is_some());
    }
}
