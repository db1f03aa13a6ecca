use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Writes `contents` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;

/// Log-log plot of mean error against noise level, with the fitted line and
/// a reference line of slope `reference_slope` through the geometric centre
/// of the points.
pub fn rate_svg(points: &[(f64, f64)], fit: Option<(f64, f64)>, reference_slope: f64) -> String {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(d, e)| *d > 0.0 && *e > 0.0)
        .map(|(d, e)| (d.log10(), e.log10()))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if logs.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#, WIDTH / 2.0, HEIGHT / 2.0);
        svg.push_str("</svg>\n");
        return svg;
    }

    let (x0, x1) = decade_range(logs.iter().map(|p| p.0));
    let (y0, y1) = decade_range(logs.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for k in (x0 as i32)..=(x1 as i32) {
        let x = sx(k as f64);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" font-size="12" text-anchor="middle">1e{k}</text>"#,
            HEIGHT - MARGIN,
            HEIGHT - MARGIN + 5.0,
            HEIGHT - MARGIN + 20.0
        );
    }
    for k in (y0 as i32)..=(y1 as i32) {
        let y = sy(k as f64);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">1e{k}</text>"#,
            MARGIN - 5.0,
            MARGIN - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">noise level delta</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" font-size="14" text-anchor="middle" transform="rotate(-90 18 {})">mean error</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    let line = |svg: &mut String, slope: f64, intercept: f64, style: &str| {
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" {style}/>"#,
            sx(x0),
            sy(intercept + slope * x0),
            sx(x1),
            sy(intercept + slope * x1)
        );
    };
    let _ = writeln!(
        svg,
        r#"<clipPath id="plot"><rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}"/></clipPath><g clip-path="url(#plot)">"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let n = logs.len() as f64;
    let (cx, cy) = (logs.iter().map(|p| p.0).sum::<f64>() / n, logs.iter().map(|p| p.1).sum::<f64>() / n);
    line(&mut svg, reference_slope, cy - reference_slope * cx, r#"stroke="gray" stroke-dasharray="6 4""#);
    if let Some((slope, intercept_ln)) = fit {
        // the fit is in natural logarithms; the slope is base independent
        line(&mut svg, slope, intercept_ln / std::f64::consts::LN_10, r#"stroke="crimson""#);
    }
    for (x, y) in &logs {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="navy"/>"#, sx(*x), sy(*y));
    }
    svg.push_str("</g>\n");

    let mut legend = format!("reference slope {reference_slope:.3}");
    if let Some((slope, _)) = fit {
        let _ = write!(legend, ", fitted slope {slope:.3}");
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="13">{legend}</text>"#, MARGIN + 8.0, MARGIN - 12.0);
    svg.push_str("</svg>\n");
    svg
}

fn decade_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = (lo.floor(), hi.ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let pts = [(1e-1, 2e-1), (1e-2, 2e-2), (1e-3, 2e-3)];
        let a = rate_svg(&pts, Some((1.0, 2f64.ln())), 1.0);
        assert_eq!(a, rate_svg(&pts, Some((1.0, 2f64.ln())), 1.0));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<circle").count(), 3);
        assert!(rate_svg(&[], None, 1.0).contains("no data"));
    }
}
