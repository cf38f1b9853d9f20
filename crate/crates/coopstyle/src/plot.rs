//! Static SVG learning-curve charts from metrics files. One polyline per
//! input file, legend labeled by file stem. Pure string assembly, so the
//! same inputs always produce byte-identical output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    /// (env_steps, mean_return) pairs; non-finite rows are dropped at load.
    pub points: Vec<(f64, f64)>,
}

fn cfg_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// Read the env_steps and mean_return columns of one metrics file.
pub fn load_series(path: &Path) -> Result<Series> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| cfg_err(path, 1, "empty metrics file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| -> Result<usize> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| cfg_err(path, 1, format!("header lacks a '{name}' column")))
    };
    let x_col = col("env_steps")?;
    let y_col = col("mean_return")?;

    let mut points = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != cols.len() {
            return Err(cfg_err(
                path,
                row,
                format!(
                    "row {row}: expected {} cells, found {}",
                    cols.len(),
                    cells.len()
                ),
            ));
        }
        let x: f64 = cells[x_col].parse().map_err(|_| {
            cfg_err(
                path,
                row,
                format!("row {row}: bad env_steps value '{}'", cells[x_col]),
            )
        })?;
        let y: f64 = cells[y_col].parse().map_err(|_| {
            cfg_err(
                path,
                row,
                format!("row {row}: bad mean_return value '{}'", cells[y_col]),
            )
        })?;
        // NaN is a legitimate "no value this epoch" marker; skip the point.
        if x.is_finite() && y.is_finite() {
            points.push((x, y));
        }
    }
    if points.is_empty() {
        return Err(cfg_err(path, 1, "no plottable rows"));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".to_string());
    Ok(Series { name, points })
}

fn nice_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1e5 {
        format!("{:.1e}", v)
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Render the chart; axes cover the union of all series with a small pad.
pub fn render_chart(series: &[Series]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Empty {
            what: "plot series",
        });
    }
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 == x1 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if y0 == y1 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let pad_y = 0.05 * (y1 - y0);
    y0 -= pad_y;
    y1 += pad_y;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"##
    );
    let _ = writeln!(
        s,
        r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"##
    );
    // Frame and grid with tick labels.
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444" stroke-width="1"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let gx = px(xv);
        let gy = py(yv);
        if i > 0 && i < 4 {
            let _ = writeln!(
                s,
                r##"<line x1="{gx:.2}" y1="{MARGIN_T}" x2="{gx:.2}" y2="{:.2}" stroke="#ddd" stroke-width="1"/>"##,
                MARGIN_T + plot_h
            );
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_L}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#ddd" stroke-width="1"/>"##,
                MARGIN_L + plot_w
            );
        }
        let _ = writeln!(
            s,
            r##"<text x="{gx:.2}" y="{:.2}" font-size="12" text-anchor="middle" fill="#333">{}</text>"##,
            MARGIN_T + plot_h + 18.0,
            nice_num(xv)
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end" fill="#333">{}</text>"##,
            MARGIN_L - 6.0,
            gy + 4.0,
            nice_num(yv)
        );
    }
    // Axis labels.
    let _ = writeln!(
        s,
        r##"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle" fill="#111">environment steps</text>"##,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        r##"<text x="18" y="{:.2}" font-size="14" text-anchor="middle" fill="#111" transform="rotate(-90 18 {:.2})">mean return</text>"##,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    );
    // Series.
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for &(x, y) in &ser.points {
            let _ = write!(pts, "{:.2},{:.2} ", px(x), py(y));
        }
        let _ = writeln!(
            s,
            r##"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"##,
            pts.trim_end()
        );
        // Legend entry.
        let ly = MARGIN_T + 10.0 + k as f64 * 20.0;
        let lx = WIDTH - MARGIN_R + 14.0;
        let _ = writeln!(
            s,
            r##"<line x1="{lx}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{color}" stroke-width="2"/>"##,
            lx + 22.0
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" font-size="12" fill="#111">{}</text>"##,
            lx + 28.0,
            ly + 4.0,
            xml_escape(&ser.name)
        );
    }
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Load every metrics file and write the combined chart.
pub fn plot_files(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let series: Result<Vec<Series>> = inputs.iter().map(|p| load_series(p)).collect();
    let svg = render_chart(&series?)?;
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::METRICS_HEADER;

    fn write_csv(name: &str, rows: &[&str]) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("coopstyle-plot-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut text = format!("{METRICS_HEADER}\n");
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        std::fs::write(&path, text).unwrap();
        path
    }

    fn row(epoch: usize, steps: u64, ret: &str) -> String {
        format!("{epoch}, {steps}, {ret}, 1.0, 0.01, 5, 0.01, 5, 1.0, 1.0, NaN, 0.0, NaN")
    }

    #[test]
    fn single_file_renders_one_polyline() {
        let rows = [
            row(1, 4000, "-100.0"),
            row(2, 8000, "-90.0"),
            row(3, 12000, "-85.5"),
        ];
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let path = write_csv("one.csv", &refs);
        let svg = render_chart(&[load_series(&path).unwrap()]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("one"), "legend shows the file stem");
        assert!(svg.contains("environment steps") && svg.contains("mean return"));
    }

    #[test]
    fn two_files_render_two_polylines_with_legend() {
        let a = [row(1, 4000, "-100.0"), row(2, 8000, "-80.0")];
        let b = [row(1, 4000, "-120.0"), row(2, 8000, "-95.0")];
        let ra: Vec<&str> = a.iter().map(String::as_str).collect();
        let rb: Vec<&str> = b.iter().map(String::as_str).collect();
        let pa = write_csv("alpha.csv", &ra);
        let pb = write_csv("beta.csv", &rb);
        let svg = render_chart(&[load_series(&pa).unwrap(), load_series(&pb).unwrap()]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("alpha") && svg.contains("beta"));
    }

    #[test]
    fn malformed_cell_names_the_row() {
        let rows = [row(1, 4000, "-100.0"), row(2, 8000, "not-a-number")];
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let path = write_csv("bad.csv", &refs);
        let err = load_series(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3"), "{msg}");
        assert_eq!(err.exit_code(), crate::EXIT_CONFIG);
    }

    #[test]
    fn nan_mean_return_rows_are_skipped_not_fatal() {
        let rows = [
            row(1, 4000, "NaN"),
            row(2, 8000, "-90.0"),
            row(3, 12000, "-85.0"),
        ];
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let path = write_csv("nan.csv", &refs);
        let s = load_series(&path).unwrap();
        assert_eq!(s.points.len(), 2);
    }

    #[test]
    fn missing_column_is_rejected() {
        let dir = std::env::temp_dir().join(format!("coopstyle-plot-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("nocol.csv");
        std::fs::write(&path, "epoch, reward\n1, 2.0\n").unwrap();
        let err = load_series(&path).unwrap_err();
        assert!(err.to_string().contains("env_steps"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let rows = [row(1, 4000, "-100.0"), row(2, 8000, "-90.0")];
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let path = write_csv("det.csv", &refs);
        let a = render_chart(&[load_series(&path).unwrap()]).unwrap();
        let b = render_chart(&[load_series(&path).unwrap()]).unwrap();
        assert_eq!(a, b);
    }
}
