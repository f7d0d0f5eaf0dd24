use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::training::{load_metrics, train_losses};

pub const WIDTH: u32 = 800;
pub const HEIGHT: u32 = 500;
pub const EARLY_STEPS: u64 = 1000;
pub const LATE_STEPS: u64 = 100;

const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Full,
    /// Steps below 1000.
    Early,
    /// The last 100 steps of each run.
    Late,
}

impl std::str::FromStr for Window {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "early" => Ok(Self::Early),
            "late" => Ok(Self::Late),
            _ => Err(HarnessError::Contract(format!("unknown window `{s}` (full, early, late)"))),
        }
    }
}

/// A named loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(u64, f64)>,
}

impl Series {
    pub fn windowed(&self, window: Window) -> Vec<(u64, f64)> {
        match window {
            Window::Full => self.points.clone(),
            Window::Early => self.points.iter().copied().filter(|&(s, _)| s < EARLY_STEPS).collect(),
            Window::Late => {
                let last = self.points.iter().map(|p| p.0).max().unwrap_or(0);
                let from = (last + 1).saturating_sub(LATE_STEPS);
                self.points.iter().copied().filter(|&(s, _)| s >= from).collect()
            }
        }
    }

    pub fn mean_loss(&self, window: Window) -> Option<f64> {
        let w = self.windowed(window);
        (!w.is_empty()).then(|| w.iter().map(|p| p.1).sum::<f64>() / w.len() as f64)
    }
}

/// Legend name for a metrics file: the run directory for `metrics.csv`,
/// otherwise the file stem.
pub fn series_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "metrics" {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

pub fn load_series(path: &Path) -> Result<Series, HarnessError> {
    let records = load_metrics(path).map_err(|e| match e {
        crate::training::TrainingError::Format(m) => HarnessError::Contract(format!("{}: {m}", series_name(path))),
        other => other.into(),
    })?;
    Ok(Series {
        name: series_name(path),
        points: train_losses(&records),
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Deterministic 800×500 SVG line chart, one polyline per series.
pub fn render_svg(series: &[Series], window: Window, title: &str) -> Result<String, HarnessError> {
    if series.is_empty() {
        return Err(HarnessError::Contract("nothing to plot".into()));
    }
    let data: Vec<Vec<(u64, f64)>> = series.iter().map(|s| s.windowed(window)).collect();
    let all = data.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (u64::MAX, 0u64, f64::INFINITY, f64::NEG_INFINITY);
    for &(s, l) in all {
        x0 = x0.min(s);
        x1 = x1.max(s);
        y0 = y0.min(l);
        y1 = y1.max(l);
    }
    if x0 == u64::MAX {
        return Err(HarnessError::Contract("no points inside the plot window".into()));
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    if x1 == x0 {
        x1 = x0 + 1;
    }
    let (w, h) = (f64::from(WIDTH), f64::from(HEIGHT));
    let pw = w - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = h - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |s: u64| MARGIN_LEFT + (s - x0) as f64 / (x1 - x0) as f64 * pw;
    let py = |l: f64| MARGIN_TOP + (y1 - l) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT:.1}" y="{MARGIN_TOP:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = f64::from(i) / 4.0;
        let yv = y0 + f * (y1 - y0);
        let y = py(yv);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + pw,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
        let xv = x0 + ((x1 - x0) as f64 * f).round() as u64;
        let x = px(xv);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{xv}</text>"#,
            MARGIN_TOP + ph + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">step</text>"#,
        MARGIN_LEFT + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">training loss</text>"#,
        MARGIN_TOP + ph / 2.0,
        MARGIN_TOP + ph / 2.0
    );
    for (i, (s, pts)) in series.iter().zip(&data).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = MARGIN_TOP + 10.0 + 20.0 * i as f64;
        let lx = MARGIN_LEFT + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="3"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn default_title(window: Window) -> String {
    match window {
        Window::Full => "Training loss".to_string(),
        Window::Early => format!("Training loss, first {EARLY_STEPS} steps"),
        Window::Late => format!("Training loss, last {LATE_STEPS} steps"),
    }
}

/// Reads metrics files and writes their training-loss curves to `out`.
pub fn plot_loss_curves(metrics: &[&Path], window: Window, title: &str, out: &Path) -> Result<String, HarnessError> {
    let series = metrics.iter().map(|p| load_series(p)).collect::<Result<Vec<_>, _>>()?;
    let svg = render_svg(&series, window, title)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, &svg)?;
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(name: &str, f: impl Fn(u64) -> f64, n: u64) -> Series {
        Series {
            name: name.into(),
            points: (0..n).map(|s| (s, f(s))).collect(),
        }
    }

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter_map(|l| l.split("points=\"").nth(1))
            .map(|p| {
                p.trim_end_matches("\"/>")
                    .split(' ')
                    .map(|xy| {
                        let (x, y) = xy.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn constant_trace_is_horizontal() {
        let svg = render_svg(&[series("flat", |_| 0.7, 50)], Window::Full, "t").unwrap();
        let lines = polylines(&svg);
        assert_eq!(lines.len(), 1);
        assert!(lines[0].iter().all(|p| p.1 == lines[0][0].1));
        assert!(svg.starts_with("<svg") && svg.contains(r#"width="800" height="500""#));
    }

    #[test]
    fn output_is_deterministic() {
        let s = [series("a", |x| 1.0 / (1.0 + x as f64), 300), series("b", |x| (x as f64).cos().abs(), 300)];
        assert_eq!(render_svg(&s, Window::Full, "t").unwrap(), render_svg(&s, Window::Full, "t").unwrap());
    }

    #[test]
    fn windows_select_steps() {
        let s = series("a", |x| x as f64, 2000);
        assert_eq!(s.windowed(Window::Early).len(), 1000);
        let late = s.windowed(Window::Late);
        assert_eq!((late.len(), late[0].0), (100, 1900));
        assert_eq!(s.windowed(Window::Full).len(), 2000);
    }

    #[test]
    fn lower_trace_plots_higher_on_screen() {
        let s = [series("low", |_| 1.0, 10), series("high", |_| 2.0, 10)];
        let lines = polylines(&render_svg(&s, Window::Full, "t").unwrap());
        assert!(lines[0][0].1 > lines[1][0].1);
    }

    #[test]
    fn names_and_bad_rows() {
        assert_eq!(series_name(Path::new("/x/runs/baseline/metrics.csv")), "baseline");
        assert_eq!(series_name(Path::new("teach.csv")), "teach");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, format!("{}\n0,train,1,1,0,0,0,0\n1,train,x,1,0,0,0,0\n", crate::training::METRICS_HEADER)).unwrap();
        let err = load_series(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(!err.contains(dir.path().to_str().unwrap()));
    }
}
