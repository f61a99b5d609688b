use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Writes `<path>.svg` (bar chart, bars sorted by ratio, descending) and
/// `<path>.csv` (`tag,ratio`). Returns both paths.
pub fn emit_frequency_plot(ratios: &[(String, f64)], path: &Path) -> Result<(PathBuf, PathBuf)> {
    if ratios.is_empty() {
        return Err(Error::Invalid("nothing to plot: empty ratio table".into()));
    }
    let mut sorted = ratios.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let title = path.file_stem().and_then(|s| s.to_str()).unwrap_or("frequencies");
    let svg = path.with_extension("svg");
    let csv = path.with_extension("csv");
    fs::write(&svg, render_svg(&sorted, title))?;
    let mut text = String::from("tag,ratio\n");
    for (tag, r) in &sorted {
        writeln!(text, "{tag},{r}").unwrap();
    }
    fs::write(&csv, text)?;
    Ok((svg, csv))
}

/// Reads a `tag,ratio` CSV written by [`emit_frequency_plot`].
pub fn read_frequency_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path)?;
    let src = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let (tag, r) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::parse(&src, i + 1, "expected tag,ratio"))?;
        let r: f64 = r.parse().map_err(|_| Error::parse(&src, i + 1, format!("bad ratio {r:?}")))?;
        out.push((tag.to_string(), r));
    }
    Ok(out)
}

pub fn render_svg(bars: &[(String, f64)], title: &str) -> String {
    const BAR: f64 = 22.0;
    const GAP: f64 = 6.0;
    const HEIGHT: f64 = 220.0;
    const LEFT: f64 = 40.0;
    const TOP: f64 = 30.0;
    let max = bars.iter().map(|b| b.1).fold(1.0, f64::max);
    let width = LEFT + bars.len() as f64 * (BAR + GAP) + 20.0;
    let total_h = TOP + HEIGHT + 60.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(s, r#"<text x="{LEFT}" y="16" font-size="12">{}</text>"#, escape(title)).unwrap();
    // reference line at ratio 1
    let y1 = TOP + HEIGHT * (1.0 - 1.0 / max);
    writeln!(
        s,
        r##"<line x1="{LEFT}" y1="{y1:.2}" x2="{:.2}" y2="{y1:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        width - 10.0
    )
    .unwrap();
    for (i, (tag, r)) in bars.iter().enumerate() {
        let h = HEIGHT * r / max;
        let x = LEFT + i as f64 * (BAR + GAP);
        let y = TOP + HEIGHT - h;
        writeln!(
            s,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{BAR}" height="{h:.2}" fill="#4a78b5"><title>{}: {r:.4}</title></rect>"##,
            escape(tag)
        )
        .unwrap();
        let lx = x + BAR / 2.0;
        let ly = TOP + HEIGHT + 12.0;
        writeln!(
            s,
            r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="end" transform="rotate(-60 {lx:.2} {ly:.2})">{}</text>"#,
            escape(tag)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
