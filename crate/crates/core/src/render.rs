//! Dependency-free SVG output: occupancy rasters for sampled trajectories
//! and an annotated (alpha, beta) scatter with the phase boundaries.

use crate::{Error, Result};

/// One sampled instant: a time stamp plus one state literal per trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySample {
    pub time: f64,
    pub states: Vec<String>,
}

/// Parses trajectory CSV: `t,literal[,literal2,...]`, one row per sample,
/// optional `t,state,...` header. All rows must agree on arity and length.
pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectorySample>> {
    let mut out: Vec<TrajectorySample> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && fields[0] == "t" {
            continue;
        }
        if fields.len() < 2 {
            return Err(Error::Parse(format!("trajectory line {}: need t,state", i + 1)));
        }
        let time: f64 = fields[0]
            .parse()
            .map_err(|_| Error::Parse(format!("trajectory line {}: bad time", i + 1)))?;
        let states: Vec<String> = fields[1..].iter().map(|s| s.to_string()).collect();
        for s in &states {
            if s.is_empty() || !s.bytes().all(|b| b == b'0' || b == b'1') {
                return Err(Error::Parse(format!("trajectory line {}: bad state {s}", i + 1)));
            }
        }
        if let Some(first) = out.first() {
            if first.states.len() != states.len()
                || first.states[0].len() != states[0].len()
            {
                return Err(Error::Parse(format!("trajectory line {}: shape mismatch", i + 1)));
            }
        }
        if let Some(prev) = out.last() {
            if time < prev.time {
                return Err(Error::UnsortedTimes);
            }
        }
        out.push(TrajectorySample { time, states });
    }
    if out.is_empty() {
        return Err(Error::Parse("trajectory file has no samples".into()));
    }
    Ok(out)
}

const CELL: f64 = 14.0;
const GAP: f64 = 10.0;
const MARGIN: f64 = 40.0;

/// Occupancy raster: one column per sample time; each trajectory is a band
/// of site rows, bands stacked on top of each other.
pub fn render_trajectory(samples: &[TrajectorySample]) -> Result<String> {
    let first = samples.first().ok_or_else(|| Error::Parse("no samples".into()))?;
    let tracks = first.states.len();
    let n = first.states[0].len();
    let cols = samples.len();
    let band = n as f64 * CELL;
    let width = MARGIN * 2.0 + cols as f64 * CELL;
    let height = MARGIN * 2.0 + tracks as f64 * band + (tracks - 1) as f64 * GAP;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (track, _) in first.states.iter().enumerate() {
        let y0 = MARGIN + track as f64 * (band + GAP);
        for (col, sample) in samples.iter().enumerate() {
            let x = MARGIN + col as f64 * CELL;
            for (site, b) in sample.states[track].bytes().enumerate() {
                let y = y0 + site as f64 * CELL;
                let fill = if b == b'1' { "#1a1a1a" } else { "#e8e8e8" };
                svg.push_str(&format!(
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                     fill=\"{fill}\" stroke=\"#bbb\" stroke-width=\"0.5\"/>\n"
                ));
            }
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">x{}</text>\n",
            MARGIN - 6.0,
            y0 + band / 2.0,
            track + 1
        ));
    }
    for (col, sample) in samples.iter().enumerate() {
        let x = MARGIN + (col as f64 + 0.5) * CELL;
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">t={}</text>\n",
            height - MARGIN / 2.0,
            sample.time
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// One marker of the annotated phase-diagram scatter.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterPoint {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Annotated (alpha, beta) scatter: each point labeled with its exponent,
/// dashed phase boundaries at min{alpha, beta} = 1/2 and the diagonal
/// coexistence segment.
pub fn render_scatter(points: &[ScatterPoint]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Parse("summary has no points".into()));
    }
    let max = points
        .iter()
        .flat_map(|p| [p.alpha, p.beta])
        .fold(1.0f64, f64::max)
        * 1.1;
    let size = 420.0;
    let plot = size - 2.0 * MARGIN;
    let sx = |a: f64| MARGIN + a / max * plot;
    let sy = |b: f64| size - MARGIN - b / max * plot;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" \
         viewBox=\"0 0 {size} {size}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<rect x=\"{m}\" y=\"{m}\" width=\"{plot}\" height=\"{plot}\" fill=\"none\" stroke=\"#333\"/>\n",
        m = MARGIN
    ));
    let dash = "stroke=\"#666\" stroke-dasharray=\"6 4\" fill=\"none\"";
    // boundary alpha = 1/2 for beta >= 1/2, beta = 1/2 for alpha >= 1/2,
    // and the coexistence diagonal up to the triple point
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" {dash}/>\n",
        sx(0.5), sy(0.5), sx(0.5), sy(max)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" {dash}/>\n",
        sx(0.5), sy(0.5), sx(max), sy(0.5)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" {dash}/>\n",
        sx(0.0), sy(0.0), sx(0.5), sy(0.5)
    ));
    for p in points {
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"#1f5fbf\"/>\n",
            sx(p.alpha), sy(p.beta)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\">{:.3}</text>\n",
            sx(p.alpha) + 6.0,
            sy(p.beta) - 6.0,
            p.gamma
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">alpha</text>\n",
        size / 2.0,
        size - 8.0
    ));
    svg.push_str(&format!(
        "<text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {y})\">beta</text>\n",
        size / 2.0,
        y = size / 2.0
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_parse_and_validation() {
        let text = "t,state\n0.0,110,000\n0.7,101,000\n1.9,011,000\n";
        let samples = parse_trajectory(text).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[1].states, vec!["101", "000"]);
        assert!(parse_trajectory("").is_err());
        assert!(parse_trajectory("0.0,110\n0.5,1101\n").is_err());
        assert!(parse_trajectory("0.0,120\n").is_err());
        assert!(matches!(
            parse_trajectory("1.0,110\n0.5,000\n"),
            Err(Error::UnsortedTimes)
        ));
    }

    #[test]
    fn trajectory_svg_structure() {
        let samples = parse_trajectory("0.0,110,000\n1.0,101,000\n").unwrap();
        let svg = render_trajectory(&samples).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        // 2 trajectories x 3 sites x 2 samples cells + 1 background rect
        assert_eq!(svg.matches("<rect").count(), 13);
        assert_eq!(svg.matches(">t=").count(), 2);
    }

    #[test]
    fn scatter_svg_structure() {
        let points = vec![
            ScatterPoint { alpha: 1.0, beta: 0.1, gamma: 1.001 },
            ScatterPoint { alpha: 0.2, beta: 0.2, gamma: 1.982 },
        ];
        let svg = render_scatter(&points).unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray").count(), 3);
        assert!(svg.contains("1.001") && svg.contains("1.982"));
        assert!(render_scatter(&[]).is_err());
    }
}
