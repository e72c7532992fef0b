use std::path::{Path, PathBuf};

use super::EvalError;
use crate::svg::Svg;
use crate::{Error, Result, SleepStage};

/// Vertical order of the step plot, top to bottom.
const LEVELS: [SleepStage; 5] = [SleepStage::W, SleepStage::R, SleepStage::N1, SleepStage::N2, SleepStage::N3];

fn level(s: SleepStage) -> usize {
    LEVELS.iter().position(|&l| l == s).expect("every stage has a level")
}

/// `index,stage` lines under a header.
pub fn hypnogram_csv(stages: &[SleepStage]) -> String {
    let mut out = String::from("index,stage\n");
    for (i, s) in stages.iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    out
}

pub fn parse_hypnogram(text: &str) -> Result<Vec<SleepStage>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("index")) {
            continue;
        }
        let bad = |message: String| EvalError::Hypnogram { line: n + 1, message };
        let (idx, stage) = line.split_once(',').ok_or_else(|| bad("expected index,stage".into()))?;
        let idx: usize = idx.trim().parse().map_err(|_| bad(format!("bad index {idx:?}")))?;
        if idx != out.len() {
            return Err(bad(format!("index {idx} out of sequence")));
        }
        out.push(stage.trim().parse().map_err(|_| bad(format!("unknown stage {stage:?}")))?);
    }
    Ok(out)
}

/// Step plot of one or two hypnograms (expert on top, prediction below).
pub fn render_hypnogram_svg(tracks: &[(&str, &[SleepStage])]) -> String {
    let (left, width, row_h, track_h, gap) = (60.0, 900.0, 18.0, 5.0 * 18.0, 30.0);
    let height = gap + tracks.len() as f64 * (track_h + gap);
    let mut svg = Svg::new(left + width + 20.0, height);
    for (t, (title, stages)) in tracks.iter().enumerate() {
        let top = gap + t as f64 * (track_h + gap);
        svg.text(left, top - 8.0, 12.0, "start", title);
        for (i, l) in LEVELS.iter().enumerate() {
            let y = top + (i as f64 + 0.5) * row_h;
            svg.text(left - 8.0, y + 4.0, 10.0, "end", l.name());
            svg.line(left, y, left + width, y, "#eeeeee");
        }
        if stages.is_empty() {
            continue;
        }
        let dx = width / stages.len() as f64;
        let mut points = Vec::with_capacity(2 * stages.len());
        let mut start = 0;
        for i in 1..=stages.len() {
            if i == stages.len() || stages[i] != stages[start] {
                let y = top + (level(stages[start]) as f64 + 0.5) * row_h;
                let (x0, x1) = (left + start as f64 * dx, left + i as f64 * dx);
                svg.rect(x0, y - 1.5, x1 - x0, 3.0, "#1f4e9c", &format!("run stage-{}", stages[start]));
                points.push((x0, y));
                points.push((x1, y));
                start = i;
            }
        }
        svg.polyline(&points, "#1f4e9c", "steps");
    }
    svg.finish()
}

/// Writes `path` (CSV) and a step-plot SVG next to it; returns the SVG path.
pub fn export_hypnogram(stages: &[SleepStage], path: &Path) -> Result<PathBuf> {
    std::fs::write(path, hypnogram_csv(stages)).map_err(|e| Error::io(path, e))?;
    let svg_path = path.with_extension("svg");
    let svg = render_hypnogram_svg(&[("hypnogram", stages)]);
    std::fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    Ok(svg_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SleepStage::*;

    #[test]
    fn empty_is_header_only() {
        assert_eq!(hypnogram_csv(&[]), "index,stage\n");
        assert_eq!(parse_hypnogram("index,stage\n").unwrap(), vec![]);
    }

    #[test]
    fn five_levels_rendered() {
        let svg = render_hypnogram_svg(&[("x", &[W, N1, N2, N3, N2, R, W])]);
        let mut ys: Vec<String> = svg
            .lines()
            .filter(|l| l.contains("class=\"run"))
            .map(|l| l.split("y=\"").nth(1).unwrap().split('"').next().unwrap().to_string())
            .collect();
        assert_eq!(ys.len(), 7);
        ys.sort();
        ys.dedup();
        assert_eq!(ys.len(), 5);
    }

    #[test]
    fn file_export() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let svg = export_hypnogram(&[N2, N3], &p).unwrap();
        assert!(svg.exists());
        assert_eq!(parse_hypnogram(&std::fs::read_to_string(&p).unwrap()).unwrap(), vec![N2, N3]);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(parse_hypnogram("0,N2\n2,N3\n").is_err());
        assert!(parse_hypnogram("0,Q\n").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(seq in prop::collection::vec(0usize..5, 0..200)) {
            let s: Vec<_> = seq.iter().map(|&i| SleepStage::ALL[i]).collect();
            prop_assert_eq!(parse_hypnogram(&hypnogram_csv(&s)).unwrap(), s);
        }
    }
}
