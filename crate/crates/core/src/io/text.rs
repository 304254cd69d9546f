//! Line-oriented text records. Every file starts with a `# egoreg <kind>
//! v1` line; other `#` lines and blank lines are ignored on read. Floats
//! use the shortest representation that parses back to the same bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::evaluation::{CurvePoint, MatchReport, RegistrationReport};
use crate::geometry::{PixelPoint, Pose, WorldPoint};
use crate::matching::MatchPair;
use crate::registration::{Correspondence2D3D, FrameResult};
use crate::sequence::LinearPruner;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn header(kind: &str) -> String {
    format!("# egoreg {kind} v1\n")
}

/// Data lines with their 1-based numbers, after checking the header.
fn body<'a>(text: &'a str, kind: &str) -> Result<impl Iterator<Item = (usize, &'a str)>> {
    let first = text.lines().next().unwrap_or("");
    if first.trim_end() != header(kind).trim_end() {
        return Err(parse_err(1, format!("expected header '{}'", header(kind).trim_end())));
    }
    Ok(text
        .lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')))
}

struct Fields<'a> {
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn new(line: usize, s: &'a str) -> Self {
        Fields { line, it: s.split_whitespace() }
    }

    fn word(&mut self) -> Result<&'a str> {
        self.it.next().ok_or_else(|| parse_err(self.line, "missing field"))
    }

    fn parse<T: std::str::FromStr>(&mut self) -> Result<T> {
        let w = self.word()?;
        w.parse().map_err(|_| parse_err(self.line, format!("bad value '{w}'")))
    }

    fn finish(mut self) -> Result<()> {
        match self.it.next() {
            None => Ok(()),
            Some(w) => Err(parse_err(self.line, format!("unexpected field '{w}'"))),
        }
    }
}

fn push_pose(s: &mut String, p: &Pose) {
    for r in 0..3 {
        for c in 0..3 {
            let _ = write!(s, " {}", p.rotation[(r, c)]);
        }
    }
    for i in 0..3 {
        let _ = write!(s, " {}", p.translation[i]);
    }
}

fn read_pose(f: &mut Fields) -> Result<Pose> {
    let mut m = [0.0; 12];
    for v in &mut m {
        *v = f.parse()?;
    }
    Ok(Pose { rotation: Matrix3::from_row_slice(&m[..9]), translation: Vector3::new(m[9], m[10], m[11]) })
}

/// What `register` emits per frame and `evaluate` consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_idx: usize,
    pub timestamp: f64,
    pub matches: usize,
    /// RANSAC consensus size; 0 when no estimate was attempted.
    pub ransac_inliers: usize,
    /// Present only for registered frames.
    pub pose: Option<Pose>,
    pub correspondences: Vec<Correspondence2D3D>,
}

impl FrameRecord {
    pub fn from_result(r: &FrameResult) -> Self {
        FrameRecord {
            frame_idx: r.frame_idx,
            timestamp: r.timestamp,
            matches: r.match_count(),
            ransac_inliers: r.estimate.as_ref().map_or(0, |e| e.inlier_count()),
            pose: r.pose().copied(),
            correspondences: r.correspondences.clone(),
        }
    }
}

pub const POSES_KIND: &str = "poses";

pub fn format_frame_records(records: &[FrameRecord]) -> String {
    let mut s = header(POSES_KIND);
    s.push_str("# frame <idx> <timestamp> <registered|failed> <matches> <ransac_inliers> [r00 .. r22 t0 t1 t2]\n");
    s.push_str("# corr <frame> <u> <v> <point_id> <x> <y> <z> <source_image> <embed_dist>\n");
    for r in records {
        let status = if r.pose.is_some() { "registered" } else { "failed" };
        let _ = write!(s, "frame {} {} {status} {} {}", r.frame_idx, r.timestamp, r.matches, r.ransac_inliers);
        if let Some(p) = &r.pose {
            push_pose(&mut s, p);
        }
        s.push('\n');
        for c in &r.correspondences {
            let _ = writeln!(
                s,
                "corr {} {} {} {} {} {} {} {} {}",
                r.frame_idx,
                c.pixel.u,
                c.pixel.v,
                c.world.id,
                c.world.xyz.x,
                c.world.xyz.y,
                c.world.xyz.z,
                c.source_image,
                c.embed_dist
            );
        }
    }
    s
}

pub fn parse_frame_records(text: &str) -> Result<Vec<FrameRecord>> {
    let mut out: Vec<FrameRecord> = Vec::new();
    for (ln, line) in body(text, POSES_KIND)? {
        let mut f = Fields::new(ln, line);
        match f.word()? {
            "frame" => {
                let frame_idx = f.parse()?;
                let timestamp = f.parse()?;
                let registered = match f.word()? {
                    "registered" => true,
                    "failed" => false,
                    w => return Err(parse_err(ln, format!("unknown status '{w}'"))),
                };
                let matches = f.parse()?;
                let ransac_inliers = f.parse()?;
                let pose = if registered { Some(read_pose(&mut f)?) } else { None };
                f.finish()?;
                out.push(FrameRecord { frame_idx, timestamp, matches, ransac_inliers, pose, correspondences: Vec::new() });
            }
            "corr" => {
                let frame: usize = f.parse()?;
                let rec = out
                    .last_mut()
                    .filter(|r| r.frame_idx == frame)
                    .ok_or_else(|| parse_err(ln, "correspondence outside its frame block"))?;
                let pixel = PixelPoint::new(f.parse()?, f.parse()?);
                let id = f.parse()?;
                let xyz = Vector3::new(f.parse()?, f.parse()?, f.parse()?);
                let source_image = f.parse()?;
                let embed_dist = f.parse()?;
                f.finish()?;
                rec.correspondences.push(Correspondence2D3D { pixel, world: WorldPoint { id, xyz }, source_image, embed_dist });
            }
            w => return Err(parse_err(ln, format!("unknown record '{w}'"))),
        }
    }
    Ok(out)
}

pub const MATCHES_KIND: &str = "matches";

/// `(frame index, model image id, pairs)` triples.
pub type MatchRecords = Vec<(usize, u64, Vec<MatchPair>)>;

pub fn format_match_records(records: &[(usize, u64, Vec<MatchPair>)]) -> String {
    let mut s = header(MATCHES_KIND);
    s.push_str("# match <frame> <model_image> <query_kp> <model_kp> <embed_dist> <ratio>\n");
    for (frame, image, pairs) in records {
        for p in pairs {
            let _ = writeln!(s, "match {frame} {image} {} {} {} {}", p.query_idx, p.model_idx, p.embed_dist, p.ratio);
        }
    }
    s
}

pub fn parse_match_records(text: &str) -> Result<MatchRecords> {
    let mut out: MatchRecords = Vec::new();
    for (ln, line) in body(text, MATCHES_KIND)? {
        let mut f = Fields::new(ln, line);
        if f.word()? != "match" {
            return Err(parse_err(ln, "expected 'match'"));
        }
        let (frame, image): (usize, u64) = (f.parse()?, f.parse()?);
        let pair = MatchPair { query_idx: f.parse()?, model_idx: f.parse()?, embed_dist: f.parse()?, ratio: f.parse()? };
        f.finish()?;
        match out.last_mut() {
            Some((fr, im, pairs)) if *fr == frame && *im == image => pairs.push(pair),
            _ => out.push((frame, image, vec![pair])),
        }
    }
    Ok(out)
}

pub const KEPT_KIND: &str = "kept";

pub fn format_kept(kept: &[usize]) -> String {
    let mut s = header(KEPT_KIND);
    s.push_str("# <frame index>\n");
    kept.iter().for_each(|i| {
        let _ = writeln!(s, "{i}");
    });
    s
}

pub fn parse_kept(text: &str) -> Result<Vec<usize>> {
    body(text, KEPT_KIND)?
        .map(|(ln, l)| {
            let mut f = Fields::new(ln, l);
            let v = f.parse()?;
            f.finish()?;
            Ok(v)
        })
        .collect()
}

/// `key=value` lines; `#` starts a comment line. Later keys do not
/// silently override earlier ones.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyValues {
    pub entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| parse_err(i + 1, "expected key=value"))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(parse_err(i + 1, "empty key"));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(parse_err(i + 1, format!("duplicate key '{k}'")));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

pub const PRUNER_KIND: &str = "pruner";

pub fn format_pruner(p: &LinearPruner) -> String {
    let w: Vec<String> = p.weights.iter().map(|v| v.to_string()).collect();
    format!("{}weights={}\nbias={}\nthreshold={}\n", header(PRUNER_KIND), w.join(","), p.bias, p.threshold)
}

pub fn parse_pruner(text: &str) -> Result<LinearPruner> {
    let _ = body(text, PRUNER_KIND)?;
    let kv = KeyValues::parse(text)?;
    let num = |k: &str| -> Result<f64> {
        kv.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| parse_err(0, format!("missing or bad '{k}'")))
    };
    let weights = kv
        .get("weights")
        .ok_or_else(|| parse_err(0, "missing 'weights'"))?
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| parse_err(0, format!("bad weight '{v}'"))))
        .collect::<Result<Vec<f64>>>()?;
    Ok(LinearPruner { weights, bias: num("bias")?, threshold: num("threshold")? })
}

/// Per-query inlier table followed by the averages.
pub fn format_match_report(report: &MatchReport) -> String {
    let mut s = String::from("# frame inliers matches ratio\n");
    for q in &report.per_query {
        let _ = writeln!(s, "{} {} {} {:.4}", q.frame_idx, q.inliers, q.matches, q.ratio);
    }
    let _ = writeln!(
        s,
        "# mean inliers {:.3} matches {:.3} ratio {:.4}",
        report.mean_inliers, report.mean_matches, report.mean_ratio
    );
    s
}

pub fn format_registration_report(report: &RegistrationReport) -> String {
    let mut s = String::from("# frame registered position_m orientation_deg\n");
    for f in &report.frames {
        match f.errors {
            Some((p, o)) => {
                let _ = writeln!(s, "{} 1 {p:.6} {o:.6}", f.frame_idx);
            }
            None => {
                let _ = writeln!(s, "{} 0 - -", f.frame_idx);
            }
        }
    }
    let _ = writeln!(s, "# registered {} of {}", report.registered, report.frames.len());
    let _ = writeln!(s, "# rms position {:.6} m orientation {:.6} deg", report.rms_position, report.rms_orientation);
    let _ = writeln!(
        s,
        "# median position {:.6} m orientation {:.6} deg",
        report.median_position, report.median_orientation
    );
    s
}

pub fn format_curve(curve: &[CurvePoint]) -> String {
    let mut s = String::from("# threshold registered_by_position registered_by_orientation\n");
    for c in curve {
        let _ = writeln!(s, "{} {} {}", c.threshold, c.by_position, c.by_orientation);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(i: usize, registered: bool) -> FrameRecord {
        let pose = Pose::from_axis_angle(Vector3::new(0.3, 1.0, -0.2).normalize(), 0.1 + i as f64, Vector3::new(0.1, -2.0, 1.0 / 3.0));
        FrameRecord {
            frame_idx: i,
            timestamp: i as f64 / 15.0,
            matches: 3,
            ransac_inliers: 2,
            pose: registered.then_some(pose),
            correspondences: (0..3)
                .map(|j| Correspondence2D3D {
                    pixel: PixelPoint::new(1.0 / (j + 1) as f64, 2.5),
                    world: WorldPoint { id: j as u64, xyz: Vector3::new(0.1, 0.2, 1e-17) },
                    source_image: 4,
                    embed_dist: 0.123456789,
                })
                .collect(),
        }
    }

    #[test]
    fn frame_records_round_trip() {
        let recs = vec![record(0, true), record(1, false), FrameRecord { correspondences: Vec::new(), ..record(2, true) }];
        let text = format_frame_records(&recs);
        assert_eq!(parse_frame_records(&text).unwrap(), recs);
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(matches!(parse_frame_records("# egoreg matches v1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_frame_records(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let text = format!("{}frame 0 0 registered 1 1 1 2\n", header(POSES_KIND));
        assert!(matches!(parse_frame_records(&text), Err(Error::Parse { line: 2, .. })));
        let text = format!("{}corr 0 1 2 3 4 5 6 7 8\n", header(POSES_KIND));
        assert!(matches!(parse_frame_records(&text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn match_records_round_trip() {
        let p = |q, m| MatchPair { query_idx: q, model_idx: m, embed_dist: 0.1 * q as f64, ratio: 0.5 };
        let recs = vec![(0, 3, vec![p(0, 1), p(2, 5)]), (0, 4, vec![p(1, 1)]), (3, 3, vec![p(7, 0)])];
        assert_eq!(parse_match_records(&format_match_records(&recs)).unwrap(), recs);
    }

    #[test]
    fn kept_round_trip() {
        let kept = vec![0, 2, 3, 10];
        assert_eq!(parse_kept(&format_kept(&kept)).unwrap(), kept);
    }

    #[test]
    fn key_values() {
        let kv = KeyValues::parse("# comment\nmode = sp\n\ndim=40\n").unwrap();
        assert_eq!(kv.get("mode"), Some("sp"));
        assert_eq!(kv.get("dim"), Some("40"));
        assert!(matches!(KeyValues::parse("a=1\na=2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(KeyValues::parse("novalue"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn pruner_round_trip() {
        let p = LinearPruner { weights: vec![0.1, -2.0, 1.0 / 3.0, 0.0], bias: -0.25, threshold: 1e-300 };
        assert_eq!(parse_pruner(&format_pruner(&p)).unwrap(), p);
    }

    proptest! {
        #[test]
        fn floats_survive_text(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            let back: f64 = x.to_string().parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
