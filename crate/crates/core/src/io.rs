//! On-disk formats: binary PGM (P5) images and the CSV traces.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::synth::{EyeSceneParams, SynthFrame};
use crate::types::{BinaryMap, Frame, Roi, SegmentationMap};

/// Gray level used for each class when a segmentation map is stored as PGM.
pub const CLASS_LEVELS: [u8; 4] = [0, 85, 170, 255];

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary P5 image with maxval 255. Comments (`#` to end of line)
/// are allowed between header tokens.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("truncated PGM header".into()));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Data("bad PGM header".into()))?);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::Data(format!("not a binary PGM (magic `{}`)", tokens[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Data(format!("bad PGM number `{s}`")));
    let (w, h, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if maxval != 255 {
        return Err(Error::Data(format!("unsupported PGM maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Data("PGM has zero extent".into()));
    }
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != w * h {
        return Err(Error::Data(format!(
            "PGM raster has {} bytes, expected {}",
            raster.len(),
            w * h
        )));
    }
    Ok((w, h, raster.to_vec()))
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode_pgm(frame.width(), frame.height(), frame.pixels()))?;
    Ok(())
}

pub fn read_frame(path: &Path, index: u64) -> Result<Frame> {
    let (w, h, px) = decode_pgm(&fs::read(path)?)?;
    Frame::new(w, h, px, index)
}

pub fn write_segmentation(path: &Path, seg: &SegmentationMap) -> Result<()> {
    let px: Vec<u8> = seg.classes().iter().map(|&c| CLASS_LEVELS[c as usize]).collect();
    fs::write(path, encode_pgm(seg.width(), seg.height(), &px))?;
    Ok(())
}

pub fn read_segmentation(path: &Path) -> Result<SegmentationMap> {
    let (w, h, px) = decode_pgm(&fs::read(path)?)?;
    let classes = px
        .iter()
        .map(|&v| {
            CLASS_LEVELS
                .iter()
                .position(|&l| l == v)
                .map(|c| c as u8)
                .ok_or_else(|| Error::Data(format!("gray level {v} is not a class level")))
        })
        .collect::<Result<Vec<u8>>>()?;
    SegmentationMap::new(w, h, classes)
}

pub fn write_binary_map(path: &Path, map: &BinaryMap) -> Result<()> {
    let px: Vec<u8> = map.bits().iter().map(|&b| b * 255).collect();
    fs::write(path, encode_pgm(map.width(), map.height(), &px))?;
    Ok(())
}

/// Sorted `*.pgm` files in `dir`.
pub fn list_pgm(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every frame of a directory in file-name order.
pub fn read_frame_dir(dir: &Path) -> Result<Vec<Frame>> {
    let files = list_pgm(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no .pgm frames in {}", dir.display())));
    }
    files
        .iter()
        .enumerate()
        .map(|(i, p)| read_frame(p, i as u64))
        .collect()
}

/// Formats a real so that it round-trips exactly through `str::parse`.
fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

/// One row of `roi_trace.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub frame_index: u64,
    pub roi: Roi,
    pub mode: String,
}

pub fn format_trace(rows: &[TraceRow]) -> String {
    let mut s = String::from("frame_index,x_min,y_min,x_max,y_max,mode\n");
    for r in rows {
        let [a, b, c, d] = r.roi.as_array();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.frame_index,
            fmt_real(a),
            fmt_real(b),
            fmt_real(c),
            fmt_real(d),
            r.mode
        );
    }
    s
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>> {
    data_lines(text, "frame_index,x_min,y_min,x_max,y_max,mode")?
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Data(format!("trace line {n}: expected 6 fields")));
            }
            Ok(TraceRow {
                frame_index: parse_field(f[0], n)?,
                roi: Roi::new(
                    parse_field(f[1], n)?,
                    parse_field(f[2], n)?,
                    parse_field(f[3], n)?,
                    parse_field(f[4], n)?,
                ),
                mode: f[5].to_string(),
            })
        })
        .collect()
}

/// Ground truth for one generated frame. `roi` and `pupil` are `None` while
/// the eye is fully closed.
#[derive(Clone, Debug, PartialEq)]
pub struct GtRow {
    pub frame_index: u64,
    pub roi: Option<Roi>,
    pub pupil: Option<(f64, f64)>,
}

pub const GT_HEADER: &str = "frame_index,x_min,y_min,x_max,y_max,pupil_x,pupil_y";

pub fn format_gt(rows: &[GtRow]) -> String {
    let mut s = format!("{GT_HEADER}\n");
    for r in rows {
        let roi = match r.roi {
            Some(roi) => roi.as_array().map(fmt_real).join(","),
            None => ",,,".into(),
        };
        let pupil = match r.pupil {
            Some((x, y)) => format!("{},{}", fmt_real(x), fmt_real(y)),
            None => ",".into(),
        };
        let _ = writeln!(s, "{},{roi},{pupil}", r.frame_index);
    }
    s
}

pub fn parse_gt(text: &str) -> Result<Vec<GtRow>> {
    data_lines(text, GT_HEADER)?
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Data(format!("gt line {n}: expected 7 fields")));
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    parse_field(s, n).map(Some)
                }
            };
            let roi = match (opt(f[1])?, opt(f[2])?, opt(f[3])?, opt(f[4])?) {
                (Some(a), Some(b), Some(c), Some(d)) => Some(Roi::new(a, b, c, d)),
                (None, None, None, None) => None,
                _ => return Err(Error::Data(format!("gt line {n}: partial roi"))),
            };
            let pupil = match (opt(f[5])?, opt(f[6])?) {
                (Some(x), Some(y)) => Some((x, y)),
                (None, None) => None,
                _ => return Err(Error::Data(format!("gt line {n}: partial pupil"))),
            };
            Ok(GtRow {
                frame_index: parse_field(f[0], n)?,
                roi,
                pupil,
            })
        })
        .collect()
}

fn data_lines<'a>(text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, &'a str)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == header => {}
        _ => return Err(Error::Data(format!("missing CSV header `{header}`"))),
    }
    Ok(lines
        .enumerate()
        .map(|(i, l)| (i + 2, l.trim()))
        .filter(|(_, l)| !l.is_empty()))
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse `{s}`")))
}

/// A sequence directory: `frames/`, `labels/` and `gt.csv`.
#[derive(Clone, Debug)]
pub struct SequenceDir {
    pub frames: Vec<Frame>,
    pub labels: Vec<SegmentationMap>,
    pub gt: Vec<GtRow>,
}

pub fn frame_file_name(index: u64) -> String {
    format!("{index:05}.pgm")
}

/// Writes a rendered sequence and the parameters that produced it.
pub fn write_sequence_dir(dir: &Path, seq: &[SynthFrame], params: &EyeSceneParams) -> Result<()> {
    let (frames, labels) = (dir.join("frames"), dir.join("labels"));
    fs::create_dir_all(&frames)?;
    fs::create_dir_all(&labels)?;
    let mut gt = Vec::with_capacity(seq.len());
    for s in seq {
        let name = frame_file_name(s.frame.index());
        write_frame(&frames.join(&name), &s.frame)?;
        write_segmentation(&labels.join(&name), &s.labels)?;
        gt.push(GtRow {
            frame_index: s.frame.index(),
            roi: s.roi,
            pupil: s.pupil_center,
        });
    }
    fs::write(dir.join("gt.csv"), format_gt(&gt))?;
    fs::write(dir.join("params.json"), serde_json::to_string_pretty(params)? + "\n")?;
    Ok(())
}

/// Label maps and `gt.csv` of a sequence directory, frames optional.
pub fn read_truth_dir(dir: &Path) -> Result<(Vec<SegmentationMap>, Vec<GtRow>)> {
    let labels = list_pgm(&dir.join("labels"))?
        .iter()
        .map(|p| read_segmentation(p))
        .collect::<Result<Vec<_>>>()?;
    let gt_path = dir.join("gt.csv");
    let text = fs::read_to_string(&gt_path).map_err(|e| Error::Data(format!("{}: {e}", gt_path.display())))?;
    let gt = parse_gt(&text)?;
    if labels.len() != gt.len() {
        return Err(Error::Data(format!(
            "{}: {} label maps but {} gt rows",
            dir.display(),
            labels.len(),
            gt.len()
        )));
    }
    Ok((labels, gt))
}

pub fn read_sequence_dir(dir: &Path) -> Result<SequenceDir> {
    let frames = read_frame_dir(&dir.join("frames"))?;
    let (labels, gt) = read_truth_dir(dir)?;
    if frames.len() != labels.len() {
        return Err(Error::Data(format!("{}: {} frames but {} label maps", dir.display(), frames.len(), labels.len())));
    }
    Ok(SequenceDir { frames, labels, gt })
}

fn is_sequence_dir(dir: &Path) -> bool {
    dir.join("frames").is_dir() && dir.join("labels").is_dir()
}

/// `root` itself when it is a sequence directory, otherwise its immediate
/// sequence subdirectories in name order.
pub fn sequence_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if is_sequence_dir(root) {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_sequence_dir(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!("no sequence directories under {}", root.display())));
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let px: Vec<u8> = (0..12).collect();
        let bytes = encode_pgm(4, 3, &px);
        assert_eq!(&bytes[..11], b"P5\n4 3\n255\n");
        assert_eq!(decode_pgm(&bytes).unwrap(), (4, 3, px.clone()));
        let mut commented = b"P5\n# made by hand\n4 3\n255\n".to_vec();
        commented.extend_from_slice(&px);
        assert_eq!(decode_pgm(&commented).unwrap(), (4, 3, px));
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(decode_pgm(b"P2\n1 1\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode_pgm(b"P5\n1").is_err());
    }

    #[test]
    fn segmentation_pgm_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.pgm");
        let seg = SegmentationMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        write_segmentation(&path, &seg).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 85, 170, 255]);
        assert_eq!(read_segmentation(&path).unwrap(), seg);
        std::fs::write(&path, encode_pgm(1, 1, &[100])).unwrap();
        assert!(read_segmentation(&path).is_err());
    }

    #[test]
    fn csv_round_trips() {
        let trace = vec![
            TraceRow {
                frame_index: 0,
                roi: Roi::new(0.1, 0.2, 0.30000000000000004, 1.0),
                mode: "FullResolution".into(),
            },
            TraceRow {
                frame_index: 1,
                roi: Roi::new(0.9, 0.1, 0.1, 0.9),
                mode: "Extrapolate".into(),
            },
        ];
        assert_eq!(parse_trace(&format_trace(&trace)).unwrap(), trace);

        let gt = vec![
            GtRow {
                frame_index: 0,
                roi: Some(Roi::new(0.25, 0.5, 0.75, 1.0)),
                pupil: Some((31.5, 20.25)),
            },
            GtRow {
                frame_index: 1,
                roi: None,
                pupil: None,
            },
        ];
        let text = format_gt(&gt);
        assert!(text.contains("\n1,,,,,,\n"));
        assert_eq!(parse_gt(&text).unwrap(), gt);
        assert!(parse_gt("nope\n").is_err());
    }

    #[test]
    fn sequence_dir_round_trips() {
        let root = tempfile::tempdir().unwrap();
        let params = crate::synth::EyeSceneParams::centered(32, 32, 3);
        let seq = crate::synth::render_sequence(&params, 3).unwrap();
        let dir = root.path().join("seq000");
        write_sequence_dir(&dir, &seq, &params).unwrap();
        assert_eq!(sequence_dirs(root.path()).unwrap(), vec![dir.clone()]);
        assert_eq!(sequence_dirs(&dir).unwrap(), vec![dir.clone()]);
        let back = read_sequence_dir(&dir).unwrap();
        for (s, (f, (l, g))) in seq.iter().zip(back.frames.iter().zip(back.labels.iter().zip(&back.gt))) {
            assert_eq!(&s.frame, f);
            assert_eq!(&s.labels, l);
            assert_eq!((s.roi, s.pupil_center), (g.roi, g.pupil));
        }
        assert!(sequence_dirs(&dir.join("frames")).is_err());
    }
}
