//! Detection ingestion.
//!
//! Detections come from an upstream detector as JSON Lines:
//!
//! ```text
//! {"coords":"absolute"}
//! {"image_id":"a","x0":10,"y0":10,"x1":50,"y1":50,"class_id":2,"confidence":0.9}
//! ```
//!
//! The first line may declare the coordinate convention (`absolute` pixel
//! indices or `normalized` fractions of the image size); without it boxes
//! are absolute. Malformed records are skipped and counted.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::image::Rect;
use crate::{Error, Result};

/// Confidence threshold used by the detector that produced the reference
/// scores.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordSpace {
    /// Inclusive pixel indices.
    #[default]
    Absolute,
    /// Fractions of width/height in `[0, 1]`.
    Normalized,
}

/// Box corners as read from the file, in the file's coordinate space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxCoords {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoxCoords,
    pub coords: CoordSpace,
    pub class_id: i64,
    pub confidence: f64,
}

impl Detection {
    /// Detection given directly as an inclusive pixel rectangle.
    pub fn pixel(rect: Rect, class_id: i64, confidence: f64) -> Self {
        Self {
            bbox: BoxCoords {
                x0: rect.x0 as f64,
                y0: rect.y0 as f64,
                x1: rect.x1 as f64,
                y1: rect.y1 as f64,
            },
            coords: CoordSpace::Absolute,
            class_id,
            confidence,
        }
    }

    /// Inclusive pixel rectangle clamped to a `width x height` frame, or
    /// `None` if nothing is left.
    ///
    /// Absolute corners are rounded to the nearest pixel index. Normalized
    /// corners cover the pixels `floor(x0*W) ..= ceil(x1*W) - 1`.
    pub fn pixel_rect(&self, width: usize, height: usize) -> Option<Rect> {
        let b = self.bbox;
        let r = match self.coords {
            CoordSpace::Absolute => Rect::new(
                b.x0.round() as i64,
                b.y0.round() as i64,
                b.x1.round() as i64,
                b.y1.round() as i64,
            ),
            CoordSpace::Normalized => {
                let (w, h) = (width as f64, height as f64);
                Rect::new(
                    (b.x0 * w).floor() as i64,
                    (b.y0 * h).floor() as i64,
                    (b.x1 * w).ceil() as i64 - 1,
                    (b.y1 * h).ceil() as i64 - 1,
                )
            }
        };
        r.clamp_to(width, height)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DetectionSet {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(image_id: impl Into<String>, detections: Vec<Detection>) -> Self {
        Self {
            image_id: image_id.into(),
            detections,
        }
    }

    pub fn empty(image_id: impl Into<String>) -> Self {
        Self::new(image_id, Vec::new())
    }

    pub fn k(&self) -> usize {
        self.detections.len()
    }
}

/// Keeps detections with `confidence >= threshold`, preserving order.
pub fn filter_detections(ds: &DetectionSet, conf_threshold: f64) -> DetectionSet {
    DetectionSet {
        image_id: ds.image_id.clone(),
        detections: ds
            .detections
            .iter()
            .filter(|d| d.confidence >= conf_threshold)
            .cloned()
            .collect(),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionFile {
    pub coords: CoordSpace,
    pub sets: BTreeMap<String, DetectionSet>,
    /// Records that were skipped.
    pub warnings: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    coords: CoordSpace,
}

#[derive(Serialize, Deserialize)]
struct Record {
    image_id: String,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    class_id: i64,
    confidence: f64,
}

fn record_to_detection(rec: &Record, coords: CoordSpace) -> Option<Detection> {
    let vals = [rec.x0, rec.y0, rec.x1, rec.y1, rec.confidence];
    if vals.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if !(0.0..=1.0).contains(&rec.confidence) {
        return None;
    }
    if rec.x0 > rec.x1 || rec.y0 > rec.y1 {
        return None;
    }
    let corners = [rec.x0, rec.y0, rec.x1, rec.y1];
    let in_range = match coords {
        CoordSpace::Absolute => corners.iter().all(|&v| v >= 0.0),
        CoordSpace::Normalized => corners.iter().all(|v| (0.0..=1.0).contains(v)),
    };
    if !in_range {
        return None;
    }
    Some(Detection {
        bbox: BoxCoords {
            x0: rec.x0,
            y0: rec.y0,
            x1: rec.x1,
            y1: rec.y1,
        },
        coords,
        class_id: rec.class_id,
        confidence: rec.confidence,
    })
}

pub fn parse_detections<R: BufRead>(reader: R) -> Result<DetectionFile> {
    let mut out = DetectionFile::default();
    let mut first = true;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if std::mem::take(&mut first) {
            let value: serde_json::Value =
                serde_json::from_str(trimmed).unwrap_or(serde_json::Value::Null);
            if value.get("coords").is_some() {
                let header: Header = serde_json::from_value(value).map_err(|e| Error::Parse {
                    line: lineno + 1,
                    reason: format!("bad header: {e}"),
                })?;
                out.coords = header.coords;
                continue;
            }
        }
        let det = serde_json::from_str::<Record>(trimmed)
            .ok()
            .and_then(|rec| record_to_detection(&rec, out.coords).map(|d| (rec.image_id, d)));
        match det {
            Some((id, d)) => out
                .sets
                .entry(id.clone())
                .or_insert_with(|| DetectionSet::empty(id))
                .detections
                .push(d),
            None => out.warnings += 1,
        }
    }
    Ok(out)
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionFile> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_detections(std::io::BufReader::new(file))
}

/// Writes the header line then every detection, sets in `image_id` order.
pub fn write_detections<W: Write>(file: &DetectionFile, mut w: W) -> std::io::Result<()> {
    let header = match file.coords {
        CoordSpace::Absolute => "absolute",
        CoordSpace::Normalized => "normalized",
    };
    writeln!(w, "{{\"coords\":\"{header}\"}}")?;
    for set in file.sets.values() {
        for d in &set.detections {
            let rec = Record {
                image_id: set.image_id.clone(),
                x0: d.bbox.x0,
                y0: d.bbox.y0,
                x1: d.bbox.x1,
                y1: d.bbox.y1,
                class_id: d.class_id,
                confidence: d.confidence,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_conf(confs: &[f64]) -> DetectionSet {
        DetectionSet::new(
            "x",
            confs
                .iter()
                .map(|&c| Detection::pixel(Rect::new(0, 0, 1, 1), 0, c))
                .collect(),
        )
    }

    #[test]
    fn empty_file_gives_empty_map() {
        let f = parse_detections(&b""[..]).unwrap();
        assert!(f.sets.is_empty());
        assert_eq!(f.warnings, 0);
    }

    #[test]
    fn single_record() {
        let src =
            r#"{"image_id":"a","x0":10,"y0":10,"x1":50,"y1":50,"class_id":2,"confidence":0.9}"#;
        let f = parse_detections(src.as_bytes()).unwrap();
        assert_eq!(f.sets.len(), 1);
        let set = &f.sets["a"];
        assert_eq!(set.k(), 1);
        assert_eq!(set.detections[0].class_id, 2);
        assert_eq!(
            set.detections[0].pixel_rect(100, 100),
            Some(Rect::new(10, 10, 50, 50))
        );
    }

    #[test]
    fn malformed_line_is_counted() {
        let mut src = String::new();
        for i in 0..10 {
            if i == 6 {
                src.push_str("{\"image_id\":\"a\",\"x0\":oops}\n");
            } else {
                src.push_str(&format!(
                    "{{\"image_id\":\"img{}\",\"x0\":1,\"y0\":2,\"x1\":3,\"y1\":4,\"class_id\":0,\"confidence\":0.5}}\n",
                    i % 3
                ));
            }
        }
        let f = parse_detections(src.as_bytes()).unwrap();
        assert_eq!(f.sets.values().map(DetectionSet::k).sum::<usize>(), 9);
        assert_eq!(f.warnings, 1);
    }

    #[test]
    fn out_of_range_records_rejected() {
        let src = "{\"coords\":\"normalized\"}\n\
            {\"image_id\":\"a\",\"x0\":0.1,\"y0\":0.1,\"x1\":0.5,\"y1\":0.5,\"class_id\":0,\"confidence\":0.5}\n\
            {\"image_id\":\"a\",\"x0\":0.1,\"y0\":0.1,\"x1\":1.5,\"y1\":0.5,\"class_id\":0,\"confidence\":0.5}\n\
            {\"image_id\":\"a\",\"x0\":0.1,\"y0\":0.1,\"x1\":0.5,\"y1\":0.5,\"class_id\":0,\"confidence\":1.5}\n\
            {\"image_id\":\"a\",\"x0\":0.6,\"y0\":0.1,\"x1\":0.5,\"y1\":0.5,\"class_id\":0,\"confidence\":0.5}\n";
        let f = parse_detections(src.as_bytes()).unwrap();
        assert_eq!(f.coords, CoordSpace::Normalized);
        assert_eq!(f.sets["a"].k(), 1);
        assert_eq!(f.warnings, 3);
        let r = f.sets["a"].detections[0].pixel_rect(10, 20).unwrap();
        assert_eq!(r, Rect::new(1, 2, 4, 9));
    }

    #[test]
    fn bad_header_is_hard_error() {
        let src = "{\"coords\":\"polar\"}\n";
        assert!(matches!(
            parse_detections(src.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn invalid_utf8_is_hard_error() {
        assert!(parse_detections(&[0xff, 0xfe, b'\n'][..]).is_err());
    }

    #[test]
    fn missing_file_is_hard_error() {
        assert!(load_detections("/nonexistent/detections.jsonl").is_err());
    }

    #[test]
    fn threshold_filtering() {
        assert_eq!(filter_detections(&with_conf(&[0.1, 0.7]), 0.0).k(), 2);
        assert_eq!(filter_detections(&with_conf(&[0.5, 0.9]), 1.0).k(), 0);
        let kept = filter_detections(&with_conf(&[0.39, 0.40, 0.80]), 0.4);
        assert_eq!(kept.k(), 2);
        assert_eq!(kept.detections[0].confidence, 0.40);
        assert_eq!(kept.detections[1].confidence, 0.80);
    }

    #[test]
    fn filter_is_idempotent() {
        let ds = with_conf(&[0.2, 0.4, 0.41, 0.9, 0.05]);
        let once = filter_detections(&ds, 0.4);
        assert_eq!(filter_detections(&once, 0.4), once);
    }

    #[test]
    fn serialize_then_load_is_fixed_point() {
        let src = "{\"coords\":\"absolute\"}\n\
            {\"image_id\":\"b\",\"x0\":1.5,\"y0\":2,\"x1\":30,\"y1\":40.25,\"class_id\":7,\"confidence\":0.125}\n\
            {\"image_id\":\"a\",\"x0\":0,\"y0\":0,\"x1\":3,\"y1\":3,\"class_id\":1,\"confidence\":0.9}\n\
            {\"image_id\":\"a\",\"x0\":5,\"y0\":5,\"x1\":8,\"y1\":9,\"class_id\":2,\"confidence\":0.4}\n";
        let first = parse_detections(src.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_detections(&first, &mut buf).unwrap();
        let second = parse_detections(&buf[..]).unwrap();
        assert_eq!(first, second);
        let mut buf2 = Vec::new();
        write_detections(&second, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }
}
