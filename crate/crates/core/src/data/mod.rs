//! Annotated instances, the JSON-lines manifest, synthetic data and
//! training-example preparation.

mod example;
mod synth;

pub use example::{crop_frame, crop_image, make_example, Augment, CropFrame, Example, ExampleConfig};
pub use synth::{synth_generate, write_dataset, SynthConfig};

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgeo::Point;

/// One annotated object: an image reference, a class, its box and its
/// visible boundary pieces in absolute pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub image: String,
    pub class: String,
    /// `[x, y, w, h]`.
    pub bbox: [f64; 4],
    pub components: Vec<Vec<Point>>,
}

impl InstanceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidAnnotation("record has no components".into()));
        }
        if let Some(c) = self.components.iter().find(|c| c.len() < 3) {
            return Err(Error::InvalidAnnotation(format!("component with {} points", c.len())));
        }
        let [x, y, w, h] = self.bbox;
        if !(w > 0.0 && h > 0.0) || [x, y, w, h].iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidAnnotation(format!("degenerate bbox {:?}", self.bbox)));
        }
        let tol = 1e-6 * (1.0 + w.max(h));
        for p in self.components.iter().flatten() {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::InvalidAnnotation("non-finite component coordinate".into()));
            }
            if p[0] < x - tol || p[0] > x + w + tol || p[1] < y - tol || p[1] > y + h + tol {
                return Err(Error::InvalidAnnotation(format!(
                    "point ({}, {}) lies outside bbox {:?}",
                    p[0], p[1], self.bbox
                )));
            }
        }
        Ok(())
    }

    pub fn is_disconnected(&self) -> bool {
        self.components.len() > 1
    }
}

/// A record with its decoded image.
#[derive(Debug, Clone)]
pub struct Sample {
    pub record: InstanceRecord,
    pub image: Arc<RgbImage>,
}

/// Parses a manifest without touching images.
pub fn parse_manifest(text: &str) -> Result<Vec<InstanceRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Loads a manifest and the images it references (relative to the
/// manifest's directory). Records whose image cannot be read are skipped.
pub fn load_manifest(path: &Path) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path)?;
    let records = parse_manifest(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut cache: Vec<(PathBuf, Arc<RgbImage>)> = Vec::new();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let p = base.join(&rec.image);
        let img = match cache.iter().find(|(q, _)| *q == p) {
            Some((_, img)) => img.clone(),
            None => match image::open(&p) {
                Ok(img) => {
                    let img = Arc::new(img.to_rgb8());
                    cache.push((p.clone(), img.clone()));
                    img
                }
                Err(e) => {
                    log::warn!("skipping record: cannot read image {}: {e}", p.display());
                    continue;
                }
            },
        };
        out.push(Sample { record: rec, image: img });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[InstanceRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads only the records of a manifest, line by line.
pub fn read_records(path: &Path) -> Result<Vec<InstanceRecord>> {
    let f = fs::File::open(path)?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_manifest(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec() -> InstanceRecord {
        InstanceRecord {
            image: "a.png".into(),
            class: "ellipse".into(),
            bbox: [1.0, 1.0, 10.0, 10.0],
            components: vec![vec![[1.0, 1.0], [11.0, 1.0], [11.0, 11.0]]],
        }
    }

    #[test]
    fn empty_manifest() {
        assert!(parse_manifest("").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let good = serde_json::to_string(&rec()).unwrap();
        let text = format!("{good}\n{{\"image\": 3}}\n");
        match parse_manifest(&text) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invariants_checked() {
        let mut r = rec();
        r.components[0].pop();
        assert!(r.validate().is_err());
        let mut r = rec();
        r.components[0][0] = [50.0, 1.0];
        assert!(r.validate().is_err());
        let mut r = rec();
        r.bbox[2] = 0.0;
        assert!(r.validate().is_err());
        assert!(rec().validate().is_ok());
    }

    #[test]
    fn write_then_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let recs = vec![rec(), InstanceRecord { class: "blob".into(), ..rec() }];
        write_manifest(&path, &recs).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
        // No image on disk: every record is skipped.
        assert!(load_manifest(&path).unwrap().is_empty());
    }
}
