//! Frame sequences with one ground-truth box per frame, and their
//! on-disk layout.
//!
//! A sequence directory holds numbered frames `0001.png`, `0002.png`, ...
//! and `groundtruth.txt`, one `x,y,w,h` line per frame (top-left corner
//! and size). A multi-domain dataset is a directory of sequence
//! directories, taken in lexicographic order.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<RgbImage>,
    pub groundtruth: Vec<BBox>,
}

impl Sequence {
    pub fn new(
        name: impl Into<String>,
        frames: Vec<RgbImage>,
        groundtruth: Vec<BBox>,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Argument(
                "a sequence needs at least one frame".into(),
            ));
        }
        if frames.len() != groundtruth.len() {
            return Err(Error::Argument(format!(
                "{} frames but {} ground-truth boxes",
                frames.len(),
                groundtruth.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            frames,
            groundtruth,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_size(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }

    pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
        dir.join(format!("{:04}.png", index + 1))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, f) in self.frames.iter().enumerate() {
            let path = Self::frame_path(dir, i);
            f.save(&path)
                .map_err(|source| Error::Image { path, source })?;
        }
        write_boxes(dir.join(GROUNDTRUTH_FILE), &self.groundtruth)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let groundtruth = read_boxes(dir.join(GROUNDTRUTH_FILE))?;
        let mut frames = Vec::with_capacity(groundtruth.len());
        for i in 0..groundtruth.len() {
            let path = Self::frame_path(dir, i);
            let img = image::open(&path).map_err(|source| Error::Image { path, source })?;
            frames.push(img.to_rgb8());
        }
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(name, frames, groundtruth)
    }
}

/// Training set: one domain per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domains: Vec<Sequence>,
}

impl DomainDataset {
    pub fn new(domains: Vec<Sequence>) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::Argument(
                "a dataset needs at least one domain".into(),
            ));
        }
        Ok(Self { domains })
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(GROUNDTRUTH_FILE).is_file())
            .collect();
        subdirs.sort();
        Self::new(subdirs.iter().map(Sequence::load).collect::<Result<_>>()?)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        for (i, s) in self.domains.iter().enumerate() {
            let name = if s.name.is_empty() {
                format!("domain{i:03}")
            } else {
                s.name.clone()
            };
            s.save(dir.as_ref().join(name))?;
        }
        Ok(())
    }
}

/// Parses `x,y,w,h` lines; blank lines are skipped. Tabs and spaces are
/// accepted as separators too.
pub fn parse_boxes(text: &str) -> Result<Vec<BBox>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format {
                what: "box list",
                detail: format!("line {}: {e}", n + 1),
            })?;
        if v.len() != 4 {
            return Err(Error::Format {
                what: "box list",
                detail: format!("line {}: expected 4 values, got {}", n + 1, v.len()),
            });
        }
        out.push(
            BBox::from_xywh(v[0], v[1], v[2], v[3]).map_err(|e| Error::Format {
                what: "box list",
                detail: format!("line {}: {e}", n + 1),
            })?,
        );
    }
    Ok(out)
}

pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<BBox>> {
    let path = path.as_ref();
    parse_boxes(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn format_boxes(boxes: &[BBox]) -> String {
    boxes
        .iter()
        .map(|b| {
            let (x, y, w, h) = b.to_xywh();
            format!("{x},{y},{w},{h}\n")
        })
        .collect()
}

pub fn write_boxes(path: impl AsRef<Path>, boxes: &[BBox]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_boxes(boxes)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_text_round_trip() {
        let b = vec![
            BBox::from_xywh(1.5, 2.0, 10.0, 20.25).unwrap(),
            BBox::from_xywh(0.1, 0.2, 0.3, 0.4).unwrap(),
        ];
        assert_eq!(parse_boxes(&format_boxes(&b)).unwrap(), b);
        assert!(parse_boxes("1,2,3\n").is_err());
        assert!(parse_boxes("1,2,0,4\n").is_err());
        assert_eq!(parse_boxes("1 2\t3,4\n\n").unwrap().len(), 1);
    }
}
