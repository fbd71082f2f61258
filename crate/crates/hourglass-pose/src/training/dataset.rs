//! Dataset on disk: a directory of PNG images plus one `annotations.jsonl`
//! file with a single JSON record per line. A record's `image` field is the
//! image path relative to the annotation file, and it doubles as the sample
//! id when predictions are joined against ground truth.

use crate::geometry::ImageBuffer;
use crate::keypoints::{Joint, JointName, KeypointSet, JOINT_ORDER, NUM_JOINTS};
use crate::training::Sample;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    pub name: JointName,
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image: String,
    pub joints: Vec<JointRecord>,
    pub reference_length: f64,
}

impl AnnotationRecord {
    pub fn from_keypoints(image: impl Into<String>, kp: &KeypointSet) -> Self {
        let joints = JOINT_ORDER
            .iter()
            .map(|&name| {
                let j = kp.joint(name);
                JointRecord { name, x: j.x, y: j.y, visible: j.visible }
            })
            .collect();
        AnnotationRecord {
            image: image.into(),
            joints,
            reference_length: kp.reference_length,
        }
    }

    /// Joints may appear in any order but each of the 7 names must appear
    /// exactly once.
    pub fn to_keypoints(&self) -> Result<KeypointSet> {
        if self.joints.len() != NUM_JOINTS {
            return Err(Error::contract(format!(
                "annotation for {} has {} joints, expected {NUM_JOINTS}",
                self.image,
                self.joints.len()
            )));
        }
        let mut joints = [Joint { x: 0.0, y: 0.0, visible: false }; NUM_JOINTS];
        let mut seen = [false; NUM_JOINTS];
        for r in &self.joints {
            let i = r.name.index();
            if seen[i] {
                return Err(Error::contract(format!(
                    "annotation for {} repeats joint {}",
                    self.image,
                    r.name.as_str()
                )));
            }
            seen[i] = true;
            joints[i] = Joint { x: r.x, y: r.y, visible: r.visible };
        }
        KeypointSet::new(joints, self.reference_length)
    }
}

pub fn save_png(path: impl AsRef<Path>, image: &ImageBuffer) -> Result<()> {
    let (h, w) = (image.height() as u32, image.width() as u32);
    let raw = image.to_u8();
    match image.channels() {
        3 => {
            let img = image::RgbImage::from_raw(w, h, raw)
                .ok_or_else(|| Error::contract("pixel buffer does not fill the image"))?;
            img.save(path)?;
        }
        1 => {
            let img = image::GrayImage::from_raw(w, h, raw)
                .ok_or_else(|| Error::contract("pixel buffer does not fill the image"))?;
            img.save(path)?;
        }
        c => return Err(Error::contract(format!("cannot encode a {c}-channel image"))),
    }
    Ok(())
}

/// Decodes any PNG to RGB; grayscale sources are expanded to 3 channels.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    ImageBuffer::from_u8(img.as_raw(), h as usize, w as usize, 3)
}

/// One loaded dataset row: the annotation-file image path (used as the
/// sample id everywhere) plus the decoded sample.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub id: String,
    pub sample: Sample,
}

/// Writes `img_{i:05}.png` files plus [`ANNOTATIONS_FILE`] into `dir` and
/// returns the ids. Identical samples produce a byte-identical annotation
/// file.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample]) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join(ANNOTATIONS_FILE))?);
    let mut ids = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = format!("img_{i:05}.png");
        save_png(dir.join(&name), &s.image)?;
        let record = AnnotationRecord::from_keypoints(name.clone(), &s.keypoints);
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
        ids.push(name);
    }
    out.flush()?;
    Ok(ids)
}

pub fn load_annotations(dir: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    load_annotations_file(dir.as_ref().join(ANNOTATIONS_FILE))
}

/// Reads an annotation file by its own path rather than its directory.
pub fn load_annotations_file(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let dir = dir.as_ref();
    let mut entries = Vec::new();
    for record in load_annotations(dir)? {
        let image = load_png(dir.join(&record.image))?;
        let keypoints = record.to_keypoints()?;
        entries.push(DatasetEntry { id: record.image, sample: Sample { image, keypoints } });
    }
    Ok(entries)
}
