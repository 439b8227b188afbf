//! File formats: detection and ground-truth JSON, fused-observation JSON and
//! the sweep CSV.
//!
//! Loaders parse into loosely typed records first and then validate, so every
//! malformed input surfaces as a typed error naming the offending entry.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{CurvePoint, EvalCounts, GroundTruthObject};
use crate::fusion::Observation;
use crate::geometry::BoundingBox;
use crate::partition::{validate_scores, Detection};

pub const CSV_HEADER: &str = "theta,tp,fp,fn,abs_ose,precision,recall,f1";
pub const FUSED_FORMAT: &str = "fused-observations";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetections {
    pub image_id: String,
    pub passes: Vec<Vec<Detection>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFile {
    pub class_count: usize,
    pub class_names: Option<Vec<String>>,
    pub images: Vec<ImageDetections>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthImage {
    pub image_id: String,
    pub objects: Vec<GroundTruthObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub class_count: usize,
    pub images: Vec<GroundTruthImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedImage {
    pub image_id: String,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedFile {
    pub format: String,
    pub class_count: usize,
    pub images: Vec<FusedImage>,
}

impl FusedFile {
    pub fn new(class_count: usize, images: Vec<FusedImage>) -> Self {
        Self {
            format: FUSED_FORMAT.to_string(),
            class_count,
            images,
        }
    }
}

// Wire records for the detection file; validated into the domain types above.

#[derive(Serialize, Deserialize)]
struct RawDetection {
    bbox: Vec<f64>,
    scores: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    image_id: String,
    passes: Vec<Vec<RawDetection>>,
}

#[derive(Serialize, Deserialize)]
struct RawDetectionFile {
    class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
    images: Vec<RawImage>,
}

#[derive(Deserialize)]
struct RawObject {
    bbox: Vec<f64>,
    label: i64,
}

#[derive(Deserialize)]
struct RawGroundTruthImage {
    image_id: String,
    objects: Vec<RawObject>,
}

#[derive(Deserialize)]
struct RawGroundTruthFile {
    class_count: usize,
    images: Vec<RawGroundTruthImage>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|source| match source.classify() {
        serde_json::error::Category::Data => Error::Schema {
            path: path.to_path_buf(),
            location: format!("line {} column {}", source.line(), source.column()),
            message: source.to_string(),
        },
        _ => Error::Parse {
            path: path.to_path_buf(),
            source,
        },
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path, pretty: bool) -> Result<()> {
    let mut text = if pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    }
    .expect("in-memory structures serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Checker<'a> {
    path: &'a Path,
}

impl Checker<'_> {
    fn schema(&self, location: String, message: impl Into<String>) -> Error {
        Error::Schema {
            path: self.path.to_path_buf(),
            location,
            message: message.into(),
        }
    }

    fn invalid(&self, location: String, message: impl Into<String>) -> Error {
        Error::Validation {
            path: self.path.to_path_buf(),
            location,
            message: message.into(),
        }
    }

    fn bbox(&self, coords: &[f64], location: &dyn Fn() -> String) -> Result<BoundingBox> {
        let arr: [f64; 4] = coords
            .try_into()
            .map_err(|_| self.schema(location(), format!("bbox has {} entries, expected 4", coords.len())))?;
        BoundingBox::from_array(arr).map_err(|e| self.invalid(location(), e.to_string()))
    }

    fn class_count(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(self.invalid("class_count".into(), "must be at least 1"));
        }
        Ok(())
    }

    fn unique_ids<'b>(&self, ids: impl Iterator<Item = &'b str>) -> Result<()> {
        let mut seen = HashSet::new();
        for id in ids {
            if !seen.insert(id) {
                return Err(self.invalid(format!("image '{id}'"), "duplicate image_id"));
            }
        }
        Ok(())
    }
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionFile> {
    let path = path.as_ref();
    let raw: RawDetectionFile = parse(path, &read(path)?)?;
    let check = Checker { path };
    let k = raw.class_count;
    check.class_count(k)?;
    if let Some(names) = &raw.class_names {
        if names.len() != k + 1 {
            return Err(check.schema(
                "class_names".into(),
                format!("{} names given, expected class_count + 1 = {}", names.len(), k + 1),
            ));
        }
    }
    check.unique_ids(raw.images.iter().map(|i| i.image_id.as_str()))?;

    let mut images = Vec::with_capacity(raw.images.len());
    for img in raw.images {
        let mut passes = Vec::with_capacity(img.passes.len());
        for (p, dets) in img.passes.into_iter().enumerate() {
            let mut out = Vec::with_capacity(dets.len());
            for (d, det) in dets.into_iter().enumerate() {
                let loc = || format!("image '{}' pass {p} detection {d}", img.image_id);
                let bbox = check.bbox(&det.bbox, &loc)?;
                if det.scores.len() != k + 1 {
                    return Err(check.schema(
                        loc(),
                        format!("scores has {} entries, expected class_count + 1 = {}", det.scores.len(), k + 1),
                    ));
                }
                let detection = Detection::new(det.scores, bbox, p).map_err(|e| check.invalid(loc(), e.to_string()))?;
                out.push(detection);
            }
            passes.push(out);
        }
        images.push(ImageDetections {
            image_id: img.image_id,
            passes,
        });
    }
    Ok(DetectionFile {
        class_count: k,
        class_names: raw.class_names,
        images,
    })
}

pub fn save_detections(file: &DetectionFile, path: impl AsRef<Path>) -> Result<()> {
    let raw = RawDetectionFile {
        class_count: file.class_count,
        class_names: file.class_names.clone(),
        images: file
            .images
            .iter()
            .map(|img| RawImage {
                image_id: img.image_id.clone(),
                passes: img
                    .passes
                    .iter()
                    .map(|dets| {
                        dets.iter()
                            .map(|d| RawDetection {
                                bbox: d.bbox().to_array().to_vec(),
                                scores: d.scores().to_vec(),
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect(),
    };
    // Detection dumps are large; one line keeps them a manageable size.
    write_json(&raw, path.as_ref(), false)
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruthFile> {
    let path = path.as_ref();
    let raw: RawGroundTruthFile = parse(path, &read(path)?)?;
    let check = Checker { path };
    let k = raw.class_count;
    check.class_count(k)?;
    check.unique_ids(raw.images.iter().map(|i| i.image_id.as_str()))?;

    let mut images = Vec::with_capacity(raw.images.len());
    for img in raw.images {
        let mut objects = Vec::with_capacity(img.objects.len());
        for (o, obj) in img.objects.iter().enumerate() {
            let loc = || format!("image '{}' object {o}", img.image_id);
            let bbox = check.bbox(&obj.bbox, &loc)?;
            if obj.label < 0 || obj.label as usize > k {
                return Err(check.invalid(loc(), format!("label {} outside [0, {k}]", obj.label)));
            }
            objects.push(GroundTruthObject {
                bbox,
                label: obj.label as usize,
            });
        }
        images.push(GroundTruthImage {
            image_id: img.image_id,
            objects,
        });
    }
    Ok(GroundTruthFile { class_count: k, images })
}

pub fn save_ground_truth(file: &GroundTruthFile, path: impl AsRef<Path>) -> Result<()> {
    write_json(file, path.as_ref(), true)
}

pub fn load_fused(path: impl AsRef<Path>) -> Result<FusedFile> {
    let path = path.as_ref();
    let file: FusedFile = parse(path, &read(path)?)?;
    let check = Checker { path };
    if file.format != FUSED_FORMAT {
        return Err(check.schema("format".into(), format!("expected \"{FUSED_FORMAT}\"")));
    }
    check.class_count(file.class_count)?;
    check.unique_ids(file.images.iter().map(|i| i.image_id.as_str()))?;
    let k = file.class_count;
    for img in &file.images {
        for (o, obs) in img.observations.iter().enumerate() {
            let loc = || format!("image '{}' observation {o}", img.image_id);
            if obs.fused_scores.len() != k + 1 {
                return Err(check.schema(loc(), format!("fused_scores must have {} entries", k + 1)));
            }
            validate_scores(&obs.fused_scores).map_err(|e| check.invalid(loc(), e.to_string()))?;
            if !(obs.entropy.is_finite() && obs.entropy >= 0.0) {
                return Err(check.invalid(loc(), format!("entropy {} must be finite and >= 0", obs.entropy)));
            }
            if obs.winning_label > k {
                return Err(check.invalid(loc(), format!("winning_label {} outside [0, {k}]", obs.winning_label)));
            }
            if obs.detection_count == 0 {
                return Err(check.invalid(loc(), "detection_count must be at least 1"));
            }
            if obs.box_covariance.iter().flatten().any(|c| !c.is_finite()) {
                return Err(check.invalid(loc(), "box_covariance must be finite"));
            }
        }
    }
    Ok(file)
}

pub fn save_fused(file: &FusedFile, path: impl AsRef<Path>) -> Result<()> {
    write_json(file, path.as_ref(), false)
}

/// True when `path` holds a fused-observation file rather than raw detections.
pub fn is_fused_file(path: impl AsRef<Path>) -> Result<bool> {
    #[derive(Deserialize)]
    struct Probe {
        format: Option<String>,
    }
    let path = path.as_ref();
    let probe: Probe = parse(path, &read(path)?)?;
    Ok(probe.format.as_deref() == Some(FUSED_FORMAT))
}

pub fn results_csv(points: &[CurvePoint]) -> String {
    let mut out = String::with_capacity(64 * (points.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for p in points {
        let c = &p.counts;
        writeln!(
            out,
            "{:.6},{},{},{},{},{:.6},{:.6},{:.6}",
            p.theta, c.tp, c.fp, c.fn_, c.abs_ose, p.precision, p.recall, p.f1
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn save_results(points: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, results_csv(points)).map_err(|e| Error::io(path, e))
}

pub fn parse_results(path: &Path, text: &str) -> Result<Vec<CurvePoint>> {
    let check = Checker { path };
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(check.schema("line 1".into(), format!("expected header '{CSV_HEADER}'")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let loc = || format!("line {}", i + 2);
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(check.schema(loc(), format!("{} fields, expected 8", fields.len())));
            }
            let real = |s: &str| s.parse::<f64>().map_err(|e| check.schema(loc(), e.to_string()));
            let int = |s: &str| s.parse::<u64>().map_err(|e| check.schema(loc(), e.to_string()));
            Ok(CurvePoint {
                theta: real(fields[0])?,
                counts: EvalCounts {
                    tp: int(fields[1])?,
                    fp: int(fields[2])?,
                    fn_: int(fields[3])?,
                    abs_ose: int(fields[4])?,
                },
                precision: real(fields[5])?,
                recall: real(fields[6])?,
                f1: real(fields[7])?,
            })
        })
        .collect()
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let path = path.as_ref();
    parse_results(path, &read(path)?)
}
