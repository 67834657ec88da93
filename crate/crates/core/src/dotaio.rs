//! DOTA text-format parsing and writing, image tiling windows, and
//! cross-patch detection merging.
//!
//! Ground truth: one file per image, each object line holding
//! `x1 y1 x2 y2 x3 y3 x4 y4 class difficult`; header lines such as
//! `imagesource:...` or `gsd:...` are skipped.
//!
//! Detections: one file per class named `Task1_{class}.txt`, each line
//! `imgid score x1 y1 x2 y2 x3 y3 x4 y4`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::evalkit::{rotated_nms, Detection, GroundTruth};
use crate::geom::{min_area_rect, GeomError, Obb, Point, Quad};

#[derive(Debug, Error)]
pub enum DotaError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("window index {index} out of range, {count} windows")]
    WindowIndex { index: usize, count: usize },
    #[error("invalid tiling: {0}")]
    InvalidTiling(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One annotated object in a DOTA ground-truth file.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationObject {
    pub quad: Quad,
    pub class_name: String,
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationFile {
    pub image_id: String,
    pub objects: Vec<AnnotationObject>,
}

impl AnnotationObject {
    /// Canonical OBB fit of the annotation quad.
    pub fn obb(&self) -> Result<Obb, GeomError> {
        min_area_rect(self.quad.points())
    }
}

fn parse_number(tok: &str, line: usize) -> Result<f64, DotaError> {
    tok.parse::<f64>().map_err(|_| DotaError::Parse {
        line,
        msg: format!("expected a number, got {tok:?}"),
    })
}

/// Parse one DOTA v1.0 ground-truth file. Lines with other than 10
/// whitespace-separated tokens are skipped as headers.
pub fn parse_annotations(image_id: &str, text: &str) -> Result<AnnotationFile, DotaError> {
    let mut objects = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.len() != 10 {
            continue;
        }
        let mut coords = [0.0f64; 8];
        for (i, tok) in tokens[..8].iter().enumerate() {
            coords[i] = parse_number(tok, line)?;
        }
        let difficult = match tokens[9] {
            "0" => false,
            "1" => true,
            other => {
                return Err(DotaError::Parse {
                    line,
                    msg: format!("difficult flag must be 0 or 1, got {other:?}"),
                })
            }
        };
        objects.push(AnnotationObject {
            quad: Quad::new([
                Point::new(coords[0], coords[1]),
                Point::new(coords[2], coords[3]),
                Point::new(coords[4], coords[5]),
                Point::new(coords[6], coords[7]),
            ]),
            class_name: tokens[8].to_string(),
            difficult,
        });
    }
    Ok(AnnotationFile {
        image_id: image_id.to_string(),
        objects,
    })
}

/// Load every `*.txt` ground-truth file in a directory; the image id is the
/// file stem. Classes are mapped to ids via `class_id_of`.
pub fn load_ground_truth_dir(
    dir: &Path,
    class_id_of: &BTreeMap<String, usize>,
) -> Result<Vec<GroundTruth>, DotaError> {
    let mut out = Vec::new();
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().map_or(false, |e| e == "txt"))
        .collect();
    paths.sort();
    for path in paths {
        let image_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let ann = parse_annotations(&image_id, &fs::read_to_string(&path)?)?;
        for obj in ann.objects {
            if let Some(&class_id) = class_id_of.get(&obj.class_name) {
                out.push(GroundTruth {
                    image_id: image_id.clone(),
                    class_id,
                    obb: obj.obb()?,
                    difficult: obj.difficult,
                });
            }
        }
    }
    Ok(out)
}

/// Render detections of one class as Task1 file lines.
pub fn format_detection_lines(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let q = d.obb.corners();
        let p = q.points();
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
            d.image_id, d.score, p[0].x, p[0].y, p[1].x, p[1].y, p[2].x, p[2].y, p[3].x, p[3].y
        ));
    }
    out
}

/// Parse Task1 detection lines, assigning every detection the given class.
pub fn parse_detection_lines(text: &str, class_id: usize) -> Result<Vec<Detection>, DotaError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 10 {
            return Err(DotaError::Parse {
                line,
                msg: format!("expected 10 tokens, got {}", tokens.len()),
            });
        }
        let score = parse_number(tokens[1], line)?;
        let mut pts = [Point::default(); 4];
        for i in 0..4 {
            pts[i] = Point::new(
                parse_number(tokens[2 + 2 * i], line)?,
                parse_number(tokens[3 + 2 * i], line)?,
            );
        }
        out.push(Detection {
            image_id: tokens[0].to_string(),
            class_id,
            score,
            obb: min_area_rect(&pts)?,
        });
    }
    Ok(out)
}

/// Write detections as per-class `Task1_{class}.txt` files under `dir`.
/// Classes without detections get an empty file.
pub fn write_detections(
    dets: &[Detection],
    class_names: &[String],
    dir: &Path,
) -> Result<(), DotaError> {
    fs::create_dir_all(dir)?;
    for (class_id, name) in class_names.iter().enumerate() {
        let class_dets: Vec<Detection> = dets
            .iter()
            .filter(|d| d.class_id == class_id)
            .cloned()
            .collect();
        fs::write(
            dir.join(format!("Task1_{name}.txt")),
            format_detection_lines(&class_dets),
        )?;
    }
    Ok(())
}

/// Read per-class `Task1_{class}.txt` files; missing files mean no
/// detections for that class.
pub fn parse_detections(
    dir: &Path,
    class_names: &[String],
) -> Result<Vec<Detection>, DotaError> {
    let mut out = Vec::new();
    for (class_id, name) in class_names.iter().enumerate() {
        let path = dir.join(format!("Task1_{name}.txt"));
        if !path.exists() {
            continue;
        }
        out.extend(parse_detection_lines(&fs::read_to_string(&path)?, class_id)?);
    }
    Ok(out)
}

/// Crop rectangle in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileWindow {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

fn axis_origins(dim: u32, patch: u32, stride: u32) -> Vec<u32> {
    if dim <= patch {
        return vec![0];
    }
    let mut origins = Vec::new();
    let mut start = 0u32;
    loop {
        if start + patch >= dim {
            // Clamp the last window so its far edge meets the image edge.
            let clamped = dim - patch;
            if origins.last() != Some(&clamped) {
                origins.push(clamped);
            }
            break;
        }
        origins.push(start);
        start += stride;
    }
    origins
}

/// Sliding tiling windows with the clamp-last-window policy: origins advance
/// by `stride` and the final window per axis is pulled back so it ends at
/// the image edge. Windows shrink only when the image is smaller than the
/// patch.
pub fn tile_windows(
    image_w: u32,
    image_h: u32,
    patch: u32,
    stride: u32,
) -> Result<Vec<TileWindow>, DotaError> {
    if image_w == 0 || image_h == 0 {
        return Err(DotaError::InvalidTiling("image dimensions must be positive".into()));
    }
    if patch == 0 {
        return Err(DotaError::InvalidTiling("patch must be positive".into()));
    }
    if stride == 0 || stride > patch {
        return Err(DotaError::InvalidTiling(format!(
            "stride must satisfy 0 < stride <= patch, got {stride}"
        )));
    }
    let xs = axis_origins(image_w, patch, stride);
    let ys = axis_origins(image_h, patch, stride);
    let mut windows = Vec::with_capacity(xs.len() * ys.len());
    for &y0 in &ys {
        for &x0 in &xs {
            windows.push(TileWindow {
                x0,
                y0,
                width: patch.min(image_w - x0),
                height: patch.min(image_h - y0),
            });
        }
    }
    Ok(windows)
}

/// Translate per-window detections into source-image coordinates and fuse
/// duplicates across overlapping windows with class-wise rotated NMS.
pub fn merge_patch_detections(
    per_window: &[Vec<Detection>],
    windows: &[TileWindow],
    nms_tau: f64,
) -> Result<Vec<Detection>, DotaError> {
    if per_window.len() > windows.len() {
        return Err(DotaError::WindowIndex {
            index: per_window.len() - 1,
            count: windows.len(),
        });
    }
    let mut all: Vec<Detection> = Vec::new();
    for (dets, win) in per_window.iter().zip(windows) {
        for d in dets {
            let obb = Obb::new(
                d.obb.x() + win.x0 as f64,
                d.obb.y() + win.y0 as f64,
                d.obb.w(),
                d.obb.h(),
                d.obb.theta(),
            )?;
            all.push(Detection { obb, ..d.clone() });
        }
    }
    // Group by (image, class) and suppress within each group.
    let mut groups: BTreeMap<(String, usize), Vec<Detection>> = BTreeMap::new();
    for d in all {
        groups
            .entry((d.image_id.clone(), d.class_id))
            .or_default()
            .push(d);
    }
    let mut merged = Vec::new();
    for (_, group) in groups {
        merged.extend(rotated_nms(&group, nms_tau));
    }
    Ok(merged)
}

/// Deterministic class-name to id assignment: sorted unique names.
pub fn class_map(names: impl IntoIterator<Item = String>) -> (Vec<String>, BTreeMap<String, usize>) {
    let mut sorted: Vec<String> = names.into_iter().collect();
    sorted.sort();
    sorted.dedup();
    let map = sorted
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    (sorted, map)
}
