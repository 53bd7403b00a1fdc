//! Images, ground truth, detections and the COCO file formats they come from.
//!
//! Annotation files follow the COCO instances layout (`images`, `annotations`,
//! `categories`); detection files follow the COCO results layout, a flat list
//! of `{image_id, category_id, bbox, score}`. Crowd annotations are dropped at
//! load time and counted in [`LoadReport`]. Categories are remapped to
//! contiguous indices in ascending order of their external id.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};

/// Per-image detection cap applied at load time.
pub const MAX_DETS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_idx: usize,
    pub score: f64,
    /// Position of the detection within its image after capping.
    pub det_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_idx: usize,
    pub gt_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    pub width: f64,
    pub height: f64,
    pub gts: Vec<GroundTruth>,
    pub dets: Vec<Detection>,
}

impl ImageRecord {
    pub fn new(image_id: u64, width: f64, height: f64) -> Self {
        Self {
            image_id,
            width,
            height,
            gts: Vec::new(),
            dets: Vec::new(),
        }
    }

    /// Sorts detections by descending score (stable, so ties keep their
    /// current order), truncates to `max_dets` and renumbers `det_id`.
    pub fn cap_detections(&mut self, max_dets: usize) {
        self.dets
            .sort_by(|a, b| b.score.total_cmp(&a.score));
        self.dets.truncate(max_dets);
        for (i, d) in self.dets.iter_mut().enumerate() {
            d.det_id = i;
        }
    }

    /// Detection indices ordered by descending score, ties by ascending `det_id`.
    pub fn ranked_detections(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.dets.len()).collect();
        order.sort_by(|&a, &b| {
            let (da, db) = (&self.dets[a], &self.dets[b]);
            db.score
                .total_cmp(&da.score)
                .then(da.det_id.cmp(&db.det_id))
        });
        order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    pub supercategory: String,
}

/// Bijection between external category ids and contiguous class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTable {
    categories: Vec<Category>,
    id_to_idx: HashMap<u64, usize>,
}

impl CategoryTable {
    /// Builds the table, ordering classes by ascending external id.
    pub fn new(mut categories: Vec<Category>) -> Result<Self> {
        categories.sort_by_key(|c| c.id);
        let mut id_to_idx = HashMap::with_capacity(categories.len());
        for (idx, c) in categories.iter().enumerate() {
            if id_to_idx.insert(c.id, idx).is_some() {
                return Err(Error::DuplicateId {
                    kind: "category",
                    id: c.id,
                });
            }
        }
        Ok(Self {
            categories,
            id_to_idx,
        })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn index_of(&self, category_id: u64) -> Option<usize> {
        self.id_to_idx.get(&category_id).copied()
    }

    pub fn category(&self, idx: usize) -> &Category {
        &self.categories[idx]
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.categories[idx].name
    }

    pub fn supercategory(&self, idx: usize) -> &str {
        &self.categories[idx].supercategory
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub images: usize,
    pub annotations: usize,
    pub crowd_dropped: usize,
}

#[derive(Debug, Clone)]
pub struct Annotations {
    pub table: CategoryTable,
    pub images: Vec<ImageRecord>,
    pub report: LoadReport,
}

// ---- on-disk schema ----

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoAnnotationFile {
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supercategory: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoResult {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Annotations> {
    let path = path.as_ref();
    parse_annotations(&read(path)?, &path.display().to_string())
}

/// Parses annotation text. `context` names the source in error messages.
pub fn parse_annotations(text: &str, context: &str) -> Result<Annotations> {
    let file: CocoAnnotationFile = serde_json::from_str(text).map_err(|source| Error::Parse {
        context: context.to_owned(),
        source,
    })?;
    from_coco(file)
}

pub fn from_coco(file: CocoAnnotationFile) -> Result<Annotations> {
    let categories = file
        .categories
        .into_iter()
        .map(|c| Category {
            id: c.id,
            // a missing supercategory puts the class in a group of its own
            supercategory: c.supercategory.unwrap_or_else(|| c.name.clone()),
            name: c.name,
        })
        .collect();
    let table = CategoryTable::new(categories)?;

    let mut images = Vec::with_capacity(file.images.len());
    let mut by_id = HashMap::with_capacity(file.images.len());
    for img in &file.images {
        if !(img.width > 0.0 && img.height > 0.0) {
            return Err(Error::InvalidImageSize {
                image_id: img.id,
                width: img.width,
                height: img.height,
            });
        }
        if by_id.insert(img.id, images.len()).is_some() {
            return Err(Error::DuplicateId {
                kind: "image",
                id: img.id,
            });
        }
        images.push(ImageRecord::new(img.id, img.width, img.height));
    }

    let mut report = LoadReport {
        images: images.len(),
        ..LoadReport::default()
    };
    for ann in file.annotations {
        let &slot = by_id
            .get(&ann.image_id)
            .ok_or(Error::UnknownImage(ann.image_id))?;
        let class_idx = table
            .index_of(ann.category_id)
            .ok_or(Error::UnknownCategory(ann.category_id))?;
        if ann.iscrowd != 0 {
            report.crowd_dropped += 1;
            continue;
        }
        let img = &mut images[slot];
        let gt_id = img.gts.len();
        img.gts.push(GroundTruth {
            bbox: BBox::from_xywh(ann.bbox),
            class_idx,
            gt_id,
        });
        report.annotations += 1;
    }

    Ok(Annotations {
        table,
        images,
        report,
    })
}

/// Serializes the ground truth back into the annotation format.
pub fn to_coco(table: &CategoryTable, images: &[ImageRecord]) -> CocoAnnotationFile {
    let mut annotations = Vec::new();
    for img in images {
        for gt in &img.gts {
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id: img.image_id,
                category_id: table.category(gt.class_idx).id,
                bbox: gt.bbox.to_xywh(),
                iscrowd: 0,
            });
        }
    }
    CocoAnnotationFile {
        images: images
            .iter()
            .map(|i| CocoImage {
                id: i.image_id,
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations,
        categories: table
            .categories()
            .iter()
            .map(|c| CocoCategory {
                id: c.id,
                name: c.name.clone(),
                supercategory: Some(c.supercategory.clone()),
            })
            .collect(),
    }
}

pub fn write_annotations(
    path: impl AsRef<Path>,
    table: &CategoryTable,
    images: &[ImageRecord],
) -> Result<()> {
    let text = serde_json::to_string(&to_coco(table, images)).map_err(|source| Error::Parse {
        context: "annotation output".into(),
        source,
    })?;
    write(path.as_ref(), &text)
}

pub fn load_detections(
    path: impl AsRef<Path>,
    table: &CategoryTable,
    images: &mut [ImageRecord],
) -> Result<()> {
    let path = path.as_ref();
    let text = read(path)?;
    let results: Vec<CocoResult> =
        serde_json::from_str(&text).map_err(|source| Error::Parse {
            context: path.display().to_string(),
            source,
        })?;
    attach_detections(results, table, images, MAX_DETS)
}

/// Replaces the detections of every image with `results`, grouped per image
/// and capped to the `max_dets` highest scores.
pub fn attach_detections(
    results: Vec<CocoResult>,
    table: &CategoryTable,
    images: &mut [ImageRecord],
    max_dets: usize,
) -> Result<()> {
    let by_id: HashMap<u64, usize> = images
        .iter()
        .enumerate()
        .map(|(i, img)| (img.image_id, i))
        .collect();
    let mut grouped: Vec<Vec<Detection>> = vec![Vec::new(); images.len()];
    for r in results {
        let &slot = by_id.get(&r.image_id).ok_or(Error::UnknownImage(r.image_id))?;
        let class_idx = table
            .index_of(r.category_id)
            .ok_or(Error::UnknownCategory(r.category_id))?;
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::ScoreOutOfRange {
                image_id: r.image_id,
                score: r.score,
            });
        }
        let det_id = grouped[slot].len();
        grouped[slot].push(Detection {
            bbox: BBox::from_xywh(r.bbox),
            class_idx,
            score: r.score,
            det_id,
        });
    }
    for (img, dets) in images.iter_mut().zip(grouped) {
        img.dets = dets;
        img.cap_detections(max_dets);
    }
    Ok(())
}

/// Detections in results format, images in order and detections by `det_id`.
pub fn to_results(table: &CategoryTable, images: &[ImageRecord]) -> Vec<CocoResult> {
    images
        .iter()
        .flat_map(|img| {
            img.dets.iter().map(move |d| CocoResult {
                image_id: img.image_id,
                category_id: table.category(d.class_idx).id,
                bbox: d.bbox.to_xywh(),
                score: d.score,
            })
        })
        .collect()
}

pub fn write_detections(
    path: impl AsRef<Path>,
    table: &CategoryTable,
    images: &[ImageRecord],
) -> Result<()> {
    let text =
        serde_json::to_string(&to_results(table, images)).map_err(|source| Error::Parse {
            context: "detection output".into(),
            source,
        })?;
    write(path.as_ref(), &text)
}
