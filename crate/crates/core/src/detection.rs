//! Detection evaluation (IoU, all-points AP, mAP@50) and seeded
//! training-set mixing manifests.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::metrics::MetricResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "pedestrian", alias = "Pedestrian")]
    Pedestrian,
    #[serde(rename = "car", alias = "Car")]
    Car,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Pedestrian, Class::Car];

    pub fn name(self) -> &'static str {
        match self {
            Class::Pedestrian => "pedestrian",
            Class::Car => "car",
        }
    }
}

/// Axis-aligned box in pixels. Ground truth carries no confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub class: Class,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64, class: Class, confidence: Option<f64>) -> Result<Self> {
        let b = Self {
            x0,
            y0,
            x1,
            y1,
            class,
            confidence,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("box coordinates must be finite"));
        }
        if self.x1 <= self.x0 || self.y1 <= self.y0 {
            return Err(Error::invalid(format!(
                "box ({}, {}, {}, {}) needs x1 > x0 and y1 > y0",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::invalid(format!("confidence {c} outside [0,1]")));
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let h = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Greedy confidence-ordered matching. Returns the detection indices in rank
/// order with a true-positive flag each. Each detection takes the unmatched
/// ground truth of the same frame and class with the highest IoU.
pub fn greedy_match(dets: &[(&str, &BoundingBox)], gts: &[(&str, &BoundingBox)], iou_thresh: f64) -> Result<Vec<(usize, bool)>> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::invalid(format!("iou threshold {iou_thresh} outside (0,1)")));
    }
    let mut conf = Vec::with_capacity(dets.len());
    for (_, d) in dets {
        conf.push(
            d.confidence
                .ok_or_else(|| Error::invalid("detection without a confidence"))?,
        );
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // stable: equal confidences keep insertion order
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]));

    let mut matched = vec![false; gts.len()];
    let mut out = Vec::with_capacity(dets.len());
    for i in order {
        let (frame, det) = dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, (gframe, gt)) in gts.iter().enumerate() {
            if matched[g] || *gframe != frame || gt.class != det.class {
                continue;
            }
            let o = iou(det, gt);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        let tp = match best {
            Some((g, o)) if o >= iou_thresh => {
                matched[g] = true;
                true
            }
            _ => false,
        };
        out.push((i, tp));
    }
    Ok(out)
}

/// AP over detections and ground truths pooled across frames. Each item is
/// `(frame key, box)`; detections only match ground truth of the same frame
/// and class. Returns `None` when there is neither ground truth nor detection.
pub fn pooled_average_precision(
    dets: &[(&str, &BoundingBox)],
    gts: &[(&str, &BoundingBox)],
    iou_thresh: f64,
) -> Result<Option<f64>> {
    let ranked = greedy_match(dets, gts, iou_thresh)?;
    if gts.is_empty() {
        return Ok(if dets.is_empty() { None } else { Some(0.0) });
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    for (rank, (_, hit)) in ranked.into_iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / gts.len() as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    Ok(Some(all_points_area(&recall, &precision)))
}

/// Area under the monotone precision envelope of a PR curve.
fn all_points_area(recall: &[f64], precision: &[f64]) -> f64 {
    let mut r = Vec::with_capacity(recall.len() + 2);
    let mut p = Vec::with_capacity(recall.len() + 2);
    r.push(0.0);
    p.push(0.0);
    r.extend_from_slice(recall);
    p.extend_from_slice(precision);
    r.push(1.0);
    p.push(0.0);
    for i in (0..p.len() - 1).rev() {
        p[i] = p[i].max(p[i + 1]);
    }
    (1..r.len())
        .filter(|&i| r[i] != r[i - 1])
        .map(|i| (r[i] - r[i - 1]) * p[i])
        .sum()
}

/// AP for one frame's detections against its ground truth.
pub fn average_precision(dets: &[BoundingBox], gts: &[BoundingBox], iou_thresh: f64) -> Result<Option<f64>> {
    let d: Vec<(&str, &BoundingBox)> = dets.iter().map(|b| ("", b)).collect();
    let g: Vec<(&str, &BoundingBox)> = gts.iter().map(|b| ("", b)).collect();
    pooled_average_precision(&d, &g, iou_thresh)
}

pub type FrameBoxes = BTreeMap<String, Vec<BoundingBox>>;

/// Mean over `classes` of the per-class AP pooled over frames. Classes with
/// neither ground truth nor detections are left out of the mean.
pub fn map_at(dets_by_frame: &FrameBoxes, gts_by_frame: &FrameBoxes, classes: &[Class], iou_thresh: f64) -> Result<MetricResult> {
    let mut per_class = BTreeMap::new();
    let mut any_gt = false;
    for &class in classes {
        let pick = |m: &'_ FrameBoxes| -> Vec<(String, BoundingBox)> {
            m.iter()
                .flat_map(|(f, bs)| bs.iter().filter(|b| b.class == class).map(move |b| (f.clone(), *b)))
                .collect()
        };
        let (d, g) = (pick(dets_by_frame), pick(gts_by_frame));
        any_gt |= !g.is_empty();
        let dr: Vec<(&str, &BoundingBox)> = d.iter().map(|(f, b)| (f.as_str(), b)).collect();
        let gr: Vec<(&str, &BoundingBox)> = g.iter().map(|(f, b)| (f.as_str(), b)).collect();
        if let Some(ap) = pooled_average_precision(&dr, &gr, iou_thresh)? {
            per_class.insert(class.name().to_string(), ap);
        }
    }
    if !any_gt {
        return Err(Error::invalid("no evaluated class has any ground truth"));
    }
    let value = per_class.values().sum::<f64>() / per_class.len() as f64;
    let mut result = MetricResult::new(format!("map@{}", (iou_thresh * 100.0).round()), value)
        .with_meta("iou_threshold", iou_thresh);
    for (name, ap) in per_class {
        result = result.with_meta(&format!("ap_{name}"), ap);
    }
    Ok(result)
}

pub fn map_at_50(dets_by_frame: &FrameBoxes, gts_by_frame: &FrameBoxes, classes: &[Class]) -> Result<MetricResult> {
    map_at(dets_by_frame, gts_by_frame, classes, 0.5)
}

/// One line of a detection or ground-truth JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub frame_id: String,
    #[serde(flatten)]
    pub bbox: BoundingBox,
}

pub fn read_boxes(path: &Path) -> Result<FrameBoxes> {
    let records: Vec<BoxRecord> = read_jsonl(path)?;
    let mut frames = FrameBoxes::new();
    for (i, r) in records.into_iter().enumerate() {
        r.bbox.validate().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        frames.entry(r.frame_id).or_default().push(r.bbox);
    }
    Ok(frames)
}

pub fn write_boxes(path: &Path, frames: &FrameBoxes) -> Result<()> {
    let records: Vec<BoxRecord> = frames
        .iter()
        .flat_map(|(f, bs)| bs.iter().map(|b| BoxRecord { frame_id: f.clone(), bbox: *b }))
        .collect();
    write_jsonl(path, &records)
}

/// Parses one KITTI label file (`type trunc occ alpha x0 y0 x1 y1 h w l x y z ry [score]`).
/// Only `Pedestrian` and `Car` rows are kept; a 16th column becomes the confidence.
pub fn parse_kitti_labels(text: &str, path: &str) -> Result<Vec<BoundingBox>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            msg,
        };
        if fields.len() < 15 {
            return Err(err(format!("expected at least 15 fields, found {}", fields.len())));
        }
        let class = match fields[0] {
            "Pedestrian" => Class::Pedestrian,
            "Car" => Class::Car,
            _ => continue,
        };
        let num = |k: usize| fields[k].parse::<f64>().map_err(|_| err(format!("bad number '{}'", fields[k])));
        let confidence = if fields.len() > 15 { Some(num(15)?.clamp(0.0, 1.0)) } else { None };
        out.push(BoundingBox::new(num(4)?, num(5)?, num(6)?, num(7)?, class, confidence).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

/// Reads every `<frame_id>.txt` in a KITTI label directory.
pub fn load_kitti_dir(dir: &Path) -> Result<FrameBoxes> {
    let mut frames = FrameBoxes::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let frame = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            frames.insert(frame, parse_kitti_labels(&text, &path.display().to_string())?);
        }
    }
    Ok(frames)
}

/// Training data source; declaration order is the concatenation order of mixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    Synthetic,
    #[serde(rename = "KITTI")]
    Kitti,
    #[serde(rename = "BDD100K")]
    Bdd100k,
    #[serde(rename = "A2D2")]
    A2d2,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Synthetic => "Synthetic",
            Source::Kitti => "KITTI",
            Source::Bdd100k => "BDD100K",
            Source::A2d2 => "A2D2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub source: Source,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    composition: BTreeMap<Source, usize>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        let mut composition = BTreeMap::new();
        for e in &entries {
            if !seen.insert(e.frame_id.as_str()) {
                return Err(Error::invalid(format!("duplicate frame_id {}", e.frame_id)));
            }
            *composition.entry(e.source).or_insert(0) += 1;
        }
        Ok(Self { entries, composition })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn composition(&self) -> &BTreeMap<Source, usize> {
        &self.composition
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(read_jsonl(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub counts: BTreeMap<Source, usize>,
    #[serde(default)]
    pub seed: u64,
    /// Source manifests for file-driven mixing, relative to the spec file.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sources: BTreeMap<Source, PathBuf>,
}

impl MixSpec {
    pub fn new(counts: &[(Source, usize)], seed: u64) -> Self {
        Self {
            counts: counts.iter().copied().collect(),
            seed,
            sources: BTreeMap::new(),
        }
    }

    /// Frame counts of the 2D training compositions: "1", "2", "3", "3+",
    /// "3++", "4", "4++".
    pub fn preset_2d(name: &str, seed: u64) -> Result<Self> {
        use Source::*;
        let counts: &[(Source, usize)] = match name {
            "1" => &[(Synthetic, 6000)],
            "2" => &[(Kitti, 6000)],
            "3" => &[(Synthetic, 2000), (Kitti, 6000)],
            "3+" => &[(Synthetic, 4000), (Kitti, 6000)],
            "3++" => &[(Synthetic, 6000), (Kitti, 6000)],
            "4" => &[(Bdd100k, 6000)],
            "4++" => &[(Synthetic, 6000), (Bdd100k, 6000)],
            other => return Err(Error::invalid(format!("unknown 2D composition '{other}'"))),
        };
        Ok(Self::new(counts, seed))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Seeded sampling without replacement from each source, concatenated in
/// source order. Each source draws from its own stream of the spec seed.
pub fn build_mix(sources: &BTreeMap<Source, DatasetManifest>, spec: &MixSpec) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (&source, &count) in &spec.counts {
        if count == 0 {
            continue;
        }
        let pool: Vec<&ManifestEntry> = sources
            .get(&source)
            .map(|m| m.entries().iter().filter(|e| e.source == source).collect())
            .unwrap_or_default();
        if count > pool.len() {
            return Err(Error::Capacity {
                source_name: source.name().to_string(),
                requested: count,
                available: pool.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(source as u64);
        let mut picked = rand::seq::index::sample(&mut rng, pool.len(), count).into_vec();
        picked.sort_unstable();
        entries.extend(picked.into_iter().map(|i| pool[i].clone()));
    }
    DatasetManifest::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64, conf: Option<f64>) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1, Class::Pedestrian, conf).unwrap()
    }

    fn source_manifest(source: Source, n: usize) -> DatasetManifest {
        DatasetManifest::new(
            (0..n)
                .map(|i| ManifestEntry {
                    frame_id: format!("{}-{i:05}", source.name()),
                    source,
                    uri: format!("{}/{i:05}.png", source.name()),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = bx(0.0, 0.0, 2.0, 2.0, None);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 6.0, 6.0, None)), 0.0);
        assert!((iou(&a, &bx(1.0, 0.0, 3.0, 2.0, None)) - 1.0 / 3.0).abs() < 1e-15);
        assert!(BoundingBox::new(1.0, 0.0, 1.0, 2.0, Class::Car, None).is_err());
    }

    #[test]
    fn ap_hand_cases() {
        let gt = [bx(0.0, 0.0, 10.0, 10.0, None)];
        assert_eq!(average_precision(&[bx(0.0, 0.0, 10.0, 10.0, Some(0.9))], &gt, 0.5).unwrap(), Some(1.0));
        let dets = [bx(50.0, 50.0, 60.0, 60.0, Some(0.9)), bx(0.0, 0.0, 10.0, 10.0, Some(0.8))];
        assert_eq!(average_precision(&dets, &gt, 0.5).unwrap(), Some(0.5));
        assert_eq!(average_precision(&[], &gt, 0.5).unwrap(), Some(0.0));
        assert_eq!(average_precision(&dets, &[], 0.5).unwrap(), Some(0.0));
        assert_eq!(average_precision(&[], &[], 0.5).unwrap(), None);
        assert!(average_precision(&[bx(0.0, 0.0, 1.0, 1.0, None)], &gt, 0.5).is_err());
    }

    #[test]
    fn map_cases() {
        let gt: FrameBoxes = BTreeMap::from([(
            "f0".to_string(),
            vec![
                bx(0.0, 0.0, 10.0, 10.0, None),
                BoundingBox::new(20.0, 20.0, 40.0, 30.0, Class::Car, None).unwrap(),
            ],
        )]);
        let perfect: FrameBoxes = gt
            .iter()
            .map(|(f, bs)| (f.clone(), bs.iter().map(|b| BoundingBox { confidence: Some(0.7), ..*b }).collect()))
            .collect();
        assert_eq!(map_at_50(&perfect, &gt, &Class::ALL).unwrap().value, 1.0);
        let mut half = perfect.clone();
        half.get_mut("f0").unwrap()[1] = BoundingBox::new(100.0, 100.0, 110.0, 110.0, Class::Car, Some(0.9)).unwrap();
        assert_eq!(map_at_50(&half, &gt, &Class::ALL).unwrap().value, 0.5);
        assert!(map_at_50(&perfect, &FrameBoxes::new(), &Class::ALL).is_err());
    }

    #[test]
    fn kitti_adapter() {
        let text = "Pedestrian 0.00 0 -0.20 712.40 143.00 810.73 307.92 1.89 0.48 1.20 1.84 1.47 8.41 0.01\n\
                    DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n\
                    Car 0.0 0 1.0 10 20 30 40 1 1 1 1 1 1 0 0.75\n";
        let boxes = parse_kitti_labels(text, "000000.txt").unwrap();
        assert_eq!(boxes.len(), 2);
        assert_eq!(boxes[0].class, Class::Pedestrian);
        assert_eq!(boxes[0].x1, 810.73);
        assert_eq!(boxes[1].confidence, Some(0.75));
        assert!(matches!(parse_kitti_labels("Car 1 2\n", "x.txt"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn mix_plus_plus() {
        let sources = BTreeMap::from([
            (Source::Synthetic, source_manifest(Source::Synthetic, 8000)),
            (Source::Kitti, source_manifest(Source::Kitti, 6000)),
        ]);
        let spec = MixSpec::preset_2d("3++", 4).unwrap();
        let mix = build_mix(&sources, &spec).unwrap();
        assert_eq!(mix.len(), 12000);
        assert_eq!(mix.composition(), &BTreeMap::from([(Source::Synthetic, 6000), (Source::Kitti, 6000)]));
        assert_eq!(mix, build_mix(&sources, &spec).unwrap());
        assert_eq!(mix.entries()[0].source, Source::Synthetic);
        let over = MixSpec::new(&[(Source::Kitti, 7000)], 0);
        match build_mix(&sources, &over) {
            Err(Error::Capacity { source_name, .. }) => assert_eq!(source_name, "KITTI"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn box_jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.jsonl");
        let frames: FrameBoxes = BTreeMap::from([("a".to_string(), vec![bx(1.0, 2.0, 3.0, 4.0, Some(0.5))])]);
        write_boxes(&p, &frames).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "{\"frame_id\":\"a\",\"x0\":1.0,\"y0\":2.0,\"x1\":3.0,\"y1\":4.0,\"class\":\"pedestrian\",\"confidence\":0.5}\n");
        assert_eq!(read_boxes(&p).unwrap(), frames);
    }
}
