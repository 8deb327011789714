//! Attribute-direction learning with a linear soft-margin SVM.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{Generator, LatentSample};
use crate::jsonl::read_jsonl;
use crate::latent::{signed_distance, AttributeDirection, LatentVec, Space, TrainMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLatentSet {
    pub vectors: Vec<LatentVec>,
    /// `true` for the attribute-present class (+1).
    pub labels: Vec<bool>,
    pub attribute_name: String,
}

impl LabeledLatentSet {
    pub fn new(vectors: Vec<LatentVec>, labels: Vec<bool>, attribute_name: impl Into<String>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::invalid("vectors and labels differ in length"));
        }
        if vectors.len() < 2 {
            return Err(Error::invalid("need at least two labeled vectors"));
        }
        let dim = vectors[0].dim();
        for v in &vectors {
            v.expect_dim(dim, "labeled set")?;
        }
        Ok(Self {
            vectors,
            labels,
            attribute_name: attribute_name.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub regularization_c: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            regularization_c: 1e-5,
            epochs: 50,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.regularization_c > 0.0 && self.regularization_c.is_finite()) {
            return Err(Error::invalid("regularization_c must be > 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Minimizes `lambda/2 |w|^2 + mean(hinge(y (w.x + b)))` with `lambda = 1/(C n)`
/// by per-sample subgradient steps in a seeded shuffled order. The returned
/// hyperplane is the average of the iterates over the second half of training.
pub fn train_linear_svm(data: &LabeledLatentSet, cfg: &SvmConfig) -> Result<AttributeDirection> {
    cfg.validate()?;
    let n = data.vectors.len();
    let positives = data.labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::DegenerateData(format!(
            "attribute {} has a single class in {n} samples",
            data.attribute_name
        )));
    }
    let dim = data.dim();
    let lambda = 1.0 / (cfg.regularization_c * n as f64);
    let ys: Vec<f64> = data.labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    // train on centred inputs; the centre is folded back into the offset
    let mut centre = vec![0.0; dim];
    for v in &data.vectors {
        for (c, x) in centre.iter_mut().zip(v.values()) {
            *c += x;
        }
    }
    centre.iter_mut().for_each(|c| *c /= n as f64);
    let centred: Vec<Vec<f64>> = data
        .vectors
        .iter()
        .map(|v| v.values().iter().zip(&centre).map(|(x, c)| x - c).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    // w is stored as scale * weights so the shrink step is O(1)
    let mut scale = 1.0;
    let mut avg_w = vec![0.0; dim];
    let mut avg_b = 0.0;
    let mut averaged = 0usize;
    let average_from = cfg.epochs / 2;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            step += 1;
            let eta = cfg.learning_rate / (1.0 + cfg.learning_rate * lambda * step as f64);
            let x = &centred[i];
            let score = scale * dot(&weights, x) + bias;
            scale *= 1.0 - eta * lambda;
            if ys[i] * score < 1.0 {
                let g = eta * ys[i] / scale;
                for (w, xv) in weights.iter_mut().zip(x) {
                    *w += g * xv;
                }
                bias += eta * ys[i];
            }
            if scale < 1e-9 {
                for w in weights.iter_mut() {
                    *w *= scale;
                }
                scale = 1.0;
            }
            if epoch >= average_from {
                for (a, w) in avg_w.iter_mut().zip(&weights) {
                    *a += scale * w;
                }
                avg_b += bias;
                averaged += 1;
            }
        }
    }
    let inv = 1.0 / averaged as f64;
    let mut final_w: Vec<f64> = avg_w.iter().map(|v| v * inv).collect();
    let weight_norm = dot(&final_w, &final_w).sqrt();
    if !(weight_norm.is_finite() && weight_norm > 0.0) {
        return Err(Error::DegenerateData("svm weights collapsed to zero".into()));
    }
    let mut svm_offset = (avg_b * inv - dot(&final_w, &centre)) / weight_norm;

    // orient so the positive class sits on the positive side on average
    let projections: Vec<f64> = data.vectors.iter().map(|v| dot(&final_w, v.values()) / weight_norm).collect();
    let gap: f64 = projections.iter().zip(&ys).map(|(p, y)| (p + svm_offset) * y).sum();
    let sign = if gap < 0.0 { -1.0 } else { 1.0 };
    final_w.iter_mut().for_each(|v| *v *= sign);
    svm_offset *= sign;
    let projections: Vec<f64> = projections.iter().map(|p| p * sign).collect();
    let offset = calibrate_offset(&projections, &data.labels, svm_offset);

    let mut direction = AttributeDirection::from_weights(
        &final_w,
        offset * weight_norm,
        data.attribute_name.clone(),
        TrainMeta {
            n_samples: n,
            accuracy: 0.0,
            weight_norm: Some(weight_norm),
        },
    )?;
    let distances = batch_signed_distances(&data.vectors, &direction)?;
    let correct = distances
        .iter()
        .zip(&data.labels)
        .filter(|(d, &l)| (**d > 0.0) == l)
        .count();
    direction.train_meta.accuracy = correct as f64 / n as f64;
    Ok(direction)
}

/// Offset `b` for the decision rule `p + b > 0` over fixed projections `p`:
/// the split between consecutive sorted projections with the most correct
/// training decisions, ties resolved toward the optimizer's own offset.
fn calibrate_offset(projections: &[f64], labels: &[bool], svm_offset: f64) -> f64 {
    let mut order: Vec<usize> = (0..projections.len()).collect();
    order.sort_by(|&a, &b| projections[a].total_cmp(&projections[b]));
    // threshold below everything: all predicted positive
    let mut correct = labels.iter().filter(|&&l| l).count() as i64;
    let lowest = projections[order[0]] - 1.0;
    let mut best = (correct, (lowest + svm_offset).abs(), lowest);
    for (k, &i) in order.iter().enumerate() {
        correct += if labels[i] { -1 } else { 1 };
        let p = projections[i];
        let next = order.get(k + 1).map(|&j| projections[j]);
        if next == Some(p) {
            continue;
        }
        let threshold = next.map_or(p + 1.0, |q| 0.5 * (p + q));
        let dist = (threshold + svm_offset).abs();
        if correct > best.0 || (correct == best.0 && dist < best.1) {
            best = (correct, dist, threshold);
        }
    }
    -best.2
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn batch_signed_distances(vectors: &[LatentVec], d: &AttributeDirection) -> Result<Vec<f64>> {
    vectors.iter().map(|w| signed_distance(w, d)).collect()
}

/// Binary annotator consulted once per generated sample, in sample order.
pub trait LabelProvider {
    fn label(&mut self, generator: &Generator, sample: &LatentSample, attribute: &str) -> Result<bool>;
}

/// Labels by the side of a known hyperplane, optionally flipping a seeded
/// fraction of labels.
pub struct PlantedLabels {
    normal: Vec<f64>,
    bias: f64,
    flip_rate: f64,
    rng: ChaCha8Rng,
}

impl PlantedLabels {
    pub fn new(normal: Vec<f64>, bias: f64, flip_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip_rate) {
            return Err(Error::invalid("flip_rate outside [0,1]"));
        }
        Ok(Self {
            normal,
            bias,
            flip_rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl LabelProvider for PlantedLabels {
    fn label(&mut self, _g: &Generator, sample: &LatentSample, _attr: &str) -> Result<bool> {
        sample.w.expect_dim(self.normal.len(), "planted labels")?;
        let side = sample.w.dot(&self.normal) + self.bias > 0.0;
        let flip = self.rng.random::<f64>() < self.flip_rate;
        Ok(side ^ flip)
    }
}

/// Labels looked up by sample id from a labeled-set file.
pub struct FileLabels {
    labels: BTreeMap<String, BTreeMap<String, u8>>,
}

impl FileLabels {
    pub fn load(path: &Path) -> Result<Self> {
        let labels = read_jsonl::<LabelRecord>(path)?
            .into_iter()
            .map(|r| (sample_id_from_path(&r.lvec_path), r.labels))
            .collect();
        Ok(Self { labels })
    }
}

impl LabelProvider for FileLabels {
    fn label(&mut self, _g: &Generator, sample: &LatentSample, attr: &str) -> Result<bool> {
        let v = self
            .labels
            .get(&sample.sample_id)
            .and_then(|m| m.get(attr))
            .ok_or_else(|| Error::LookupMiss(format!("no {attr} label for {}", sample.sample_id)))?;
        label_from_int(*v)
    }
}

/// One line of a labeled-set file; labels are 0/1 per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub lvec_path: String,
    pub labels: BTreeMap<String, u8>,
}

fn label_from_int(v: u8) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::Format(format!("label must be 0 or 1, got {other}"))),
    }
}

fn sample_id_from_path(p: &str) -> String {
    let name = Path::new(p)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}

/// Reads the first `limit` records (all when `None`) of a labeled-set file
/// for one attribute. LVEC paths resolve relative to the file's directory.
pub fn load_labeled_set(path: &Path, attribute: &str, limit: Option<usize>) -> Result<LabeledLatentSet> {
    let root = path.parent().unwrap_or(Path::new("."));
    let records = read_jsonl::<LabelRecord>(path)?;
    let take = limit.unwrap_or(records.len()).min(records.len());
    let mut vectors = Vec::with_capacity(take);
    let mut labels = Vec::with_capacity(take);
    for r in records.into_iter().take(take) {
        let v = r
            .labels
            .get(attribute)
            .ok_or_else(|| Error::LookupMiss(format!("{} has no {attribute} label", r.lvec_path)))?;
        labels.push(label_from_int(*v)?);
        let w = LatentVec::load(&root.join(&r.lvec_path))?;
        w.expect_space(Space::W, &r.lvec_path)?;
        vectors.push(w);
    }
    LabeledLatentSet::new(vectors, labels, attribute)
}

/// Sample `n` latents from the generator (seeded by `cfg.seed`), label them,
/// and train one direction for `attribute`.
pub fn learn_direction_pipeline(
    generator: &Generator,
    labels_source: &mut dyn LabelProvider,
    n: usize,
    attribute: &str,
    cfg: &SvmConfig,
) -> Result<AttributeDirection> {
    if n < 2 {
        return Err(Error::invalid("learn_direction_pipeline needs n >= 2"));
    }
    let samples = generator.sample_latents(n, cfg.seed)?;
    let mut labels = Vec::with_capacity(n);
    for s in &samples {
        labels.push(labels_source.label(generator, s, attribute)?);
    }
    let vectors = samples.into_iter().map(|s| s.w).collect();
    train_linear_svm(&LabeledLatentSet::new(vectors, labels, attribute)?, cfg)
}
