//! Scored 2D detection priors: the file boundary to any external detector, and
//! a ground-truth-driven oracle that stands in for one during experiments.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::harness::SceneGroundTruth;
use crate::observation::BoundingBox;

/// One scored box for one object class.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class_id: String,
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Every box the detector produced for an image, unfiltered and in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
    pub width: u32,
    pub height: u32,
}

/// Wire format of one detection row.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRow {
    pub class: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub score: f64,
}

impl DetectionRow {
    fn into_detection(self, row: usize) -> Result<Detection> {
        let err = |msg: String| Error::DetectionSchema { row, msg };
        if !(0.0..=1.0).contains(&self.score) {
            return Err(err(format!("score {} outside [0, 1]", self.score)));
        }
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(err("non-finite coordinate".into()));
        }
        // Fractional boxes expand to the pixels they touch.
        let bbox = BoundingBox::new(
            self.x_min.floor() as i64,
            self.y_min.floor() as i64,
            self.x_max.ceil() as i64,
            self.y_max.ceil() as i64,
        );
        if bbox.x_min >= bbox.x_max || bbox.y_min >= bbox.y_max {
            return Err(err(format!("degenerate box {coords:?}")));
        }
        Ok(Detection { class_id: self.class, bbox, score: self.score })
    }
}

impl From<&Detection> for DetectionRow {
    fn from(d: &Detection) -> Self {
        DetectionRow {
            class: d.class_id.clone(),
            x_min: d.bbox.x_min as f64,
            y_min: d.bbox.y_min as f64,
            x_max: d.bbox.x_max as f64,
            y_max: d.bbox.y_max as f64,
            score: d.score,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionFile {
    width: u32,
    height: u32,
    detections: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyDetectionFile {
    WithSize(DetectionFile),
    Bare(Vec<serde_json::Value>),
}

impl DetectionSet {
    pub fn new(width: u32, height: u32) -> Self {
        DetectionSet { detections: Vec::new(), width, height }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    /// Indices of the detections of `class_id`, in file order.
    pub fn indices_of<'a>(&'a self, class_id: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.detections.iter().enumerate().filter(move |(_, d)| d.class_id == class_id).map(|(i, _)| i)
    }

    /// Parses either `{"width", "height", "detections": [...]}` or a bare
    /// list of rows. Image size is 0x0 when the file does not state it.
    pub fn parse(text: &str) -> Result<Self> {
        let (width, height, rows) = match serde_json::from_str::<AnyDetectionFile>(text)? {
            AnyDetectionFile::WithSize(f) => (f.width, f.height, f.detections),
            AnyDetectionFile::Bare(rows) => (0, 0, rows),
        };
        let detections = rows
            .into_iter()
            .enumerate()
            .map(|(row, value)| {
                let parsed: DetectionRow =
                    serde_json::from_value(value).map_err(|e| Error::DetectionSchema { row, msg: e.to_string() })?;
                parsed.into_detection(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DetectionSet { detections, width, height })
    }

    pub fn to_json(&self) -> String {
        let file = DetectionFile {
            width: self.width,
            height: self.height,
            detections: self
                .detections
                .iter()
                .map(|d| serde_json::to_value(DetectionRow::from(d)).expect("rows serialize"))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("detections serialize")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(io_err(path))
    }
}

pub fn load_detections(path: &Path) -> Result<DetectionSet> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    DetectionSet::parse(&text)
}

/// Corruption applied by the oracle detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionNoiseConfig {
    /// Gaussian std of each box edge, pixels.
    pub jitter_px: f64,
    /// Probability that a true box is dropped.
    pub false_negative_rate: f64,
    /// Expected number of spurious boxes per visible object. The integer part
    /// is always emitted; the fraction is a Bernoulli draw.
    pub false_positive_rate: f64,
    /// Score range for true boxes (uniform).
    pub score_range: [f64; 2],
    /// Score range for spurious boxes (uniform).
    pub spurious_score_range: [f64; 2],
}

impl Default for DetectionNoiseConfig {
    fn default() -> Self {
        DetectionNoiseConfig {
            jitter_px: 0.0,
            false_negative_rate: 0.0,
            false_positive_rate: 0.0,
            score_range: [1.0, 1.0],
            spurious_score_range: [0.3, 0.9],
        }
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Oracle detections derived from ground truth: the tight box around each
/// object's visible pixels, corrupted per `noise`. Objects with no visible
/// pixel produce no box. Spurious boxes cover 1%-25% of the frame and take
/// the class of the object they were drawn for.
pub fn synth_detections(gt: &SceneGroundTruth, noise: &DetectionNoiseConfig, seed: u64) -> DetectionSet {
    let (w, h) = (gt.camera.width, gt.camera.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DetectionSet::new(w, h);
    let mut spurious = Vec::new();

    for (index, object) in gt.objects.iter().enumerate() {
        let Some(tight) = gt.visible_box(index) else { continue };
        // Draw every random quantity up front so the stream layout does not
        // depend on which branches fire.
        let jitter: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let dropped = rng.random::<f64>() < noise.false_negative_rate;
        let score = uniform_in(&mut rng, noise.score_range).clamp(0.0, 1.0);
        let whole = noise.false_positive_rate.floor() as usize;
        let extra = rng.random::<f64>() < noise.false_positive_rate.fract();

        if !dropped {
            let j = |v: i64, k: usize| v + (jitter[k] * noise.jitter_px).round() as i64;
            let mut b = BoundingBox::new(j(tight.x_min, 0), j(tight.y_min, 1), j(tight.x_max, 2), j(tight.y_max, 3));
            if b.x_max <= b.x_min {
                b.x_max = b.x_min + 1;
            }
            if b.y_max <= b.y_min {
                b.y_max = b.y_min + 1;
            }
            if let Ok(bbox) = b.clamped(w, h) {
                out.detections.push(Detection { class_id: object.class_id.clone(), bbox, score });
            }
        }
        for _ in 0..whole + extra as usize {
            spurious.push(object.class_id.clone());
        }
    }

    let frame = w as f64 * h as f64;
    for class_id in spurious {
        let area = rng.random_range(0.01..0.25) * frame;
        let aspect: f64 = rng.random_range(0.5f64..2.0);
        let bw = ((area * aspect).sqrt().round() as i64).clamp(1, w as i64);
        let bh = ((area / aspect).sqrt().round() as i64).clamp(1, h as i64);
        let x0 = rng.random_range(0..=(w as i64 - bw));
        let y0 = rng.random_range(0..=(h as i64 - bh));
        let score = uniform_in(&mut rng, noise.spurious_score_range).clamp(0.0, 1.0);
        out.detections.push(Detection { class_id, bbox: BoundingBox::new(x0, y0, x0 + bw, y0 + bh), score });
    }
    out
}
