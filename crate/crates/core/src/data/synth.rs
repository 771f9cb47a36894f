use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::image::write_png;
use super::manifest::{write_manifest, Attribute, AttributeSchema, DatasetManifest, Record, Split};

/// Name of the single protected attribute of synthetic data.
pub const SYNTH_ATTRIBUTE: &str = "group";

/// Biased synthetic expression dataset.
///
/// The expression label sets the brightness of a disc at a random position;
/// the attribute sets the background level. Training attributes follow the
/// label's stereotype value with probability `rho`; the test split is
/// generated with `rho = 1 / num_attr_values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    pub resolution: [usize; 3],
    pub num_classes: usize,
    pub num_attr_values: usize,
    pub rho: f64,
    /// Per-pixel Gaussian noise deviation.
    pub noise: f64,
    pub seed: u64,
    /// Disc diameter as a fraction of the image height.
    pub blob_fraction: f64,
    /// Half-width of the uniform jitter on the disc level.
    pub level_jitter: f64,
    /// Background difference between the first and last attribute value.
    pub background_contrast: f64,
    /// Half-width of the uniform jitter on the background level.
    pub background_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_samples: 2000,
            test_samples: 1000,
            resolution: [1, 32, 32],
            num_classes: 4,
            num_attr_values: 2,
            rho: 0.9,
            noise: 0.05,
            seed: 0,
            blob_fraction: 0.5,
            level_jitter: 0.1,
            background_contrast: 0.08,
            background_jitter: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: String| Err(Error::config(format!("synth.{f}"), m));
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho", format!("{} not in [0, 1]", self.rho));
        }
        if self.num_classes < 2 {
            return bad("num_classes", "need at least 2".into());
        }
        if self.num_attr_values < 2 {
            return bad("num_attr_values", "need at least 2".into());
        }
        if self.num_attr_values > self.num_classes {
            return bad("num_attr_values", "cannot exceed num_classes (every value needs a stereotyped class)".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise", format!("{} must be >= 0", self.noise));
        }
        let [c, h, w] = self.resolution;
        if c == 0 || h < 4 || w < 4 || !(c == 1 || c == 3) {
            return bad("resolution", format!("{:?}: need 1 or 3 channels and at least 4x4", self.resolution));
        }
        if !(self.blob_fraction > 0.0 && self.blob_fraction < 1.0) {
            return bad("blob_fraction", format!("{} not in (0, 1)", self.blob_fraction));
        }
        for (f, v) in [
            ("level_jitter", self.level_jitter),
            ("background_contrast", self.background_contrast),
            ("background_jitter", self.background_jitter),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(f, format!("{v} not in [0, 1]"));
            }
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            return bad("train_samples", "both splits need at least one sample".into());
        }
        Ok(())
    }

    /// Attribute value stereotypically paired with `class`: the first
    /// `K_expr - K_attr + 1` classes share value 0, the rest map one-to-one
    /// onto the remaining values.
    pub fn stereotype(&self, class: usize) -> usize {
        let shared = self.num_classes - (self.num_attr_values - 1);
        if class < shared {
            0
        } else {
            class - (self.num_classes - self.num_attr_values)
        }
    }

    pub fn schema(&self) -> AttributeSchema {
        AttributeSchema {
            attributes: vec![Attribute {
                name: SYNTH_ATTRIBUTE.into(),
                values: (0..self.num_attr_values).map(|v| format!("g{v}")).collect(),
            }],
        }
    }
}

/// One generated image with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub pixels: Tensor<f64>,
    pub expression: usize,
    pub attr: usize,
}

/// Draw `n` samples with attribute/label correlation `rho`.
pub fn synth_samples(cfg: &SynthConfig, n: usize, rho: f64, rng: &mut ChaCha8Rng) -> Vec<SynthSample> {
    let [c, h, w] = cfg.resolution;
    let (k, ka) = (cfg.num_classes, cfg.num_attr_values);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("finite deviation");
    let diameter = ((cfg.blob_fraction * h.min(w) as f64).round() as usize).clamp(1, h.min(w) - 2);
    let r = diameter as f64 / 2.0;
    (0..n)
        .map(|_| {
            let class = rng.random_range(0..k);
            let s = cfg.stereotype(class);
            let attr = if rng.random::<f64>() < rho {
                s
            } else {
                let other = rng.random_range(0..ka - 1);
                if other >= s { other + 1 } else { other }
            };
            let bg = 0.5 - cfg.background_contrast / 2.0
                + cfg.background_contrast * attr as f64 / (ka - 1) as f64
                + jitter(rng, cfg.background_jitter);
            let level = 0.05 + 0.9 * class as f64 / (k - 1) as f64 + jitter(rng, cfg.level_jitter);
            let oy = rng.random_range(1..h - diameter) as f64;
            let ox = rng.random_range(1..w - diameter) as f64;
            let (cy, cx) = (oy + r, ox + r);
            let mut plane = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    let base = if dy * dy + dx * dx <= r * r { level } else { bg };
                    let eps = if cfg.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                    plane[y * w + x] = (base + eps).clamp(0.0, 1.0);
                }
            }
            let data = plane.iter().cycle().take(c * h * w).copied().collect();
            SynthSample {
                pixels: Tensor::from_vec(&[c, h, w], data).expect("sized above"),
                expression: class,
                attr,
            }
        })
        .collect()
}

fn jitter(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

/// Both generated splits and where they were written.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

/// Write `train/` and `test/` PNG folders plus `train.json` and `test.json`
/// under `out_dir`. Identical configs produce identical bytes.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unbiased = 1.0 / cfg.num_attr_values as f64;
    let mut write_split = |split: Split, n: usize, rho: f64| -> Result<(DatasetManifest, PathBuf)> {
        let dir = out_dir.join(split.as_str());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let samples = synth_samples(cfg, n, rho, &mut rng);
        let width = n.to_string().len().max(5);
        let mut records = Vec::with_capacity(n);
        for (i, s) in samples.iter().enumerate() {
            let rel = format!("{}/{:0width$}.png", split.as_str(), i, width = width);
            write_png(&out_dir.join(&rel), &s.pixels)?;
            records.push(Record {
                path: rel,
                expression: s.expression,
                attrs: [(SYNTH_ATTRIBUTE.to_string(), format!("g{}", s.attr))].into_iter().collect(),
            });
        }
        let m = DatasetManifest::new(cfg.schema(), cfg.resolution, cfg.num_classes, split, records)?;
        let path = out_dir.join(format!("{}.json", split.as_str()));
        write_manifest(&m, &path)?;
        Ok((m, path))
    };
    let (train, train_manifest) = write_split(Split::Train, cfg.train_samples, cfg.rho)?;
    let (test, test_manifest) = write_split(Split::Test, cfg.test_samples, unbiased)?;
    Ok(SynthOutput {
        train,
        test,
        train_manifest,
        test_manifest,
    })
}
