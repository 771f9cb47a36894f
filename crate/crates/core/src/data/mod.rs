//! Manifests, images, augmentation, balanced batching and the synthetic
//! biased dataset.

mod augment;
mod batches;
mod image;
mod manifest;
mod synth;

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use augment::{augment, augment_pixels, hflip, rotate, ImageSample, FLIP_PROBABILITY, MAX_ROTATION_DEG};
pub use batches::{balanced_batches, BalancedBatcher};
pub use image::{read_png, write_png};
pub use manifest::{
    load_manifest, write_manifest, Attribute, AttributeSchema, DatasetManifest, Record, Split, PRODUCT_SEPARATOR,
};
pub use synth::{synth_generate, synth_samples, SynthConfig, SynthOutput, SynthSample, SYNTH_ATTRIBUTE};

/// Decoded images of a manifest with labels and one attribute's value indices.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub manifest: DatasetManifest,
    /// `[N, C, H, W]`.
    pub pixels: Tensor<T>,
    pub labels: Vec<usize>,
    pub attribute: Attribute,
    pub groups: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    /// Decode every record's image, resolving locators against `base_dir`.
    pub fn load(manifest: &DatasetManifest, base_dir: &Path, attribute: &str) -> Result<Self> {
        let attr = manifest.resolve_attribute(attribute)?;
        let groups = manifest.attribute_indices(attribute)?;
        let [c, h, w] = manifest.resolution;
        let mut data = Vec::with_capacity(manifest.len() * c * h * w);
        for r in &manifest.records {
            let img = read_png::<T>(&base_dir.join(&r.path))?;
            if img.shape() != manifest.resolution {
                return Err(Error::Schema {
                    record: r.path.clone(),
                    field: "pixels".into(),
                    message: format!("image is {:?}, manifest declares {:?}", img.shape(), manifest.resolution),
                });
            }
            data.extend_from_slice(img.data());
        }
        Ok(Dataset {
            pixels: Tensor::from_vec(&[manifest.len(), c, h, w], data)?,
            labels: manifest.records.iter().map(|r| r.expression).collect(),
            attribute: attr,
            groups,
            manifest: manifest.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `rows` as a new dataset (order kept as given).
    pub fn select(&self, rows: &[usize]) -> Dataset<T> {
        Dataset {
            manifest: DatasetManifest {
                records: rows.iter().map(|&i| self.manifest.records[i].clone()).collect(),
                ..self.manifest.clone()
            },
            pixels: self.pixels.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            attribute: self.attribute.clone(),
            groups: rows.iter().map(|&i| self.groups[i]).collect(),
        }
    }

    pub fn sample(&self, i: usize) -> ImageSample<T> {
        let pixels = self.pixels.select_rows(&[i]);
        let shape = pixels.shape()[1..].to_vec();
        ImageSample {
            pixels: pixels.reshape(&shape).expect("same element count"),
            expression: self.labels[i],
            attrs: [(self.attribute.name.clone(), self.groups[i])].into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests;
