//! Images, masks, manifests and the synthetic sample generator.

mod image;
mod manifest;
pub mod pnm;
mod synth;

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use image::{augment_hflip, hflip, resize_bilinear, resize_nearest};
pub use manifest::{load_manifest, parse_manifest, write_manifest, SampleRecord, Split, Task};
pub use synth::{generate_sample, SynthConfig, ValueNoise};

/// A decoded image/mask pair. `image` is `[3, h, w]` in `[0, 1]`, `mask`
/// is `[h, w]` with foreground above 0.5.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub image: Tensor<f64>,
    pub mask: Tensor<f64>,
    pub task: Task,
}

impl Sample {
    pub fn new(name: String, image: Tensor<f64>, mask: Tensor<f64>, task: Task) -> Result<Self> {
        match (image.shape(), mask.shape()) {
            ([3, h, w], [mh, mw]) if h == mh && w == mw => {}
            (i, m) => {
                return Err(Error::dim(format!(
                    "{name}: image {i:?} and mask {m:?} extents disagree"
                )))
            }
        }
        Ok(Sample {
            name,
            image,
            mask,
            task,
        })
    }

    pub fn height(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.mask.shape()[1]
    }
}

/// Decodes every record in manifest order.
pub fn load_samples(records: &[SampleRecord]) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            let image = pnm::read(&r.image_path)?;
            let image = match image.shape() {
                [_, _] => {
                    // grey input: replicate into three channels
                    let (h, w) = (image.shape()[0], image.shape()[1]);
                    let mut d = image.data().to_vec();
                    d.extend_from_within(..);
                    d.extend_from_within(..h * w);
                    Tensor::new(&[3, h, w], d)?
                }
                _ => image,
            };
            let mask = pnm::read(&r.mask_path)?;
            if mask.ndim() != 2 {
                return Err(Error::Format(format!(
                    "{}: mask must be a single-channel PGM",
                    r.mask_path.display()
                )));
            }
            let name = r
                .image_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Sample::new(name, image, mask, r.task)
        })
        .collect()
}

pub fn load_dataset(manifest: &Path) -> Result<Vec<Sample>> {
    load_samples(&load_manifest(manifest)?)
}

/// Generates `count` samples with indices `offset..offset + count`.
pub fn synth_dataset(cfg: &SynthConfig, offset: usize, count: usize) -> Result<Vec<Sample>> {
    (offset..offset + count)
        .map(|i| {
            let (image, mask) = generate_sample(cfg, i)?;
            Sample::new(format!("{}_{i:05}", cfg.mode), image, mask, cfg.mode)
        })
        .collect()
}

/// Writes UTF-8 text, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Writes samples as PPM/PGM files under `dir/<split>/` plus a manifest
/// `dir/<split>.tsv`; returns the manifest path.
pub fn write_dataset(dir: &Path, split: Split, samples: &[Sample]) -> Result<std::path::PathBuf> {
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let image_path = dir.join(split.to_string()).join(format!("{}.ppm", s.name));
        let mask_path = dir.join(split.to_string()).join(format!("{}.pgm", s.name));
        pnm::write(&image_path, &s.image)?;
        pnm::write(&mask_path, &s.mask)?;
        records.push(SampleRecord {
            image_path,
            mask_path,
            task: s.task,
            split,
        });
    }
    let manifest = dir.join(format!("{split}.tsv"));
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_written_and_reloaded_matches_quantized_source() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::new(Task::Sod, 24, 3);
        let samples = synth_dataset(&cfg, 0, 3).unwrap();
        let manifest = write_dataset(dir.path(), Split::Train, &samples).unwrap();
        let back = load_dataset(&manifest).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert!(a.mask.bit_eq(&b.mask));
            assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn mismatched_extents_are_rejected() {
        let img = Tensor::zeros(&[3, 4, 4]);
        let mask = Tensor::zeros(&[4, 5]);
        assert!(Sample::new("x".into(), img, mask, Task::Cod).is_err());
    }
}
