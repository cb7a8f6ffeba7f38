use super::dataset::LabeledPair;
use super::image::{BinaryMask, Image};
use crate::error::{Result, SpeError};

/// Minimum label foreground a slice needs to be kept.
pub const MIN_SLICE_FOREGROUND: usize = 20;

/// Dense `D x H x W` grid, row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: [usize; 3],
    voxels: Vec<f64>,
}

impl Volume {
    pub fn new(shape: [usize; 3], voxels: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(SpeError::validation(format!(
                "volume dimensions must be positive, got {shape:?}"
            )));
        }
        if shape.iter().product::<usize>() != voxels.len() {
            return Err(SpeError::validation(format!(
                "volume {shape:?} needs {} voxels, got {}",
                shape.iter().product::<usize>(),
                voxels.len()
            )));
        }
        Ok(Self { shape, voxels })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        let [_, h, w] = self.shape;
        self.voxels[(z * h + y) * w + x]
    }

    /// Number of slices along `axis`.
    pub fn depth(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    /// 2D cut at `index` along `axis`; returns `(height, width, samples)`.
    pub fn slice(&self, axis: usize, index: usize) -> (usize, usize, Vec<f64>) {
        let [d, h, w] = self.shape;
        match axis {
            0 => {
                let start = index * h * w;
                (h, w, self.voxels[start..start + h * w].to_vec())
            }
            1 => {
                let mut out = Vec::with_capacity(d * w);
                for z in 0..d {
                    for x in 0..w {
                        out.push(self.get(z, index, x));
                    }
                }
                (d, w, out)
            }
            2 => {
                let mut out = Vec::with_capacity(d * h);
                for z in 0..d {
                    for y in 0..h {
                        out.push(self.get(z, y, index));
                    }
                }
                (d, h, out)
            }
            _ => unreachable!("axis checked by caller"),
        }
    }
}

/// Cuts paired image/label volumes into 2D pairs, keeping slices whose label
/// has at least `min_foreground` nonzero voxels. Slice order is preserved.
pub fn slice_volume(
    volume: &Volume,
    labels: &Volume,
    axis: usize,
    min_foreground: usize,
    id_prefix: &str,
) -> Result<Vec<LabeledPair>> {
    if axis > 2 {
        return Err(SpeError::validation(format!("slicing axis {axis} is not in 0..=2")));
    }
    if volume.shape() != labels.shape() {
        return Err(SpeError::validation(format!(
            "volume {:?} and label volume {:?} differ in shape",
            volume.shape(),
            labels.shape()
        )));
    }
    let mut pairs = Vec::new();
    for index in 0..volume.depth(axis) {
        let (h, w, label_raw) = labels.slice(axis, index);
        let label = BinaryMask::new(h, w, label_raw.iter().map(|v| *v != 0.0).collect())?;
        if label.count() < min_foreground {
            continue;
        }
        let (_, _, raw) = volume.slice(axis, index);
        let image = Image::from_raw(h, w, &raw)?;
        pairs.push(LabeledPair::new(
            format!("{id_prefix}_a{axis}_{index:04}"),
            image,
            label,
        )?);
    }
    Ok(pairs)
}
