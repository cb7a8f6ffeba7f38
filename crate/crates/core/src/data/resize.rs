use super::dataset::LabeledPair;
use super::image::{BinaryMask, Image};
use crate::error::{Result, SpeError};

/// Canvas size expected by the reference segmenter.
pub const CANVAS: (usize, usize) = (128, 128);

/// Bilinear resampling with half-pixel centers; identity at equal size.
pub fn resize_bilinear(image: &Image, height: usize, width: usize) -> Result<Image> {
    check_target(height, width)?;
    let (sh, sw) = image.shape();
    if (sh, sw) == (height, width) {
        return Ok(image.clone());
    }
    let axis = |dst: usize, src_len: usize, dst_len: usize| {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
            .clamp(0.0, (src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut pixels = Vec::with_capacity(height * width);
    for r in 0..height {
        let (r0, r1, fr) = axis(r, sh, height);
        for c in 0..width {
            let (c0, c1, fc) = axis(c, sw, width);
            let top = image.get(r0, c0) * (1.0 - fc) + image.get(r0, c1) * fc;
            let bottom = image.get(r1, c0) * (1.0 - fc) + image.get(r1, c1) * fc;
            pixels.push((top * (1.0 - fr) + bottom * fr).clamp(0.0, 1.0));
        }
    }
    Image::new(height, width, pixels)
}

/// Nearest-neighbor resampling: destination pixel `d` reads source
/// `floor((d + 0.5) * src / dst)`.
pub fn resize_nearest(mask: &BinaryMask, height: usize, width: usize) -> Result<BinaryMask> {
    check_target(height, width)?;
    let (sh, sw) = mask.shape();
    let src = |d: usize, src_len: usize, dst_len: usize| ((2 * d + 1) * src_len) / (2 * dst_len);
    Ok(BinaryMask::from_fn(height, width, |r, c| {
        mask.get(src(r, sh, height), src(c, sw, width))
    }))
}

pub fn resize_pair(pair: &LabeledPair, target: (usize, usize)) -> Result<LabeledPair> {
    let (h, w) = target;
    LabeledPair::new(
        pair.id.clone(),
        resize_bilinear(&pair.image, h, w)?,
        resize_nearest(&pair.label, h, w)?,
    )
}

fn check_target(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(SpeError::validation(format!(
            "resize target must be at least 1x1, got {height}x{width}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(h: usize, w: usize, label: BinaryMask) -> LabeledPair {
        let image = Image::from_fn(h, w, |r, c| ((r * 31 + c * 17) % 101) as f64 / 100.0).unwrap();
        LabeledPair::new("p", image, label).unwrap()
    }

    #[test]
    fn identity_at_target_size() {
        let p = pair(128, 128, BinaryMask::from_fn(128, 128, |r, c| r > c));
        assert_eq!(resize_pair(&p, CANVAS).unwrap(), p);
    }

    #[test]
    fn constant_mask_stays_constant() {
        let p = pair(256, 256, BinaryMask::full(256, 256));
        let out = resize_pair(&p, CANVAS).unwrap();
        assert_eq!(out.label, BinaryMask::full(128, 128));
    }

    #[test]
    fn centered_block_matches_float_index_mapping() {
        let mask = BinaryMask::from_fn(64, 64, |r, c| (31..33).contains(&r) && (31..33).contains(&c));
        let out = resize_nearest(&mask, 128, 128).unwrap();
        // independent mapping through floating-point pixel centers
        let mut expected = 0;
        for r in 0..128 {
            for c in 0..128 {
                let sr = (((r as f64) + 0.5) * 64.0 / 128.0).floor() as usize;
                let sc = (((c as f64) + 0.5) * 64.0 / 128.0).floor() as usize;
                expected += mask.get(sr, sc) as usize;
            }
        }
        assert_eq!(out.count(), expected);
        assert_eq!(expected, 16);
    }

    #[test]
    fn zero_target_rejected() {
        let p = pair(4, 4, BinaryMask::empty(4, 4));
        assert!(resize_pair(&p, (0, 128)).is_err());
    }

    proptest! {
        #[test]
        fn resized_intensities_stay_in_range(
            h in 1usize..20, w in 1usize..20, th in 1usize..40, tw in 1usize..40,
            seed in any::<u64>(),
        ) {
            let image = Image::from_fn(h, w, |r, c| {
                (((r as u64 * 7919 + c as u64 * 104729) ^ seed) % 1000) as f64 / 999.0
            }).unwrap();
            let out = resize_bilinear(&image, th, tw).unwrap();
            prop_assert_eq!(out.shape(), (th, tw));
            prop_assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
