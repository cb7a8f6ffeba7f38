//! Exact squared Euclidean distance transform on pixel grids.
//!
//! Separable lower-envelope algorithm (Felzenszwalb & Huttenlocher) with
//! parabola intersections kept as exact rationals, so every output is the
//! true integer squared distance.

use crate::data::BinaryMask;

/// Squared distance from every pixel to the nearest foreground pixel of
/// `mask`, row-major. `None` when the mask has no foreground.
pub fn squared_distance_to_foreground(mask: &BinaryMask) -> Option<Vec<u64>> {
    if mask.is_empty() {
        return None;
    }
    let (h, w) = mask.shape();

    // Per column: vertical distance to the nearest foreground row.
    let mut vertical: Vec<Option<u64>> = vec![None; h * w];
    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if mask.get(r, c) {
                last = Some(r);
            }
            vertical[r * w + c] = last.map(|l| (r - l) as u64);
        }
        let mut next: Option<usize> = None;
        for r in (0..h).rev() {
            if mask.get(r, c) {
                next = Some(r);
            }
            if let Some(n) = next {
                let d = (n - r) as u64;
                let cell = &mut vertical[r * w + c];
                *cell = Some(cell.map_or(d, |v| v.min(d)));
            }
        }
    }

    let mut out = vec![0u64; h * w];
    let mut f = vec![None; w];
    for r in 0..h {
        for c in 0..w {
            f[c] = vertical[r * w + c].map(|d| d * d);
        }
        lower_envelope(&f, &mut out[r * w..(r + 1) * w]);
    }
    Some(out)
}

/// Exact rational `num / den` with `den > 0`.
#[derive(Clone, Copy)]
struct Ratio {
    num: i128,
    den: i128,
}

impl Ratio {
    const NEG_INF: Ratio = Ratio { num: -1, den: 0 };
    const POS_INF: Ratio = Ratio { num: 1, den: 0 };

    fn le(self, other: Ratio) -> bool {
        match (self.den, other.den) {
            (0, 0) => self.num <= other.num,
            (0, _) => self.num < 0,
            (_, 0) => other.num > 0,
            _ => self.num * other.den <= other.num * self.den,
        }
    }

    fn lt_int(self, x: i128) -> bool {
        if self.den == 0 {
            self.num < 0
        } else {
            self.num < x * self.den
        }
    }
}

/// 1D transform `d[q] = min_p (q - p)^2 + f[p]` over sites where `f` is finite.
/// At least one site must be finite.
fn lower_envelope(f: &[Option<u64>], out: &mut [u64]) {
    let mut sites: Vec<usize> = Vec::with_capacity(f.len());
    let mut bounds: Vec<Ratio> = Vec::with_capacity(f.len() + 1);
    let key = |p: usize| f[p].unwrap() as i128 + (p as i128) * (p as i128);

    for (q, fq) in f.iter().enumerate() {
        if fq.is_none() {
            continue;
        }
        if sites.is_empty() {
            sites.push(q);
            bounds.push(Ratio::NEG_INF);
            bounds.push(Ratio::POS_INF);
            continue;
        }
        loop {
            let v = *sites.last().unwrap();
            let s = Ratio {
                num: key(q) - key(v),
                den: 2 * (q as i128 - v as i128),
            };
            let k = sites.len() - 1;
            if s.le(bounds[k]) {
                sites.pop();
                bounds.pop();
                continue;
            }
            bounds[k + 1] = s;
            sites.push(q);
            bounds.push(Ratio::POS_INF);
            break;
        }
    }
    debug_assert!(!sites.is_empty(), "row has no finite sites");

    let mut k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while bounds[k + 1].lt_int(q as i128) {
            k += 1;
        }
        let v = sites[k];
        let dq = q as i128 - v as i128;
        *slot = (dq * dq) as u64 + f[v].unwrap();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(mask: &BinaryMask) -> Vec<u64> {
        let fg = mask.foreground();
        let (h, w) = mask.shape();
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                out.push(
                    fg.iter()
                        .map(|&(fr, fc)| {
                            let dr = r as i64 - fr as i64;
                            let dc = c as i64 - fc as i64;
                            (dr * dr + dc * dc) as u64
                        })
                        .min()
                        .unwrap(),
                );
            }
        }
        out
    }

    #[test]
    fn empty_mask_has_no_transform() {
        assert!(squared_distance_to_foreground(&BinaryMask::empty(4, 4)).is_none());
    }

    #[test]
    fn single_pixel() {
        let m = BinaryMask::from_fn(5, 7, |r, c| r == 1 && c == 5);
        assert_eq!(squared_distance_to_foreground(&m).unwrap(), brute(&m));
    }

    proptest! {
        #[test]
        fn matches_brute_force(h in 1usize..24, w in 1usize..24, density in 0.01f64..0.6, seed in any::<u64>()) {
            let mut state = seed | 1;
            let m = BinaryMask::from_fn(h, w, |_, _| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                (state % 10_000) as f64 / 10_000.0 < density
            });
            prop_assume!(!m.is_empty());
            prop_assert_eq!(squared_distance_to_foreground(&m).unwrap(), brute(&m));
        }
    }
}
