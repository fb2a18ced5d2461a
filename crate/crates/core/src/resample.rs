//! Bilinear resampling with half-pixel centres (corners not aligned).
//!
//! Source coordinates are `(dst + 0.5) * src_len / dst_len - 0.5`, clamped to
//! the valid sample range, so constant inputs stay constant and a same-size
//! resize is the identity.

/// Precomputed interpolation taps along one axis.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src_len: usize, dst_len: usize) -> Vec<Tap> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            Tap { lo, hi, frac: s - lo as f64 }
        })
        .collect()
}

/// Resizes an interleaved `height × width × channels` buffer.
///
/// All dimensions must be non-zero; callers validate this.
pub(crate) fn bilinear(
    src: &[f64],
    src_w: usize,
    src_h: usize,
    channels: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<f64> {
    debug_assert_eq!(src.len(), src_w * src_h * channels);
    if src_w == dst_w && src_h == dst_h {
        return src.to_vec();
    }
    let xs = taps(src_w, dst_w);
    let ys = taps(src_h, dst_h);
    let at = |x: usize, y: usize, c: usize| src[(y * src_w + x) * channels + c];

    let mut out = Vec::with_capacity(dst_w * dst_h * channels);
    for ty in &ys {
        for tx in &xs {
            for c in 0..channels {
                let top = at(tx.lo, ty.lo, c) * (1.0 - tx.frac) + at(tx.hi, ty.lo, c) * tx.frac;
                let bottom = at(tx.lo, ty.hi, c) * (1.0 - tx.frac) + at(tx.hi, ty.hi, c) * tx.frac;
                out.push(top * (1.0 - ty.frac) + bottom * ty.frac);
            }
        }
    }
    out
}
