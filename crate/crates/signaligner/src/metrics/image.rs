//! Frame-image metrics: structural similarity and peak signal-to-noise ratio
//! over rendered frames.
//!
//! Similarity runs on a grayscale conversion with non-overlapping 8x8
//! windows and population statistics; the constants follow the standard
//! choice for 8-bit dynamic range.  Signal-to-noise is computed over the raw
//! RGB bytes and capped at 99.0 so identical frames report a finite value.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::render::FrameImage;

/// Stabilizer constants for 8-bit dynamic range: `(0.01*255)^2`, `(0.03*255)^2`.
pub const SSIM_C1: f64 = 6.5025;
pub const SSIM_C2: f64 = 58.5225;

/// Window edge for the similarity statistics.
pub const SSIM_WINDOW: usize = 8;

/// Reported ceiling for signal-to-noise (hit by identical images).
pub const PSNR_CAP: f64 = 99.0;

/// Luma conversion (Rec. 601 weights), values in [0, 255].
pub fn to_gray(img: &FrameImage) -> Array2<f64> {
    Array2::from_shape_fn((img.height(), img.width()), |(y, x)| {
        let [r, g, b] = img.get(x, y);
        0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
    })
}

fn check_same_size(a: &FrameImage, b: &FrameImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(
            "image dimensions",
            format!("{}x{}", a.width(), a.height()),
            format!("{}x{}", b.width(), b.height()),
        ));
    }
    Ok(())
}

/// Mean, population variance, and population covariance over one window.
fn window_stats(
    a: &Array2<f64>,
    b: &Array2<f64>,
    y0: usize,
    x0: usize,
    h: usize,
    w: usize,
) -> (f64, f64, f64, f64, f64) {
    let n = (h * w) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            sa += a[[y, x]];
            sb += b[[y, x]];
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let da = a[[y, x]] - ma;
            let db = b[[y, x]] - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
    }
    (ma, mb, va / n, vb / n, cov / n)
}

/// Structural similarity: mean over non-overlapping 8x8 grayscale windows
/// (images smaller than one window are treated as a single window).
pub fn ssim(a: &FrameImage, b: &FrameImage) -> Result<f64> {
    check_same_size(a, b)?;
    let ga = to_gray(a);
    let gb = to_gray(b);
    let (height, width) = ga.dim();
    let wh = SSIM_WINDOW.min(height);
    let ww = SSIM_WINDOW.min(width);
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut y = 0;
    while y + wh <= height {
        let mut x = 0;
        while x + ww <= width {
            let (ma, mb, va, vb, cov) = window_stats(&ga, &gb, y, x, wh, ww);
            let numerator = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let denominator = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            sum += numerator / denominator;
            count += 1;
            x += ww;
        }
        y += wh;
    }
    Ok(sum / count as f64)
}

/// Mean squared error over raw RGB bytes.
pub fn mse(a: &FrameImage, b: &FrameImage) -> Result<f64> {
    check_same_size(a, b)?;
    let pa = a.pixels();
    let pb = b.pixels();
    let sum: f64 = pa
        .iter()
        .zip(pb)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / pa.len() as f64)
}

/// Peak signal-to-noise ratio `10*log10(255^2 / MSE)`, capped at 99.0.
pub fn psnr(a: &FrameImage, b: &FrameImage) -> Result<f64> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP))
}
