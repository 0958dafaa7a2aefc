//! Distribution distance between two sets of frame features: Gaussian fits
//! compared with the Fréchet formula
//! `||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2})`.
//!
//! The feature extractor is fixed and documented (its id is recorded in every
//! report): a 64-dim vector per frame, combining blockwise mean/variance
//! pooling over a 4x4 grayscale grid (32 dims) with 32 fixed-seed random
//! projections of an area-downsampled 32x32 grayscale copy.  The score is
//! reported as a proxy: it is comparable within this codebase only.

use std::sync::OnceLock;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::metrics::image::to_gray;
use crate::render::FrameImage;
use crate::rng::{normal, rng_for};

/// Identifier of the fixed feature extractor, recorded in reports.
pub const EXTRACTOR_ID: &str = "gray4x4meanvar-proj32-seed1234";

/// Feature dimensionality produced by [`extract_features`].
pub const FEATURE_DIM: usize = 64;

/// Diagonal regularization added to both covariance fits.
pub const COVARIANCE_EPSILON: f64 = 1e-6;

const GRID: usize = 4;
const DOWN: usize = 32;
const PROJECTIONS: usize = 32;
const PROJECTION_SEED: u64 = 1234;

/// Integer band `[lo, hi)` of `size` split into `parts`, never empty.
fn band(i: usize, parts: usize, size: usize) -> (usize, usize) {
    let lo = i * size / parts;
    let hi = ((i + 1) * size / parts).max(lo + 1).min(size.max(lo + 1));
    (lo.min(size.saturating_sub(1)), hi)
}

fn projection_matrix() -> &'static Array2<f64> {
    static MATRIX: OnceLock<Array2<f64>> = OnceLock::new();
    MATRIX.get_or_init(|| {
        let mut rng = rng_for(PROJECTION_SEED, "feature-projection", 0);
        let scale = 1.0 / ((DOWN * DOWN) as f64).sqrt();
        Array2::from_shape_fn((PROJECTIONS, DOWN * DOWN), |_| normal(&mut rng) * scale)
    })
}

/// 64-dim feature vector for one frame (see module docs for the layout).
pub fn extract_features(img: &FrameImage) -> Array1<f64> {
    let gray = to_gray(img);
    let (height, width) = gray.dim();
    let mut features = Array1::zeros(FEATURE_DIM);

    // Blockwise mean/variance over a 4x4 grid: [mean, var] per cell,
    // row-major.
    let mut at = 0;
    for gy in 0..GRID {
        for gx in 0..GRID {
            let (y0, y1) = band(gy, GRID, height);
            let (x0, x1) = band(gx, GRID, width);
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += gray[[y, x]];
                }
            }
            let mean = sum / n;
            let mut var = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = gray[[y, x]] - mean;
                    var += d * d;
                }
            }
            features[at] = mean;
            features[at + 1] = var / n;
            at += 2;
        }
    }

    // Area-downsample to 32x32 and apply the fixed random projections.
    let mut down = Array1::zeros(DOWN * DOWN);
    for cy in 0..DOWN {
        for cx in 0..DOWN {
            let (y0, y1) = band(cy, DOWN, height);
            let (x0, x1) = band(cx, DOWN, width);
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += gray[[y, x]];
                }
            }
            down[cy * DOWN + cx] = sum / n;
        }
    }
    let projected = projection_matrix().dot(&down);
    for (k, &v) in projected.iter().enumerate() {
        features[GRID * GRID * 2 + k] = v;
    }
    features
}

/// Feature matrix `[n_frames, 64]` for a list of frames.
pub fn frame_features(frames: &[FrameImage]) -> Array2<f64> {
    let mut out = Array2::zeros((frames.len(), FEATURE_DIM));
    for (i, frame) in frames.iter().enumerate() {
        out.row_mut(i).assign(&extract_features(frame));
    }
    out
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns), unsorted.
fn sym_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut vecs = Array2::eye(n);
    let tol = 1e-12 * frobenius(a).max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = vecs[[k, p]];
                    let vkq = vecs[[k, q]];
                    vecs[[k, p]] = c * vkp - s * vkq;
                    vecs[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| m[[i, i]]).collect();
    (eig, vecs)
}

/// Symmetric positive-semidefinite square root via eigendecomposition
/// (negative numerical eigenvalues clamp to zero).
fn sym_sqrt(a: &Array2<f64>) -> Array2<f64> {
    let (eig, vecs) = sym_eigen(a);
    let n = a.nrows();
    let mut scaled = vecs.clone();
    for (j, lambda) in eig.iter().enumerate() {
        let root = lambda.max(0.0).sqrt();
        for i in 0..n {
            scaled[[i, j]] *= root;
        }
    }
    scaled.dot(&vecs.t())
}

/// Mean row and unbiased covariance of a feature matrix.
fn gaussian_fit(features: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = features.nrows();
    let k = features.ncols();
    let mean = features.mean_axis(ndarray::Axis(0)).expect("n >= 1");
    let mut centered = features.to_owned();
    for mut row in centered.rows_mut() {
        row -= &mean;
    }
    let mut cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    for i in 0..k {
        cov[[i, i]] += COVARIANCE_EPSILON;
    }
    (mean, cov)
}

/// Fréchet distance between the Gaussian fits of two feature sets.
pub fn fid_proxy(features_a: &Array2<f64>, features_b: &Array2<f64>) -> Result<f64> {
    if features_a.ncols() != features_b.ncols() {
        return Err(Error::shape(
            "feature dimensionality",
            features_a.ncols(),
            features_b.ncols(),
        ));
    }
    for (side, n) in [("a", features_a.nrows()), ("b", features_b.nrows())] {
        if n < 2 {
            return Err(Error::InvalidConfig(format!(
                "distribution distance needs >= 2 feature vectors per side, side {side} has {n}"
            )));
        }
    }
    let (mu_a, cov_a) = gaussian_fit(features_a);
    let (mu_b, cov_b) = gaussian_fit(features_b);

    let dmu = &mu_a - &mu_b;
    let mean_term: f64 = dmu.iter().map(|v| v * v).sum();

    let trace = |m: &Array2<f64>| (0..m.nrows()).map(|i| m[[i, i]]).sum::<f64>();
    let sqrt_b = sym_sqrt(&cov_b);
    let inner = sqrt_b.dot(&cov_a).dot(&sqrt_b);
    let (eig, _) = sym_eigen(&inner);
    let trace_sqrt: f64 = eig.iter().map(|l| l.max(0.0).sqrt()).sum();

    Ok((mean_term + trace(&cov_a) + trace(&cov_b) - 2.0 * trace_sqrt).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;

    use crate::rng::rng_for;

    #[test]
    fn jacobi_recovers_hand_eigenvalues() {
        let a = arr2(&[[2.0, 1.0], [1.0, 2.0]]);
        let (mut eig, vecs) = sym_eigen(&a);
        eig.sort_by(f64::total_cmp);
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);
        // Orthonormal eigenvectors: V V^T = I.
        let vvt = vecs.dot(&vecs.t());
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vvt[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric_matrices() {
        let mut rng = rng_for(4, "sym", 0);
        for _ in 0..5 {
            let raw = Array2::from_shape_fn((6, 6), |_| rng.gen_range(-1.0..1.0));
            let a = &raw + &raw.t();
            let (eig, vecs) = sym_eigen(&a);
            // V diag(eig) V^T == A
            let mut scaled = vecs.clone();
            for (j, l) in eig.iter().enumerate() {
                for i in 0..6 {
                    scaled[[i, j]] *= l;
                }
            }
            let rebuilt = scaled.dot(&vecs.t());
            for (x, y) in a.iter().zip(rebuilt.iter()) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn matrix_sqrt_squares_back() {
        let mut rng = rng_for(5, "psd", 0);
        let b = Array2::from_shape_fn((5, 5), |_| rng.gen_range(-1.0..1.0));
        let a = b.t().dot(&b); // PSD
        let s = sym_sqrt(&a);
        let rebuilt = s.dot(&s);
        for (x, y) in a.iter().zip(rebuilt.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_feature_sets_score_zero() {
        let mut rng = rng_for(6, "feat", 0);
        let a = Array2::from_shape_fn((12, 7), |_| rng.gen_range(-2.0..2.0));
        let d = fid_proxy(&a, &a).unwrap();
        assert!(d.abs() < 1e-6, "{d}");
    }

    #[test]
    fn univariate_hand_oracle() {
        // Fits: N(0, 2) vs N(1, 2) (unbiased variance of two points at +-1).
        // Variance terms cancel exactly; the distance is the squared mean
        // gap = 1.
        let a = arr2(&[[-1.0], [1.0]]);
        let b = arr2(&[[0.0], [2.0]]);
        let d = fid_proxy(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = rng_for(7, "sym-feat", 0);
        let a = Array2::from_shape_fn((10, 6), |_| rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_fn((14, 6), |_| rng.gen_range(-0.5..1.5));
        let ab = fid_proxy(&a, &b).unwrap();
        let ba = fid_proxy(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-6, "{ab} vs {ba}");
        assert!(ab >= 0.0);
    }

    #[test]
    fn degenerate_covariance_stays_finite() {
        // Constant features: covariance is all zeros before regularization.
        let a = Array2::from_elem((5, 4), 3.0);
        let b = Array2::from_elem((5, 4), 4.0);
        let d = fid_proxy(&a, &b).unwrap();
        assert!(d.is_finite());
        assert!((d - 4.0).abs() < 1e-6, "four unit mean gaps: {d}");
    }

    #[test]
    fn shape_and_count_preconditions() {
        let a = Array2::<f64>::zeros((3, 4));
        let b = Array2::<f64>::zeros((3, 5));
        assert!(fid_proxy(&a, &b).is_err());
        let one = Array2::<f64>::zeros((1, 4));
        assert!(fid_proxy(&one, &a).is_err());
    }

    #[test]
    fn extractor_is_deterministic_and_sized() {
        let mut rng = rng_for(8, "extract", 0);
        let mut img = FrameImage::black(40, 40).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                img.put(x, y, [rng.gen(), rng.gen(), rng.gen()]);
            }
        }
        let f1 = extract_features(&img);
        let f2 = extract_features(&img);
        assert_eq!(f1.len(), FEATURE_DIM);
        assert_eq!(f1, f2);

        let other = FrameImage::black(40, 40).unwrap();
        assert_ne!(extract_features(&other), f1);

        let batch = frame_features(&[img, other]);
        assert_eq!(batch.dim(), (2, FEATURE_DIM));
        assert_eq!(batch.row(0).to_owned(), f1);
    }
}
