//! Evaluation metrics computed outside the autodiff graph: PSNR, SSIM,
//! normal angular error, and temporal flicker.

use crate::scalar::Real;
use crate::tensor::Tensor;

/// PSNR ceiling used when two images are bitwise identical (MSE = 0).
pub const PSNR_SENTINEL_DB: f64 = 99.0;

pub fn mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> T {
    assert_eq!(pred.shape(), target.shape(), "mse shape mismatch");
    let n = T::from_usizec(pred.len());
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        / n
}

/// Peak signal-to-noise ratio in dB for values in `[0,1]`.
pub fn psnr<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> T {
    let m = mse(pred, target);
    if m == T::zero() {
        return T::from_f64c(PSNR_SENTINEL_DB);
    }
    let ten = T::from_f64c(10.0);
    let db = ten * (T::one() / m).log10();
    db.min(T::from_f64c(PSNR_SENTINEL_DB))
}

/// Normalized 1D Gaussian taps for an odd-width window.
pub fn gaussian_taps<T: Real>(width: usize, sigma: f64) -> Vec<T> {
    assert!(width % 2 == 1, "window width must be odd");
    let half = (width / 2) as f64;
    let mut taps: Vec<f64> = (0..width)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps.into_iter().map(T::from_f64c).collect()
}

/// SSIM window width; shrinks to fit small images (kept odd).
fn window_width(h: usize, w: usize) -> usize {
    let k = 11.min(h).min(w);
    if k % 2 == 0 { k - 1 } else { k }
}

/// Local Gaussian-window statistic over one channel plane: returns the
/// valid-region map of window means of `f(a, b)`.
fn window_means<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: usize,
    taps: &[T],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let (h, w, nc) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let k = taps.len();
    let (vh, vw) = (h - k + 1, w - k + 1);
    // separable pass: rows first, then columns
    let mut rowpass = vec![T::zero(); h * vw];
    for y in 0..h {
        for x in 0..vw {
            let mut s = T::zero();
            for (i, &t) in taps.iter().enumerate() {
                let idx = (y * w + x + i) * nc + c;
                s += t * f(a.data()[idx], b.data()[idx]);
            }
            rowpass[y * vw + x] = s;
        }
    }
    let mut out = vec![T::zero(); vh * vw];
    for y in 0..vh {
        for x in 0..vw {
            let mut s = T::zero();
            for (i, &t) in taps.iter().enumerate() {
                s += t * rowpass[(y + i) * vw + x];
            }
            out[y * vw + x] = s;
        }
    }
    out
}

/// Mean structural similarity over the valid region (11×11 Gaussian window,
/// σ = 1.5, K1 = 0.01, K2 = 0.03, unit dynamic range), averaged over channels.
pub fn ssim<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> T {
    assert_eq!(pred.shape(), target.shape(), "ssim shape mismatch");
    assert_eq!(pred.rank(), 3, "ssim expects [H,W,C]");
    let (h, w, nc) = (pred.shape()[0], pred.shape()[1], pred.shape()[2]);
    let k = window_width(h, w);
    let taps = gaussian_taps::<T>(k, 1.5);
    let c1 = T::from_f64c(0.01 * 0.01);
    let c2 = T::from_f64c(0.03 * 0.03);
    let two = T::from_f64c(2.0);

    let mut total = T::zero();
    for c in 0..nc {
        let mu_x = window_means(pred, target, c, &taps, |a, _| a);
        let mu_y = window_means(pred, target, c, &taps, |_, b| b);
        let xx = window_means(pred, target, c, &taps, |a, _| a * a);
        let yy = window_means(pred, target, c, &taps, |_, b| b * b);
        let xy = window_means(pred, target, c, &taps, |a, b| a * b);
        let mut acc = T::zero();
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            let num = (two * mx * my + c1) * (two * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            acc += num / den;
        }
        total += acc / T::from_usizec(mu_x.len());
    }
    total / T::from_usizec(nc)
}

/// Mean angular error in degrees between two unit-vector maps `[H,W,3]`,
/// restricted to pixels where `mask` exceeds 0.5. Returns 0 when the mask is
/// empty.
pub fn mean_angular_error_deg<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: &Tensor<T>,
) -> T {
    assert_eq!(pred.shape(), target.shape());
    assert_eq!(pred.rank(), 3);
    assert_eq!(pred.shape()[2], 3);
    let (h, w) = (pred.shape()[0], pred.shape()[1]);
    assert_eq!(mask.len(), h * w, "mask must have one entry per pixel");
    let half = T::from_f64c(0.5);
    let eps = T::from_f64c(1e-12);
    let mut acc = T::zero();
    let mut count = 0usize;
    for p in 0..h * w {
        if mask.data()[p] <= half {
            continue;
        }
        let mut dot = T::zero();
        let mut na = T::zero();
        let mut nb = T::zero();
        for c in 0..3 {
            let a = pred.data()[p * 3 + c];
            let b = target.data()[p * 3 + c];
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        let denom = (na.sqrt() * nb.sqrt()).max(eps);
        let cos = (dot / denom).min(T::one()).max(-T::one());
        acc += cos.acos();
        count += 1;
    }
    if count == 0 {
        return T::zero();
    }
    acc / T::from_usizec(count) * T::from_f64c(180.0 / std::f64::consts::PI)
}

/// Temporal flicker: per-pixel standard deviation over every sliding window
/// of `window` frames, averaged over pixels and window positions.
pub fn flicker<T: Real>(frames: &[Tensor<T>], window: usize) -> T {
    assert!(window >= 2, "flicker window must cover at least 2 frames");
    assert!(frames.len() >= window, "not enough frames for the flicker window");
    let len = frames[0].len();
    for f in frames {
        assert_eq!(f.len(), len, "all frames must share a shape");
    }
    let wn = T::from_usizec(window);
    let mut acc = T::zero();
    let mut count = 0usize;
    for start in 0..=frames.len() - window {
        for p in 0..len {
            let mut mean = T::zero();
            for f in &frames[start..start + window] {
                mean += f.data()[p];
            }
            mean /= wn;
            let mut var = T::zero();
            for f in &frames[start..start + window] {
                let d = f.data()[p] - mean;
                var += d * d;
            }
            acc += (var / wn).sqrt();
            count += 1;
        }
    }
    acc / T::from_usizec(count)
}
