//! Straight-line reference implementations. None of these call into the
//! code they check.

use hyperem::nn::Tensor;
use hyperem::synthrtm::LookUpTable;

/// `a (m×k) · b (k×n)`, row-major, triple loop.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// `x (n×in) · W (in×out) + b`.
pub fn dense(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (n, fin, fout) = (x.dim(0), weight.dim(0), weight.dim(1));
    let mut y = matmul(x.data(), weight.data(), n, fin, fout);
    for r in 0..n {
        for o in 0..fout {
            y[r * fout + o] += bias.data()[o];
        }
    }
    Tensor::new(vec![n, fout], y).unwrap()
}

/// Cross-correlation of `x [N,C,H,W]` with `weight [O,C,K,K]`, zero
/// padding, written as the plain nested-loop definition.
pub fn brute_force_conv(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (o, k) = (weight.dim(0), weight.dim(2));
    assert_eq!(weight.dim(1), c);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let xd = x.data();
    let wd = weight.data();
    let mut y = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for r in 0..oh {
                for col in 0..ow {
                    let mut s = bias.data()[oc];
                    for ic in 0..c {
                        for i in 0..k {
                            for j in 0..k {
                                let yy = (r * stride + i) as isize - pad as isize;
                                let xx = (col * stride + j) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let xv = xd[((b * c + ic) * h + yy as usize) * w + xx as usize];
                                s += xv * wd[((oc * c + ic) * k + i) * k + j];
                            }
                        }
                    }
                    y[((b * o + oc) * oh + r) * ow + col] = s;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], y).unwrap()
}

/// Per-sample, per-channel spatial normalization with affine.
pub fn channel_norm(x: &Tensor, gain: &[f64], shift: &[f64], eps: f64) -> Tensor {
    let (n, c, hw) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
    let mut y = x.data().to_vec();
    for b in 0..n {
        for ch in 0..c {
            let s = &mut y[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let mean = s.iter().sum::<f64>() / hw as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
            for v in s.iter_mut() {
                *v = gain[ch] * (*v - mean) / (var + eps).sqrt() + shift[ch];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), y).unwrap()
}

/// Row with the smallest RMSE to `s`, scanning every row; ties keep the
/// first.
pub fn nearest_row(s: &[f64], lut: &LookUpTable) -> usize {
    let mut best = (0, f64::INFINITY);
    for row in 0..lut.len() {
        let r = lut.spectrum(row);
        let mut acc = 0.0;
        for b in 0..s.len() {
            acc += (s[b] - r[b]).powi(2);
        }
        let rmse = (acc / s.len() as f64).sqrt();
        if rmse < best.1 {
            best = (row, rmse);
        }
    }
    best.0
}

/// Pearson correlation from raw sums.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Mean SSIM of two unmasked `h × w` images: a full 2-D Gaussian window
/// evaluated explicitly at every position where it fits.
pub fn ssim_windowed(x: &[f64], y: &[f64], h: usize, w: usize, window: usize, sigma: f64, range: f64) -> f64 {
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let half = (window / 2) as f64;
    let mut g = vec![0.0; window * window];
    for i in 0..window {
        for j in 0..window {
            let (di, dj) = (i as f64 - half, j as f64 - half);
            g[i * window + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    let mut acc = 0.0;
    let mut count = 0usize;
    for r in 0..=h - window {
        for c in 0..=w - window {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..window {
                for j in 0..window {
                    let k = g[i * window + j];
                    let a = x[(r + i) * w + c + j];
                    let b = y[(r + i) * w + c + j];
                    mx += k * a;
                    my += k * b;
                    xx += k * a * a;
                    yy += k * b * b;
                    xy += k * a * b;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// SSIM from global image statistics.
pub fn ssim_global(x: &[f64], y: &[f64], range: f64) -> f64 {
    let n = x.len() as f64;
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let vx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let c = matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn conv_all_ones() {
        let x = Tensor::full(&[1, 1, 4, 4], 2.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = brute_force_conv(&x, &w, &Tensor::zeros(&[1]), 1, 0);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 18.0));
    }

    #[test]
    fn pearson_perfect() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_global_constants() {
        let a = vec![0.5; 16];
        let b = vec![0.25; 16];
        let expect = (2.0 * 0.125 + 1e-4) / (0.3125 + 1e-4);
        assert!((ssim_global(&a, &b, 1.0) - expect).abs() < 1e-15);
    }
}
