//! Single-scale SSIM with a separable Gaussian window and its adjoint.

use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (k, v) in w.iter_mut().enumerate() {
        let x = k as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Zero-padded separable blur of one `w x h` plane.
fn blur(src: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    (0..img.pixel_count()).map(|p| img.data[p * img.channels + c]).collect()
}

/// Mean SSIM over pixels and channels. With `want_grad`, also returns
/// `d mean_ssim / d a`.
pub fn ssim_with_grad(a: &Image, b: &Image, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    assert!(a.same_shape(b), "ssim: shape mismatch");
    let (w, h, ch) = (a.width, a.height, a.channels);
    let kernel = window();
    let n = (w * h * ch) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; a.data.len()]);
    for c in 0..ch {
        let x = plane(a, c);
        let y = plane(b, c);
        let sq = |v: &[f64], u: &[f64]| v.iter().zip(u).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mx = blur(&x, w, h, &kernel);
        let my = blur(&y, w, h, &kernel);
        let exx = blur(&sq(&x, &x), w, h, &kernel);
        let eyy = blur(&sq(&y, &y), w, h, &kernel);
        let exy = blur(&sq(&x, &y), w, h, &kernel);
        let mut ga = vec![0.0; w * h];
        let mut gb = vec![0.0; w * h];
        let mut gc = vec![0.0; w * h];
        for p in 0..w * h {
            let sxx = exx[p] - mx[p] * mx[p];
            let syy = eyy[p] - my[p] * my[p];
            let sxy = exy[p] - mx[p] * my[p];
            let a1 = 2.0 * mx[p] * my[p] + C1;
            let a2 = 2.0 * sxy + C2;
            let b1 = mx[p] * mx[p] + my[p] * my[p] + C1;
            let b2 = sxx + syy + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let d_mx = 2.0 * my[p] * a2 / (b1 * b2) - s * 2.0 * mx[p] / b1;
                let d_sxx = -s / b2;
                let d_sxy = 2.0 * a1 / (b1 * b2);
                // sxx = E[x^2] - mx^2, sxy = E[xy] - mx my
                ga[p] = d_mx - 2.0 * mx[p] * d_sxx - my[p] * d_sxy;
                gb[p] = d_sxx;
                gc[p] = d_sxy;
            }
        }
        if let Some(g) = grad.as_mut() {
            // the symmetric zero-padded blur is self-adjoint
            let ta = blur(&ga, w, h, &kernel);
            let tb = blur(&gb, w, h, &kernel);
            let tc = blur(&gc, w, h, &kernel);
            for p in 0..w * h {
                g[p * ch + c] = (ta[p] + 2.0 * x[p] * tb[p] + y[p] * tc[p]) / n;
            }
        }
    }
    (total / n, grad)
}

pub fn ssim(a: &Image, b: &Image) -> f64 {
    ssim_with_grad(a, b, false).0
}
