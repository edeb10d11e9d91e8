//! Layer primitives. Feature maps are channel-major `(C, H, W)` slices.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use super::Float;

/// `y = W x + b`, `W` is `(out, in)` row-major.
pub fn linear<T: Float>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            row.iter().zip(x).fold(bias, |acc, (&a, &c)| acc + a * c)
        })
        .collect()
}

/// Accumulates parameter gradients and returns `dL/dx`.
pub fn linear_backward<T: Float>(w: &[T], x: &[T], dy: &[T], dw: &mut [T], db: &mut [T]) -> Vec<T> {
    let n_in = x.len();
    let mut dx = vec![T::zero(); n_in];
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

pub fn silu<T: Float>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

pub fn silu_grad<T: Float>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s * (T::one() + x * (T::one() - s))
}

pub fn silu_vec<T: Float>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| silu(v)).collect()
}

/// `dL/dx` through SiLU given the pre-activation `x`.
pub fn silu_backward<T: Float>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter().zip(dy).map(|(&a, &g)| g * silu_grad(a)).collect()
}

/// Unfolds a padded 3x3 neighbourhood per pixel: `(C*9, H*W)`.
fn im2col<T: Float>(x: &[T], c: usize, h: usize, w: usize) -> Array2<T> {
    let mut cols = Array2::<T>::zeros((c * 9, h * w));
    let buf = cols.as_slice_mut().unwrap();
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut buf[((ci * 9) + ky * 3 + kx) * hw..((ci * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Float>(cols: &Array2<T>, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let buf = cols.as_slice().unwrap();
    let mut x = vec![T::zero(); c * hw];
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &buf[((ci * 9) + ky * 3 + kx) * hw..((ci * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => {
                            for i in 0..w - 1 {
                                dst[i] += src[i + 1];
                            }
                        }
                        1 => {
                            for i in 0..w {
                                dst[i] += src[i];
                            }
                        }
                        _ => {
                            for i in 0..w - 1 {
                                dst[i + 1] += src[i];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Cached unfolded input for the backward pass.
pub struct ConvCache<T> {
    cols: Array2<T>,
}

/// 3x3 convolution, stride 1, zero padding 1. `w` is `(cout, cin*9)`.
pub fn conv3x3<T: Float>(
    w: &[T],
    b: &[T],
    x: &[T],
    cin: usize,
    h: usize,
    wd: usize,
) -> (Vec<T>, ConvCache<T>) {
    let cout = b.len();
    let cols = im2col(x, cin, h, wd);
    let wv = ArrayView2::from_shape((cout, cin * 9), w).unwrap();
    let mut out = vec![T::zero(); cout * h * wd];
    for (o, &bias) in b.iter().enumerate() {
        out[o * h * wd..(o + 1) * h * wd].fill(bias);
    }
    {
        let mut ov = ArrayViewMut2::from_shape((cout, h * wd), &mut out).unwrap();
        general_mat_mul(T::one(), &wv, &cols, T::one(), &mut ov);
    }
    (out, ConvCache { cols })
}

pub fn conv3x3_backward<T: Float>(
    w: &[T],
    cache: &ConvCache<T>,
    dy: &[T],
    cin: usize,
    h: usize,
    wd: usize,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let cout = db.len();
    let hw = h * wd;
    let dyv = ArrayView2::from_shape((cout, hw), dy).unwrap();
    for o in 0..cout {
        db[o] += dy[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
    }
    {
        let mut dwv = ArrayViewMut2::from_shape((cout, cin * 9), dw).unwrap();
        general_mat_mul(T::one(), &dyv, &cache.cols.t(), T::one(), &mut dwv);
    }
    if !need_dx {
        return None;
    }
    let wv = ArrayView2::from_shape((cout, cin * 9), w).unwrap();
    let mut dcols = Array2::<T>::zeros((cin * 9, hw));
    general_mat_mul(T::one(), &wv.t(), &dyv, T::zero(), &mut dcols);
    Some(col2im(&dcols, cin, h, wd))
}

pub fn avgpool2<T: Float>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let q = T::of(0.25);
    let mut out = vec![T::zero(); c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let base = ci * h * w;
                let s = x[base + 2 * y * w + 2 * xx]
                    + x[base + 2 * y * w + 2 * xx + 1]
                    + x[base + (2 * y + 1) * w + 2 * xx]
                    + x[base + (2 * y + 1) * w + 2 * xx + 1];
                out[ci * oh * ow + y * ow + xx] = s * q;
            }
        }
    }
    out
}

pub fn avgpool2_backward<T: Float>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let q = T::of(0.25);
    let mut dx = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                dx[ci * h * w + y * w + xx] = dy[ci * oh * ow + (y / 2) * ow + xx / 2] * q;
            }
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling of a `(c, h, w)` map.
pub fn upsample2<T: Float>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![T::zero(); c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[ci * oh * ow + y * ow + xx] = x[ci * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// Backward of [`upsample2`]; `h`, `w` are the low-resolution dims.
pub fn upsample2_backward<T: Float>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h * 2, w * 2);
    let mut dx = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                dx[ci * h * w + (y / 2) * w + xx / 2] += dy[ci * oh * ow + y * ow + xx];
            }
        }
    }
    dx
}

/// Sinusoidal embedding of an integer timestep.
pub fn timestep_embedding<T: Float>(t: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out.push(T::of((t as f64 * freq).sin()));
    }
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out.push(T::of((t as f64 * freq).cos()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(w: &[f64], b: &[f64], x: &[f64], cin: usize, h: usize, wd: usize) -> Vec<f64> {
        let cout = b.len();
        let mut out = vec![0.0; cout * h * wd];
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = b[o];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                s += w[o * cin * 9 + ci * 9 + ky * 3 + kx]
                                    * x[ci * h * wd + sy as usize * wd + sx as usize];
                            }
                        }
                    }
                    out[o * h * wd + y * wd + xx] = s;
                }
            }
        }
        out
    }

    fn ramp(n: usize, k: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * k).sin() * 0.7).collect()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (cin, cout, h, w) = (2, 3, 5, 4);
        let wt = ramp(cout * cin * 9, 0.37);
        let b = ramp(cout, 1.1);
        let x = ramp(cin * h * w, 0.53);
        let (y, _) = conv3x3(&wt, &b, &x, cin, h, w);
        let y2 = naive_conv(&wt, &b, &x, cin, h, w);
        for (a, c) in y.iter().zip(&y2) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let (cin, cout, h, w) = (2, 2, 4, 4);
        let wt = ramp(cout * cin * 9, 0.41);
        let b = ramp(cout, 0.9);
        let x = ramp(cin * h * w, 0.29);
        let dy = ramp(cout * h * w, 0.77);
        let loss = |wt: &[f64], x: &[f64]| -> f64 {
            let (y, _) = conv3x3(wt, &b, x, cin, h, w);
            y.iter().zip(&dy).map(|(a, g)| a * g).sum()
        };
        let (_, cache) = conv3x3(&wt, &b, &x, cin, h, w);
        let mut dw = vec![0.0; wt.len()];
        let mut db = vec![0.0; b.len()];
        let dx = conv3x3_backward(&wt, &cache, &dy, cin, h, w, &mut dw, &mut db, true).unwrap();
        let eps = 1e-6;
        for i in 0..wt.len() {
            let mut p = wt.clone();
            p[i] += eps;
            let mut m = wt.clone();
            m[i] -= eps;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps);
            assert!((fd - dw[i]).abs() < 1e-6);
        }
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += eps;
            let mut m = x.clone();
            m[i] -= eps;
            let fd = (loss(&wt, &p) - loss(&wt, &m)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        let x = ramp(2 * 4 * 4, 0.3);
        let y = ramp(2 * 2 * 2, 0.8);
        let lhs: f64 = avgpool2(&x, 2, 4, 4).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&avgpool2_backward(&y, 2, 4, 4)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let lhs: f64 = upsample2(&y, 2, 2, 2).iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs: f64 = y.iter().zip(&upsample2_backward(&x, 2, 2, 2)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn silu_grad_matches_difference_quotient() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
