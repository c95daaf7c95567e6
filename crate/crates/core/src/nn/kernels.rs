//! Forward and backward kernels for the shape-manipulating and elementwise
//! operations, shared by the eager evaluator and the gradient tape.

use super::tensor::Tensor;

pub const LN2: f64 = std::f64::consts::LN_2;

#[inline]
pub fn leaky(v: f64, slope: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Half-sample symmetric index extension: `-1 -> 0`, `n -> n-1`.
#[inline]
pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

pub fn pad_sym(x: &Tensor, p: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = Tensor::zeros([n, c, ph, pw]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..ph {
                let sy = mirror(y as isize - p as isize, h);
                for xx in 0..pw {
                    let sx = mirror(xx as isize - p as isize, w);
                    dst[y * pw + xx] = src[sy * w + sx];
                }
            }
        }
    }
    out
}

pub fn pad_sym_backward(g: &Tensor, p: usize, in_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = in_shape;
    let pw = w + 2 * p;
    let mut out = Tensor::zeros(in_shape);
    for b in 0..n {
        for ch in 0..c {
            let src = g.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h + 2 * p {
                let sy = mirror(y as isize - p as isize, h);
                for xx in 0..pw {
                    let sx = mirror(xx as isize - p as isize, w);
                    dst[sy * w + sx] += src[y * pw + xx];
                }
            }
        }
    }
    out
}

pub fn upsample2x(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2x_backward(g: &Tensor) -> Tensor {
    let [n, c, h2, w2] = g.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = g.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h2 {
                for xx in 0..w2 {
                    dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
                }
            }
        }
    }
    out
}

/// Columns `parity, parity + 2, ...`.
pub fn split_cols(x: &Tensor, parity: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    assert!(w % 2 == 0, "split_cols needs even width, got {w}");
    let hw = w / 2;
    let mut out = Tensor::zeros([n, c, h, hw]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                for m in 0..hw {
                    dst[y * hw + m] = src[y * w + 2 * m + parity];
                }
            }
        }
    }
    out
}

pub fn interleave_cols(even: &Tensor, odd: &Tensor) -> Tensor {
    assert_eq!(even.shape(), odd.shape(), "interleave shape mismatch");
    let [n, c, h, hw] = even.shape();
    let w = 2 * hw;
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let e = even.plane(b, ch);
            let o = odd.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                for m in 0..hw {
                    dst[y * w + 2 * m] = e[y * hw + m];
                    dst[y * w + 2 * m + 1] = o[y * hw + m];
                }
            }
        }
    }
    out
}

pub fn transpose(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, w, h]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                for xx in 0..w {
                    dst[xx * h + y] = src[y * w + xx];
                }
            }
        }
    }
    out
}

/// `out[.., x] = in[.., clamp(x + offset)]` (edge replication).
pub fn shift_cols(x: &Tensor, offset: isize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                for xx in 0..w {
                    let sx = (xx as isize + offset).clamp(0, w as isize - 1) as usize;
                    dst[y * w + xx] = src[y * w + sx];
                }
            }
        }
    }
    out
}

pub fn shift_cols_backward(g: &Tensor, offset: isize) -> Tensor {
    let [n, c, h, w] = g.shape();
    let mut out = Tensor::zeros(g.shape());
    for b in 0..n {
        for ch in 0..c {
            let src = g.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                for xx in 0..w {
                    let sx = (xx as isize + offset).clamp(0, w as isize - 1) as usize;
                    dst[y * w + sx] += src[y * w + xx];
                }
            }
        }
    }
    out
}

pub fn concat_channels(xs: &[&Tensor]) -> Tensor {
    let [n, _, h, w] = xs[0].shape();
    let c: usize = xs.iter().map(|t| t.c()).sum();
    for t in xs {
        assert_eq!((t.n(), t.h(), t.w()), (n, h, w), "concat shape mismatch");
    }
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        let mut oc = 0;
        for t in xs {
            for ch in 0..t.c() {
                out.plane_mut(b, oc).copy_from_slice(t.plane(b, ch));
                oc += 1;
            }
        }
    }
    out
}

pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    assert!(start + len <= c, "channel slice out of range");
    let mut out = Tensor::zeros([n, len, h, w]);
    for b in 0..n {
        for ch in 0..len {
            out.plane_mut(b, ch).copy_from_slice(x.plane(b, start + ch));
        }
    }
    out
}

/// Round half away from zero.
#[inline]
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Bits of the Laplace bin `[v - 0.5, v + 0.5]` with location `mu`, scale `s`.
pub fn laplace_bits(v: f64, mu: f64, s: f64) -> f64 {
    -laplace_log_bin(v - mu, s) / LN2
}

/// `ln P(t - 0.5 < X - mu < t + 0.5)` for a Laplace of scale `s`, stable in both tails.
pub fn laplace_log_bin(t: f64, s: f64) -> f64 {
    let a = t - 0.5;
    let b = t + 0.5;
    if a >= 0.0 {
        0.5f64.ln() - a / s + (-(-1.0 / s).exp_m1()).ln()
    } else if b <= 0.0 {
        0.5f64.ln() + b / s + (-(-1.0 / s).exp_m1()).ln()
    } else {
        (1.0 - 0.5 * (a / s).exp() - 0.5 * (-b / s).exp()).ln()
    }
}

/// Partial derivatives of [`laplace_bits`] with respect to `(v, mu, s)`.
pub fn laplace_bits_grad(v: f64, mu: f64, s: f64) -> (f64, f64, f64) {
    let t = v - mu;
    let a = t - 0.5;
    let b = t + 0.5;
    // derivatives of ln P with respect to t and s
    let (dt, ds) = if a >= 0.0 {
        let tail = 1.0 / (s * s * (1.0 / s).exp_m1());
        (-1.0 / s, a / (s * s) - tail)
    } else if b <= 0.0 {
        let tail = 1.0 / (s * s * (1.0 / s).exp_m1());
        (1.0 / s, -b / (s * s) - tail)
    } else {
        let ea = (a / s).exp();
        let eb = (-b / s).exp();
        let p = 1.0 - 0.5 * ea - 0.5 * eb;
        let dp_dt = -0.5 / s * ea + 0.5 / s * eb;
        let dp_ds = 0.5 * a / (s * s) * ea - 0.5 * b / (s * s) * eb;
        (dp_dt / p, dp_ds / p)
    };
    let k = -1.0 / LN2;
    (k * dt, -k * dt, k * ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_bin_at_mode() {
        // 1 - exp(-0.5)
        let p = laplace_log_bin(0.0, 1.0).exp();
        assert!((p - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!((laplace_bits(0.0, 0.0, 1.0) + (1.0 - (-0.5f64).exp()).log2()).abs() < 1e-12);
        assert!((laplace_bits(0.0, 0.0, 1.0) - 1.3458).abs() < 2e-4);
    }

    #[test]
    fn laplace_grad_matches_differences() {
        let h = 1e-6;
        for &(v, mu, s) in &[(3.0, 0.2, 1.3), (-2.0, 0.7, 0.4), (0.0, 0.1, 2.0), (1.0, 0.45, 0.9), (40.0, -3.0, 0.5)] {
            let (gv, gm, gs) = laplace_bits_grad(v, mu, s);
            let fv = (laplace_bits(v + h, mu, s) - laplace_bits(v - h, mu, s)) / (2.0 * h);
            let fm = (laplace_bits(v, mu + h, s) - laplace_bits(v, mu - h, s)) / (2.0 * h);
            let fs = (laplace_bits(v, mu, s + h) - laplace_bits(v, mu, s - h)) / (2.0 * h);
            for (a, f) in [(gv, fv), (gm, fm), (gs, fs)] {
                assert!((a - f).abs() <= 1e-6 * (1.0 + f.abs()), "{v} {mu} {s}: {a} vs {f}");
            }
        }
    }

    #[test]
    fn mirror_extension() {
        assert_eq!(mirror(-1, 4), 0);
        assert_eq!(mirror(-2, 4), 1);
        assert_eq!(mirror(4, 4), 3);
        assert_eq!(mirror(5, 4), 2);
        assert_eq!(mirror(-1, 1), 0);
        assert_eq!(mirror(1, 1), 0);
    }
}
