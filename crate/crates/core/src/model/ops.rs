//! Forward and backward kernels for a single sequence. All buffers are
//! row-major; backward kernels accumulate into their gradient outputs.

use super::Real;

/// `c = a · b + beta * c` with explicit strides for `a` and `b`; `c` is a
/// dense row-major `m × n` matrix.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm: output too small");
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs out of bounds");
        assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs out of bounds");
    }
    // SAFETY: every index the kernel touches was bounds-checked above, and
    // `c` does not alias `a` or `b` because it is borrowed mutably.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out (m×n) = inp (m×k) · wᵀ + bias`, with `w` stored as `n × k`.
pub fn linear_forward<T: Real>(out: &mut [T], inp: &[T], w: &[T], bias: Option<&[T]>, m: usize, k: usize, n: usize) {
    gemm(m, k, n, inp, (k, 1), w, (1, k), T::zero(), out);
    if let Some(bias) = bias {
        for row in out[..m * n].chunks_exact_mut(n) {
            for (o, &b) in row.iter_mut().zip(bias) {
                *o = *o + b;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    dinp: &mut [T],
    dw: &mut [T],
    dbias: Option<&mut [T]>,
    dout: &[T],
    inp: &[T],
    w: &[T],
    m: usize,
    k: usize,
    n: usize,
) {
    gemm(m, n, k, dout, (n, 1), w, (k, 1), T::one(), dinp);
    gemm(n, m, k, dout, (1, n), inp, (k, 1), T::one(), dw);
    if let Some(dbias) = dbias {
        for row in dout[..m * n].chunks_exact(n) {
            for (d, &g) in dbias.iter_mut().zip(row) {
                *d = *d + g;
            }
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

#[allow(clippy::too_many_arguments)]
pub fn layernorm_forward<T: Real>(
    out: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
    inp: &[T],
    gain: &[T],
    bias: &[T],
    t: usize,
    c: usize,
) {
    let n = T::from_f64(c as f64);
    let eps = T::from_f64(LN_EPS);
    for i in 0..t {
        let x = &inp[i * c..(i + 1) * c];
        let m = x.iter().fold(T::zero(), |acc, &v| acc + v) / n;
        let var = x.iter().fold(T::zero(), |acc, &v| acc + (v - m) * (v - m)) / n;
        let s = T::one() / (var + eps).sqrt();
        let o = &mut out[i * c..(i + 1) * c];
        for j in 0..c {
            o[j] = (x[j] - m) * s * gain[j] + bias[j];
        }
        mean[i] = m;
        rstd[i] = s;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward<T: Real>(
    dinp: &mut [T],
    dgain: &mut [T],
    dbias: &mut [T],
    dout: &[T],
    inp: &[T],
    gain: &[T],
    mean: &[T],
    rstd: &[T],
    t: usize,
    c: usize,
) {
    let n = T::from_f64(c as f64);
    for i in 0..t {
        let x = &inp[i * c..(i + 1) * c];
        let dy = &dout[i * c..(i + 1) * c];
        let (m, s) = (mean[i], rstd[i]);
        let mut dnorm_mean = T::zero();
        let mut dnorm_norm_mean = T::zero();
        for j in 0..c {
            let norm = (x[j] - m) * s;
            let dnorm = gain[j] * dy[j];
            dnorm_mean = dnorm_mean + dnorm;
            dnorm_norm_mean = dnorm_norm_mean + dnorm * norm;
        }
        dnorm_mean = dnorm_mean / n;
        dnorm_norm_mean = dnorm_norm_mean / n;
        let dx = &mut dinp[i * c..(i + 1) * c];
        for j in 0..c {
            let norm = (x[j] - m) * s;
            let dnorm = gain[j] * dy[j];
            dbias[j] = dbias[j] + dy[j];
            dgain[j] = dgain[j] + norm * dy[j];
            dx[j] = dx[j] + (dnorm - dnorm_mean - norm * dnorm_norm_mean) * s;
        }
    }
}

/// Causal multi-head self-attention over a packed `t × 3c` q/k/v buffer.
/// `att` receives the `heads × t × t` attention probabilities (zero above
/// the diagonal).
pub fn attention_forward<T: Real>(out: &mut [T], att: &mut [T], qkv: &[T], t: usize, c: usize, heads: usize) {
    let hs = c / heads;
    let scale = T::one() / T::from_f64(hs as f64).sqrt();
    let c3 = 3 * c;
    for h in 0..heads {
        for i in 0..t {
            let q = &qkv[i * c3 + h * hs..i * c3 + (h + 1) * hs];
            let row = &mut att[(h * t + i) * t..(h * t + i + 1) * t];
            let mut max = T::neg_infinity();
            for j in 0..=i {
                let k = &qkv[j * c3 + c + h * hs..j * c3 + c + (h + 1) * hs];
                let dot = q.iter().zip(k).fold(T::zero(), |acc, (&a, &b)| acc + a * b) * scale;
                row[j] = dot;
                if dot > max {
                    max = dot;
                }
            }
            let mut sum = T::zero();
            for r in row.iter_mut().take(i + 1) {
                *r = (*r - max).exp();
                sum = sum + *r;
            }
            let inv = T::one() / sum;
            for r in row.iter_mut().take(i + 1) {
                *r = *r * inv;
            }
            for r in row.iter_mut().skip(i + 1) {
                *r = T::zero();
            }
            let y = &mut out[i * c + h * hs..i * c + (h + 1) * hs];
            y.iter_mut().for_each(|v| *v = T::zero());
            for (j, &a) in row.iter().enumerate().take(i + 1) {
                let v = &qkv[j * c3 + 2 * c + h * hs..j * c3 + 2 * c + (h + 1) * hs];
                for (yy, &vv) in y.iter_mut().zip(v) {
                    *yy = *yy + a * vv;
                }
            }
        }
    }
}

pub fn attention_backward<T: Real>(
    dqkv: &mut [T],
    dout: &[T],
    qkv: &[T],
    att: &[T],
    t: usize,
    c: usize,
    heads: usize,
) {
    let hs = c / heads;
    let scale = T::one() / T::from_f64(hs as f64).sqrt();
    let c3 = 3 * c;
    let mut datt = vec![T::zero(); t];
    for h in 0..heads {
        for i in 0..t {
            let row = &att[(h * t + i) * t..(h * t + i + 1) * t];
            let dy = &dout[i * c + h * hs..i * c + (h + 1) * hs];
            for j in 0..=i {
                let voff = j * c3 + 2 * c + h * hs;
                let mut d = T::zero();
                for k in 0..hs {
                    d = d + dy[k] * qkv[voff + k];
                    dqkv[voff + k] = dqkv[voff + k] + row[j] * dy[k];
                }
                datt[j] = d;
            }
            let dot = (0..=i).fold(T::zero(), |acc, j| acc + row[j] * datt[j]);
            let qoff = i * c3 + h * hs;
            for j in 0..=i {
                let dpre = row[j] * (datt[j] - dot) * scale;
                if dpre == T::zero() {
                    continue;
                }
                let koff = j * c3 + c + h * hs;
                for k in 0..hs {
                    dqkv[qoff + k] = dqkv[qoff + k] + dpre * qkv[koff + k];
                    dqkv[koff + k] = dqkv[koff + k] + dpre * qkv[qoff + k];
                }
            }
        }
    }
}

const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_CUBIC: f64 = 0.044715;

pub fn gelu_forward<T: Real>(out: &mut [T], inp: &[T]) {
    let s = T::from_f64(GELU_SCALE);
    let a = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    for (o, &x) in out.iter_mut().zip(inp) {
        let u = s * (x + a * x * x * x);
        *o = half * x * (T::one() + u.tanh());
    }
}

pub fn gelu_backward<T: Real>(dinp: &mut [T], inp: &[T], dout: &[T]) {
    let s = T::from_f64(GELU_SCALE);
    let a = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    for ((d, &x), &g) in dinp.iter_mut().zip(inp).zip(dout) {
        let u = s * (x + a * x * x * x);
        let th = u.tanh();
        let sech2 = T::one() - th * th;
        let local = half * (T::one() + th) + half * x * sech2 * s * (T::one() + three * a * x * x);
        *d = *d + local * g;
    }
}

/// Log-softmax of one row, computed in f64.
pub fn log_softmax_row<T: Real>(row: &[T]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64()));
    let lse = max + row.iter().map(|&v| (v.to_f64() - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v.to_f64() - lse).collect()
}
