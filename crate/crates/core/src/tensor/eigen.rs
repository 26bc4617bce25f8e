//! Real nonsymmetric eigenvalues: balancing, Householder reduction to upper
//! Hessenberg form, then Francis double-shift QR iteration.
//!
//! Used as a numerical oracle by the stability diagnostics and by tests,
//! never on a training hot path.

use alloc::vec;
use alloc::vec::Vec;

use super::Matrix;
use crate::error::{Error, Result};

/// Deflate when a subdiagonal entry falls below this fraction of its
/// neighbouring diagonal magnitudes.
const DEFLATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn abs(self) -> f64 {
        libm::hypot(self.re, self.im)
    }
}

struct Dense {
    n: usize,
    a: Vec<f64>,
}

impl Dense {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }
    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.a[i * self.n + j]
    }
}

fn balance(m: &mut Dense) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let n = m.n;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += m.at(j, i).abs();
                    r += m.at(i, j).abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        *m.at_mut(i, j) *= g;
                    }
                    for j in 0..n {
                        *m.at_mut(j, i) *= f;
                    }
                }
            }
        }
    }
}

fn hessenberg(m: &mut Dense) {
    let n = m.n;
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let len = n - k - 1;
        let x0 = m.at(k + 1, k);
        let norm_x = libm::sqrt((k + 1..n).map(|i| m.at(i, k) * m.at(i, k)).sum::<f64>());
        if norm_x == 0.0 {
            continue;
        }
        let alpha = if x0 >= 0.0 { -norm_x } else { norm_x };
        for i in 0..len {
            v[i] = m.at(k + 1 + i, k);
        }
        v[0] -= alpha;
        let nv = libm::sqrt(v[..len].iter().map(|x| x * x).sum::<f64>());
        if nv == 0.0 {
            continue;
        }
        v[..len].iter_mut().for_each(|x| *x /= nv);
        // A <- (I - 2vvᵀ) A
        for j in 0..n {
            let s: f64 = (0..len).map(|i| v[i] * m.at(k + 1 + i, j)).sum();
            for i in 0..len {
                *m.at_mut(k + 1 + i, j) -= 2.0 * v[i] * s;
            }
        }
        // A <- A (I - 2vvᵀ)
        for i in 0..n {
            let s: f64 = (0..len).map(|j| m.at(i, k + 1 + j) * v[j]).sum();
            for j in 0..len {
                *m.at_mut(i, k + 1 + j) -= 2.0 * s * v[j];
            }
        }
        for i in k + 2..n {
            *m.at_mut(i, k) = 0.0;
        }
    }
}

#[inline]
fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix.
fn hqr(m: &mut Dense) -> Result<Vec<Complex>> {
    let n = m.n;
    let max_sweeps = 100 * n.max(1);
    let mut out = vec![Complex::new(0.0, 0.0); n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += m.at(i, j).abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let mut sweeps = 0usize;
    let (mut p, mut q, mut r);
    let (mut x, mut y, mut z, mut w);
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l >= 1 {
                let mut s = m.at(l - 1, l - 1).abs() + m.at(l, l).abs();
                if s == 0.0 {
                    s = anorm;
                }
                if m.at(l, l - 1).abs() <= DEFLATION_TOL * s {
                    *m.at_mut(l, l - 1) = 0.0;
                    break;
                }
                l -= 1;
            }
            x = m.at(nu, nu);
            if l == nu {
                out[nu] = Complex::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            y = m.at(nu - 1, nu - 1);
            w = m.at(nu, nu - 1) * m.at(nu - 1, nu);
            if l == nu - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                z = libm::sqrt(q.abs());
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    out[nu - 1] = Complex::new(x + z, 0.0);
                    out[nu] = Complex::new(if z != 0.0 { x - w / z } else { x + z }, 0.0);
                } else {
                    out[nu - 1] = Complex::new(x + p, z);
                    out[nu] = Complex::new(x + p, -z);
                }
                nn -= 2;
                break;
            }
            if sweeps >= max_sweeps {
                return Err(Error::NoConvergence {
                    op: "eigenvalues_qr",
                    iterations: sweeps,
                    residual: m.at(nu, nu - 1).abs(),
                    last: x + t,
                });
            }
            if its == 10 || its == 20 {
                // exceptional shift
                t += x;
                for i in 0..=nu {
                    *m.at_mut(i, i) -= x;
                }
                let s = m.at(nu, nu - 1).abs() + m.at(nu - 1, nu - 2).abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            sweeps += 1;
            let mut mm = nu - 2;
            loop {
                z = m.at(mm, mm);
                r = x - z;
                let s0 = y - z;
                p = (r * s0 - w) / m.at(mm + 1, mm) + m.at(mm, mm + 1);
                q = m.at(mm + 1, mm + 1) - z - r - s0;
                r = m.at(mm + 2, mm + 1);
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if mm == l {
                    break;
                }
                let u = m.at(mm, mm - 1).abs() * (q.abs() + r.abs());
                let v = p.abs() * (m.at(mm - 1, mm - 1).abs() + z.abs() + m.at(mm + 1, mm + 1).abs());
                if u + v == v {
                    break;
                }
                mm -= 1;
            }
            for i in mm + 2..=nu {
                *m.at_mut(i, i - 2) = 0.0;
                if i != mm + 2 {
                    *m.at_mut(i, i - 3) = 0.0;
                }
            }
            let mut k = mm;
            while k < nu {
                if k != mm {
                    p = m.at(k, k - 1);
                    q = m.at(k + 1, k - 1);
                    r = if k != nu - 1 { m.at(k + 2, k - 1) } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign(libm::sqrt(p * p + q * q + r * r), p);
                if s != 0.0 {
                    if k == mm {
                        if l != mm {
                            *m.at_mut(k, k - 1) = -m.at(k, k - 1);
                        }
                    } else {
                        *m.at_mut(k, k - 1) = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = m.at(k, j) + q * m.at(k + 1, j);
                        if k != nu - 1 {
                            pp += r * m.at(k + 2, j);
                            *m.at_mut(k + 2, j) -= pp * z;
                        }
                        *m.at_mut(k + 1, j) -= pp * y;
                        *m.at_mut(k, j) -= pp * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for i in l..=mmin {
                        let mut pp = x * m.at(i, k) + y * m.at(i, k + 1);
                        if k != nu - 1 {
                            pp += z * m.at(i, k + 2);
                            *m.at_mut(i, k + 2) -= pp * r;
                        }
                        *m.at_mut(i, k + 1) -= pp * q;
                        *m.at_mut(i, k) -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(out)
}

/// All eigenvalues of a square real matrix. Complex eigenvalues come out as
/// conjugate pairs, positive imaginary part first.
pub fn eigenvalues_qr(a: &Matrix) -> Result<Vec<Complex>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            op: "eigenvalues_qr",
            expected: (a.rows(), a.rows()),
            found: a.shape(),
        });
    }
    if !a.as_slice().iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite { op: "eigenvalues_qr" });
    }
    let mut m = Dense {
        n: a.rows(),
        a: a.as_slice().to_vec(),
    };
    balance(&mut m);
    hessenberg(&mut m);
    hqr(&mut m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_re(mut v: Vec<Complex>) -> Vec<Complex> {
        v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        v
    }

    #[test]
    fn canonical_skew() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]);
        let ev = sorted_re(eigenvalues_qr(&a).unwrap());
        assert!(ev.iter().all(|e| e.re.abs() < 1e-14));
        assert!((ev[0].im + 1.0).abs() < 1e-14 && (ev[1].im - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal() {
        let ev = sorted_re(eigenvalues_qr(&Matrix::from_diag(&[2.0, 3.0])).unwrap());
        assert_eq!(ev, vec![Complex::new(2.0, 0.0), Complex::new(3.0, 0.0)]);
    }

    #[test]
    fn companion_cubic() {
        // λ³ − 6λ² + 11λ − 6 = (λ−1)(λ−2)(λ−3)
        let c = Matrix::from_rows(&[[6.0, -11.0, 6.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let ev = sorted_re(eigenvalues_qr(&c).unwrap());
        for (e, want) in ev.iter().zip([1.0, 2.0, 3.0]) {
            assert!((e.re - want).abs() < 1e-8 && e.im.abs() < 1e-8, "{e:?}");
        }
    }

    #[test]
    fn one_by_one_and_empty() {
        assert_eq!(eigenvalues_qr(&Matrix::from_rows(&[[4.5]])).unwrap(), vec![Complex::new(4.5, 0.0)]);
        assert!(eigenvalues_qr(&Matrix::zeros(0, 0)).unwrap().is_empty());
    }

    #[test]
    fn rejects_non_square() {
        assert!(eigenvalues_qr(&Matrix::zeros(2, 3)).is_err());
    }
}
