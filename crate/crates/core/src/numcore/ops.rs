use super::tensor::Real;
use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(energies: &[T]) -> Result<Vec<T>> {
    if energies.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    Ok(softmax_unchecked(energies))
}

pub(crate) fn softmax_unchecked<T: Real>(energies: &[T]) -> Vec<T> {
    let max = energies
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let exps: Vec<T> = energies.iter().map(|&e| (e - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Logistic sigmoid, evaluated without overflow on either tail.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `out[r×c] += a[r×k] · b[k×c]`
pub(crate) fn gemm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let row = &a[i * k..(i + 1) * k];
        let dst = &mut out[i * c..(i + 1) * c];
        for (p, &aip) in row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let src = &b[p * c..(p + 1) * c];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + aip * s;
            }
        }
    }
}

/// `out[r×c] += aᵀ · b` where `a` is `k×r` and `b` is `k×c`.
pub(crate) fn gemm_ta_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], k: usize, r: usize, c: usize) {
    for p in 0..k {
        let arow = &a[p * r..(p + 1) * r];
        let brow = &b[p * c..(p + 1) * c];
        for (i, &api) in arow.iter().enumerate() {
            if api == T::zero() {
                continue;
            }
            let dst = &mut out[i * c..(i + 1) * c];
            for (d, &s) in dst.iter_mut().zip(brow) {
                *d = *d + api * s;
            }
        }
    }
}

/// `out[r×k] += a[r×c] · bᵀ` where `b` is `k×c`.
pub(crate) fn gemm_tb_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], r: usize, c: usize, k: usize) {
    for i in 0..r {
        let arow = &a[i * c..(i + 1) * c];
        for j in 0..k {
            let brow = &b[j * c..(j + 1) * c];
            let dot: T = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            out[i * k + j] = out[i * k + j] + dot;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0f64, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(softmax(&[5.3f64]).unwrap(), vec![1.0]);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(softmax::<f64>(&[]), Err(Error::Empty(_))));
        assert!(softmax(&[0.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn softmax_survives_large_energies() {
        let p = softmax(&[1000.0f64, 1000.0, 999.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(100.0f64) - 1.0).abs() < 1e-12);
        assert!((sigmoid(1.5f64) + sigmoid(-1.5f64) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-800.0f64) >= 0.0);
    }

    #[test]
    fn gemm_kernels_agree() {
        // a: 2x3, b: 3x2
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut out = [0.0; 4];
        gemm_acc(&a, &b, &mut out, 2, 3, 2);
        assert_eq!(out, [58.0, 64.0, 139.0, 154.0]);

        // aᵀ b with a viewed as 3x2 (k=3, r=2) against b 3x2
        let mut out = [0.0; 4];
        gemm_ta_acc(&a, &b, &mut out, 3, 2, 2);
        // a as 3x2 = [[1,2],[3,4],[5,6]]; aᵀ b = [[1*7+3*9+5*11, 1*8+3*10+5*12],[2*7+4*9+6*11, 2*8+4*10+6*12]]
        assert_eq!(out, [89.0, 98.0, 116.0, 128.0]);

        // a(2x3) · bᵀ with b viewed as 2x3
        let mut out = [0.0; 4];
        gemm_tb_acc(&a, &b, &mut out, 2, 3, 2);
        assert_eq!(out, [50.0, 68.0, 122.0, 167.0]);
    }
}
