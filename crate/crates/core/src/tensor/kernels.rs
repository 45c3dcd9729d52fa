//! Plain-loop dense kernels. Loop orders keep the innermost loop contiguous so
//! the compiler can vectorize; reduction order is fixed for reproducibility.

use super::Real;

/// `out[m,n] = a[m,k] · b[k,n]`.
pub fn matmul_into<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|x| *x = F::zero());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m,k] += d[m,n] · b[k,n]ᵀ` (gradient wrt the left operand).
pub fn matmul_nt_acc<F: Real>(d: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(d.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = F::zero();
            for (&x, &y) in drow.iter().zip(brow) {
                s += x * y;
            }
            out[i * k + p] += s;
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · d[m,n]` (gradient wrt the right operand).
pub fn matmul_tn_acc<F: Real>(a: &[F], d: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(d.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &dv) in orow.iter_mut().zip(drow) {
                *o += aip * dv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn kernels_agree_with_naive_triple_loop() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut c = vec![0.0; m * n];
        matmul_into(&a, &b, m, k, n, &mut c);
        let want = naive(&a, &b, m, k, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // d·bᵀ against naive with explicit transpose
        let d: Vec<f64> = (0..m * n).map(|i| i as f64 - 3.0).collect();
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut ga = vec![0.0; m * k];
        matmul_nt_acc(&d, &b, m, k, n, &mut ga);
        for (x, y) in ga.iter().zip(&naive(&d, &bt, m, n, k)) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut gb = vec![0.0; k * n];
        matmul_tn_acc(&a, &d, m, k, n, &mut gb);
        for (x, y) in gb.iter().zip(&naive(&at, &d, k, m, n)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
