//! Forward and backward kernels. These work on raw buffers and know nothing
//! about the tape; [`crate::tape::Tape`] wires them into the graph.

pub(crate) mod conv;
pub(crate) mod pool;
pub(crate) mod resample;

/// `c = a * b + beta * c` with explicit (row, column) strides for `a` and `b`.
/// `c` is dense row-major `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    assert!(b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Mean computed as an offset from the first element, so constant inputs
/// give their value back exactly.
pub(crate) fn shifted_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else {
        return 0.0;
    };
    let mut count = 1usize;
    let mut acc = 0.0;
    for v in it {
        acc += v - first;
        count += 1;
    }
    first + acc / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposed_operand() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        // b^T stored row-major as n x k
        let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        let mut c1 = vec![0.0; m * n];
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, &a, (k, 1), &b, (n, 1), &mut c1, 0.0);
        gemm(m, k, n, &a, (k, 1), &bt, (1, k), &mut c2, 0.0);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
                assert!((c1[i * n + j] - want).abs() < 1e-12);
                assert!((c2[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shifted_mean_is_exact_on_constants() {
        let v = [0.1; 7];
        assert_eq!(shifted_mean(v.iter().copied()), 0.1);
        assert_eq!(shifted_mean([1.0, 2.0, 3.0, 6.0].iter().copied()), 3.0);
    }
}
