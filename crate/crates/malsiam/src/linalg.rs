//! Symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Used by the 2-component PCA over learned distance features and by the
//! ZCA whitening utility. Jacobi is quadratic-ish per sweep but utterly
//! robust for the small symmetric matrices those call sites produce, and it
//! keeps the crate free of a heavyweight linear-algebra dependency.

/// Eigendecomposition of a symmetric `n x n` matrix (row-major, only assumed
/// symmetric; the lower triangle is trusted).
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues sorted in
/// descending order and `eigenvectors` a row-major `n x n` matrix whose
/// *rows* are the corresponding unit eigenvectors.
///
/// The sign of each eigenvector is normalised so its largest-magnitude
/// component is positive (first such component on ties), making the output
/// deterministic.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n, "matrix must be n*n");
    let mut m = a.to_vec();
    // V accumulates rotations; columns of V are eigenvectors of A.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * (1.0 + frob);

    for _sweep in 0..100 {
        let off: f64 = {
            let mut s = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    s += m[p * n + q] * m[p * n + q];
                }
            }
            s.sqrt()
        };
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-angle root of t^2 + 2t*theta - 1 = 0, computed in
                // the cancellation-free form.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let aip = m[i * n + p];
                    let aiq = m[i * n + q];
                    m[i * n + p] = c * aip - s * aiq;
                    m[p * n + i] = m[i * n + p];
                    m[i * n + q] = s * aip + c * aiq;
                    m[q * n + i] = m[i * n + q];
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    // Sort eigenpairs by descending eigenvalue; extract V's columns as rows.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = vec![0.0; n * n];
    for (row, &col) in order.iter().enumerate() {
        eigenvalues.push(m[col * n + col]);
        for i in 0..n {
            eigenvectors[row * n + i] = v[i * n + col];
        }
        // Deterministic sign: largest-|component| entry made positive.
        let vec_row = &mut eigenvectors[row * n..(row + 1) * n];
        let mut lead = 0usize;
        for (i, x) in vec_row.iter().enumerate() {
            if x.abs() > vec_row[lead].abs() {
                lead = i;
            }
        }
        if vec_row[lead] < 0.0 {
            for x in vec_row.iter_mut() {
                *x = -*x;
            }
        }
    }
    (eigenvalues, eigenvectors)
}
