//! Independent dense eigensolver used as an oracle.

use nalgebra::DMatrix;

/// Cyclic Jacobi eigen-decomposition, eigenpairs sorted by decreasing value.
pub fn jacobi(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Compares the leading `p` eigenvectors through the projectors of each
/// eigenvalue cluster, which fixes sign and rotation within degenerate spaces.
pub fn assert_same_eigenspaces(found: &DMatrix<f64>, found_values: &[f64], op: &DMatrix<f64>) {
    let (values, vectors) = jacobi(op);
    let p = found.ncols();
    for (a, b) in found_values.iter().zip(&values) {
        assert!((a - b).abs() < 1e-8, "eigenvalue {a} vs {b}");
    }
    let mut start = 0;
    while start < p {
        let mut end = start + 1;
        while end < values.len() && (values[end] - values[start]).abs() < 1e-8 {
            end += 1;
        }
        let oracle = vectors.columns(start, end - start);
        let oracle_proj = oracle * oracle.transpose();
        if end <= p {
            let mine = found.columns(start, end - start);
            assert!((mine * mine.transpose() - oracle_proj).amax() < 1e-8, "eigenspace {start}..{end}");
        } else {
            for c in start..p {
                let v = found.column(c);
                assert!((&oracle_proj * v - v).amax() < 1e-8, "vector {c} leaves its eigenspace");
            }
        }
        start = end;
    }
}
