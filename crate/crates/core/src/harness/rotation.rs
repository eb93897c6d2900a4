use crate::error::{Error, Result};
use crate::numkit::{Matrix, NodeId, Tape};

/// Orthonormalizes the rows of `r` by classical Gram-Schmidt, recorded on the
/// tape so gradients flow back to `r`.
pub fn gram_schmidt_node(tape: &mut Tape, r: NodeId) -> Result<NodeId> {
    let n = tape.value(r).rows();
    let mut done: Vec<NodeId> = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = tape.row(r, i);
        if !done.is_empty() {
            let q = tape.stack_rows(&done);
            let qt = tape.transpose(q);
            let coef = tape.matmul(v, qt);
            let proj = tape.matmul(coef, q);
            v = tape.sub(v, proj);
        }
        let q = tape.rowwise_normalize(v).map_err(|e| match e {
            Error::DegenerateRow { norm, .. } => Error::GramSchmidtDegenerate { row: i, norm },
            other => other,
        })?;
        done.push(q);
    }
    Ok(tape.stack_rows(&done))
}

/// Orthonormal rows of `r` (value only).
pub fn gram_schmidt(r: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let node = tape.constant(r.clone());
    let q = gram_schmidt_node(&mut tape, node)?;
    Ok(tape.value(q).clone())
}

/// `max |Q Qᵀ - I|`.
pub fn orthogonality_error(q: &Matrix) -> f64 {
    q.matmul(&q.transpose())
        .max_abs_diff(&Matrix::identity(q.rows()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gaussian_matrix;
    use crate::numkit::gradcheck::{central_difference, relative_error, FD_STEP};

    #[test]
    fn output_is_orthonormal_and_spans_the_same_flag() {
        let r = gaussian_matrix(6, 6, 1, 1.0);
        let q = gram_schmidt(&r).unwrap();
        assert!(orthogonality_error(&q) < 1e-12);
        // Row i of R lies in the span of the first i + 1 rows of Q.
        let coef = r.matmul(&q.transpose());
        for i in 0..6 {
            for j in i + 1..6 {
                assert!(coef.get(i, j).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_is_fixed() {
        assert!(
            gram_schmidt(&Matrix::identity(4))
                .unwrap()
                .max_abs_diff(&Matrix::identity(4))
                < 1e-15
        );
    }

    #[test]
    fn dependent_rows_are_reported() {
        let r = Matrix::from_rows(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!(matches!(
            gram_schmidt(&r),
            Err(Error::GramSchmidtDegenerate { row: 1, .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let r = gaussian_matrix(4, 4, 2, 1.0).add(&Matrix::identity(4).scale(2.0));
        let c = gaussian_matrix(4, 4, 3, 1.0);
        let f = |m: &Matrix| -> Result<f64> { Ok(gram_schmidt(m)?.hadamard(&c).sum()) };
        let mut tape = Tape::new();
        let rn = tape.var(r.clone());
        let q = gram_schmidt_node(&mut tape, rn).unwrap();
        let cn = tape.constant(c.clone());
        let prod = tape.mul(q, cn);
        let loss = tape.sum(prod);
        let g = tape.backward(loss).unwrap().wrt(rn).clone();
        let fd = central_difference(&r, FD_STEP, f).unwrap();
        assert!(relative_error(&g, &fd) < 1e-7);
    }
}
