use crate::error::{Error, Result};
use crate::kernels::{DenseMatrix, VectorF};

use super::autodiff;

/// `1 − x·y / (|x||y|)`, in `[0, 2]`. Accumulates in `f64`.
pub fn cosine_distance_loss(x: &VectorF, y: &VectorF) -> Result<f32> {
    let wide = |v: &VectorF| v.as_slice().iter().map(|a| *a as f64).collect::<Vec<_>>();
    autodiff::cosine_pair(&wide(x), &wide(y)).map(|(l, _, _)| l as f32)
}

/// Mean over query rows `i` of `−log softmax_j(q_i · d_j)[i]`. Row `i` of
/// `docs` is the positive of query `i`; rows past the query count are extra
/// negatives shared by every query.
pub fn inbatch_softmax_loss(queries: &DenseMatrix, docs: &DenseMatrix) -> Result<f32> {
    if queries.cols() != docs.cols() {
        return Err(Error::dims("inbatch_softmax_loss", queries.cols(), docs.cols()));
    }
    let rows = |m: &DenseMatrix| (0..m.rows()).map(|r| m.row(r).to_vec()).collect::<Vec<_>>();
    autodiff::inbatch_softmax(&rows(queries), &rows(docs)).map(|(l, _, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f32]) -> VectorF {
        VectorF::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!(cosine_distance_loss(&v(&[0.3, -2.0]), &v(&[0.3, -2.0])).unwrap().abs() < 1e-7);
        assert!((cosine_distance_loss(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-7);
        let expected = 1.0 - std::f64::consts::SQRT_2 / 2.0;
        let got = cosine_distance_loss(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((got as f64 - expected).abs() < 1e-6);
        assert!(cosine_distance_loss(&v(&[0.0, 0.0]), &v(&[1.0, 1.0])).is_err());
        assert!(cosine_distance_loss(&v(&[1.0]), &v(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn inbatch_examples() {
        let q = DenseMatrix::new(1, 2, vec![1.0, 0.5]).unwrap();
        let d = DenseMatrix::new(1, 2, vec![0.2, 0.7]).unwrap();
        assert_eq!(inbatch_softmax_loss(&q, &d).unwrap(), 0.0);
        // positive and negative both score 0
        let q = DenseMatrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let d = DenseMatrix::new(2, 2, vec![0.0, 1.0, 0.0, -1.0]).unwrap();
        let l = inbatch_softmax_loss(&q, &d).unwrap();
        assert!((l as f64 - std::f64::consts::LN_2).abs() < 1e-6);
        let d3 = DenseMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(inbatch_softmax_loss(&q, &d3).is_err());
    }

    #[test]
    fn inbatch_monotone_in_positive_score() {
        let q = DenseMatrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let mut last = f32::INFINITY;
        for s in [-1.0f32, 0.0, 0.5, 2.0] {
            let d = DenseMatrix::new(2, 2, vec![s, 0.0, 0.3, 0.0]).unwrap();
            let l = inbatch_softmax_loss(&q, &d).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    proptest::proptest! {
        #[test]
        fn cosine_bounds_and_scale_invariance(
            x in proptest::collection::vec(-3.0f32..3.0, 4),
            y in proptest::collection::vec(-3.0f32..3.0, 4),
            a in 0.01f32..50.0,
            b in 0.01f32..50.0,
        ) {
            let nx: f32 = x.iter().map(|v| v * v).sum();
            let ny: f32 = y.iter().map(|v| v * v).sum();
            proptest::prop_assume!(nx > 1e-3 && ny > 1e-3);
            let l = cosine_distance_loss(&v(&x), &v(&y)).unwrap();
            proptest::prop_assert!((-1e-6..=2.0 + 1e-6).contains(&l));
            let xs: Vec<f32> = x.iter().map(|v| v * a).collect();
            let ys: Vec<f32> = y.iter().map(|v| v * b).collect();
            let ls = cosine_distance_loss(&v(&xs), &v(&ys)).unwrap();
            proptest::prop_assert!((l - ls).abs() <= 1e-6, "{} vs {}", l, ls);
        }
    }
}
