use crate::error::{Error, Result};

use super::dense::{axpy, DenseMatrix};

/// Compressed sparse row matrix over `f32`.
///
/// Exact zeros are never stored: `nnz` is the true count of nonzero weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f32>,
}

impl CsrMatrix {
    /// Validating constructor. Every CSR invariant is checked: pointer shape
    /// and monotonicity, strictly increasing in-range columns per row, and
    /// nonzero finite values.
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f32>,
    ) -> Result<Self> {
        check_compressed_index("CSR", rows, cols, &row_ptr, &col_idx)?;
        if values.len() != col_idx.len() {
            return Err(Error::invalid(format!(
                "CSR has {} column indices but {} values",
                col_idx.len(),
                values.len()
            )));
        }
        if let Some(p) = values.iter().position(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "CSR value {p} is {} (stored values must be nonzero and finite)",
                values[p]
            )));
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Compresses a dense matrix, dropping exact zeros.
    pub fn from_dense(m: &DenseMatrix) -> Self {
        let (rows, cols) = m.shape();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..rows {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c as u32);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = vec![0.0f32; self.rows * self.cols];
        for r in 0..self.rows {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[r * self.cols + self.col_idx[p] as usize] = self.values[p];
            }
        }
        DenseMatrix::from_parts(self.rows, self.cols, out)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// CSR invariants over an index structure (shared with the BSR block grid).
pub(crate) fn check_compressed_index(
    what: &str,
    rows: usize,
    cols: usize,
    ptr: &[usize],
    idx: &[u32],
) -> Result<()> {
    if ptr.len() != rows + 1 {
        return Err(Error::invalid(format!(
            "{what} pointer array has length {}, expected {}",
            ptr.len(),
            rows + 1
        )));
    }
    if ptr[0] != 0 {
        return Err(Error::invalid(format!("{what} pointer array must start at 0")));
    }
    if ptr[rows] != idx.len() {
        return Err(Error::invalid(format!(
            "{what} pointer array ends at {}, but {} entries are stored",
            ptr[rows],
            idx.len()
        )));
    }
    for r in 0..rows {
        let (lo, hi) = (ptr[r], ptr[r + 1]);
        if lo > hi {
            return Err(Error::invalid(format!("{what} pointer decreases at row {r}")));
        }
        let row = &idx[lo..hi];
        for (i, &c) in row.iter().enumerate() {
            if c as usize >= cols {
                return Err(Error::invalid(format!(
                    "{what} row {r}: column {c} out of range (< {cols})"
                )));
            }
            if i > 0 && row[i - 1] >= c {
                return Err(Error::invalid(format!(
                    "{what} row {r}: columns not strictly increasing"
                )));
            }
        }
    }
    Ok(())
}

/// Sparse × dense product `s × d`.
pub fn spmm_csr(s: &CsrMatrix, d: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols != d.rows() {
        return Err(Error::dims("spmm_csr", format!("d.rows == {}", s.cols), d.rows()));
    }
    let n = d.cols();
    let mut out = vec![0.0f32; s.rows * n];
    if n == 0 {
        return Ok(DenseMatrix::from_parts(s.rows, n, out));
    }
    let dv = d.values();
    for (r, out_row) in out.chunks_exact_mut(n).enumerate() {
        let (lo, hi) = (s.row_ptr[r], s.row_ptr[r + 1]);
        for (&c, &a) in s.col_idx[lo..hi].iter().zip(&s.values[lo..hi]) {
            let c = c as usize;
            axpy(a, &dv[c * n..(c + 1) * n], out_row);
        }
    }
    Ok(DenseMatrix::from_parts(s.rows, n, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::dense_matmul;

    #[test]
    fn sparse_identity() {
        let d = DenseMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = CsrMatrix::from_dense(&DenseMatrix::identity(3));
        assert_eq!(s.nnz(), 3);
        assert_eq!(spmm_csr(&s, &d).unwrap(), d);
    }

    #[test]
    fn anti_diagonal() {
        let s = CsrMatrix::from_dense(&DenseMatrix::new(2, 2, vec![0.0, 2.0, 3.0, 0.0]).unwrap());
        let d = DenseMatrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let want = dense_matmul(&s.to_dense(), &d).unwrap();
        let got = spmm_csr(&s, &d).unwrap();
        assert_eq!(got.values(), &[2.0, 3.0]);
        assert_eq!(got, want);
    }

    #[test]
    fn malformed_rejected() {
        // pointer does not start at zero
        assert!(CsrMatrix::new(1, 2, vec![1, 1], vec![0], vec![1.0]).is_err());
        // decreasing pointer
        assert!(CsrMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        // unsorted columns
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        // duplicate column
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![1, 1], vec![1.0, 1.0]).is_err());
        // column out of range
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        // stored zero
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![0], vec![0.0]).is_err());
        // non-finite
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![0], vec![f32::INFINITY]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![1], vec![2.5]).is_ok());
    }

    #[test]
    fn dimension_mismatch() {
        let s = CsrMatrix::from_dense(&DenseMatrix::identity(3));
        assert!(spmm_csr(&s, &DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn from_dense_drops_zeros() {
        let m = DenseMatrix::new(2, 3, vec![0.0, 1.0, 0.0, -2.0, 0.0, 0.5]).unwrap();
        let s = CsrMatrix::from_dense(&m);
        assert_eq!(s.nnz(), 3);
        assert_eq!(s.row_ptr(), &[0, 1, 3]);
        assert_eq!(s.col_idx(), &[1, 0, 2]);
        assert_eq!(s.to_dense(), m);
    }
}
