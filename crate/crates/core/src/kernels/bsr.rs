use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::csr::check_compressed_index;
use super::dense::{axpy, DenseMatrix};

/// Shape of a dense block, `rows × cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockShape {
    pub rows: usize,
    pub cols: usize,
}

impl BlockShape {
    /// One output row by four input columns.
    pub const ONE_BY_FOUR: BlockShape = BlockShape { rows: 1, cols: 4 };

    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks that this block tiles a `rows × cols` matrix.
    pub fn check_divides(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("block shape must be nonzero"));
        }
        if rows % self.rows != 0 || cols % self.cols != 0 {
            return Err(Error::invalid(format!(
                "block {}x{} does not divide matrix {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for BlockShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for BlockShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::invalid(format!("block shape '{s}' is not RxC")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("block shape '{s}' is not RxC")))
        };
        Ok(Self::new(parse(r)?, parse(c)?))
    }
}

/// Block sparse row matrix: CSR indexing over a grid of dense blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BsrMatrix {
    rows: usize,
    cols: usize,
    block: BlockShape,
    block_ptr: Vec<usize>,
    block_idx: Vec<u32>,
    /// Stored blocks back to back, each row-major.
    block_values: Vec<f32>,
}

impl BsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        block: BlockShape,
        block_ptr: Vec<usize>,
        block_idx: Vec<u32>,
        block_values: Vec<f32>,
    ) -> Result<Self> {
        block.check_divides(rows, cols)?;
        check_compressed_index(
            "BSR",
            rows / block.rows,
            cols / block.cols,
            &block_ptr,
            &block_idx,
        )?;
        if block_values.len() != block_idx.len() * block.len() {
            return Err(Error::invalid(format!(
                "BSR has {} blocks but {} values (block {block})",
                block_idx.len(),
                block_values.len()
            )));
        }
        if block_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("BSR values must be finite"));
        }
        if let Some(b) = block_values
            .chunks_exact(block.len())
            .position(|blk| blk.iter().all(|v| *v == 0.0))
        {
            return Err(Error::invalid(format!("BSR block {b} is entirely zero")));
        }
        Ok(Self {
            rows,
            cols,
            block,
            block_ptr,
            block_idx,
            block_values,
        })
    }

    /// Compresses a dense matrix, dropping blocks that are entirely zero.
    pub fn from_dense(m: &DenseMatrix, block: BlockShape) -> Result<Self> {
        let (rows, cols) = m.shape();
        block.check_divides(rows, cols)?;
        let (grid_rows, grid_cols) = (rows / block.rows, cols / block.cols);
        let mut block_ptr = Vec::with_capacity(grid_rows + 1);
        let mut block_idx = Vec::new();
        let mut block_values = Vec::new();
        let mut scratch = vec![0.0f32; block.len()];
        block_ptr.push(0);
        for br in 0..grid_rows {
            for bc in 0..grid_cols {
                for r in 0..block.rows {
                    let row = m.row(br * block.rows + r);
                    scratch[r * block.cols..(r + 1) * block.cols]
                        .copy_from_slice(&row[bc * block.cols..(bc + 1) * block.cols]);
                }
                if scratch.iter().any(|v| *v != 0.0) {
                    block_idx.push(bc as u32);
                    block_values.extend_from_slice(&scratch);
                }
            }
            block_ptr.push(block_idx.len());
        }
        Ok(Self {
            rows,
            cols,
            block,
            block_ptr,
            block_idx,
            block_values,
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = vec![0.0f32; self.rows * self.cols];
        let bl = self.block.len();
        for br in 0..self.grid_rows() {
            for p in self.block_ptr[br]..self.block_ptr[br + 1] {
                let bc = self.block_idx[p] as usize;
                let blk = &self.block_values[p * bl..(p + 1) * bl];
                for r in 0..self.block.rows {
                    let row = br * self.block.rows + r;
                    let col0 = bc * self.block.cols;
                    out[row * self.cols + col0..row * self.cols + col0 + self.block.cols]
                        .copy_from_slice(&blk[r * self.block.cols..(r + 1) * self.block.cols]);
                }
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

    pub fn block(&self) -> BlockShape {
        self.block
    }

    fn grid_rows(&self) -> usize {
        self.rows / self.block.rows
    }

    pub fn num_blocks(&self) -> usize {
        self.block_idx.len()
    }

    /// Count of stored scalars that are nonzero. Stored blocks may contain
    /// zeros; those are not counted.
    pub fn nnz(&self) -> usize {
        self.block_values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn block_ptr(&self) -> &[usize] {
        &self.block_ptr
    }

    pub fn block_idx(&self) -> &[u32] {
        &self.block_idx
    }

    pub fn block_values(&self) -> &[f32] {
        &self.block_values
    }
}

/// Block-sparse × dense product `s × d`.
pub fn spmm_bsr(s: &BsrMatrix, d: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols != d.rows() {
        return Err(Error::dims("spmm_bsr", format!("d.rows == {}", s.cols), d.rows()));
    }
    let n = d.cols();
    let mut out = vec![0.0f32; s.rows * n];
    if n == 0 {
        return Ok(DenseMatrix::from_parts(s.rows, n, out));
    }
    let dv = d.values();
    let BlockShape { rows: br, cols: bc } = s.block;
    let bl = s.block.len();
    for gr in 0..s.grid_rows() {
        for p in s.block_ptr[gr]..s.block_ptr[gr + 1] {
            let col0 = s.block_idx[p] as usize * bc;
            let blk = &s.block_values[p * bl..(p + 1) * bl];
            for r in 0..br {
                let out_row = &mut out[(gr * br + r) * n..(gr * br + r + 1) * n];
                let w = &blk[r * bc..(r + 1) * bc];
                if bc == 4 {
                    axpy4(w, &dv[col0 * n..(col0 + 4) * n], n, out_row);
                } else {
                    for (c, &a) in w.iter().enumerate() {
                        axpy(a, &dv[(col0 + c) * n..(col0 + c + 1) * n], out_row);
                    }
                }
            }
        }
    }
    Ok(DenseMatrix::from_parts(s.rows, n, out))
}

/// Four consecutive axpys fused into one pass over `out`. The additions are
/// applied in the same order as four separate axpys, so results match them
/// bit for bit.
#[inline(always)]
fn axpy4(w: &[f32], rows: &[f32], n: usize, out: &mut [f32]) {
    let (x0, rest) = rows.split_at(n);
    let (x1, rest) = rest.split_at(n);
    let (x2, x3) = rest.split_at(n);
    let (w0, w1, w2, w3) = (w[0], w[1], w[2], w[3]);
    for j in 0..out.len() {
        out[j] = (((out[j] + w0 * x0[j]) + w1 * x1[j]) + w2 * x2[j]) + w3 * x3[j];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::dense_matmul;

    #[test]
    fn full_identity_with_2x2_blocks() {
        let s = BsrMatrix::from_dense(&DenseMatrix::identity(4), BlockShape::new(2, 2)).unwrap();
        assert_eq!(s.num_blocks(), 2);
        let d = DenseMatrix::from_fn(4, 3, |r, c| (r * 3 + c) as f32).unwrap();
        assert_eq!(spmm_bsr(&s, &d).unwrap(), d);
    }

    #[test]
    fn single_block_touches_one_row() {
        let mut v = vec![0.0f32; 16];
        v[..4].copy_from_slice(&[1.0, -2.0, 3.0, 0.5]);
        let m = DenseMatrix::new(4, 4, v).unwrap();
        let s = BsrMatrix::from_dense(&m, BlockShape::ONE_BY_FOUR).unwrap();
        assert_eq!(s.num_blocks(), 1);
        let d = DenseMatrix::from_fn(4, 2, |r, c| 1.0 + r as f32 + c as f32).unwrap();
        let got = spmm_bsr(&s, &d).unwrap();
        assert_eq!(got, dense_matmul(&m, &d).unwrap());
        assert!(got.row(0).iter().all(|v| *v != 0.0));
        assert!((1..4).all(|r| got.row(r).iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn generic_block_path() {
        let m = DenseMatrix::from_fn(6, 6, |r, c| if (r + c) % 3 == 0 { 1.5 } else { 0.0 }).unwrap();
        let s = BsrMatrix::from_dense(&m, BlockShape::new(3, 2)).unwrap();
        let d = DenseMatrix::from_fn(6, 5, |r, c| (r as f32) - (c as f32) * 0.25).unwrap();
        assert_eq!(spmm_bsr(&s, &d).unwrap(), dense_matmul(&m, &d).unwrap());
        assert_eq!(s.to_dense(), m);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(BsrMatrix::from_dense(&DenseMatrix::zeros(3, 4), BlockShape::new(2, 2)).is_err());
        assert!(BsrMatrix::from_dense(&DenseMatrix::zeros(4, 4), BlockShape::new(0, 2)).is_err());
        // an all-zero stored block
        assert!(BsrMatrix::new(1, 4, BlockShape::ONE_BY_FOUR, vec![0, 1], vec![0], vec![0.0; 4]).is_err());
        // wrong value count
        assert!(BsrMatrix::new(1, 4, BlockShape::ONE_BY_FOUR, vec![0, 1], vec![0], vec![1.0; 3]).is_err());
        let ok = BsrMatrix::new(1, 4, BlockShape::ONE_BY_FOUR, vec![0, 1], vec![0], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(ok.nnz(), 1);
        let s = BsrMatrix::from_dense(&DenseMatrix::identity(4), BlockShape::new(2, 2)).unwrap();
        assert!(spmm_bsr(&s, &DenseMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn block_shape_parse() {
        assert_eq!("1x4".parse::<BlockShape>().unwrap(), BlockShape::ONE_BY_FOUR);
        assert!("14".parse::<BlockShape>().is_err());
    }
}
