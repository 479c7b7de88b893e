/// Boolean keep/drop matrix aligned with a tensor of the same shape.
///
/// Attention code builds one per score matrix: padding masks broadcast a
/// single row, causal masks lower-triangular.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, keep: Vec<bool>) -> Self {
        assert_eq!(keep.len(), rows * cols);
        Mask { rows, cols, keep }
    }

    pub fn all(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    /// Same keep-row repeated for every row (padding masks).
    pub fn from_row(row: &[bool], rows: usize) -> Self {
        let mut keep = Vec::with_capacity(rows * row.len());
        for _ in 0..rows {
            keep.extend_from_slice(row);
        }
        Mask {
            rows,
            cols: row.len(),
            keep,
        }
    }

    /// Lower-triangular: position `r` sees positions `0..=r`.
    pub fn causal(n: usize) -> Self {
        let mut keep = vec![false; n * n];
        for r in 0..n {
            for c in 0..=r {
                keep[r * n + c] = true;
            }
        }
        Mask {
            rows: n,
            cols: n,
            keep,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.keep[r * self.cols..(r + 1) * self.cols]
    }

    /// Every row keeps at least one position.
    pub fn rows_nondegenerate(&self) -> bool {
        (0..self.rows).all(|r| self.row(r).iter().any(|&k| k))
    }
}
