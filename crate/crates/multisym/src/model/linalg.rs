//! Small dense row-major matrices backing the MLP forward/backward passes.

/// A dense row-major f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix shape mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a · bᵀ` for `a: n×k`, `b: m×k`; both operands are traversed row-wise.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols);
    let mut out = Matrix::zeros(a.rows, b.rows);
    for (i, a_row) in a.row_iter().enumerate() {
        let out_row = out.row_mut(i);
        for (j, b_row) in b.row_iter().enumerate() {
            out_row[j] = dot(a_row, b_row);
        }
    }
    out
}

/// `a · b` for `a: n×k`, `b: k×m`, accumulating scaled rows of `b`.
pub fn matmul_nn(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows);
    let mut out = Matrix::zeros(a.rows, b.cols);
    for (i, a_row) in a.row_iter().enumerate() {
        let out_row = out.row_mut(i);
        for (k, &coeff) in a_row.iter().enumerate() {
            if coeff == 0.0 {
                continue;
            }
            let b_row = b.row(k);
            for (o, &v) in out_row.iter_mut().zip(b_row) {
                *o += coeff * v;
            }
        }
    }
    out
}

/// `aᵀ · b` for `a: n×k`, `b: n×m`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows);
    let mut out = Matrix::zeros(a.cols, b.cols);
    for (a_row, b_row) in a.row_iter().zip(b.row_iter()) {
        for (j, &coeff) in a_row.iter().enumerate() {
            if coeff == 0.0 {
                continue;
            }
            let out_row = out.row_mut(j);
            for (o, &v) in out_row.iter_mut().zip(b_row) {
                *o += coeff * v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree_with_naive() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(2, 3, vec![7.0, 8.0, 9.0, 1.0, 0.5, -1.0]);
        let nt = matmul_nt(&a, &b);
        assert_eq!(nt.data(), &[50.0, -1.0, 122.0, 0.5]);

        let c = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let nn = matmul_nn(&a, &c);
        assert_eq!(nn.data(), &[4.0, 5.0, 10.0, 11.0]);

        let tn = matmul_tn(&a, &a);
        assert_eq!(tn.get(0, 0), 17.0);
        assert_eq!(tn.get(2, 1), 36.0);
    }
}
