//! Dense 3-mode tensor and matrix primitives.
//!
//! Everything is double precision and stored contiguously. The fixed memory
//! layout for [`Tensor3`] is mode-1 slowest, mode-3 fastest: entry
//! `(i, j, k)` of an `n1 x n2 x n3` tensor lives at `(i * n2 + j) * n3 + k`.
//! [`Matrix`] is row-major. Vectors are plain `&[f64]` / `Vec<f64>`.
//!
//! Mode indices follow the 1-based `x1 / x2 / x3` convention of n-mode
//! products, expressed as the [`Mode`] enum so invalid modes cannot be
//! constructed. Dimension mismatches are contract violations and panic with
//! the expected and actual sizes.

/// Contraction mode of a 3-mode tensor, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    /// Zero-based axis index.
    #[inline]
    pub fn axis(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }
}

/// Dense 3-mode tensor of `f64`, layout mode-1 slowest / mode-3 fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    /// All-zero tensor of the given dimensions.
    pub fn zeros(n1: usize, n2: usize, n3: usize) -> Self {
        assert!(n1 > 0 && n2 > 0 && n3 > 0, "tensor dims must be positive");
        Self {
            dims: (n1, n2, n3),
            data: vec![0.0; n1 * n2 * n3],
        }
    }

    /// Build from raw data in layout order.
    pub fn from_vec(n1: usize, n2: usize, n3: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            n1 * n2 * n3,
            "tensor data length {} does not match dims {}x{}x{}",
            data.len(),
            n1,
            n2,
            n3
        );
        Self {
            dims: (n1, n2, n3),
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Size along one mode.
    pub fn dim(&self, mode: Mode) -> usize {
        match mode {
            Mode::One => self.dims.0,
            Mode::Two => self.dims.1,
            Mode::Three => self.dims.2,
        }
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims.0 && j < self.dims.1 && k < self.dims.2);
        (i * self.dims.1 + j) * self.dims.2 + k
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// n-mode product with a vector: contracts the chosen mode away.
    ///
    /// The result keeps the remaining two modes in ascending mode order,
    /// e.g. contracting mode 2 of an `n1 x n2 x n3` tensor yields an
    /// `n1 x n3` matrix.
    pub fn mode_vec_product(&self, mode: Mode, v: &[f64]) -> Matrix {
        let n = self.dim(mode);
        assert_eq!(
            v.len(),
            n,
            "mode-{} vector product: expected length {}, got {}",
            mode.axis() + 1,
            n,
            v.len()
        );
        let (n1, n2, n3) = self.dims;
        match mode {
            Mode::One => {
                let mut out = Matrix::zeros(n2, n3);
                for i in 0..n1 {
                    let w = v[i];
                    let slab = &self.data[i * n2 * n3..(i + 1) * n2 * n3];
                    for (o, &x) in out.data.iter_mut().zip(slab) {
                        *o += w * x;
                    }
                }
                out
            }
            Mode::Two => {
                let mut out = Matrix::zeros(n1, n3);
                for i in 0..n1 {
                    for j in 0..n2 {
                        let w = v[j];
                        let row = &self.data[(i * n2 + j) * n3..(i * n2 + j + 1) * n3];
                        let orow = &mut out.data[i * n3..(i + 1) * n3];
                        for (o, &x) in orow.iter_mut().zip(row) {
                            *o += w * x;
                        }
                    }
                }
                out
            }
            Mode::Three => {
                let mut out = Matrix::zeros(n1, n2);
                for i in 0..n1 {
                    for j in 0..n2 {
                        let row = &self.data[(i * n2 + j) * n3..(i * n2 + j + 1) * n3];
                        out.data[i * n2 + j] = dot(row, v);
                    }
                }
                out
            }
        }
    }

    /// n-mode product with a matrix: replaces the chosen mode's dimension
    /// by `m.rows`.
    ///
    /// `m.cols` must equal the tensor's size along `mode`; entry `r` of the
    /// new mode is the contraction of the old mode against row `r` of `m`.
    pub fn mode_mat_product(&self, mode: Mode, m: &Matrix) -> Tensor3 {
        let n = self.dim(mode);
        assert_eq!(
            m.cols,
            n,
            "mode-{} matrix product: expected {} columns, got {}",
            mode.axis() + 1,
            n,
            m.cols
        );
        let (n1, n2, n3) = self.dims;
        match mode {
            Mode::One => {
                let mut out = Tensor3::zeros(m.rows, n2, n3);
                for r in 0..m.rows {
                    for i in 0..n1 {
                        let w = m.get(r, i);
                        let slab = &self.data[i * n2 * n3..(i + 1) * n2 * n3];
                        let oslab = &mut out.data[r * n2 * n3..(r + 1) * n2 * n3];
                        for (o, &x) in oslab.iter_mut().zip(slab) {
                            *o += w * x;
                        }
                    }
                }
                out
            }
            Mode::Two => {
                let mut out = Tensor3::zeros(n1, m.rows, n3);
                for i in 0..n1 {
                    for r in 0..m.rows {
                        for j in 0..n2 {
                            let w = m.get(r, j);
                            let row = &self.data[(i * n2 + j) * n3..(i * n2 + j + 1) * n3];
                            let orow = &mut out.data[(i * m.rows + r) * n3..(i * m.rows + r + 1) * n3];
                            for (o, &x) in orow.iter_mut().zip(row) {
                                *o += w * x;
                            }
                        }
                    }
                }
                out
            }
            Mode::Three => {
                let mut out = Tensor3::zeros(n1, n2, m.rows);
                for i in 0..n1 {
                    for j in 0..n2 {
                        let row = &self.data[(i * n2 + j) * n3..(i * n2 + j + 1) * n3];
                        for r in 0..m.rows {
                            out.data[(i * n2 + j) * m.rows + r] = dot(row, m.row(r));
                        }
                    }
                }
                out
            }
        }
    }
}

/// Dense row-major matrix of `f64`.
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
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match dims {}x{}",
            data.len(),
            rows,
            cols
        );
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * v` over rows: `out[r] = sum_c self[r,c] * v[c]`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(
            v.len(),
            self.cols,
            "matvec: expected length {}, got {}",
            self.cols,
            v.len()
        );
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `v^T * self` over columns: `out[c] = sum_r v[r] * self[r,c]`.
    pub fn vecmat(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(
            v.len(),
            self.rows,
            "vecmat: expected length {}, got {}",
            self.rows,
            v.len()
        );
        let mut out = vec![0.0; self.cols];
        for (r, &w) in v.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(self.row(r)) {
                *o += w * x;
            }
        }
        out
    }
}

/// Inner product of two equal-length vectors.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(
        a.len(),
        b.len(),
        "dot: expected length {}, got {}",
        a.len(),
        b.len()
    );
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
