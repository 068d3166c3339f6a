use crate::error::{Result, TensorError};

/// Dense row-major array of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::Shape {
                op: "new",
                shapes: vec![shape, vec![data.len()]],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(TensorError::Shape {
                op: "reshape",
                shapes: vec![self.shape, shape.to_vec()],
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Shapes below these use the plain loops; tiling only pays off on larger ones.
const TILE_MIN_ROWS: usize = 4;
const TILE_MIN_COLS: usize = 16;
const PACK_MIN_WORK: usize = 1 << 15;

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    if m >= TILE_MIN_ROWS && n >= TILE_MIN_COLS {
        gemm_tiled(a, b, c, m, k, n);
    } else {
        gemm_rows(a, b, c, 0, m, k, n);
    }
}

/// Row-by-row update of rows `lo..hi`.
fn gemm_rows(a: &[f64], b: &[f64], c: &mut [f64], lo: usize, hi: usize, k: usize, n: usize) {
    for i in lo..hi {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

const MR: usize = 2;
const NR: usize = 8;

/// Register-blocked kernel over `MR x NR` output tiles, reading packed
/// copies of each `MR`-row block of `a` and each `NR`-column panel of `b`.
fn gemm_tiled(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    if k == 0 {
        return;
    }
    let full_rows = m - m % MR;
    let full_cols = n - n % NR;
    let mut panels: Vec<[f64; NR]> = Vec::with_capacity(full_cols / NR * k);
    for j in (0..full_cols).step_by(NR) {
        for p in 0..k {
            panels.push(b[p * n + j..p * n + j + NR].try_into().expect("tile width"));
        }
    }
    let mut block = vec![[0.0; MR]; k];
    for i in (0..full_rows).step_by(MR) {
        for (p, slot) in block.iter_mut().enumerate() {
            for (r, v) in slot.iter_mut().enumerate() {
                *v = a[(i + r) * k + p];
            }
        }
        for (t, panel) in panels.chunks_exact(k).enumerate() {
            let j = t * NR;
            let mut acc = [[0.0; NR]; MR];
            for (av, bv) in block.iter().zip(panel) {
                for (row, &x) in acc.iter_mut().zip(av) {
                    for (y, &z) in row.iter_mut().zip(bv) {
                        *y += x * z;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                for (cv, x) in c[(i + r) * n + j..(i + r) * n + j + NR].iter_mut().zip(row) {
                    *cv += x;
                }
            }
        }
        if full_cols < n {
            for r in i..i + MR {
                for p in 0..k {
                    let av = a[r * k + p];
                    for q in full_cols..n {
                        c[r * n + q] += av * b[p * n + q];
                    }
                }
            }
        }
    }
    gemm_rows(a, b, c, full_rows, m, k, n);
}

/// Row-major transpose of a `rows x cols` matrix.
fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Dot product with four independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c[m,k] += a[m,n] * b[k,n]^T`
pub(crate) fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    if m * n * k >= PACK_MIN_WORK && m >= TILE_MIN_ROWS && k >= TILE_MIN_COLS {
        gemm_tiled(a, &transpose(b, k, n), c, m, n, k);
        return;
    }
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] += dot(arow, brow);
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    if m * n * k >= PACK_MIN_WORK && k >= TILE_MIN_ROWS && n >= TILE_MIN_COLS {
        gemm_tiled(&transpose(a, m, k), b, c, k, m, n);
        return;
    }
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    proptest! {
        #[test]
        fn kernels_match_naive_product(m in 1usize..40, k in 1usize..40, n in 1usize..40, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let want = naive(&a, &b, m, k, n);
            let close = |got: &[f64]| got.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12);
            let mut c = vec![0.0; m * n];
            gemm_acc(&a, &b, &mut c, m, k, n);
            prop_assert!(close(&c));
            let mut c = vec![0.0; m * n];
            gemm_nt_acc(&a, &transpose(&b, k, n), &mut c, m, k, n);
            prop_assert!(close(&c));
            let mut c = vec![0.0; m * n];
            gemm_tn_acc(&transpose(&a, m, k), &b, &mut c, k, m, n);
            prop_assert!(close(&c));
        }
    }

    #[test]
    fn new_rejects_mismatched_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn gemm_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, -1.0, 2.0, 0.5, 1.0]; // 3x2
        let mut c = [0.0; 4];
        gemm_acc(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [1.0 - 2.0 + 1.5, 4.0 + 3.0, 4.0 - 5.0 + 3.0, 10.0 + 6.0]);

        // b^T stored as 2x3
        let bt = [1.0, -1.0, 0.5, 0.0, 2.0, 1.0];
        let mut c2 = [0.0; 4];
        gemm_nt_acc(&a, &bt, &mut c2, 2, 3, 2);
        assert_eq!(c, c2);

        // a^T stored as 3x2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c3 = [0.0; 4];
        gemm_tn_acc(&at, &b, &mut c3, 3, 2, 2);
        assert_eq!(c, c3);
    }
}
