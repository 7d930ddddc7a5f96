use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::{NnError, Result};

/// Element type of the engine: `f32` for training, `f64` for gradient checks.
pub trait Scalar: Float + FromPrimitive + NumAssign + Debug + Default + Send + Sync + 'static {
    /// `c = beta * c + a * b` for row-major `a: m x k`, `b: k x n`, `c: m x n`,
    /// with explicit row/column strides for each operand.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_cols: usize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        a_strides: (isize, isize),
        b: &[f32],
        b_strides: (isize, isize),
        beta: f32,
        c: &mut [f32],
        c_cols: usize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        assert!(c.len() >= (m - 1) * c_cols + n);
        // SAFETY: strides describe in-bounds views of the given slices (checked by callers
        // through the asserted lengths below) and `c` does not alias `a` or `b`.
        assert!(k == 0 || a.len() as isize > (m as isize - 1) * a_strides.0 + (k as isize - 1) * a_strides.1);
        assert!(k == 0 || b.len() as isize > (k as isize - 1) * b_strides.0 + (n as isize - 1) * b_strides.1);
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                a_strides.0,
                a_strides.1,
                b.as_ptr(),
                b_strides.0,
                b_strides.1,
                beta,
                c.as_mut_ptr(),
                c_cols as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    /// Plain loops with a fixed summation order (ascending `k`), so 64-bit
    /// results do not depend on the host's SIMD width or FMA support.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        a_strides: (isize, isize),
        b: &[f64],
        b_strides: (isize, isize),
        beta: f64,
        c: &mut [f64],
        c_cols: usize,
    ) {
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    let av = a[(i as isize * a_strides.0 + p as isize * a_strides.1) as usize];
                    let bv = b[(p as isize * b_strides.0 + j as isize * b_strides.1) as usize];
                    acc += av * bv;
                }
                let out = &mut c[i * c_cols + j];
                *out = if beta == 0.0 { acc } else { beta * *out + acc };
            }
        }
    }
}

/// Dense `batch x channels x height x width` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements in one `channels x height x width` item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self, n: usize) -> &[T] {
        let l = self.item_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let l = self.item_len();
        &mut self.data[n * l..(n + 1) * l]
    }

    /// Same data viewed with another shape of equal size.
    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Shape("concat of zero tensors".into()))?;
        let [n, _, h, w] = first.shape;
        if parts.iter().any(|p| p.shape[0] != n || p.shape[2] != h || p.shape[3] != w) {
            return Err(NnError::Shape("concat needs equal batch, height and width".into()));
        }
        let c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for p in parts {
                data.extend_from_slice(p.item(b));
            }
        }
        Self::from_vec([n, c, h, w], data)
    }
}
