use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element type usable by the neural primitives.
///
/// `f32` is used for the network itself; `f64` exists so gradient checks can
/// run with enough precision for central differences.
pub trait Scalar: Float + Default + Debug + Sum + AddAssign + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` with arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn from_f64(v: f64) -> Self;
}

fn check_extent(len: usize, rows: usize, cols: usize, strides: (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * strides.0 + (cols as isize - 1) * strides.1;
    assert!(
        strides.0 >= 0 && strides.1 >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above and
                // `c` is exclusively borrowed, so it cannot alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// `c (m×n) = a (m×k) · b (k×n) + beta·c`, all row-major and contiguous.
pub(crate) fn matmul<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        (k as isize, 1),
        b,
        (n as isize, 1),
        beta,
        c,
        (n as isize, 1),
    );
}

/// `c (m×n) = a (m×k) · bᵀ + beta·c` where `b` is stored n×k row-major.
pub(crate) fn matmul_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        (k as isize, 1),
        b,
        (1, k as isize),
        beta,
        c,
        (n as isize, 1),
    );
}

/// `c (m×n) = aᵀ · b + beta·c` where `a` is stored k×m row-major.
pub(crate) fn matmul_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        (1, m as isize),
        b,
        (n as isize, 1),
        beta,
        c,
        (n as isize, 1),
    );
}

/// Dense N×C×H×W tensor in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::validation(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    fn offset(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.shape[1] + idx[1]) * self.shape[2] + idx[2]) * self.shape[3] + idx[3]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// All channels of batch item `n` as one C×H×W slice.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[n * len..(n + 1) * len]
    }

    /// One H×W plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let len = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let len = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * len;
        &mut self.data[start..start + len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape, "zip_map")?;
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape(other.shape, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.sum() / T::from_f64(self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    /// Channel slice `[start, start + count)` of every batch item.
    pub fn channel_range(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape[1] {
            return Err(Error::validation(format!(
                "channel range {}..{} exceeds {} channels",
                start,
                start + count,
                self.shape[1]
            )));
        }
        let plane = self.shape[2] * self.shape[3];
        let mut out = Tensor::zeros([self.shape[0], count, self.shape[2], self.shape[3]]);
        for n in 0..self.shape[0] {
            let src = &self.item(n)[start * plane..(start + count) * plane];
            out.item_mut(n).copy_from_slice(src);
        }
        Ok(out)
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::validation("concat of zero tensors"))?;
        let [n, _, h, w] = first.shape;
        let mut c_total = 0;
        for p in parts {
            if p.shape[0] != n || p.shape[2] != h || p.shape[3] != w {
                return Err(Error::validation(format!(
                    "concat shape mismatch: {:?} vs {:?}",
                    first.shape, p.shape
                )));
            }
            c_total += p.shape[1];
        }
        let mut out = Tensor::zeros([n, c_total, h, w]);
        for b in 0..n {
            let dst = out.item_mut(b);
            let mut pos = 0;
            for p in parts {
                let src = p.item(b);
                dst[pos..pos + src.len()].copy_from_slice(src);
                pos += src.len();
            }
        }
        Ok(out)
    }

    /// Stacks single-item tensors of equal shape into one batch.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::validation("stack of zero tensors"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        let mut n = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::validation("stack shape mismatch"));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec([n, c, h, w], data)
    }

    pub fn expect_shape(&self, shape: [usize; 4], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::validation(format!(
                "{what}: expected shape {:?}, got {:?}",
                shape, self.shape
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }
}
