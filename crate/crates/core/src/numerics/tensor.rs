use serde::{Deserialize, Serialize};

use super::scalar::{gemm, Scalar};
use super::NumericsError;

/// Dense row-major n-dimensional array.
///
/// Operations return a fresh tensor and reject non-finite results; the only
/// in-place access is through [`Tensor::data_mut`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    #[serde(with = "finite_vec")]
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "new",
                detail: format!("shape {:?} needs {} elements, got {}", shape, expected, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(data: Vec<F>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = F::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    /// In-place access. Callers own the tensor exclusively while mutating.
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, NumericsError> {
        Self::new(shape, self.data)
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn checked(self, op: &'static str) -> Result<Self, NumericsError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(self),
            Some(index) => Err(NumericsError::NonFinite { op, index }),
        }
    }

    fn zip_with(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(F, F) -> F,
    ) -> Result<Self, NumericsError> {
        if self.shape != other.shape {
            return Err(NumericsError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self { shape: self.shape.clone(), data }.checked(op)
    }

    pub fn map(&self, op: &'static str, f: impl Fn(F) -> F) -> Result<Self, NumericsError> {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
            .checked(op)
    }

    pub fn add(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: F) -> Result<Self, NumericsError> {
        self.map("scale", |v| v * s)
    }

    /// max(x, 0); the derivative convention at 0 lives in the nn layers.
    pub fn relu(&self) -> Result<Self, NumericsError> {
        self.map("relu", |v| if v > F::zero() { v } else { F::zero() })
    }

    pub fn exp(&self) -> Result<Self, NumericsError> {
        self.map("exp", |v| v.exp())
    }

    pub fn log(&self) -> Result<Self, NumericsError> {
        self.map("log", |v| v.ln())
    }

    /// Inner product accumulated in f64.
    pub fn dot(&self, other: &Self) -> Result<f64, NumericsError> {
        if self.data.len() != other.data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "dot",
                detail: format!("{} vs {}", self.data.len(), other.data.len()),
            });
        }
        Ok(dot(&self.data, &other.data))
    }

    /// Matrix product of two rank-2 tensors, accumulated in f64 regardless
    /// of the element type and rounded once at the end.
    pub fn matmul(&self, other: &Self) -> Result<Self, NumericsError> {
        let (m, k) = match self.shape[..] {
            [m, k] => (m, k),
            _ => {
                return Err(NumericsError::ShapeMismatch {
                    op: "matmul",
                    detail: format!("left operand has shape {:?}", self.shape),
                })
            }
        };
        let (k2, n) = match other.shape[..] {
            [k2, n] => (k2, n),
            _ => {
                return Err(NumericsError::ShapeMismatch {
                    op: "matmul",
                    detail: format!("right operand has shape {:?}", other.shape),
                })
            }
        };
        if k != k2 {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                detail: format!("inner extents {k} and {k2} differ"),
            });
        }
        let a: Vec<f64> = self.data.iter().map(|v| v.as_f64()).collect();
        let b: Vec<f64> = other.data.iter().map(|v| v.as_f64()).collect();
        let mut c = vec![0.0f64; m * n];
        gemm(false, false, m, n, k, 1.0, &a, &b, 0.0, &mut c);
        Self { shape: vec![m, n], data: c.into_iter().map(F::from_f64).collect() }.checked("matmul")
    }

    pub fn norm2(&self) -> f64 {
        norm2(&self.data)
    }
}

/// Euclidean norm with f64 accumulation.
pub fn norm2<F: Scalar>(v: &[F]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

/// Inner product with f64 accumulation.
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

mod finite_vec {
    use super::Scalar;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<F: Scalar, S: Serializer>(v: &[F], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>().serialize(s)
    }

    pub fn deserialize<'de, F: Scalar, D: Deserializer<'de>>(d: D) -> Result<Vec<F>, D::Error> {
        Ok(Vec::<f64>::deserialize(d)?.into_iter().map(F::from_f64).collect())
    }
}
