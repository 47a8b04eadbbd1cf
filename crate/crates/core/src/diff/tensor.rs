use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an optional gradient slot.
///
/// Rank-1 tensors are treated as a single row by the graph operations; a
/// rank-2 tensor `[rows, cols]` is a batch of rows. Every dimension is
/// strictly positive, so a tensor is never empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) || shape.iter().product::<usize>() != values.len() {
            return Err(Error::InvalidShape {
                shape,
                len: values.len(),
            });
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![value],
            grad: None,
        }
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    /// Stacks equal-length rows into a `[rows, cols]` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyInput("from_rows"))?;
        let cols = first.as_ref().len();
        let mut values = Vec::with_capacity(cols * rows.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            values.extend_from_slice(row);
        }
        Tensor::matrix(rows.len(), cols, values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Size of the last dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor shape is never empty")
    }

    /// Product of all leading dimensions.
    pub fn rows(&self) -> usize {
        self.values.len() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> Result<f64> {
        if self.values.len() != 1 {
            return Err(Error::NotScalar(self.shape.clone()));
        }
        Ok(self.values[0])
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::ShapeMismatch {
                op: "set_grad",
                left: self.shape.clone(),
                right: vec![grad.len()],
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn grad_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.grad.as_mut()
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn rows_and_cols() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.rows(), 3);
        assert_eq!(t.row(1), &[3.0, 4.0]);
        let v = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!((v.rows(), v.cols()), (1, 3));
    }

    #[test]
    fn grad_shape_is_checked() {
        let mut t = Tensor::zeros(&[2, 2]).unwrap();
        assert!(t.set_grad(vec![0.0; 3]).is_err());
        t.set_grad(vec![1.0; 4]).unwrap();
        assert_eq!(t.grad().unwrap().len(), 4);
    }
}
