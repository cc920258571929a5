//! Dense n-dimensional double-precision array with row-major layout.

use super::DiffError;

/// Layout convention: images are `[channels, height, width]`, filter
/// banks are `[filters, channels, kh, kw]`, vectors are `[dim]` and
/// scalars are `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn zeros(shape: &[usize]) -> Array {
        let len = shape.iter().product();
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "array extents must be positive, got {shape:?}"
        );
        Array {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Array {
        let mut a = Array::zeros(shape);
        a.data.fill(value);
        a
    }

    pub fn scalar(value: f64) -> Array {
        Array {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Array, DiffError> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) || data.len() != expected {
            return Err(DiffError::shape(
                "from_vec",
                format!("shape {shape:?} does not describe {} values", data.len()),
            ));
        }
        Ok(Array {
            shape: shape.to_vec(),
            data,
        })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a one-element array.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on a non-scalar array");
        self.data[0]
    }

    pub fn same_shape(&self, other: &Array) -> bool {
        self.shape == other.shape
    }

    /// Interpret as `[channels, height, width]`.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize), DiffError> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(DiffError::shape(
                op,
                format!("expected a [C, H, W] array, got shape {:?}", self.shape),
            )),
        }
    }

    /// Interpret as `[filters, channels, kh, kw]`.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize), DiffError> {
        match self.shape[..] {
            [f, c, kh, kw] => Ok((f, c, kh, kw)),
            _ => Err(DiffError::shape(
                op,
                format!("expected a [F, C, kh, kw] array, got shape {:?}", self.shape),
            )),
        }
    }

    /// Interpret as a flat vector `[dim]`.
    pub fn dim1(&self, op: &'static str) -> Result<usize, DiffError> {
        match self.shape[..] {
            [d] => Ok(d),
            _ => Err(DiffError::shape(
                op,
                format!("expected a flat [D] array, got shape {:?}", self.shape),
            )),
        }
    }

    /// `self += other`, shapes must match exactly.
    pub fn add_assign(&mut self, other: &Array) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, factor: f64) {
        for a in &mut self.data {
            *a *= factor;
        }
    }
}
