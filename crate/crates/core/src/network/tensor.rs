use crate::error::{Error, Result};
use crate::network::ops::Real;
use crate::representation::Frame1;

/// Dense array with `(N, C, H, W)` shape, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl Tensor<f32> {
    /// `(1, 1, H, W)` tensor with pixel values scaled to `[0, 1]`.
    pub fn from_frame(frame: &Frame1) -> Self {
        Tensor {
            shape: [1, 1, frame.height(), frame.width()],
            data: frame.to_unit_f32(),
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape(shape, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.shape[2] + y) * self.shape[3] + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        let i = (c * self.shape[2] + y) * self.shape[3] + x;
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
