//! Channel-major 2D image tensors, generic over the float width.
//!
//! The projection engine and the convolutional predictor share this type:
//! production code runs on f32, finite-difference gradient checks run the
//! identical code on f64. Layout is channel-major with rows = azimuth and
//! columns = polar column, matching the direction grid's index order.

use num_traits::{Float, FromPrimitive, NumAssignOps};

use crate::error::{Error, Result};

/// Float scalar the tensor and network code is generic over.
pub trait Scalar:
    Float + NumAssignOps + FromPrimitive + Default + std::fmt::Debug + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Image<T> {
        Image { channels, height, width, data: vec![T::zero(); channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Image<T>> {
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "image buffer length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Image { channels, height, width, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    /// One channel plane row as a slice, for tight inner loops.
    #[inline]
    pub fn row(&self, c: usize, y: usize) -> &[T] {
        let start = (c * self.height + y) * self.width;
        &self.data[start..start + self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize, y: usize) -> &mut [T] {
        let start = (c * self.height + y) * self.width;
        &mut self.data[start..start + self.width]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Elementwise sum, used for residual connections and gradient fan-in.
    pub fn add_assign(&mut self, other: &Image<T>) {
        debug_assert_eq!(
            (self.channels, self.height, self.width),
            (other.channels, other.height, other.width)
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Convert the scalar width, e.g. f32 production data into an f64
    /// gradient-check replica.
    pub fn cast<U: Scalar>(&self) -> Image<U> {
        let data = self
            .data
            .iter()
            .map(|v| U::from(v.to_f64().expect("float widening")).expect("float narrowing"))
            .collect();
        Image { channels: self.channels, height: self.height, width: self.width, data }
    }
}
