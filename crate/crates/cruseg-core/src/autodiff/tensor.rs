use std::fmt;

use crate::error::{Error, Result};

/// Dimensions of a 4-D tensor: batch, channels, height, width.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// Flat index of element (b, c, y, x) in row-major order.
    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.channels + c) * self.height + y) * self.width + x
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// A dense 4-D array of f64 in row-major (batch, channel, row, column) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// A 1x1x1x1 tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::new(1, 1, 1, 1),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "data length {} does not match shape {} ({} elements)",
                    data.len(),
                    shape,
                    shape.numel()
                ),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.shape.index(b, c, y, x);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single value of a 1-element tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.shape.numel() != 1 {
            return Err(Error::shape(
                "scalar_value",
                format!("expected 1 element, tensor is {}", self.shape),
            ));
        }
        Ok(self.data[0])
    }
}

/// Static description of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::config("conv channels", "must be positive"));
        }
        if kernel_size == 0 {
            return Err(Error::config("kernel_size", "must be positive"));
        }
        if stride == 0 {
            return Err(Error::config("stride", "must be positive"));
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        })
    }

    /// Output extent along one spatial axis:
    /// floor((n + 2*padding - kernel) / stride) + 1, which must be positive.
    pub fn out_extent(&self, n: usize) -> Result<usize> {
        let padded = n + 2 * self.padding;
        if padded < self.kernel_size {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input extent {n} with padding {} is smaller than kernel {}",
                    self.padding, self.kernel_size
                ),
            ));
        }
        Ok((padded - self.kernel_size) / self.stride + 1)
    }

    /// Shape of the weight tensor this spec expects.
    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        )
    }

    /// Shape of the bias tensor this spec expects.
    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }
}
