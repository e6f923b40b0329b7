use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::autograd::NodeId;
use crate::error::{Error, Result};

/// Dense 4-D shape in NCHW order (batch, channels, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat row-major index (batch-major, then channel, row, column).
    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense NCHW tensor of 32-bit floats with optional gradient storage.
///
/// Tensors are plain values. Wiring them into a differentiable computation
/// happens by registering them on a [`crate::autograd::Tape`], which sets
/// the `node` back-reference on the registered copy.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f32>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f32>>,
    pub node: Option<NodeId>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
            requires_grad: false,
            grad: None,
            node: None,
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            requires_grad: false,
            grad: None,
            node: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
            node: None,
        })
    }

    /// Scalar 1x1x1x1 tensor.
    pub fn scalar(value: f32) -> Self {
        Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![value]).unwrap()
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    /// Marks the tensor as trainable (gradient-accumulating).
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// View of image `i` of a batch as its own 1xCxHxW tensor.
    pub fn image(&self, i: usize) -> Tensor {
        assert!(i < self.shape.n, "batch index out of range");
        let per = self.shape.c * self.shape.h * self.shape.w;
        let data = self.data[i * per..(i + 1) * per].to_vec();
        Tensor::from_vec(Shape::new(1, self.shape.c, self.shape.h, self.shape.w), data).unwrap()
    }
}

/// Kaiming-uniform initialization: values drawn from U(-b, b) with
/// b = sqrt(6 / fan_in), where fan_in = c*h*w of the weight shape.
/// Deterministic for a given seed.
pub fn kaiming_init(shape: Shape, seed: u64) -> Tensor {
    let fan_in = (shape.c * shape.h * shape.w).max(1);
    let bound = (6.0_f64 / fan_in as f64).sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..shape.numel())
        .map(|_| rng.gen_range(-bound..bound) as f32)
        .collect();
    Tensor {
        shape,
        data,
        requires_grad: false,
        grad: None,
        node: None,
    }
}
