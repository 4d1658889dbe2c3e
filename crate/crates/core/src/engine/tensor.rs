use std::fmt;

/// Batch, channel, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    /// Shape used for per-channel vectors (bias, gamma, beta).
    pub const fn vector(len: usize) -> Self {
        Self::new(len, 1, 1, 1)
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major NCHW array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// Panics when `data.len()` does not match the shape.
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            shape.numel(),
            "data length {} does not match shape {shape}",
            data.len()
        );
        Self { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(Shape::scalar(), vec![value])
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy of batch item `i` as a 1-item tensor.
    pub fn batch_item(&self, i: usize) -> Tensor {
        let per = self.shape.c * self.shape.plane();
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }

    /// Concatenates tensors with identical C/H/W along the batch axis.
    pub fn stack(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty(), "cannot stack zero tensors");
        let first = items[0].shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            assert_eq!(
                (s.c, s.h, s.w),
                (first.c, first.h, first.w),
                "stack shape mismatch"
            );
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(n, first.c, first.h, first.w), data)
    }

    /// `h x w` window with its top-left corner at `(y0, x0)`, every batch item and channel.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Tensor {
        let s = self.shape;
        assert!(y0 + h <= s.h && x0 + w <= s.w, "crop window out of range");
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for plane in 0..s.n * s.c {
            let base = plane * s.plane();
            for row in y0..y0 + h {
                let src = base + row * s.w + x0;
                data.extend_from_slice(&self.data[src..src + w]);
            }
        }
        Tensor::from_vec(Shape::new(s.n, s.c, h, w), data)
    }

    /// Mirror along the width axis.
    pub fn flip_horizontal(&self) -> Tensor {
        let s = self.shape;
        let mut out = self.clone();
        for row in out.data.chunks_mut(s.w) {
            row.reverse();
        }
        out
    }

    /// Mirror along the height axis.
    pub fn flip_vertical(&self) -> Tensor {
        let s = self.shape;
        let mut out = Tensor::zeros(s);
        for plane in 0..s.n * s.c {
            let base = plane * s.plane();
            for h in 0..s.h {
                let src = base + h * s.w;
                let dst = base + (s.h - 1 - h) * s.w;
                out.data[dst..dst + s.w].copy_from_slice(&self.data[src..src + s.w]);
            }
        }
        out
    }
}
