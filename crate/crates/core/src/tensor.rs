//! Dense tensors used throughout the crate.
//!
//! Weights are stored `kh × kw × c × n` with the filter axis `n` varying
//! fastest. Feature maps are stored `batch × h × w × c` with channels
//! varying fastest, so flattening a map is a no-op on the buffer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a convolution kernel stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub kh: usize,
    pub kw: usize,
    /// Input channels.
    pub c: usize,
    /// Output filters.
    pub n: usize,
}

impl Shape4 {
    pub fn new(kh: usize, kw: usize, c: usize, n: usize) -> Result<Self> {
        if kh == 0 || kw == 0 || c == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "all kernel dims must be >= 1, got {kh}x{kw}x{c}x{n}"
            )));
        }
        Ok(Shape4 { kh, kw, c, n })
    }

    pub fn len(&self) -> usize {
        self.kh * self.kw * self.c * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial taps in one kernel.
    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, ci: usize, f: usize) -> usize {
        ((y * self.kw + x) * self.c + ci) * self.n + f
    }
}

/// A convolution weight tensor `W^l`, indexed `(y, x, channel, filter)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTensor {
    shape: Shape4,
    values: Vec<f64>,
}

impl WeightTensor {
    pub fn zeros(shape: Shape4) -> Self {
        WeightTensor {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape4, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::shape(
                "weight tensor",
                format!("{} values for shape {:?}", values.len(), shape),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite weight at flat index {pos}"
            )));
        }
        Ok(WeightTensor { shape, values })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
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

    #[inline]
    pub fn get(&self, y: usize, x: usize, ci: usize, f: usize) -> f64 {
        self.values[self.shape.index(y, x, ci, f)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ci: usize, f: usize, v: f64) {
        let i = self.shape.index(y, x, ci, f);
        self.values[i] = v;
    }

    /// Iterates the `kh·kw` values of kernel `W_{channel, filter}`.
    pub fn kernel(&self, ci: usize, f: usize) -> impl Iterator<Item = f64> + '_ {
        let s = self.shape;
        (0..s.taps()).map(move |t| self.values[(t * s.c + ci) * s.n + f])
    }

    /// Flat offsets of kernel `W_{channel, filter}`.
    pub fn kernel_offsets(&self, ci: usize, f: usize) -> impl Iterator<Item = usize> {
        let s = self.shape;
        (0..s.taps()).map(move |t| (t * s.c + ci) * s.n + f)
    }

    /// Copies out the sub-tensor made of the given channels and filters.
    pub fn select(&self, channels: &[usize], filters: &[usize]) -> Result<WeightTensor> {
        let s = self.shape;
        if channels.iter().any(|&c| c >= s.c) || filters.iter().any(|&f| f >= s.n) {
            return Err(Error::shape(
                "weight tensor select",
                format!("index out of range for {s:?}"),
            ));
        }
        let out_shape = Shape4::new(s.kh, s.kw, channels.len(), filters.len())?;
        let mut out = WeightTensor::zeros(out_shape);
        for y in 0..s.kh {
            for x in 0..s.kw {
                for (oc, &ci) in channels.iter().enumerate() {
                    for (of, &f) in filters.iter().enumerate() {
                        out.set(y, x, oc, of, self.get(y, x, ci, f));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn add_scaled(&mut self, other: &WeightTensor, k: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += k * b;
        }
    }
}

/// Activations in NHWC layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(batch: usize, h: usize, w: usize, c: usize) -> Self {
        FeatureMap {
            batch,
            h,
            w,
            c,
            values: vec![0.0; batch * h * w * c],
        }
    }

    pub fn from_vec(batch: usize, h: usize, w: usize, c: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != batch * h * w * c {
            return Err(Error::shape(
                "feature map",
                format!("{} values for {batch}x{h}x{w}x{c}", values.len()),
            ));
        }
        Ok(FeatureMap {
            batch,
            h,
            w,
            c,
            values,
        })
    }

    /// Number of values per sample.
    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn same_dims(&self, other: &FeatureMap) -> bool {
        self.batch == other.batch && self.h == other.h && self.w == other.w && self.c == other.c
    }

    #[inline]
    pub fn index(&self, b: usize, y: usize, x: usize, ch: usize) -> usize {
        ((b * self.h + y) * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn get(&self, b: usize, y: usize, x: usize, ch: usize) -> f64 {
        self.values[self.index(b, y, x, ch)]
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.sample_len();
        &self.values[b * n..(b + 1) * n]
    }

    /// A single-sample map holding a copy of sample `b`.
    pub fn single(&self, b: usize) -> FeatureMap {
        FeatureMap {
            batch: 1,
            h: self.h,
            w: self.w,
            c: self.c,
            values: self.sample(b).to_vec(),
        }
    }

    /// Values of channel `ch` for sample `b`, row-major over `h × w`.
    pub fn channel_plane(&self, b: usize, ch: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.h * self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                out.push(self.get(b, y, x, ch));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
