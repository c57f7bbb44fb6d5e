//! Dense tensors, feature maps, priors and binary masks.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Values this far outside `[0, 1]` are rejected when building a [`Prior`];
/// anything closer is clamped.
pub const PRIOR_RANGE_TOLERANCE: f64 = 1e-6;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, checking that every dim is positive, the data length
    /// matches, and every element is finite.
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::format("dims", format!("dimensions must be positive, got {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![T::zero(); n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same data, new dims with an equal element count.
    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        if dims.iter().product::<usize>() != self.data.len() || dims.contains(&0) {
            return Err(Error::shape(&self.dims, &dims));
        }
        Ok(Self { dims, data: self.data })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::narrow(v.wide())).collect(),
        }
    }

    /// Spatial `(H, W)` of a tensor whose leading dims are all 1.
    pub fn spatial_dims(&self) -> Result<(usize, usize)> {
        let n = self.dims.len();
        if n < 2 || self.dims[..n - 2].iter().any(|&d| d != 1) {
            return Err(Error::shape("[1.., H, W]", &self.dims));
        }
        Ok((self.dims[n - 2], self.dims[n - 1]))
    }
}

/// `C x H x W` per-pixel embeddings from an external backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    tensor: Tensor<T>,
}

impl<T: Scalar> FeatureMap<T> {
    /// Accepts `[C, H, W]` or a batch of one, `[1, C, H, W]`.
    pub fn from_tensor(tensor: Tensor<T>) -> Result<Self> {
        let dims = tensor.dims().to_vec();
        let tensor = match dims.as_slice() {
            [_, _, _] => tensor,
            [1, c, h, w] => tensor.reshape(vec![*c, *h, *w])?,
            _ => return Err(Error::shape("[C, H, W] or [1, C, H, W]", dims)),
        };
        Ok(Self { tensor })
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        Self::from_tensor(Tensor::new(vec![channels, height, width], data)?)
    }

    pub fn channels(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims()[2]
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn data(&self) -> &[T] {
        self.tensor.data()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    /// Value of channel `c` at flat pixel index `p`.
    #[inline]
    pub fn at(&self, c: usize, p: usize) -> T {
        self.tensor.data()[c * self.pixels() + p]
    }

    /// Feature vector of flat pixel `p`, widened to `f64`.
    pub fn pixel(&self, p: usize) -> Vec<f64> {
        (0..self.channels()).map(|c| self.at(c, p).wide()).collect()
    }

    /// Pixel-major copy (`N x C`) in `f64`, the layout the similarity
    /// kernels want.
    pub fn pixel_major(&self) -> Vec<f64> {
        let (c, n) = (self.channels(), self.pixels());
        let data = self.tensor.data();
        let mut out = vec![0.0; n * c];
        for ch in 0..c {
            for p in 0..n {
                out[p * c + ch] = data[ch * n + p].wide();
            }
        }
        out
    }
}

/// Probabilistic position prior: an `H x W` map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> Prior<T> {
    /// Validates range; values within [`PRIOR_RANGE_TOLERANCE`] of `[0, 1]`
    /// are clamped, anything further is an error.
    pub fn new(height: usize, width: usize, mut values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("positive H x W", (height, width)));
        }
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        for (index, v) in values.iter_mut().enumerate() {
            let x = v.wide();
            if !x.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if !(-PRIOR_RANGE_TOLERANCE..=1.0 + PRIOR_RANGE_TOLERANCE).contains(&x) {
                return Err(Error::PriorOutOfRange { index, value: x });
            }
            *v = v.max(T::zero()).min(T::one());
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Constructor for values already known to lie in `[0, 1]`.
    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        debug_assert!(values.iter().all(|v| *v >= T::zero() && *v <= T::one()));
        Self {
            height,
            width,
            values,
        }
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Accepts `[H, W]` or `[1, .., H, W]`.
    pub fn from_tensor(tensor: &Tensor<T>) -> Result<Self> {
        let (h, w) = tensor.spatial_dims()?;
        Self::new(h, w, tensor.data().to_vec())
    }

    /// `1 x H x W` tensor, the on-disk layout for priors.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor {
            dims: vec![1, self.height, self.width],
            data: self.values.clone(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn cast<U: Scalar>(&self) -> Prior<U> {
        Prior {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| U::narrow(v.wide())).collect(),
        }
    }

    /// Pixelwise `1 - p`.
    pub fn complement(&self) -> Self {
        Self::from_raw(
            self.height,
            self.width,
            self.values.iter().map(|v| T::one() - *v).collect(),
        )
    }

    pub(crate) fn check_same_shape<U>(&self, other: &Prior<U>) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape((self.height, self.width), (other.height, other.width)));
        }
        Ok(())
    }

    /// Area-average resampling to `height x width`. Each output cell is the
    /// mean of the input over the cell's footprint, with fractional overlap
    /// at the edges, so total mass per unit area is preserved.
    pub fn resample_area(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("positive H x W", (height, width)));
        }
        if (height, width) == self.shape() {
            return Ok(self.clone());
        }
        let ry = overlap_weights(self.height, height);
        let rx = overlap_weights(self.width, width);
        let mut out = Vec::with_capacity(height * width);
        for wy in &ry {
            for wx in &rx {
                let mut acc = 0.0;
                for &(sy, fy) in wy {
                    let row = &self.values[sy * self.width..(sy + 1) * self.width];
                    for &(sx, fx) in wx {
                        acc += fy * fx * row[sx].wide();
                    }
                }
                out.push(T::narrow(acc.clamp(0.0, 1.0)));
            }
        }
        Ok(Self::from_raw(height, width, out))
    }
}

/// For each of `dst` output cells along one axis, the `(source index, weight)`
/// pairs of its footprint; weights of each cell sum to 1.
fn overlap_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// `H x W` mask with values exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("positive H x W", (height, width)));
        }
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::InvalidParameter(format!(
                "mask value {} at index {i} is not 0 or 1",
                values[i]
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_bools(height: usize, width: usize, bits: impl IntoIterator<Item = bool>) -> Result<Self> {
        Self::new(height, width, bits.into_iter().map(u8::from).collect())
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn not(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| 1 - v).collect(),
        }
    }

    pub fn to_prior<T: Scalar>(&self) -> Prior<T> {
        Prior::from_raw(
            self.height,
            self.width,
            self.values.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect(),
        )
    }

    /// Nearest-neighbour resize; used to bring a feature-resolution
    /// prediction up to ground-truth resolution.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("positive H x W", (height, width)));
        }
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                values.push(self.values[sy * self.width + sx]);
            }
        }
        Self::new(height, width, values)
    }

    pub(crate) fn check_same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(self.shape(), other.shape()));
        }
        Ok(())
    }
}
