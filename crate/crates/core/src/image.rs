//! Unit-interval images and co-located patch sampling.

use alloc::vec::Vec;

use rand::Rng;

use crate::autonn::Tensor;
use crate::degrade::DegradationSpec;

/// Smallest accepted side length.
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("image {height}x{width} is below the {min}x{min} minimum")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("data length {got} does not match {height}x{width}x{channels}")]
    Length {
        height: usize,
        width: usize,
        channels: usize,
        got: usize,
    },
    #[error("pixel value {0} outside [0, 1]")]
    OutOfRange(f32),
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    Mismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("patch size {size} exceeds image {height}x{width}")]
    PatchTooLarge { size: usize, height: usize, width: usize },
}

/// `height × width × channels` reals in `[0, 1]`, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        Self::check_dims(height, width, channels, data.len())?;
        if let Some(&v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::OutOfRange(v));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Like [`Image::new`] but clips every value into `[0, 1]` (NaN becomes 0).
    pub fn clipped(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self, ImageError> {
        Self::check_dims(height, width, channels, data.len())?;
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self, ImageError> {
        Self::new(height, width, channels, alloc::vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::clipped(height, width, channels, data)
    }

    fn check_dims(height: usize, width: usize, channels: usize, len: usize) -> Result<(), ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(ImageError::TooSmall {
                height,
                width,
                min: MIN_SIDE,
            });
        }
        if len != height * width * channels {
            return Err(ImageError::Length {
                height,
                width,
                channels,
                got: len,
            });
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// One channel as a row-major plane.
    pub fn plane(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Crop of `size_y × size_x` at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size_y: usize, size_x: usize) -> Result<Self, ImageError> {
        if top + size_y > self.height || left + size_x > self.width {
            return Err(ImageError::PatchTooLarge {
                size: size_y.max(size_x),
                height: self.height,
                width: self.width,
            });
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(size_y * size_x * c);
        for y in top..top + size_y {
            let start = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[start..start + size_x * c]);
        }
        Self::new(size_y, size_x, c, data)
    }

    /// Replicate-pads bottom and right edges so both sides are multiples of
    /// `multiple`.
    pub fn pad_to_multiple(&self, multiple: usize) -> Self {
        let h = self.height.div_ceil(multiple) * multiple;
        let w = self.width.div_ceil(multiple) * multiple;
        if (h, w) == (self.height, self.width) {
            return self.clone();
        }
        let (sh, sw) = (self.height, self.width);
        Self::from_fn(h, w, self.channels, |y, x, c| self.get(y.min(sh - 1), x.min(sw - 1), c))
            .expect("padding grows a valid image")
    }

    /// Planar `[1, C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (h, w, c) = self.dims();
        let mut out = Vec::with_capacity(h * w * c);
        for ch in 0..c {
            out.extend(self.data.iter().skip(ch).step_by(c));
        }
        Tensor::from_vec(&[1, c, h, w], out).expect("consistent dims")
    }

    /// Stacks images of identical size into `[N, C, H, W]`.
    pub fn batch_tensor(images: &[&Image]) -> Result<Tensor<f32>, ImageError> {
        let first = images[0];
        let mut out = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if img.dims() != first.dims() {
                return Err(ImageError::Mismatch {
                    a: first.dims(),
                    b: img.dims(),
                });
            }
            out.extend_from_slice(img.to_tensor().data());
        }
        let (h, w, c) = first.dims();
        Ok(Tensor::from_vec(&[images.len(), c, h, w], out).expect("consistent dims"))
    }

    /// Reads sample `index` of a planar `[N, C, H, W]` tensor, clipping to `[0, 1]`.
    pub fn from_tensor(t: &Tensor<f32>, index: usize) -> Result<Self, ImageError> {
        let (_, c, h, w) = t.dims4().map_err(|_| ImageError::Channels(0))?;
        let hw = h * w;
        let src = &t.data()[index * c * hw..(index + 1) * c * hw];
        let mut data = alloc::vec![0.0; c * hw];
        for ch in 0..c {
            for i in 0..hw {
                data[i * c + ch] = src[ch * hw + i];
            }
        }
        Self::clipped(h, w, c, data)
    }
}

/// Degraded/clean images sharing identical dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub degraded: Image,
    pub clean: Image,
    pub spec: Option<DegradationSpec>,
}

impl ImagePair {
    pub fn new(degraded: Image, clean: Image, spec: Option<DegradationSpec>) -> Result<Self, ImageError> {
        if degraded.dims() != clean.dims() {
            return Err(ImageError::Mismatch {
                a: degraded.dims(),
                b: clean.dims(),
            });
        }
        Ok(Self { degraded, clean, spec })
    }
}

/// Co-located square crops of both images; offsets are uniform over
/// `[0, H − size] × [0, W − size]` inclusive.
pub fn random_patch<R: Rng + ?Sized>(pair: &ImagePair, size: usize, rng: &mut R) -> Result<ImagePair, ImageError> {
    let (h, w, _) = pair.clean.dims();
    let (top, left) = patch_offsets(h, w, size, rng)?;
    Ok(ImagePair {
        degraded: pair.degraded.crop(top, left, size, size)?,
        clean: pair.clean.crop(top, left, size, size)?,
        spec: pair.spec.clone(),
    })
}

/// The `(top, left)` offsets [`random_patch`] draws.
pub fn patch_offsets<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    size: usize,
    rng: &mut R,
) -> Result<(usize, usize), ImageError> {
    if size > height || size > width || size < MIN_SIDE {
        return Err(ImageError::PatchTooLarge { size, height, width });
    }
    let top = rng.random_range(0..=height - size);
    let left = rng.random_range(0..=width - size);
    Ok((top, left))
}
