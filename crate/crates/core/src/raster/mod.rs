//! Image raster type, the quantization operator, luma/chroma split and
//! quality metrics shared by every other module.
//!
//! Pixels live in the continuous domain `[0, 1]`; 8-bit code values exist
//! only at file boundaries (see [`load_image`] / [`save_image`]).

mod png;
mod pnm;

use std::path::Path;

use crate::scalar::{eps_guard, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed image file: {0}")]
    Format(String),
    #[error("unsupported image: {0}")]
    Unsupported(String),
    #[error("channel count must be 1 or 3, got {0}")]
    BadChannels(usize),
    #[error("data length {got} does not match {height}x{width}x{channels}")]
    LengthMismatch {
        got: usize,
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("pixel value {value} at index {index} outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("dimension mismatch: {0}x{1}x{2} vs {3}x{4}x{5}")]
    DimensionMismatch(usize, usize, usize, usize, usize, usize),
}

/// H x W x C image with real-valued samples in `[0, 1]`, row-major and
/// channel-interleaved. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<S> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<S>,
}

impl<S: Scalar> Raster<S> {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<S>,
    ) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::BadChannels(channels));
        }
        if data.len() != height * width * channels {
            return Err(RasterError::LengthMismatch {
                got: data.len(),
                height,
                width,
                channels,
            });
        }
        for (index, &v) in data.iter().enumerate() {
            if !(v >= S::zero() && v <= S::one()) {
                return Err(RasterError::ValueOutOfRange {
                    index,
                    value: v.to_f64_lossy(),
                });
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constructor for values already known to be in `[0, 1]`.
    pub(crate) fn from_clamped(height: usize, width: usize, channels: usize, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        debug_assert!(data.iter().all(|v| *v >= S::zero() && *v <= S::one()));
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: S) -> Self {
        Self::from_clamped(
            height,
            width,
            channels,
            vec![value.clamp01(); height * width * channels],
        )
    }

    /// Build from a per-(row, col, channel) function; results are clamped.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> S,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp01());
                }
            }
        }
        Self::from_clamped(height, width, channels, data)
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

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> S {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Raster<S>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// New raster with `f` applied to every sample (clamped back to `[0, 1]`).
    pub fn map(&self, f: impl Fn(S) -> S) -> Raster<S> {
        let data = self.data.iter().map(|&v| f(v).clamp01()).collect();
        Self::from_clamped(self.height, self.width, self.channels, data)
    }

    /// Every sample quantized with step `q` (result clamped to `[0, 1]`).
    pub fn quantized(&self, q: &QuantSpec<S>) -> Raster<S> {
        self.map(|v| quantize(v, q.step()))
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Raster<S> {
        assert!(y0 + h <= self.height && x0 + w <= self.width, "crop out of bounds");
        let mut data = Vec::with_capacity(h * w * self.channels);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[row..row + w * self.channels]);
        }
        Self::from_clamped(h, w, self.channels, data)
    }

    /// Cast between scalar precisions.
    pub fn convert<T: Scalar>(&self) -> Raster<T> {
        let data = self
            .data
            .iter()
            .map(|v| T::of(v.to_f64_lossy()).clamp01())
            .collect();
        Raster::from_clamped(self.height, self.width, self.channels, data)
    }
}

/// Quantization step `q` in `(0, 1]`; 1/255 emulates an 8-bit converter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantSpec<S> {
    q: S,
}

impl<S: Scalar> QuantSpec<S> {
    pub fn new(q: S) -> Result<Self, RasterError> {
        if !(q > S::zero() && q <= S::one()) {
            return Err(RasterError::Format(format!(
                "quantization step must be in (0, 1], got {q}"
            )));
        }
        Ok(Self { q })
    }

    /// Step for `levels` representable values above zero, e.g. 255 for 8-bit.
    pub fn for_levels(levels: u32) -> Self {
        Self {
            q: S::one() / S::of(levels as f64),
        }
    }

    pub fn step(&self) -> S {
        self.q
    }
}

impl<S: Scalar> Default for QuantSpec<S> {
    fn default() -> Self {
        Self::for_levels(255)
    }
}

/// Mid-tread quantizer: `q * floor(x/q + 0.5)`. Total on the reals; ties at
/// half a step round up.
#[inline]
pub fn quantize<S: Scalar>(x: S, q: S) -> S {
    q * (x / q + S::of(0.5)).floor()
}

/// Loads an 8-bit PNG, PGM or PPM image; code value `k` maps to `k * (1/255)`.
pub fn load_image<S: Scalar>(path: impl AsRef<Path>) -> Result<Raster<S>, RasterError> {
    let path = path.as_ref();
    match extension(path) {
        Some("pgm") | Some("ppm") => pnm::load(path),
        Some("png") => png::load(path),
        _ => Err(RasterError::Unsupported(format!(
            "unrecognized image extension: {}",
            path.display()
        ))),
    }
}

/// Quantizes with `q`, then encodes 8-bit PNG/PGM/PPM. Loading the result
/// back reproduces `r.quantized(q)` exactly when `q` is the default 1/255.
pub fn save_image<S: Scalar>(
    r: &Raster<S>,
    path: impl AsRef<Path>,
    q: &QuantSpec<S>,
) -> Result<(), RasterError> {
    let path = path.as_ref();
    let codes = encode_codes(r, q);
    match extension(path) {
        Some("pgm") | Some("ppm") => pnm::save(path, r.height, r.width, r.channels, &codes),
        Some("png") => png::save(path, r.height, r.width, r.channels, &codes),
        _ => Err(RasterError::Unsupported(format!(
            "unrecognized image extension: {}",
            path.display()
        ))),
    }
}

fn encode_codes<S: Scalar>(r: &Raster<S>, q: &QuantSpec<S>) -> Vec<u8> {
    let half = S::of(0.5);
    let max_code = S::of(255.0);
    r.data()
        .iter()
        .map(|&v| {
            let vq = quantize(v, q.step());
            let code = (vq * max_code + half).floor().max(S::zero()).min(max_code);
            code.to_f64_lossy() as u8
        })
        .collect()
}

pub(crate) fn codes_to_raster<S: Scalar>(
    height: usize,
    width: usize,
    channels: usize,
    codes: &[u8],
) -> Result<Raster<S>, RasterError> {
    let q = S::one() / S::of(255.0);
    let data = codes.iter().map(|&k| q * S::of(k as f64)).collect();
    Raster::new(height, width, channels, data)
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

/// Per-channel ratios to the value channel, produced by [`split_luma`].
#[derive(Debug, Clone)]
pub struct ChromaRatios<S> {
    ratios: Vec<S>,
    channels: usize,
}

/// Splits a 3-channel raster into its value channel (per-pixel channel max)
/// and per-channel ratios. Black pixels get ratio 1 on every channel so a
/// later luma boost turns them gray rather than blowing up.
pub fn split_luma<S: Scalar>(r: &Raster<S>) -> Result<(Raster<S>, ChromaRatios<S>), RasterError> {
    if r.channels() != 3 {
        return Err(RasterError::BadChannels(r.channels()));
    }
    let eps = eps_guard::<S>();
    let mut luma = Vec::with_capacity(r.pixels());
    let mut ratios = Vec::with_capacity(r.data().len());
    for px in r.data().chunks_exact(3) {
        let m = px[0].max(px[1]).max(px[2]);
        luma.push(m);
        if m == S::zero() {
            ratios.extend_from_slice(&[S::one(); 3]);
        } else {
            let d = m.max(eps);
            for &v in px {
                ratios.push(v / d);
            }
        }
    }
    Ok((
        Raster::from_clamped(r.height(), r.width(), 1, luma),
        ChromaRatios { ratios, channels: 3 },
    ))
}

/// Rebuilds a color raster from a (possibly modified) value channel and the
/// ratios from [`split_luma`].
pub fn recombine_luma<S: Scalar>(
    luma: &Raster<S>,
    chroma: &ChromaRatios<S>,
) -> Result<Raster<S>, RasterError> {
    if luma.channels() != 1 {
        return Err(RasterError::BadChannels(luma.channels()));
    }
    if chroma.ratios.len() != luma.pixels() * chroma.channels {
        return Err(RasterError::LengthMismatch {
            got: chroma.ratios.len(),
            height: luma.height(),
            width: luma.width(),
            channels: chroma.channels,
        });
    }
    let mut data = Vec::with_capacity(chroma.ratios.len());
    for (i, &l) in luma.data().iter().enumerate() {
        for c in 0..chroma.channels {
            data.push((chroma.ratios[i * chroma.channels + c] * l).clamp01());
        }
    }
    Ok(Raster::from_clamped(
        luma.height(),
        luma.width(),
        chroma.channels,
        data,
    ))
}

/// Peak signal-to-noise ratio in dB over all samples; `+inf` when the inputs
/// are identical. Always accumulates in f64.
pub fn psnr<S: Scalar>(a: &Raster<S>, b: &Raster<S>) -> Result<f64, RasterError> {
    if !a.same_shape(b) {
        return Err(RasterError::DimensionMismatch(
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels(),
        ));
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x.to_f64_lossy() - y.to_f64_lossy();
        acc += d * d;
    }
    let mse = acc / a.data().len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}
