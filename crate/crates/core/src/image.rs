//! Single-band raster, Gaussian kernels, convolution and finite-difference gradients.

use crate::error::{Error, Result};

/// Row-major single-band image with real-valued samples.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::BadDimensions { width, height, len: data.len() });
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        GrayImage { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear sample at real coordinates. `None` outside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        bilinear(&self.data, self.width, self.height, x, y)
    }
}

#[inline]
pub(crate) fn bilinear(data: &[f64], width: usize, height: usize, x: f64, y: f64) -> Option<f64> {
    if !(x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = data[y0 * width + x0] * (1.0 - fx) + data[y0 * width + x1] * fx;
    let bottom = data[y1 * width + x0] * (1.0 - fx) + data[y1 * width + x1] * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Per-pixel horizontal and vertical derivatives of an image.
#[derive(Clone, Debug)]
pub struct GradientField {
    pub gx: GrayImage,
    pub gy: GrayImage,
}

impl GradientField {
    pub fn dims(&self) -> (usize, usize) {
        self.gx.dims()
    }
}

/// Square convolution kernel.
///
/// Gaussian kernels also carry their normalized 1-D factor so that
/// [`convolve`] can run two separable passes instead of a full 2-D sum.
#[derive(Clone, Debug)]
pub struct Kernel {
    radius: usize,
    sigma: f64,
    weights: Vec<f64>,
    axis: Option<Vec<f64>>,
}

impl Kernel {
    /// Arbitrary (2r+1)^2 kernel, used as-is.
    pub fn from_weights(radius: usize, weights: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if weights.len() != side * side {
            return Err(Error::BadDimensions { width: side, height: side, len: weights.len() });
        }
        Ok(Kernel { radius, sigma: f64::NAN, weights, axis: None })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dx, dy)` from the center.
    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }
}

/// Discrete Gaussian with radius `ceil(3 sigma)`, renormalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Result<Kernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    let axis: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let mut weights = Vec::with_capacity(axis.len() * axis.len());
    for wy in &axis {
        for wx in &axis {
            weights.push(wy * wx);
        }
    }
    Ok(Kernel { radius, sigma, weights, axis: Some(axis) })
}

/// Half-sample symmetric reflection of an index into `0..n`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// `out(p) = sum_o k(o) * img(p - o)` with mirror-reflected borders.
pub fn convolve(img: &GrayImage, k: &Kernel) -> GrayImage {
    match &k.axis {
        Some(axis) => convolve_separable(img, axis),
        None => convolve_direct(img, k),
    }
}

fn convolve_direct(img: &GrayImage, k: &Kernel) -> GrayImage {
    let (w, h) = img.dims();
    let r = k.radius as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = reflect(y as isize - dy, h);
                for dx in -r..=r {
                    let sx = reflect(x as isize - dx, w);
                    acc += k.weight(dx, dy) * img.data[sy * w + sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    GrayImage { width: w, height: h, data: out }
}

fn convolve_separable(img: &GrayImage, axis: &[f64]) -> GrayImage {
    let (w, h) = img.dims();
    let r = (axis.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, wt) in axis.iter().enumerate() {
                let dx = i as isize - r;
                acc += wt * row[reflect(x as isize - dx, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for (i, wt) in axis.iter().enumerate() {
        let dy = i as isize - r;
        for y in 0..h {
            let sy = reflect(y as isize - dy, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wt * s;
            }
        }
    }
    GrayImage { width: w, height: h, data: out }
}

pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    Ok(convolve(img, &gaussian_kernel(sigma)?))
}

/// Min-max rescale into `[0, 1]`; a constant image becomes all zeros.
pub fn normalize(img: &GrayImage) -> GrayImage {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    if !(range > 0.0) {
        return GrayImage::filled(img.width, img.height, 0.0);
    }
    img.map(|v| (v - lo) / range)
}

/// Gaussian smoothing; `sigma == 0` is the identity.
pub fn denoise(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if sigma < 0.0 || sigma.is_nan() {
        return Err(Error::NonPositiveSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    gaussian_blur(img, sigma)
}

/// Central differences, one-sided at the borders.
pub fn gradient(img: &GrayImage) -> Result<GradientField> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall { width: w, height: h, min: 3 });
    }
    let d = &img.data;
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let row = y * w;
        gx[row] = d[row + 1] - d[row];
        for x in 1..w - 1 {
            gx[row + x] = (d[row + x + 1] - d[row + x - 1]) / 2.0;
        }
        gx[row + w - 1] = d[row + w - 1] - d[row + w - 2];
    }
    for x in 0..w {
        gy[x] = d[w + x] - d[x];
        gy[(h - 1) * w + x] = d[(h - 1) * w + x] - d[(h - 2) * w + x];
    }
    for y in 1..h - 1 {
        for x in 0..w {
            gy[y * w + x] = (d[(y + 1) * w + x] - d[(y - 1) * w + x]) / 2.0;
        }
    }
    Ok(GradientField {
        gx: GrayImage { width: w, height: h, data: gx },
        gy: GrayImage { width: w, height: h, data: gy },
    })
}
