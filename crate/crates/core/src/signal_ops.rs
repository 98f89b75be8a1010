//! Padded-domain signal operators.
//!
//! Every image and code map lives on a padded grid of `padded_h x padded_w`
//! samples, stored row-major. Filters are placed in the top-left
//! `filter_h x filter_w` corner of that grid by [`pad_filter`]; the
//! boundary-truncation operator [`truncate`] gathers the observed samples
//! selected by a [`Mask`], and [`embed`] is its adjoint.
//!
//! The DFT convention is unnormalized forward, `1/Ñ` on the inverse.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};

/// Image, filter and padded-grid dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub image_h: usize,
    pub image_w: usize,
    pub filter_h: usize,
    pub filter_w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

impl Geometry {
    pub fn new(image_h: usize, image_w: usize, filter_h: usize, filter_w: usize) -> Result<Self> {
        if image_h == 0 || image_w == 0 {
            return Err(Error::InvalidGeometry("image must be non-empty".into()));
        }
        if filter_h == 0 || filter_w == 0 {
            return Err(Error::InvalidGeometry("filter must be non-empty".into()));
        }
        Ok(Geometry {
            image_h,
            image_w,
            filter_h,
            filter_w,
            padded_h: image_h + filter_h - 1,
            padded_w: image_w + filter_w - 1,
        })
    }

    /// N, the number of image pixels.
    pub fn image_len(&self) -> usize {
        self.image_h * self.image_w
    }

    /// D, the number of filter coefficients.
    pub fn filter_len(&self) -> usize {
        self.filter_h * self.filter_w
    }

    /// Ñ, the number of samples on the padded grid.
    pub fn padded_len(&self) -> usize {
        self.padded_h * self.padded_w
    }

    /// Padded-grid index of filter coefficient `s` (row-major in the filter).
    #[inline]
    pub fn support_index(&self, s: usize) -> usize {
        (s / self.filter_w) * self.padded_w + s % self.filter_w
    }

    /// Padded-grid indices of the filter support S, in filter row-major order.
    pub fn support(&self) -> Vec<usize> {
        (0..self.filter_len()).map(|s| self.support_index(s)).collect()
    }

    /// The valid-region mask: padded outputs that involve no circular wrap.
    ///
    /// Indices are listed in image row-major order, so `truncate` of a padded
    /// array with this mask yields an `image_h x image_w` image.
    pub fn default_mask(&self) -> Mask {
        let mut indices = Vec::with_capacity(self.image_len());
        for r in 0..self.image_h {
            for c in 0..self.image_w {
                indices.push((r + self.filter_h - 1) * self.padded_w + c + self.filter_w - 1);
            }
        }
        Mask { indices, domain: self.padded_len() }
    }

    /// Circular difference of two padded-grid indices, `(a - b) mod` grid.
    #[inline]
    pub fn wrap_diff(&self, a: usize, b: usize) -> usize {
        let (ar, ac) = (a / self.padded_w, a % self.padded_w);
        let (br, bc) = (b / self.padded_w, b % self.padded_w);
        let r = (ar + self.padded_h - br) % self.padded_h;
        let c = (ac + self.padded_w - bc) % self.padded_w;
        r * self.padded_w + c
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "image {}x{}, filter {}x{}, padded {}x{}",
            self.image_h, self.image_w, self.filter_h, self.filter_w, self.padded_h, self.padded_w
        )
    }
}

/// A list of distinct padded-grid indices (the set B or B_l).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    indices: Vec<usize>,
    domain: usize,
}

impl Mask {
    pub fn new(indices: Vec<usize>, domain: usize) -> Result<Self> {
        let mut seen = vec![false; domain];
        for &i in &indices {
            if i >= domain {
                return Err(Error::IndexOutOfRange { index: i, len: domain });
            }
            if seen[i] {
                return Err(Error::InvalidGeometry(format!("mask index {i} repeated")));
            }
            seen[i] = true;
        }
        Ok(Mask { indices, domain })
    }

    /// Every padded index, i.e. P_B = I.
    pub fn full(domain: usize) -> Self {
        Mask { indices: (0..domain).collect(), domain }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    /// 0/1 indicator of the mask on the padded grid.
    pub fn indicator(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.domain];
        for &i in &self.indices {
            v[i] = 1.0;
        }
        v
    }
}

/// Zero-padding operator P_S^T: places `d` in the top-left corner.
pub fn pad_filter(d: &[f64], g: &Geometry) -> Result<Vec<f64>> {
    check_len("filter", g.filter_len(), d.len())?;
    let mut out = vec![0.0; g.padded_len()];
    for (s, &v) in d.iter().enumerate() {
        out[g.support_index(s)] = v;
    }
    Ok(out)
}

/// Adjoint of [`pad_filter`] (P_S): reads the filter support back out.
pub fn extract_filter(v: &[f64], g: &Geometry) -> Result<Vec<f64>> {
    check_len("padded array", g.padded_len(), v.len())?;
    Ok((0..g.filter_len()).map(|s| v[g.support_index(s)]).collect())
}

/// Boundary truncation / sampling P_B.
pub fn truncate(v: &[f64], mask: &Mask) -> Result<Vec<f64>> {
    check_len("padded array", mask.domain, v.len())?;
    Ok(mask.indices.iter().map(|&i| v[i]).collect())
}

/// Adjoint of [`truncate`]: scatters `y` onto the padded grid with zeros elsewhere.
pub fn embed(y: &[f64], mask: &Mask) -> Result<Vec<f64>> {
    check_len("masked array", mask.len(), y.len())?;
    let mut out = vec![0.0; mask.domain];
    for (&i, &v) in mask.indices.iter().zip(y) {
        out[i] = v;
    }
    Ok(out)
}

/// Planned 2-D FFT over a fixed `rows x cols` grid.
///
/// Plans are immutable and shared through `Arc`, so a single instance can be
/// used from several threads; scratch space is allocated per call.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fft2({}x{})", self.rows, self.cols)
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    /// Plan for the padded grid of `g`.
    pub fn padded(g: &Geometry) -> Self {
        Self::new(g.padded_h, g.padded_w)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn transform(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.len());
        // rustfft processes consecutive chunks of its length.
        row.process(data);
        if self.rows > 1 {
            let mut t = vec![Complex64::new(0.0, 0.0); self.len()];
            for r in 0..self.rows {
                for c in 0..self.cols {
                    t[c * self.rows + r] = data[r * self.cols + c];
                }
            }
            col.process(&mut t);
            for r in 0..self.rows {
                for c in 0..self.cols {
                    data[r * self.cols + c] = t[c * self.rows + r];
                }
            }
        }
    }

    /// In-place unnormalized forward DFT.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_fwd, &self.col_fwd);
    }

    /// In-place inverse DFT including the `1/Ñ` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse DFT of a spectrum, keeping the real part.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Circular convolution `a ⊛ b` on this grid.
    pub fn convolve(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let fa = self.forward_real(a);
        let mut fb = self.forward_real(b);
        for (x, y) in fb.iter_mut().zip(&fa) {
            *x *= y;
        }
        self.inverse_real(&fb)
    }

    /// Circular cross-correlation `out[n] = Σ_m a[m] b[n + m]`, the adjoint of
    /// `b ↦ a ⊛ b`.
    pub fn correlate(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let fa = self.forward_real(a);
        let mut fb = self.forward_real(b);
        for (x, y) in fb.iter_mut().zip(&fa) {
            *x *= y.conj();
        }
        self.inverse_real(&fb)
    }
}

/// Circular convolution `d ⊛ z` of a filter with a padded code map, via FFT.
pub fn circ_conv(d: &[f64], z: &[f64], g: &Geometry) -> Result<Vec<f64>> {
    check_len("code map", g.padded_len(), z.len())?;
    let padded = pad_filter(d, g)?;
    Ok(Fft2::padded(g).convolve(&padded, z))
}

/// Direct spatial-domain circular convolution, O(Ñ·D).
pub fn circ_conv_spatial(d: &[f64], z: &[f64], g: &Geometry) -> Result<Vec<f64>> {
    check_len("filter", g.filter_len(), d.len())?;
    check_len("code map", g.padded_len(), z.len())?;
    let (ph, pw) = (g.padded_h, g.padded_w);
    let mut out = vec![0.0; g.padded_len()];
    for r in 0..ph {
        for c in 0..pw {
            let mut acc = 0.0;
            for a in 0..g.filter_h {
                let zr = (r + ph - a % ph) % ph;
                for b in 0..g.filter_w {
                    let zc = (c + pw - b % pw) % pw;
                    acc += d[a * g.filter_w + b] * z[zr * pw + zc];
                }
            }
            out[r * pw + c] = acc;
        }
    }
    Ok(out)
}

/// Composite forward model for one image: `P_B Σ_k d_k ⊛ z_k`.
///
/// `filters` holds K atoms of length D back to back and `codes` holds the K
/// padded code maps of the image back to back.
pub fn synthesize(filters: &[f64], codes: &[f64], g: &Geometry, mask: &Mask) -> Result<Vec<f64>> {
    let fft = Fft2::padded(g);
    let padded = synthesize_padded(filters, codes, g, &fft)?;
    truncate(&padded, mask)
}

/// `Σ_k d_k ⊛ z_k` on the padded grid, before truncation.
pub fn synthesize_padded(filters: &[f64], codes: &[f64], g: &Geometry, fft: &Fft2) -> Result<Vec<f64>> {
    let (d_len, n_pad) = (g.filter_len(), g.padded_len());
    if !filters.len().is_multiple_of(d_len) {
        return Err(Error::DimensionMismatch {
            what: "filter bank",
            expected: d_len * (filters.len() / d_len).max(1),
            actual: filters.len(),
        });
    }
    let k = filters.len() / d_len;
    check_len("code row", k * n_pad, codes.len())?;
    let mut acc = vec![Complex64::new(0.0, 0.0); n_pad];
    for (d, z) in filters.chunks(d_len).zip(codes.chunks(n_pad)) {
        let lam = fft.forward_real(&pad_filter(d, g)?);
        let zh = fft.forward_real(z);
        for ((a, l), zz) in acc.iter_mut().zip(&lam).zip(&zh) {
            *a += l * zz;
        }
    }
    Ok(fft.inverse_real(&acc))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
