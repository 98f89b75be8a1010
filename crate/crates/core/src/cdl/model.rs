//! Dictionaries, code tensors, training data and the CDL objective.

use num_complex::Complex64;
use rayon::prelude::*;

use super::ace::AceOperator;
use crate::error::{check_len, Error, Result};
use crate::signal_ops::{embed, extract_filter, pad_filter, truncate, Fft2, Geometry, Mask};

/// K filter atoms of `filter_h x filter_w` coefficients, stored back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    filter_h: usize,
    filter_w: usize,
    coeffs: Vec<f64>,
}

impl Dictionary {
    pub fn new(num_filters: usize, filter_h: usize, filter_w: usize, coeffs: Vec<f64>) -> Result<Self> {
        if num_filters == 0 || filter_h == 0 || filter_w == 0 {
            return Err(Error::InvalidGeometry("dictionary needs at least one non-empty filter".into()));
        }
        check_len("dictionary", num_filters * filter_h * filter_w, coeffs.len())?;
        Ok(Dictionary { filter_h, filter_w, coeffs })
    }

    pub fn num_filters(&self) -> usize {
        self.coeffs.len() / self.filter_len()
    }

    pub fn filter_h(&self) -> usize {
        self.filter_h
    }

    pub fn filter_w(&self) -> usize {
        self.filter_w
    }

    pub fn filter_len(&self) -> usize {
        self.filter_h * self.filter_w
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.coeffs[k * self.filter_len()..(k + 1) * self.filter_len()]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn atom_norms(&self) -> Vec<f64> {
        self.coeffs.chunks(self.filter_len()).map(|d| d.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }

    /// Every atom satisfies `‖d_k‖₂ ≤ 1 + tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.atom_norms().iter().all(|&n| n <= 1.0 + tol)
    }
}

/// L x K padded code maps; the K maps of image `l` are contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeTensor {
    num_images: usize,
    num_filters: usize,
    padded_len: usize,
    values: Vec<f64>,
}

impl CodeTensor {
    pub fn zeros(num_images: usize, num_filters: usize, padded_len: usize) -> Self {
        CodeTensor { num_images, num_filters, padded_len, values: vec![0.0; num_images * num_filters * padded_len] }
    }

    pub fn new(num_images: usize, num_filters: usize, padded_len: usize, values: Vec<f64>) -> Result<Self> {
        check_len("code tensor", num_images * num_filters * padded_len, values.len())?;
        Ok(CodeTensor { num_images, num_filters, padded_len, values })
    }

    pub fn num_images(&self) -> usize {
        self.num_images
    }

    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn padded_len(&self) -> usize {
        self.padded_len
    }

    /// The K maps of image `l`.
    pub fn row(&self, l: usize) -> &[f64] {
        let n = self.num_filters * self.padded_len;
        &self.values[l * n..(l + 1) * n]
    }

    pub fn map(&self, l: usize, k: usize) -> &[f64] {
        let start = (l * self.num_filters + k) * self.padded_len;
        &self.values[start..start + self.padded_len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

/// Observed images with their sampling masks on the padded grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    geometry: Geometry,
    observations: Vec<Vec<f64>>,
    masks: Vec<Mask>,
}

impl TrainingSet {
    /// Fully observed images (row-major, `image_h x image_w` each) under the
    /// valid-region mask.
    pub fn from_images(geometry: Geometry, images: Vec<Vec<f64>>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidConfig("training set is empty".into()));
        }
        for img in &images {
            check_len("training image", geometry.image_len(), img.len())?;
        }
        let masks = vec![geometry.default_mask(); images.len()];
        Ok(TrainingSet { geometry, observations: images, masks })
    }

    /// Partially observed images: `observations[l]` holds the samples at `masks[l]`.
    pub fn with_masks(geometry: Geometry, observations: Vec<Vec<f64>>, masks: Vec<Mask>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidConfig("training set is empty".into()));
        }
        check_len("mask list", observations.len(), masks.len())?;
        for (y, m) in observations.iter().zip(&masks) {
            check_len("mask domain", geometry.padded_len(), m.domain())?;
            check_len("observation", m.len(), y.len())?;
            if m.len() > geometry.image_len() {
                return Err(Error::InvalidGeometry(format!(
                    "mask selects {} samples but images have {}",
                    m.len(),
                    geometry.image_len()
                )));
            }
        }
        Ok(TrainingSet { geometry, observations, masks })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observation(&self, l: usize) -> &[f64] {
        &self.observations[l]
    }

    pub fn mask(&self, l: usize) -> &Mask {
        &self.masks[l]
    }

    /// True when every image uses the valid-region mask.
    pub fn fully_observed(&self) -> bool {
        let default = self.geometry.default_mask();
        self.masks.iter().all(|m| *m == default)
    }
}

/// Data-fidelity term applied to the truncated synthesis residual `r`.
#[derive(Clone, Debug)]
pub enum Fidelity {
    /// `½‖r‖²`.
    Plain,
    /// `½‖R r‖²` with a contrast-enhancing spectral filter on the image grid.
    Ace(AceOperator),
}

impl Fidelity {
    /// Value of the term and its gradient with respect to `r`.
    pub fn weigh(&self, r: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Fidelity::Plain => (0.5 * r.iter().map(|v| v * v).sum::<f64>(), r.to_vec()),
            Fidelity::Ace(op) => op.energy_and_gradient(r),
        }
    }

    pub(crate) fn check(&self, data: &TrainingSet) -> Result<()> {
        if let Fidelity::Ace(op) = self {
            let g = data.geometry();
            if op.shape() != (g.image_h, g.image_w) {
                return Err(Error::InvalidGeometry(format!(
                    "contrast operator is {:?} but images are {}x{}",
                    op.shape(),
                    g.image_h,
                    g.image_w
                )));
            }
            if !data.fully_observed() {
                return Err(Error::InvalidConfig("contrast enhancement needs fully observed images".into()));
            }
        }
        Ok(())
    }
}

/// FFT plan plus the spectral bookkeeping shared by the solvers.
#[derive(Clone, Debug)]
pub(crate) struct Spectral {
    pub g: Geometry,
    pub fft: Fft2,
}

impl Spectral {
    pub fn new(g: Geometry) -> Self {
        Spectral { fft: Fft2::padded(&g), g }
    }

    pub fn filter_spectrum(&self, d: &[f64]) -> Vec<Complex64> {
        self.fft.forward_real(&pad_filter(d, &self.g).expect("filter length"))
    }

    pub fn filter_spectra(&self, filters: &[f64]) -> Vec<Vec<Complex64>> {
        filters.chunks(self.g.filter_len()).map(|d| self.filter_spectrum(d)).collect()
    }

    /// Spectra of consecutive padded maps.
    pub fn map_spectra(&self, maps: &[f64]) -> Vec<Vec<Complex64>> {
        maps.chunks(self.g.padded_len()).map(|z| self.fft.forward_real(z)).collect()
    }

    /// `Σ_k d_k ⊛ z_k` on the padded grid.
    pub fn synthesize(&self, filter_spectra: &[Vec<Complex64>], map_spectra: &[Vec<Complex64>]) -> Vec<f64> {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.g.padded_len()];
        for (lam, zh) in filter_spectra.iter().zip(map_spectra) {
            for ((a, l), z) in acc.iter_mut().zip(lam).zip(zh) {
                *a += l * z;
            }
        }
        self.fft.inverse_real(&acc)
    }

    /// `d ⊛ z` from the two spectra.
    pub fn convolve_spectra(&self, lam: &[Complex64], zh: &[Complex64]) -> Vec<f64> {
        let prod: Vec<Complex64> = lam.iter().zip(zh).map(|(l, z)| l * z).collect();
        self.fft.inverse_real(&prod)
    }

    /// Fidelity value and spectrum of `P_B^T ∇_r` for image `l`, given the
    /// padded synthesis.
    pub fn residual(&self, data: &TrainingSet, fidelity: &Fidelity, l: usize, synth: &[f64]) -> (f64, Vec<Complex64>) {
        let mask = data.mask(l);
        let r: Vec<f64> =
            truncate(synth, mask).expect("mask domain").iter().zip(data.observation(l)).map(|(s, y)| s - y).collect();
        let (value, grad) = fidelity.weigh(&r);
        let padded = embed(&grad, mask).expect("mask length");
        (value, self.fft.forward_real(&padded))
    }

    /// `P_S ifft(Σ_l conj(ẑ_l) r̂_l)` for one filter.
    pub fn filter_gradient_from(&self, acc: &[Complex64]) -> Vec<f64> {
        extract_filter(&self.fft.inverse_real(acc), &self.g).expect("padded length")
    }

    /// `ifft(conj(λ) r̂)`, the code gradient of one map.
    pub fn code_gradient_map(&self, lam: &[Complex64], res: &[Complex64]) -> Vec<f64> {
        let prod: Vec<Complex64> = lam.iter().zip(res).map(|(l, r)| l.conj() * r).collect();
        self.fft.inverse_real(&prod)
    }
}

fn validate(dict: &Dictionary, codes: &CodeTensor, data: &TrainingSet) -> Result<()> {
    super::check_shapes(data, dict, codes)
}

/// `Σ_l fidelity(P_B Σ_k d_k ⊛ z_{l,k} − y_l) + α Σ ‖z‖₁`.
pub fn objective(
    dict: &Dictionary,
    codes: &CodeTensor,
    data: &TrainingSet,
    alpha: f64,
    fidelity: &Fidelity,
) -> Result<f64> {
    validate(dict, codes, data)?;
    fidelity.check(data)?;
    let sp = Spectral::new(*data.geometry());
    let fs = sp.filter_spectra(dict.coeffs());
    let fit: f64 = (0..data.len())
        .map(|l| {
            let synth = sp.synthesize(&fs, &sp.map_spectra(codes.row(l)));
            sp.residual(data, fidelity, l, &synth).0
        })
        .sum();
    Ok(fit + alpha * codes.l1_norm())
}

/// Gradient of the fidelity term with respect to all filters (length K·D).
pub fn filter_gradient(
    dict: &Dictionary,
    codes: &CodeTensor,
    data: &TrainingSet,
    fidelity: &Fidelity,
) -> Result<Vec<f64>> {
    validate(dict, codes, data)?;
    fidelity.check(data)?;
    let sp = Spectral::new(*data.geometry());
    let fs = sp.filter_spectra(dict.coeffs());
    let code_spectra: Vec<Vec<Vec<Complex64>>> = (0..data.len()).map(|l| sp.map_spectra(codes.row(l))).collect();
    Ok(filter_gradient_spectral(&sp, data, fidelity, &fs, &code_spectra))
}

pub(crate) fn filter_gradient_spectral(
    sp: &Spectral,
    data: &TrainingSet,
    fidelity: &Fidelity,
    filter_spectra: &[Vec<Complex64>],
    code_spectra: &[Vec<Vec<Complex64>>],
) -> Vec<f64> {
    let k = filter_spectra.len();
    let n = sp.g.padded_len();
    let residuals: Vec<Vec<Complex64>> = (0..data.len())
        .into_par_iter()
        .map(|l| {
            let synth = sp.synthesize(filter_spectra, &code_spectra[l]);
            sp.residual(data, fidelity, l, &synth).1
        })
        .collect();
    (0..k)
        .flat_map(|kk| {
            let mut acc = vec![Complex64::new(0.0, 0.0); n];
            for (zs, r) in code_spectra.iter().zip(&residuals) {
                for ((a, z), rr) in acc.iter_mut().zip(&zs[kk]).zip(r) {
                    *a += z.conj() * rr;
                }
            }
            sp.filter_gradient_from(&acc)
        })
        .collect()
}

/// Gradient of the fidelity term with respect to the K code maps of image `l`.
pub fn code_gradient(
    dict: &Dictionary,
    codes: &CodeTensor,
    data: &TrainingSet,
    l: usize,
    fidelity: &Fidelity,
) -> Result<Vec<f64>> {
    validate(dict, codes, data)?;
    fidelity.check(data)?;
    if l >= data.len() {
        return Err(Error::IndexOutOfRange { index: l, len: data.len() });
    }
    let sp = Spectral::new(*data.geometry());
    let fs = sp.filter_spectra(dict.coeffs());
    let synth = sp.synthesize(&fs, &sp.map_spectra(codes.row(l)));
    let res = sp.residual(data, fidelity, l, &synth).1;
    Ok(fs.iter().flat_map(|lam| sp.code_gradient_map(lam, &res)).collect())
}

/// Percentage of nonzero code entries, averaged over images.
pub fn sparsity(codes: &CodeTensor) -> f64 {
    if codes.values().is_empty() {
        return 0.0;
    }
    100.0 * codes.nonzero_count() as f64 / codes.values().len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (Dictionary, CodeTensor, TrainingSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Geometry::new(3, 3, 2, 2).unwrap();
        let (k, l) = (2, 2);
        let dict = Dictionary::new(k, 2, 2, (0..k * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let codes = CodeTensor::new(
            l,
            k,
            g.padded_len(),
            (0..l * k * g.padded_len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let images = (0..l).map(|_| (0..9).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        (dict, codes, TrainingSet::from_images(g, images).unwrap())
    }

    #[test]
    fn zero_codes_give_half_data_energy() {
        let (dict, codes, data) = instance(1);
        let zero = CodeTensor::zeros(codes.num_images(), codes.num_filters(), codes.padded_len());
        let expected: f64 = (0..data.len()).map(|l| 0.5 * data.observation(l).iter().map(|v| v * v).sum::<f64>()).sum();
        let got = objective(&dict, &zero, &data, 0.3, &Fidelity::Plain).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn exact_synthesis_leaves_penalty_only() {
        let (dict, codes, data) = instance(2);
        let g = *data.geometry();
        let images = (0..data.len())
            .map(|l| crate::signal_ops::synthesize(dict.coeffs(), codes.row(l), &g, data.mask(l)).unwrap())
            .collect();
        let exact = TrainingSet::from_images(g, images).unwrap();
        let got = objective(&dict, &codes, &exact, 0.7, &Fidelity::Plain).unwrap();
        assert!((got - 0.7 * codes.l1_norm()).abs() < 1e-10);
        let gd = filter_gradient(&dict, &codes, &exact, &Fidelity::Plain).unwrap();
        assert!(gd.iter().all(|v| v.abs() < 1e-10));
        let gz = code_gradient(&dict, &codes, &exact, 1, &Fidelity::Plain).unwrap();
        assert!(gz.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn matches_dense_operators() {
        let (dict, codes, data) = instance(3);
        let g = *data.geometry();
        let rows: Vec<Vec<f64>> = (0..data.len()).map(|l| codes.row(l).to_vec()).collect();
        let masks: Vec<Mask> = (0..data.len()).map(|l| data.mask(l).clone()).collect();
        let psi = dense::psi(&rows, dict.num_filters(), &g, &masks);
        let y = DVector::from_iterator(psi.nrows(), (0..data.len()).flat_map(|l| data.observation(l).to_vec()));
        let d = DVector::from_vec(dict.coeffs().to_vec());
        let r = &psi * &d - &y;
        let obj = 0.5 * r.norm_squared() + 0.2 * codes.l1_norm();
        assert!((objective(&dict, &codes, &data, 0.2, &Fidelity::Plain).unwrap() - obj).abs() < 1e-10);
        let dense_grad = psi.transpose() * &r;
        let grad = filter_gradient(&dict, &codes, &data, &Fidelity::Plain).unwrap();
        for (a, b) in grad.iter().zip(dense_grad.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let gam = dense::gamma(dict.coeffs(), &g, data.mask(0));
        let z0 = DVector::from_vec(codes.row(0).to_vec());
        let r0 = &gam * &z0 - DVector::from_vec(data.observation(0).to_vec());
        let dense_code = gam.transpose() * r0;
        let code = code_gradient(&dict, &codes, &data, 0, &Fidelity::Plain).unwrap();
        for (a, b) in code.iter().zip(dense_code.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn delta_code_gradient_is_adjoint_residual() {
        // K = 1 with a delta code: the filter gradient is P_S of the embedded residual.
        let g = Geometry::new(3, 3, 2, 2).unwrap();
        let dict = Dictionary::new(1, 2, 2, vec![0.5, -0.25, 0.1, 0.3]).unwrap();
        let mut z = vec![0.0; g.padded_len()];
        z[0] = 1.0;
        let codes = CodeTensor::new(1, 1, g.padded_len(), z).unwrap();
        let y: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let data = TrainingSet::from_images(g, vec![y.clone()]).unwrap();
        let synth = crate::signal_ops::synthesize(dict.coeffs(), codes.row(0), &g, data.mask(0)).unwrap();
        let r: Vec<f64> = synth.iter().zip(&y).map(|(s, v)| s - v).collect();
        let expected = extract_filter(&embed(&r, data.mask(0)).unwrap(), &g).unwrap();
        let got = filter_gradient(&dict, &codes, &data, &Fidelity::Plain).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity(&CodeTensor::zeros(2, 2, 4)), 0.0);
        assert_eq!(sparsity(&CodeTensor::new(1, 1, 4, vec![1.0; 4]).unwrap()), 100.0);
        assert_eq!(sparsity(&CodeTensor::new(1, 1, 4, vec![1.0, 0.0, -2.0, 0.0]).unwrap()), 50.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (dict, _, data) = instance(4);
        let bad = CodeTensor::zeros(1, 2, 16);
        assert!(objective(&dict, &bad, &data, 0.1, &Fidelity::Plain).is_err());
    }
}
