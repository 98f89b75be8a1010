//! Dense, desk-scale constructions of the CDL operators.
//!
//! These materialize Ψ, Γ and the circulant bounds as explicit matrices so
//! majorizer claims `M ⪰ H` can be checked by eigen-decomposition. Sizes grow
//! like `(K·Ñ)²`; keep grids to a few dozen samples.

use nalgebra::{ComplexField, DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::majorizers::{self, CrossSpectra, MajorizerDiag};
use crate::signal_ops::{circ_conv_spatial, pad_filter, truncate, Fft2, Geometry, Mask};

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue<T: ComplexField<RealField = f64>>(h: &DMatrix<T>) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(h.clone()).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `diag(|A| 1)`: the row-absolute-sum bound for Hermitian `A` with a
/// nonnegative diagonal.
pub fn abs_row_sum_diag<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> Vec<f64> {
    a.row_iter().map(|row| row.iter().map(|v| v.clone().modulus()).sum()).collect()
}

/// `diag(|A^H| |A| 1)`, which dominates `A^H A` for any `A`.
pub fn abs_gram_diag<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> Vec<f64> {
    let abs = a.map(|v| v.modulus());
    let row_sums = abs.column_sum();
    (abs.transpose() * row_sums).iter().copied().collect()
}

/// Dense circulant `Φ^{-1} diag(spectrum) Φ` on the grid of `fft`.
pub fn circulant_from_spectrum(spectrum: &[Complex64], fft: &Fft2) -> DMatrix<Complex64> {
    let n = fft.len();
    let (rows, cols) = fft.shape();
    let mut col = spectrum.to_vec();
    fft.inverse(&mut col);
    DMatrix::from_fn(n, n, |i, j| {
        let r = (i / cols + rows - j / cols) % rows;
        let c = (i % cols + cols - j % cols) % cols;
        col[r * cols + c]
    })
}

/// Block-diagonal complex matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<Complex64>]) -> DMatrix<Complex64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}

/// Ψ for one filter index: the stacked `P_{B_l} C_{z_{l,k}} P_S^T`, shape `Σ|B_l| × D`.
///
/// `codes[l]` is the `k`th code map of image `l`.
pub fn psi_k(codes: &[&[f64]], g: &Geometry, masks: &[Mask]) -> DMatrix<f64> {
    let rows: usize = masks.iter().map(Mask::len).sum();
    let mut out = DMatrix::zeros(rows, g.filter_len());
    for s in 0..g.filter_len() {
        let mut e = vec![0.0; g.filter_len()];
        e[s] = 1.0;
        let mut at = 0;
        for (z, mask) in codes.iter().zip(masks) {
            let col = truncate(&circ_conv_spatial(&e, z, g).expect("shapes"), mask).expect("mask");
            for (i, v) in col.iter().enumerate() {
                out[(at + i, s)] = *v;
            }
            at += mask.len();
        }
    }
    out
}

/// Full Ψ = [Ψ_1 … Ψ_K]; `codes[l]` holds the K maps of image `l` back to back.
pub fn psi(codes: &[Vec<f64>], k: usize, g: &Geometry, masks: &[Mask]) -> DMatrix<f64> {
    let n_pad = g.padded_len();
    let blocks: Vec<DMatrix<f64>> = (0..k)
        .map(|kk| {
            let per_image: Vec<&[f64]> = codes.iter().map(|c| &c[kk * n_pad..(kk + 1) * n_pad]).collect();
            psi_k(&per_image, g, masks)
        })
        .collect();
    hstack(&blocks)
}

/// Γ = P_B [C_{d_1} … C_{d_K}], shape `|B| × K·Ñ`.
pub fn gamma(filters: &[f64], g: &Geometry, mask: &Mask) -> DMatrix<f64> {
    let blocks: Vec<DMatrix<f64>> = filters
        .chunks(g.filter_len())
        .map(|d| {
            let mut out = DMatrix::zeros(mask.len(), g.padded_len());
            for j in 0..g.padded_len() {
                let mut e = vec![0.0; g.padded_len()];
                e[j] = 1.0;
                let col = truncate(&circ_conv_spatial(d, &e, g).expect("shapes"), mask).expect("mask");
                for (i, v) in col.iter().enumerate() {
                    out[(i, j)] = *v;
                }
            }
            out
        })
        .collect();
    hstack(&blocks)
}

fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (rows, b.ncols())).copy_from(b);
        at += b.ncols();
    }
    out
}

/// `A^T A`.
pub fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * a
}

/// Q^H Q assembled from cross spectra: block `(k,k')` is the circulant of `X_{k,k'}`.
pub fn cross_gram(cross: &CrossSpectra, fft: &Fft2) -> DMatrix<Complex64> {
    let k = cross.num_filters();
    let n = fft.len();
    let mut out = DMatrix::zeros(k * n, k * n);
    for a in 0..k {
        for b in 0..k {
            let c = circulant_from_spectrum(&cross.get(a, b), fft);
            out.view_mut((a * n, b * n), (n, n)).copy_from(&c);
        }
    }
    out
}

/// `⊕_k Φ^{-1} Σ_k Φ`, the circulant bound on Q^H Q.
pub fn sigma_bound(cross: &CrossSpectra, fft: &Fft2) -> DMatrix<Complex64> {
    let blocks: Vec<DMatrix<Complex64>> = (0..cross.num_filters())
        .map(|k| {
            let s: Vec<Complex64> = majorizers::sigma_k(cross, k).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
            circulant_from_spectrum(&s, fft)
        })
        .collect();
    block_diag(&blocks)
}

/// Smallest eigenvalue of `bound - h` for Hermitian matrices.
pub fn hermitian_margin(bound: &DMatrix<Complex64>, h: &DMatrix<Complex64>) -> f64 {
    min_eigenvalue(&(bound - h))
}

/// Which majorizer construction a dominance check exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DominanceCase {
    FilterDiag1,
    FilterScaledIdentity,
    FilterDiag2,
    FilterSigmaBound,
    CodeDiag1,
    CodeDiag2,
    CodeSigmaBound,
    CodeAbsGram,
    MultiblockFilter,
    MultiblockCode,
}

impl DominanceCase {
    pub const ALL: [DominanceCase; 10] = [
        DominanceCase::FilterDiag1,
        DominanceCase::FilterScaledIdentity,
        DominanceCase::FilterDiag2,
        DominanceCase::FilterSigmaBound,
        DominanceCase::CodeDiag1,
        DominanceCase::CodeDiag2,
        DominanceCase::CodeSigmaBound,
        DominanceCase::CodeAbsGram,
        DominanceCase::MultiblockFilter,
        DominanceCase::MultiblockCode,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DominanceCase::FilterDiag1 => "filter-diag1",
            DominanceCase::FilterScaledIdentity => "filter-scaled-identity",
            DominanceCase::FilterDiag2 => "filter-diag2",
            DominanceCase::FilterSigmaBound => "filter-sigma-circulant",
            DominanceCase::CodeDiag1 => "code-diag1",
            DominanceCase::CodeDiag2 => "code-diag2",
            DominanceCase::CodeSigmaBound => "code-sigma-circulant",
            DominanceCase::CodeAbsGram => "code-abs-gram",
            DominanceCase::MultiblockFilter => "multiblock-filter",
            DominanceCase::MultiblockCode => "multiblock-code",
        }
    }
}

/// A random desk-scale CDL instance.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub geometry: Geometry,
    pub k: usize,
    /// `codes[l]`: K padded maps back to back.
    pub codes: Vec<Vec<f64>>,
    /// K filters back to back.
    pub filters: Vec<f64>,
    pub masks: Vec<Mask>,
}

/// Size limits for [`RandomInstance::generate`].
#[derive(Clone, Copy, Debug)]
pub struct InstanceLimits {
    pub max_k: usize,
    pub max_l: usize,
    pub max_image_side: usize,
    pub max_filter_side: usize,
}

impl Default for InstanceLimits {
    fn default() -> Self {
        InstanceLimits { max_k: 3, max_l: 3, max_image_side: 4, max_filter_side: 2 }
    }
}

impl RandomInstance {
    /// Gaussian filters and codes; every third instance draws random sampling
    /// masks `B_l` instead of the valid-region mask.
    pub fn generate<R: Rng>(rng: &mut R, limits: InstanceLimits) -> Self {
        let k = rng.random_range(1..=limits.max_k);
        let l = rng.random_range(1..=limits.max_l);
        let g = Geometry::new(
            rng.random_range(1..=limits.max_image_side),
            rng.random_range(1..=limits.max_image_side),
            rng.random_range(1..=limits.max_filter_side),
            rng.random_range(1..=limits.max_filter_side),
        )
        .expect("positive sizes");
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let filters: Vec<f64> = (0..k * g.filter_len()).map(|_| normal()).collect();
        let codes: Vec<Vec<f64>> = (0..l).map(|_| (0..k * g.padded_len()).map(|_| normal()).collect()).collect();
        let sparse_masks = rng.random_range(0..3) == 0;
        let masks = (0..l)
            .map(|_| {
                if sparse_masks {
                    let keep: Vec<usize> =
                        g.default_mask().indices().iter().copied().filter(|_| rng.random_bool(0.6)).collect();
                    Mask::new(keep, g.padded_len()).expect("subset of a valid mask")
                } else {
                    g.default_mask()
                }
            })
            .collect();
        RandomInstance { geometry: g, k, codes, filters, masks }
    }

    fn code_spectra(&self, fft: &Fft2) -> Vec<Vec<Vec<Complex64>>> {
        let n = self.geometry.padded_len();
        self.codes.iter().map(|row| row.chunks(n).map(|z| fft.forward_real(z)).collect()).collect()
    }

    fn filter_spectra(&self, fft: &Fft2) -> Vec<Vec<Complex64>> {
        self.filters
            .chunks(self.geometry.filter_len())
            .map(|d| fft.forward_real(&pad_filter(d, &self.geometry).expect("filter length")))
            .collect()
    }

    /// Smallest eigenvalue of `scale·M - H` for the given construction.
    ///
    /// Code-side cases use the first image's mask; multi-block cases use the
    /// first filter.
    pub fn margin(&self, case: DominanceCase, scale: f64) -> f64 {
        let g = &self.geometry;
        let fft = Fft2::padded(g);
        let n = g.padded_len();
        match case {
            DominanceCase::FilterDiag1 | DominanceCase::FilterScaledIdentity | DominanceCase::FilterDiag2 => {
                let cross = CrossSpectra::filter_side(&self.code_spectra(&fft));
                let m = match case {
                    DominanceCase::FilterDiag1 => majorizers::filter_major_diag1(&cross, g, &fft),
                    DominanceCase::FilterScaledIdentity => majorizers::filter_major_scaled_identity(&cross, g),
                    _ => majorizers::filter_major_diag2(&cross, g, &fft),
                };
                let h = gram(&psi(&self.codes, self.k, g, &self.masks));
                majorizers::verify_dominance(&m.scaled(scale), &h)
            }
            DominanceCase::FilterSigmaBound => {
                let cross = CrossSpectra::filter_side(&self.code_spectra(&fft));
                hermitian_margin(&(sigma_bound(&cross, &fft) * Complex64::new(scale, 0.0)), &cross_gram(&cross, &fft))
            }
            DominanceCase::CodeDiag1 | DominanceCase::CodeDiag2 | DominanceCase::CodeAbsGram => {
                let cross = CrossSpectra::code_side(&self.filter_spectra(&fft));
                let m = match case {
                    DominanceCase::CodeDiag1 => majorizers::code_major_diag1(&cross, g, &fft),
                    DominanceCase::CodeDiag2 => majorizers::code_major_diag2(&cross, g, &fft),
                    _ => majorizers::code_major_abs_gram(&self.filters, g, &self.masks[0]),
                };
                let h = gram(&gamma(&self.filters, g, &self.masks[0]));
                majorizers::verify_dominance(&m.scaled(scale), &h)
            }
            DominanceCase::CodeSigmaBound => {
                let cross = CrossSpectra::code_side(&self.filter_spectra(&fft));
                hermitian_margin(&(sigma_bound(&cross, &fft) * Complex64::new(scale, 0.0)), &cross_gram(&cross, &fft))
            }
            DominanceCase::MultiblockFilter => {
                let spectra = self.code_spectra(&fft);
                let first: Vec<&[Complex64]> = spectra.iter().map(|row| row[0].as_slice()).collect();
                let m = majorizers::multiblock_filter_major(&first, g, &fft);
                let per_image: Vec<&[f64]> = self.codes.iter().map(|c| &c[..n]).collect();
                let h = gram(&psi_k(&per_image, g, &self.masks));
                majorizers::verify_dominance(&m.scaled(scale), &h)
            }
            DominanceCase::MultiblockCode => {
                let d = &self.filters[..g.filter_len()];
                let m = majorizers::multiblock_code_major(d, g, &self.masks[0]);
                let h = gram(&gamma(d, g, &self.masks[0]));
                majorizers::verify_dominance(&m.scaled(scale), &h)
            }
        }
    }
}

/// Worst margin seen for one construction across a batch of instances.
#[derive(Clone, Debug)]
pub struct DominanceReport {
    pub case: DominanceCase,
    pub instances: usize,
    pub min_margin: f64,
}

/// Runs every [`DominanceCase`] on `instances` random instances.
///
/// `scale` multiplies each majorizer before the check; 1.0 is the honest test.
pub fn dominance_suite<R: Rng>(
    rng: &mut R,
    instances: usize,
    limits: InstanceLimits,
    scale: f64,
) -> Vec<DominanceReport> {
    let mut reports: Vec<DominanceReport> =
        DominanceCase::ALL.iter().map(|&case| DominanceReport { case, instances, min_margin: f64::INFINITY }).collect();
    for _ in 0..instances {
        let inst = RandomInstance::generate(rng, limits);
        for r in reports.iter_mut() {
            r.min_margin = r.min_margin.min(inst.margin(r.case, scale));
        }
    }
    reports
}

/// `diag(weights) ⪰ h` check on a dense matrix, for callers holding raw weights.
pub fn margin_of(weights: &[f64], h: &DMatrix<f64>) -> f64 {
    majorizers::verify_dominance(&MajorizerDiag::from_raw(weights.to_vec()), h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_complex(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(r, c, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im)
        })
    }

    #[test]
    fn row_sum_bound_dominates_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let n = rng.random_range(1..=10);
            let b = random_complex(&mut rng, n, n);
            let mut a = &b + b.adjoint();
            for i in 0..n {
                a[(i, i)] = Complex64::new(a[(i, i)].re.abs(), 0.0);
            }
            let d = abs_row_sum_diag(&a);
            let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
                d.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            ));
            assert!(min_eigenvalue(&(m - a)) >= -1e-10);
        }
    }

    #[test]
    fn abs_gram_bound_dominates_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..30 {
            let (r, c) = (rng.random_range(1..=9), rng.random_range(1..=9));
            let a = random_complex(&mut rng, r, c);
            let d = abs_gram_diag(&a);
            let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
                d.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            ));
            assert!(min_eigenvalue(&(m - a.adjoint() * &a)) >= -1e-10);
        }
    }

    #[test]
    fn dense_psi_matches_synthesis() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let inst = RandomInstance::generate(&mut rng, InstanceLimits::default());
        let g = inst.geometry;
        let p = psi(&inst.codes, inst.k, &g, &inst.masks);
        let d = nalgebra::DVector::from_vec(inst.filters.clone());
        let y = p * d;
        let mut at = 0;
        for (codes, mask) in inst.codes.iter().zip(&inst.masks) {
            let s = crate::signal_ops::synthesize(&inst.filters, codes, &g, mask).unwrap();
            for (i, v) in s.iter().enumerate() {
                assert!((y[at + i] - v).abs() < 1e-10);
            }
            at += mask.len();
        }
    }

    #[test]
    fn small_suite_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for r in dominance_suite(&mut rng, 8, InstanceLimits::default(), 1.0) {
            assert!(r.min_margin >= -1e-9, "{:?}", r);
        }
    }
}
