//! Diagonal majorization matrices for the filter and code Hessians.
//!
//! Two-block filter side (Hessian Ψ^HΨ, dimension K·D):
//! [`filter_major_diag1`], [`filter_major_scaled_identity`], [`filter_major_diag2`].
//! Two-block code side (Hessian Γ^HΓ, dimension K·Ñ per image):
//! [`code_major_diag1`], [`code_major_diag2`], [`code_major_abs_gram`].
//! Multi-block: [`multiblock_filter_major`] and [`multiblock_code_major`].
//!
//! All constructions work from spectra or filter taps; nothing here
//! materializes Ψ or Γ. The dense counterparts used to check dominance live in
//! [`crate::dense`].

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::signal_ops::{Fft2, Geometry, Mask};

/// Weights are clamped below at this fraction of the largest weight.
pub const FLOOR_RATIO: f64 = 1e-10;

/// A strictly positive diagonal majorization matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MajorizerDiag {
    weights: Vec<f64>,
    floor: f64,
}

impl MajorizerDiag {
    /// Applies the β floor: `β = FLOOR_RATIO · max(raw)`, or `FLOOR_RATIO` when
    /// every raw weight is zero.
    pub fn from_raw(mut raw: Vec<f64>) -> Self {
        let max = raw.iter().cloned().fold(0.0_f64, f64::max);
        let floor = FLOOR_RATIO * if max > 0.0 { max } else { 1.0 };
        for w in raw.iter_mut() {
            if !(*w >= floor) {
                *w = floor;
            }
        }
        MajorizerDiag { weights: raw, floor }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Multiplies every weight by `factor` (the floor scales along).
    pub fn scaled(&self, factor: f64) -> Self {
        MajorizerDiag { weights: self.weights.iter().map(|w| w * factor).collect(), floor: self.floor * factor }
    }

    /// Concatenates per-block diagonals into one block-diagonal majorizer.
    pub fn concat(parts: &[MajorizerDiag]) -> Self {
        let floor = parts.iter().map(|p| p.floor).fold(f64::INFINITY, f64::min);
        MajorizerDiag {
            weights: parts.iter().flat_map(|p| p.weights.iter().copied()).collect(),
            floor: if floor.is_finite() { floor } else { FLOOR_RATIO },
        }
    }

    /// Repeats this diagonal `times` times.
    pub fn repeat(&self, times: usize) -> Self {
        let mut weights = Vec::with_capacity(self.len() * times);
        for _ in 0..times {
            weights.extend_from_slice(&self.weights);
        }
        MajorizerDiag { weights, floor: self.floor }
    }
}

/// Pairwise cross spectra, upper triangle only.
///
/// Filter side: `X_{k,k'} = Σ_l conj(ẑ_{l,k}) ⊙ ẑ_{l,k'}`.
/// Code side: `X_{k,k'} = conj(λ_k) ⊙ λ_{k'}`.
#[derive(Clone, Debug)]
pub struct CrossSpectra {
    k: usize,
    len: usize,
    upper: Vec<Vec<Complex64>>,
}

impl CrossSpectra {
    fn tri_index(&self, a: usize, b: usize) -> usize {
        debug_assert!(a <= b && b < self.k);
        a * self.k - a * (a + 1) / 2 + b
    }

    /// From code spectra indexed `[l][k]`.
    pub fn filter_side(code_spectra: &[Vec<Vec<Complex64>>]) -> Self {
        let k = code_spectra.first().map_or(0, |r| r.len());
        let len = code_spectra.first().and_then(|r| r.first()).map_or(0, |s| s.len());
        let mut upper = Vec::with_capacity(k * (k + 1) / 2);
        for a in 0..k {
            for b in a..k {
                let mut acc = vec![Complex64::new(0.0, 0.0); len];
                for row in code_spectra {
                    for ((x, za), zb) in acc.iter_mut().zip(&row[a]).zip(&row[b]) {
                        *x += za.conj() * zb;
                    }
                }
                upper.push(acc);
            }
        }
        CrossSpectra { k, len, upper }
    }

    /// From filter spectra `λ_k = Φ P_S^T d_k`.
    pub fn code_side(filter_spectra: &[Vec<Complex64>]) -> Self {
        let k = filter_spectra.len();
        let len = filter_spectra.first().map_or(0, |s| s.len());
        let mut upper = Vec::with_capacity(k * (k + 1) / 2);
        for a in 0..k {
            for b in a..k {
                upper.push(filter_spectra[a].iter().zip(&filter_spectra[b]).map(|(x, y)| x.conj() * y).collect());
            }
        }
        CrossSpectra { k, len, upper }
    }

    pub fn num_filters(&self) -> usize {
        self.k
    }

    pub fn spectrum_len(&self) -> usize {
        self.len
    }

    /// The `(a, b)` cross spectrum; lower-triangle entries are conjugated.
    pub fn get(&self, a: usize, b: usize) -> Vec<Complex64> {
        if a <= b {
            self.upper[self.tri_index(a, b)].clone()
        } else {
            self.upper[self.tri_index(b, a)].iter().map(|c| c.conj()).collect()
        }
    }

    fn abs_entry(&self, a: usize, b: usize) -> &[Complex64] {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        &self.upper[self.tri_index(x, y)]
    }
}

/// First column of `|Φ^{-1} diag(spectrum) Φ|`.
pub fn abs_circulant_row(spectrum: &[Complex64], fft: &Fft2) -> Vec<f64> {
    let mut buf = spectrum.to_vec();
    fft.inverse(&mut buf);
    buf.into_iter().map(|c| c.norm()).collect()
}

/// Diagonal of Σ_k (filter side) or Σ'_k (code side):
/// `X_{k,k} + Σ_{k'≠k} |X_{k,k'}|`.
pub fn sigma_k(cross: &CrossSpectra, k: usize) -> Vec<f64> {
    let mut out: Vec<f64> = cross.abs_entry(k, k).iter().map(|c| c.re.max(0.0)).collect();
    for other in (0..cross.num_filters()).filter(|&o| o != k) {
        for (o, c) in out.iter_mut().zip(cross.abs_entry(k, other)) {
            *o += c.norm();
        }
    }
    out
}

/// Row sums of a circulant's absolute values restricted to the filter support:
/// `out[s] = Σ_{s'∈S} col[s - s']`.
fn support_row_sums(col: &[f64], g: &Geometry, support: &[usize]) -> Vec<f64> {
    support.iter().map(|&s| support.iter().map(|&t| col[g.wrap_diff(s, t)]).sum()).collect()
}

fn real_spectrum(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

/// `diag((I_K ⊗ P_S) |Q_Ψ^H Q_Ψ| (I_K ⊗ P_S^T) 1)`.
pub fn filter_major_diag1(cross: &CrossSpectra, g: &Geometry, fft: &Fft2) -> MajorizerDiag {
    let support = g.support();
    let k = cross.num_filters();
    let mut raw = vec![0.0; k * g.filter_len()];
    for a in 0..k {
        let block = &mut raw[a * g.filter_len()..(a + 1) * g.filter_len()];
        for b in 0..k {
            let col = abs_circulant_row(&cross.get(a, b), fft);
            for (w, v) in block.iter_mut().zip(support_row_sums(&col, g, &support)) {
                *w += v;
            }
        }
    }
    MajorizerDiag::from_raw(raw)
}

/// Block `k` is `max_j (Σ_k)_{j,j} · I_D`.
pub fn filter_major_scaled_identity(cross: &CrossSpectra, g: &Geometry) -> MajorizerDiag {
    let raw = (0..cross.num_filters())
        .flat_map(|k| {
            let peak = sigma_k(cross, k).into_iter().fold(0.0_f64, f64::max);
            std::iter::repeat_n(peak, g.filter_len())
        })
        .collect();
    MajorizerDiag::from_raw(raw)
}

/// Block `k` is `diag(P_S |Φ^{-1} Σ_k Φ| P_S^T 1)`.
pub fn filter_major_diag2(cross: &CrossSpectra, g: &Geometry, fft: &Fft2) -> MajorizerDiag {
    let support = g.support();
    let raw = (0..cross.num_filters())
        .flat_map(|k| {
            let col = abs_circulant_row(&real_spectrum(&sigma_k(cross, k)), fft);
            support_row_sums(&col, g, &support)
        })
        .collect();
    MajorizerDiag::from_raw(raw)
}

/// `diag(|Q_Γ^H Q_Γ| 1)`; every row of a circulant has the same absolute sum,
/// so block `k` is constant.
pub fn code_major_diag1(cross: &CrossSpectra, g: &Geometry, fft: &Fft2) -> MajorizerDiag {
    let k = cross.num_filters();
    let raw = (0..k)
        .flat_map(|a| {
            let total: f64 = (0..k).map(|b| abs_circulant_row(&cross.get(a, b), fft).iter().sum::<f64>()).sum();
            std::iter::repeat_n(total, g.padded_len())
        })
        .collect();
    MajorizerDiag::from_raw(raw)
}

/// Block `k` is `diag(|Φ^{-1} Σ'_k Φ| 1)`, again constant per block.
pub fn code_major_diag2(cross: &CrossSpectra, g: &Geometry, fft: &Fft2) -> MajorizerDiag {
    let raw = (0..cross.num_filters())
        .flat_map(|k| {
            let total: f64 = abs_circulant_row(&real_spectrum(&sigma_k(cross, k)), fft).iter().sum();
            std::iter::repeat_n(total, g.padded_len())
        })
        .collect();
    MajorizerDiag::from_raw(raw)
}

/// `out[j] = scale · Σ_s |d[s]| · indicator[j + s]`, the spatial correlation of
/// `|d|` with a mask indicator.
fn abs_correlate_indicator(d: &[f64], indicator: &[f64], g: &Geometry, scale: f64) -> Vec<f64> {
    let (ph, pw) = (g.padded_h, g.padded_w);
    let mut out = vec![0.0; g.padded_len()];
    for r in 0..ph {
        for c in 0..pw {
            let mut acc = 0.0;
            for a in 0..g.filter_h {
                let rr = (r + a) % ph;
                for b in 0..g.filter_w {
                    let cc = (c + b) % pw;
                    acc += d[a * g.filter_w + b].abs() * indicator[rr * pw + cc];
                }
            }
            out[r * pw + c] = scale * acc;
        }
    }
    out
}

/// `diag(|Γ^H||Γ|1)` for the whole two-block code operator `Γ = P_B[C_{d_1} … C_{d_K}]`.
///
/// Block `k` equals `(Σ_k' ‖d_k'‖₁) · corr(|d_k|, 1_B)`. With `K = 1` this is
/// the multi-block code majorizer.
pub fn code_major_abs_gram(filters: &[f64], g: &Geometry, mask: &Mask) -> MajorizerDiag {
    let d_len = g.filter_len();
    let total_l1: f64 = filters.iter().map(|v| v.abs()).sum();
    let indicator = mask.indicator();
    let raw = filters.chunks(d_len).flat_map(|d| abs_correlate_indicator(d, &indicator, g, total_l1)).collect();
    MajorizerDiag::from_raw(raw)
}

/// `diag(P_S |Φ^{-1} Σ_l diag(|ẑ_{l,k}|²) Φ| P_S^T 1_D)` for one filter.
///
/// `code_spectra` holds the spectra of the `k`th code map of every image.
pub fn multiblock_filter_major(code_spectra: &[&[Complex64]], g: &Geometry, fft: &Fft2) -> MajorizerDiag {
    let mut power = vec![Complex64::new(0.0, 0.0); g.padded_len()];
    for zh in code_spectra {
        for (p, z) in power.iter_mut().zip(zh.iter()) {
            p.re += z.norm_sqr();
        }
    }
    let col = abs_circulant_row(&power, fft);
    MajorizerDiag::from_raw(support_row_sums(&col, g, &g.support()))
}

/// `diag(|Γ_k^H||Γ_k| 1)` with `Γ_k = P_B C_{d_k}`, evaluated as
/// `‖d_k‖₁ · corr(|d_k|, 1_B)` in O(Ñ·D).
pub fn multiblock_code_major(d: &[f64], g: &Geometry, mask: &Mask) -> MajorizerDiag {
    let l1: f64 = d.iter().map(|v| v.abs()).sum();
    MajorizerDiag::from_raw(abs_correlate_indicator(d, &mask.indicator(), g, l1))
}

/// Smallest eigenvalue of `diag(m) - h`; `m` dominates `h` iff it is `>= 0`.
pub fn verify_dominance(m: &MajorizerDiag, h: &DMatrix<f64>) -> f64 {
    assert_eq!(h.nrows(), m.len(), "majorizer and Hessian sizes differ");
    let mut diff = -h.clone();
    for (i, w) in m.weights().iter().enumerate() {
        diff[(i, i)] += w;
    }
    crate::dense::min_eigenvalue(&diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn code_spectra(codes: &[Vec<Vec<f64>>], fft: &Fft2) -> Vec<Vec<Vec<Complex64>>> {
        codes.iter().map(|row| row.iter().map(|z| fft.forward_real(z)).collect()).collect()
    }

    #[test]
    fn abs_circulant_of_flat_spectrum_is_delta() {
        let fft = Fft2::new(3, 3);
        let col = abs_circulant_row(&[Complex64::new(1.0, 0.0); 9], &fft);
        assert!((col[0] - 1.0).abs() < 1e-14);
        assert!(col[1..].iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn abs_circulant_recovers_kernel_magnitudes() {
        let fft = Fft2::new(1, 6);
        let kernel = [1.0, -2.0, 0.0, 0.0, 0.0, 0.0];
        let col = abs_circulant_row(&fft.forward_real(&kernel), &fft);
        let expect = [1.0, 2.0, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in col.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn abs_circulant_matches_dense_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fft = Fft2::new(4, 4);
        let spec: Vec<Complex64> =
            (0..16).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let dense = dense::circulant_from_spectrum(&spec, &fft);
        let col = abs_circulant_row(&spec, &fft);
        for (i, v) in col.iter().enumerate() {
            assert!((dense[(i, 0)].norm() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_single_filter_has_no_cross_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let fft = Fft2::new(3, 3);
        let codes = vec![vec![rvec(&mut rng, 9)], vec![rvec(&mut rng, 9)]];
        let spectra = code_spectra(&codes, &fft);
        let sigma = sigma_k(&CrossSpectra::filter_side(&spectra), 0);
        for j in 0..9 {
            let want = spectra[0][0][j].norm_sqr() + spectra[1][0][j].norm_sqr();
            assert!((sigma[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_identical_spectra_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let fft = Fft2::new(3, 3);
        let z = rvec(&mut rng, 9);
        let spectra = code_spectra(&[vec![z.clone(), z]], &fft);
        let sigma = sigma_k(&CrossSpectra::filter_side(&spectra), 1);
        for j in 0..9 {
            assert!((sigma[j] - 2.0 * spectra[0][0][j].norm_sqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_spectra_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let fft = Fft2::new(2, 3);
        let codes = vec![vec![rvec(&mut rng, 6), rvec(&mut rng, 6), rvec(&mut rng, 6)]];
        let cross = CrossSpectra::filter_side(&code_spectra(&codes, &fft));
        for a in 0..3 {
            assert!(cross.get(a, a).iter().all(|c| c.im.abs() < 1e-12 && c.re >= 0.0));
            for b in 0..3 {
                for (x, y) in cross.get(a, b).iter().zip(cross.get(b, a)) {
                    assert!((x - y.conj()).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn diag1_delta_code_gives_unit_weights() {
        let g = Geometry::new(1, 1, 2, 2).unwrap();
        let fft = Fft2::padded(&g);
        let mut z = vec![0.0; g.padded_len()];
        z[0] = 1.0;
        let cross = CrossSpectra::filter_side(&code_spectra(&[vec![z]], &fft));
        let m = filter_major_diag1(&cross, &g, &fft);
        assert_eq!(m.len(), 4);
        assert!(m.weights().iter().all(|w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_codes_hit_the_floor() {
        let g = Geometry::new(3, 3, 2, 2).unwrap();
        let fft = Fft2::padded(&g);
        let zeros = vec![vec![vec![0.0; g.padded_len()]; 2]];
        let cross = CrossSpectra::filter_side(&code_spectra(&zeros, &fft));
        for m in [
            filter_major_diag1(&cross, &g, &fft),
            filter_major_scaled_identity(&cross, &g),
            filter_major_diag2(&cross, &g, &fft),
        ] {
            assert!(m.weights().iter().all(|&w| w == FLOOR_RATIO));
        }
    }

    #[test]
    fn scaled_identity_takes_sigma_max() {
        let g = Geometry::new(2, 2, 2, 2).unwrap();
        let fft = Fft2::padded(&g);
        let mut z = vec![0.0; g.padded_len()];
        z[0] = 1.0;
        let cross = CrossSpectra::filter_side(&code_spectra(&[vec![z]], &fft));
        let m = filter_major_scaled_identity(&cross, &g);
        assert!(m.weights().iter().all(|w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn diag2_constant_sigma() {
        // a delta code has a flat spectrum, so Σ_k is constant and its
        // circulant is c·I
        let g = Geometry::new(3, 2, 2, 2).unwrap();
        let fft = Fft2::padded(&g);
        let mut z = vec![0.0; g.padded_len()];
        z[3] = 2.0;
        let cross = CrossSpectra::filter_side(&code_spectra(&[vec![z]], &fft));
        let m = filter_major_diag2(&cross, &g, &fft);
        assert!(m.weights().iter().all(|w| (w - 4.0).abs() < 1e-12));
    }

    #[test]
    fn diag2_bounded_by_d_times_scaled_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let g = Geometry::new(4, 4, 2, 2).unwrap();
        let fft = Fft2::padded(&g);
        let codes = vec![vec![rvec(&mut rng, g.padded_len())]];
        let cross = CrossSpectra::filter_side(&code_spectra(&codes, &fft));
        let d2 = filter_major_diag2(&cross, &g, &fft);
        let id = filter_major_scaled_identity(&cross, &g);
        for (a, b) in d2.weights().iter().zip(id.weights()) {
            assert!(*a <= b * g.filter_len() as f64 + 1e-12);
        }
    }

    #[test]
    fn code_majorizers_delta_filter() {
        let g = Geometry::new(3, 3, 2, 2).unwrap();
        let fft = Fft2::padded(&g);
        let d = [1.0, 0.0, 0.0, 0.0];
        let lam = vec![fft.forward_real(&crate::signal_ops::pad_filter(&d, &g).unwrap())];
        let cross = CrossSpectra::code_side(&lam);
        for m in [code_major_diag1(&cross, &g, &fft), code_major_diag2(&cross, &g, &fft)] {
            assert!(m.weights().iter().all(|w| (w - 1.0).abs() < 1e-12));
        }
        let full = Mask::full(g.padded_len());
        let m = multiblock_code_major(&d, &g, &full);
        assert!(m.weights().iter().all(|w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn code_majorizers_zero_filter_floor() {
        let g = Geometry::new(3, 3, 2, 2).unwrap();
        let fft = Fft2::padded(&g);
        let lam = vec![vec![Complex64::new(0.0, 0.0); g.padded_len()]; 2];
        let cross = CrossSpectra::code_side(&lam);
        for m in [code_major_diag1(&cross, &g, &fft), code_major_diag2(&cross, &g, &fft)] {
            assert!(m.weights().iter().all(|&w| w == FLOOR_RATIO));
        }
        let m = multiblock_code_major(&[0.0; 4], &g, &g.default_mask());
        assert!(m.weights().iter().all(|&w| w == FLOOR_RATIO));
    }

    #[test]
    fn multiblock_code_difference_kernel() {
        // [1, -1] on a 4x4 grid with the full mask: (|1| + |-1|)^2 = 4
        let g = Geometry::new(4, 3, 1, 2).unwrap();
        assert_eq!((g.padded_h, g.padded_w), (4, 4));
        let d = [1.0, -1.0];
        let full = Mask::full(16);
        let m = multiblock_code_major(&d, &g, &full);
        assert!(m.weights().iter().all(|w| (w - 4.0).abs() < 1e-12));
        // matches the dense |Γ^H||Γ|1 construction
        let gamma = dense::gamma(&d, &g, &full);
        let oracle = dense::abs_gram_diag(&gamma);
        for (a, b) in m.weights().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn multiblock_filter_delta_and_homogeneity() {
        let g = Geometry::new(3, 3, 2, 2).unwrap();
        let fft = Fft2::padded(&g);
        let mut z = vec![0.0; g.padded_len()];
        z[7] = 1.0;
        let zh = fft.forward_real(&z);
        let m = multiblock_filter_major(&[&zh], &g, &fft);
        assert!(m.weights().iter().all(|w| (w - 1.0).abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let z = rvec(&mut rng, g.padded_len());
        let zh = fft.forward_real(&z);
        let zh3: Vec<Complex64> = zh.iter().map(|c| c * 3.0).collect();
        let m1 = multiblock_filter_major(&[&zh], &g, &fft);
        let m3 = multiblock_filter_major(&[&zh3], &g, &fft);
        for (a, b) in m1.weights().iter().zip(m3.weights()) {
            assert!((9.0 * a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn dominance_of_trivial_pairs() {
        let h = DMatrix::<f64>::identity(3, 3);
        let m = MajorizerDiag::from_raw(vec![2.0; 3]);
        assert!((verify_dominance(&m, &h) - 1.0).abs() < 1e-12);
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let m = MajorizerDiag::from_raw(vec![1.0, 2.0, 3.0]);
        assert!(verify_dominance(&m, &h).abs() < 1e-12);
    }

    #[test]
    fn floor_is_relative_to_max() {
        let m = MajorizerDiag::from_raw(vec![0.0, 5.0, -1.0]);
        assert_eq!(m.floor(), 5.0 * FLOOR_RATIO);
        assert_eq!(m.weights(), &[5.0 * FLOOR_RATIO, 5.0, 5.0 * FLOOR_RATIO]);
    }
}
