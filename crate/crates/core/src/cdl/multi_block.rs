//! Per-filter updates: filter `k`, then the `k`th code map of every image.
//!
//! A residual cache keeps `Σ_k d_k ⊛ z_{l,k}` per image together with each
//! `(l, k)` contribution, so a block update costs one convolution per image
//! instead of K.

use num_complex::Complex64;
use rayon::prelude::*;

use super::model::{CodeTensor, Dictionary, Fidelity, Spectral, TrainingSet};
use crate::engine::BlockProblem;
use crate::error::Result;
use crate::majorizers::{self, MajorizerDiag};
use crate::prox::{soft_shrink, unit_ball_prox};

/// Drift between the cache and a fresh synthesis that forces a rebuild.
pub const CACHE_DRIFT_LIMIT: f64 = 1e-6;
/// Outer iterations between cache verifications.
const CACHE_CHECK_PERIOD: usize = 10;

/// Padded synthesis per image plus its per-filter contributions.
#[derive(Clone, Debug)]
pub struct ResidualCache {
    totals: Vec<Vec<f64>>,
    contributions: Vec<Vec<Vec<f64>>>,
}

impl ResidualCache {
    fn build(sp: &Spectral, filter_spectra: &[Vec<Complex64>], code_spectra: &[Vec<Vec<Complex64>>]) -> Self {
        let contributions: Vec<Vec<Vec<f64>>> = code_spectra
            .par_iter()
            .map(|zs| filter_spectra.iter().zip(zs).map(|(lam, zh)| sp.convolve_spectra(lam, zh)).collect())
            .collect();
        let totals = contributions
            .iter()
            .map(|parts| {
                let mut acc = vec![0.0; sp.g.padded_len()];
                for p in parts {
                    for (a, v) in acc.iter_mut().zip(p) {
                        *a += v;
                    }
                }
                acc
            })
            .collect();
        ResidualCache { totals, contributions }
    }

    /// Cached synthesis of image `l`.
    pub fn total(&self, l: usize) -> &[f64] {
        &self.totals[l]
    }

    fn replace(&mut self, l: usize, k: usize, new: Vec<f64>) {
        for ((t, o), n) in self.totals[l].iter_mut().zip(&self.contributions[l][k]).zip(&new) {
            *t += n - o;
        }
        self.contributions[l][k] = new;
    }

    /// `Σ_{k'≠k} d_{k'} ⊛ z_{l,k'}`.
    fn others(&self, l: usize, k: usize) -> Vec<f64> {
        self.totals[l].iter().zip(&self.contributions[l][k]).map(|(t, c)| t - c).collect()
    }
}

/// Blocks `2k` (filter `k`) and `2k + 1` (code set `k`).
pub struct MultiBlockProblem<'a> {
    sp: Spectral,
    data: &'a TrainingSet,
    fidelity: &'a Fidelity,
    alpha: f64,
    num_filters: usize,
    filters: Vec<f64>,
    codes: Vec<f64>,
    filter_spectra: Vec<Vec<Complex64>>,
    code_spectra: Vec<Vec<Vec<Complex64>>>,
    cache: ResidualCache,
    visits: usize,
    rebuilds: usize,
}

impl<'a> MultiBlockProblem<'a> {
    pub fn new(
        data: &'a TrainingSet,
        fidelity: &'a Fidelity,
        alpha: f64,
        dict: &Dictionary,
        codes: &CodeTensor,
    ) -> Result<Self> {
        super::check_shapes(data, dict, codes)?;
        fidelity.check(data)?;
        let sp = Spectral::new(*data.geometry());
        let filter_spectra = sp.filter_spectra(dict.coeffs());
        let code_spectra: Vec<Vec<Vec<Complex64>>> = (0..data.len()).map(|l| sp.map_spectra(codes.row(l))).collect();
        let cache = ResidualCache::build(&sp, &filter_spectra, &code_spectra);
        Ok(MultiBlockProblem {
            sp,
            data,
            fidelity,
            alpha,
            num_filters: dict.num_filters(),
            filters: dict.coeffs().to_vec(),
            codes: codes.values().to_vec(),
            filter_spectra,
            code_spectra,
            cache,
            visits: 0,
            rebuilds: 0,
        })
    }

    pub fn filters(&self) -> &[f64] {
        &self.filters
    }

    /// Codes in [`CodeTensor`] layout.
    pub fn codes(&self) -> &[f64] {
        &self.codes
    }

    pub fn cache(&self) -> &ResidualCache {
        &self.cache
    }

    /// Times the cache was rebuilt after drifting.
    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    /// Largest absolute gap between the cache and a fresh synthesis.
    pub fn cache_drift(&self) -> f64 {
        (0..self.data.len())
            .map(|l| {
                let fresh = self.sp.synthesize(&self.filter_spectra, &self.code_spectra[l]);
                fresh.iter().zip(self.cache.total(l)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    fn verify_cache(&mut self) {
        let drift = self.cache_drift();
        if drift > CACHE_DRIFT_LIMIT {
            log::warn!("residual cache drifted by {drift:.3e}; rebuilding");
            self.cache = ResidualCache::build(&self.sp, &self.filter_spectra, &self.code_spectra);
            self.rebuilds += 1;
        }
    }

    fn n(&self) -> usize {
        self.sp.g.padded_len()
    }

    fn code_range(&self, l: usize, k: usize) -> std::ops::Range<usize> {
        let start = (l * self.num_filters + k) * self.n();
        start..start + self.n()
    }

    fn code_set(&self, k: usize) -> Vec<f64> {
        (0..self.data.len()).flat_map(|l| self.codes[self.code_range(l, k)].iter().copied()).collect()
    }

    fn own(&self, lam: &[Complex64], zh: &[Complex64]) -> Vec<f64> {
        self.sp.convolve_spectra(lam, zh)
    }

    /// Fidelity value and residual spectrum of image `l` when the `k`th
    /// contribution is `own`.
    fn residual_with(&self, l: usize, k: usize, own: &[f64]) -> (f64, Vec<Complex64>) {
        let mut synth = self.cache.others(l, k);
        for (s, o) in synth.iter_mut().zip(own) {
            *s += o;
        }
        self.sp.residual(self.data, self.fidelity, l, &synth)
    }

    /// Smooth value and per-image residual spectra for block `b` set to `x`.
    fn evaluate(&self, b: usize, x: &[f64]) -> Vec<(f64, Vec<Complex64>)> {
        let k = b / 2;
        let n = self.n();
        if b.is_multiple_of(2) {
            let lam = self.sp.filter_spectrum(x);
            (0..self.data.len())
                .into_par_iter()
                .map(|l| self.residual_with(l, k, &self.own(&lam, &self.code_spectra[l][k])))
                .collect()
        } else {
            let lam = &self.filter_spectra[k];
            (0..self.data.len())
                .into_par_iter()
                .map(|l| {
                    let zh = self.sp.fft.forward_real(&x[l * n..(l + 1) * n]);
                    self.residual_with(l, k, &self.own(lam, &zh))
                })
                .collect()
        }
    }
}

impl BlockProblem for MultiBlockProblem<'_> {
    fn num_blocks(&self) -> usize {
        2 * self.num_filters
    }

    fn block_group(&self, b: usize) -> usize {
        b % 2
    }

    fn block(&self, b: usize) -> Vec<f64> {
        let k = b / 2;
        if b.is_multiple_of(2) {
            let d = self.sp.g.filter_len();
            self.filters[k * d..(k + 1) * d].to_vec()
        } else {
            self.code_set(k)
        }
    }

    fn set_block(&mut self, b: usize, x: &[f64]) {
        let k = b / 2;
        let n = self.n();
        if b.is_multiple_of(2) {
            let d = self.sp.g.filter_len();
            self.filters[k * d..(k + 1) * d].copy_from_slice(x);
            self.filter_spectra[k] = self.sp.filter_spectrum(x);
        } else {
            for l in 0..self.data.len() {
                let range = self.code_range(l, k);
                self.codes[range].copy_from_slice(&x[l * n..(l + 1) * n]);
                self.code_spectra[l][k] = self.sp.fft.forward_real(&x[l * n..(l + 1) * n]);
            }
        }
        let lam = &self.filter_spectra[k];
        let updated: Vec<Vec<f64>> =
            (0..self.data.len()).into_par_iter().map(|l| self.own(lam, &self.code_spectra[l][k])).collect();
        for (l, new) in updated.into_iter().enumerate() {
            self.cache.replace(l, k, new);
        }
    }

    fn majorizer(&mut self, b: usize) -> MajorizerDiag {
        if b == 0 {
            if self.visits > 0 && self.visits.is_multiple_of(CACHE_CHECK_PERIOD) {
                self.verify_cache();
            }
            self.visits += 1;
        }
        let k = b / 2;
        let g = &self.sp.g;
        if b.is_multiple_of(2) {
            let spectra: Vec<&[Complex64]> = self.code_spectra.iter().map(|zs| zs[k].as_slice()).collect();
            majorizers::multiblock_filter_major(&spectra, g, &self.sp.fft)
        } else {
            let d = g.filter_len();
            let atom = &self.filters[k * d..(k + 1) * d];
            let parts: Vec<MajorizerDiag> =
                (0..self.data.len()).map(|l| majorizers::multiblock_code_major(atom, g, self.data.mask(l))).collect();
            MajorizerDiag::concat(&parts)
        }
    }

    fn gradient(&mut self, b: usize, x: &[f64]) -> Vec<f64> {
        let k = b / 2;
        let residuals = self.evaluate(b, x);
        if b.is_multiple_of(2) {
            let mut acc = vec![Complex64::new(0.0, 0.0); self.n()];
            for (zs, (_, r)) in self.code_spectra.iter().zip(&residuals) {
                for ((a, z), rr) in acc.iter_mut().zip(&zs[k]).zip(r) {
                    *a += z.conj() * rr;
                }
            }
            self.sp.filter_gradient_from(&acc)
        } else {
            let lam = &self.filter_spectra[k];
            residuals.iter().flat_map(|(_, r)| self.sp.code_gradient_map(lam, r)).collect()
        }
    }

    fn prox(&mut self, b: usize, v: &[f64], m: &MajorizerDiag) -> Result<Vec<f64>> {
        if b.is_multiple_of(2) {
            Ok(unit_ball_prox(v, m.weights())?.0)
        } else {
            let thresholds: Vec<f64> = m.weights().iter().map(|w| self.alpha / w).collect();
            soft_shrink(v, &thresholds)
        }
    }

    fn objective(&mut self) -> f64 {
        let fit: f64 = (0..self.data.len())
            .into_par_iter()
            .map(|l| self.sp.residual(self.data, self.fidelity, l, self.cache.total(l)).0)
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        fit + self.alpha * self.codes.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn smooth_value(&mut self, b: usize, x: &[f64]) -> Option<f64> {
        Some(self.evaluate(b, x).iter().map(|(v, _)| v).sum())
    }
}
