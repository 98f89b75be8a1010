//! Alternating all-filters / all-codes updates.

use num_complex::Complex64;
use rayon::prelude::*;

use super::config::{CodeMajorizer, FilterMajorizer};
use super::model::{filter_gradient_spectral, CodeTensor, Dictionary, Fidelity, Spectral, TrainingSet};
use crate::engine::BlockProblem;
use crate::error::Result;
use crate::majorizers::{self, CrossSpectra, MajorizerDiag};
use crate::prox::{soft_shrink, unit_ball_prox};

/// Block 0 holds every filter, block 1 every code map of every image.
pub struct TwoBlockProblem<'a> {
    sp: Spectral,
    data: &'a TrainingSet,
    fidelity: &'a Fidelity,
    alpha: f64,
    filter_design: FilterMajorizer,
    code_design: CodeMajorizer,
    filters: Vec<f64>,
    codes: Vec<f64>,
    filter_spectra: Vec<Vec<Complex64>>,
    code_spectra: Vec<Vec<Vec<Complex64>>>,
}

impl<'a> TwoBlockProblem<'a> {
    pub fn new(
        data: &'a TrainingSet,
        fidelity: &'a Fidelity,
        alpha: f64,
        filter_design: FilterMajorizer,
        code_design: CodeMajorizer,
        dict: &Dictionary,
        codes: &CodeTensor,
    ) -> Result<Self> {
        super::check_shapes(data, dict, codes)?;
        fidelity.check(data)?;
        let sp = Spectral::new(*data.geometry());
        let filter_spectra = sp.filter_spectra(dict.coeffs());
        let code_spectra = (0..data.len()).map(|l| sp.map_spectra(codes.row(l))).collect();
        Ok(TwoBlockProblem {
            sp,
            data,
            fidelity,
            alpha,
            filter_design,
            code_design,
            filters: dict.coeffs().to_vec(),
            codes: codes.values().to_vec(),
            filter_spectra,
            code_spectra,
        })
    }

    pub fn filters(&self) -> &[f64] {
        &self.filters
    }

    pub fn codes(&self) -> &[f64] {
        &self.codes
    }

    fn num_filters(&self) -> usize {
        self.filter_spectra.len()
    }

    fn row_len(&self) -> usize {
        self.num_filters() * self.sp.g.padded_len()
    }

    fn fidelity_value(&self, filter_spectra: &[Vec<Complex64>], code_spectra: &[Vec<Vec<Complex64>>]) -> f64 {
        (0..self.data.len())
            .into_par_iter()
            .map(|l| {
                let synth = self.sp.synthesize(filter_spectra, &code_spectra[l]);
                self.sp.residual(self.data, self.fidelity, l, &synth).0
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum()
    }

    fn code_spectra_of(&self, codes: &[f64]) -> Vec<Vec<Vec<Complex64>>> {
        codes.par_chunks(self.row_len()).map(|row| self.sp.map_spectra(row)).collect()
    }
}

impl BlockProblem for TwoBlockProblem<'_> {
    fn num_blocks(&self) -> usize {
        2
    }

    fn block_group(&self, b: usize) -> usize {
        b
    }

    fn block(&self, b: usize) -> Vec<f64> {
        if b == 0 {
            self.filters.clone()
        } else {
            self.codes.clone()
        }
    }

    fn set_block(&mut self, b: usize, x: &[f64]) {
        if b == 0 {
            self.filters = x.to_vec();
            self.filter_spectra = self.sp.filter_spectra(x);
        } else {
            self.codes = x.to_vec();
            self.code_spectra = self.code_spectra_of(x);
        }
    }

    fn majorizer(&mut self, b: usize) -> MajorizerDiag {
        let g = &self.sp.g;
        let fft = &self.sp.fft;
        if b == 0 {
            let cross = CrossSpectra::filter_side(&self.code_spectra);
            match self.filter_design {
                FilterMajorizer::CrossRowSum => majorizers::filter_major_diag1(&cross, g, fft),
                FilterMajorizer::ScaledIdentity => majorizers::filter_major_scaled_identity(&cross, g),
                FilterMajorizer::SigmaRowSum => majorizers::filter_major_diag2(&cross, g, fft),
            }
        } else {
            let per_image = match self.code_design {
                CodeMajorizer::AbsGram => {
                    let parts: Vec<MajorizerDiag> = (0..self.data.len())
                        .map(|l| majorizers::code_major_abs_gram(&self.filters, g, self.data.mask(l)))
                        .collect();
                    return MajorizerDiag::concat(&parts);
                }
                CodeMajorizer::CrossRowSum => {
                    majorizers::code_major_diag1(&CrossSpectra::code_side(&self.filter_spectra), g, fft)
                }
                CodeMajorizer::SigmaRowSum => {
                    majorizers::code_major_diag2(&CrossSpectra::code_side(&self.filter_spectra), g, fft)
                }
            };
            per_image.repeat(self.data.len())
        }
    }

    fn gradient(&mut self, b: usize, x: &[f64]) -> Vec<f64> {
        if b == 0 {
            let fs = self.sp.filter_spectra(x);
            filter_gradient_spectral(&self.sp, self.data, self.fidelity, &fs, &self.code_spectra)
        } else {
            let sp = &self.sp;
            let fs = &self.filter_spectra;
            let rows: Vec<Vec<f64>> = x
                .par_chunks(self.row_len())
                .enumerate()
                .map(|(l, row)| {
                    let synth = sp.synthesize(fs, &sp.map_spectra(row));
                    let res = sp.residual(self.data, self.fidelity, l, &synth).1;
                    fs.iter().flat_map(|lam| sp.code_gradient_map(lam, &res)).collect()
                })
                .collect();
            rows.concat()
        }
    }

    fn prox(&mut self, b: usize, v: &[f64], m: &MajorizerDiag) -> Result<Vec<f64>> {
        if b == 0 {
            let d = self.sp.g.filter_len();
            let mut out = Vec::with_capacity(v.len());
            for (vk, mk) in v.chunks(d).zip(m.weights().chunks(d)) {
                out.extend(unit_ball_prox(vk, mk)?.0);
            }
            Ok(out)
        } else {
            let thresholds: Vec<f64> = m.weights().iter().map(|w| self.alpha / w).collect();
            soft_shrink(v, &thresholds)
        }
    }

    fn objective(&mut self) -> f64 {
        let l1: f64 = self.codes.iter().map(|v| v.abs()).sum();
        self.fidelity_value(&self.filter_spectra, &self.code_spectra) + self.alpha * l1
    }

    fn smooth_value(&mut self, b: usize, x: &[f64]) -> Option<f64> {
        Some(if b == 0 {
            self.fidelity_value(&self.sp.filter_spectra(x), &self.code_spectra)
        } else {
            self.fidelity_value(&self.filter_spectra, &self.code_spectra_of(x))
        })
    }
}
