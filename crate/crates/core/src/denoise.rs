//! Learned-dictionary denoising.
//!
//! The model is
//! `½‖b − P_B Σ_k d_k ⊛ a_k − ρ‖² + α′ Σ_k ‖a_k‖₁ + γ′‖Cρ‖²` with the
//! dictionary fixed. For fixed codes the low-pass component has the closed
//! form `ρ = (I + 2γ′C^TC)^{-1} u`, `u = b − P_B Σ d ⊛ a`, which turns the data
//! term into `½‖R′u‖²` with the contrast filter of weight `2γ′`. The codes are
//! then found by restarted fast proximal gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cdl::{
    AceOperator, CodeMajorizer, CodeTensor, Dictionary, Fidelity, FilterMajorizer, TrainingSet, TwoBlockProblem,
};
use crate::engine::{self, Accel, BlockProblem, EngineConfig, MomentumFormula, SolverTrace};
use crate::error::{check_len, Error, Result};
use crate::majorizers::MajorizerDiag;
use crate::signal_ops::{synthesize, Geometry};

/// Denoiser weights and stopping rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseConfig {
    /// Code sparsity weight α′.
    pub alpha: f64,
    /// Low-pass smoothness weight γ′.
    pub gamma: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl DenoiseConfig {
    /// Weights for a dictionary trained with the plain model: `α′ = 2.5σ`, `γ′ = 10σ`.
    pub fn for_plain(sigma: f64) -> Self {
        DenoiseConfig { alpha: 2.5 * sigma, gamma: 10.0 * sigma, max_iter: 100, tol: 1e-3 }
    }

    /// Weights for a contrast-enhanced dictionary trained with `(α, γ)`:
    /// `α′ = 5.5σα`, `γ′ = 5.5σγ`.
    pub fn for_ace(sigma: f64, alpha: f64, gamma: f64) -> Self {
        DenoiseConfig { alpha: 5.5 * sigma * alpha, gamma: 5.5 * sigma * gamma, max_iter: 100, tol: 1e-3 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "denoiser weights must be positive, got alpha {} and gamma {}",
                self.alpha, self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DenoiseOutput {
    /// `P_B Σ d ⊛ a + ρ`, row-major `height x width`.
    pub image: Vec<f64>,
    pub codes: CodeTensor,
    pub low_pass: Vec<f64>,
    pub trace: SolverTrace,
}

/// Only the code block of a single-image two-block problem, with the
/// majorizer scaled by the largest squared filter multiplier.
struct CodeBlock<'a> {
    inner: TwoBlockProblem<'a>,
    scale: f64,
}

impl BlockProblem for CodeBlock<'_> {
    fn num_blocks(&self) -> usize {
        1
    }
    fn block_group(&self, _: usize) -> usize {
        0
    }
    fn block(&self, _: usize) -> Vec<f64> {
        self.inner.block(1)
    }
    fn set_block(&mut self, _: usize, x: &[f64]) {
        self.inner.set_block(1, x)
    }
    fn majorizer(&mut self, _: usize) -> MajorizerDiag {
        self.inner.majorizer(1).scaled(self.scale)
    }
    fn gradient(&mut self, _: usize, x: &[f64]) -> Vec<f64> {
        self.inner.gradient(1, x)
    }
    fn prox(&mut self, _: usize, v: &[f64], m: &MajorizerDiag) -> Result<Vec<f64>> {
        self.inner.prox(1, v, m)
    }
    fn objective(&mut self) -> f64 {
        self.inner.objective()
    }
    fn smooth_value(&mut self, _: usize, x: &[f64]) -> Option<f64> {
        self.inner.smooth_value(1, x)
    }
}

/// Denoises the `height x width` image `b`.
pub fn denoise(
    b: &[f64],
    height: usize,
    width: usize,
    dict: &Dictionary,
    cfg: &DenoiseConfig,
) -> Result<DenoiseOutput> {
    cfg.validate()?;
    check_len("noisy image", height * width, b.len())?;
    let g = Geometry::new(height, width, dict.filter_h(), dict.filter_w())?;
    let data = TrainingSet::from_images(g, vec![b.to_vec()])?;
    let filter = AceOperator::new(2.0 * cfg.gamma, height, width)?;
    let scale = filter.max_multiplier().powi(2);
    let fidelity = Fidelity::Ace(filter.clone());
    let start = CodeTensor::zeros(1, dict.num_filters(), g.padded_len());
    let inner = TwoBlockProblem::new(
        &data,
        &fidelity,
        cfg.alpha,
        FilterMajorizer::SigmaRowSum,
        CodeMajorizer::SigmaRowSum,
        dict,
        &start,
    )?;
    let mut problem = CodeBlock { inner, scale };
    let engine_cfg = EngineConfig {
        accel: Accel::ReGF,
        momentum: MomentumFormula::Golden,
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        objective_guard: true,
        check_majorization: false,
        ..EngineConfig::default()
    };
    let trace = engine::run(&mut problem, &engine_cfg)?;
    let codes = CodeTensor::new(1, dict.num_filters(), g.padded_len(), problem.block(0))?;
    let synth = synthesize(dict.coeffs(), codes.row(0), &g, data.mask(0))?;
    let u: Vec<f64> = b.iter().zip(&synth).map(|(y, s)| y - s).collect();
    let low_pass = filter.regularized_inverse(&u)?;
    let image = synth.iter().zip(&low_pass).map(|(s, r)| s + r).collect();
    Ok(DenoiseOutput { image, codes, low_pass, trace })
}

/// `‖Cx‖²` with periodic forward differences on a `height x width` grid.
pub fn difference_energy(x: &[f64], height: usize, width: usize) -> f64 {
    let mut acc = 0.0;
    for r in 0..height {
        for c in 0..width {
            let v = x[r * width + c];
            let right = x[r * width + (c + 1) % width];
            let down = x[((r + 1) % height) * width + c];
            acc += (right - v).powi(2) + (down - v).powi(2);
        }
    }
    acc
}

/// The denoising objective evaluated directly, without eliminating `ρ`.
pub fn denoise_objective(
    b: &[f64],
    height: usize,
    width: usize,
    dict: &Dictionary,
    codes: &CodeTensor,
    low_pass: &[f64],
    cfg: &DenoiseConfig,
) -> Result<f64> {
    let g = Geometry::new(height, width, dict.filter_h(), dict.filter_w())?;
    let synth = synthesize(dict.coeffs(), codes.row(0), &g, &g.default_mask())?;
    check_len("low-pass image", b.len(), low_pass.len())?;
    let fit: f64 = b.iter().zip(&synth).zip(low_pass).map(|((y, s), r)| (y - s - r).powi(2)).sum();
    Ok(0.5 * fit + cfg.alpha * codes.l1_norm() + cfg.gamma * difference_energy(low_pass, height, width))
}

/// `10 log10(1 / MSE)` for images with peak 1; `+∞` when identical.
pub fn psnr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_len("estimate", reference.len(), estimate.len())?;
    let mse = reference.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / reference.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Adds white Gaussian noise with variance `mean(x²) / 10^(snr/10)`.
pub fn add_awgn(image: &[f64], snr_db: f64, seed: u64) -> Vec<f64> {
    let power = image.iter().map(|v| v * v).sum::<f64>() / image.len().max(1) as f64;
    let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return image.to_vec();
    }
    let noise = Normal::new(0.0, std).expect("finite positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    image.iter().map(|v| v + noise.sample(&mut rng)).collect()
}
