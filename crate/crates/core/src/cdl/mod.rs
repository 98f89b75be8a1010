//! Convolutional dictionary learning solvers.
//!
//! [`train`] initializes a dictionary and codes from a seed and runs the
//! configured scheme through [`crate::engine`]. The two schemes are also
//! exposed as [`TwoBlockProblem`] and [`MultiBlockProblem`] for callers that
//! want to drive the engine themselves.

mod ace;
mod config;
pub mod io;
mod model;
mod multi_block;
mod two_block;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use ace::{difference_spectrum, AceOperator};
pub use config::{CdlConfig, CodeMajorizer, FilterMajorizer, MajorizerDesign, Scheme};
pub use model::{code_gradient, filter_gradient, objective, sparsity, CodeTensor, Dictionary, Fidelity, TrainingSet};
pub use multi_block::{MultiBlockProblem, ResidualCache, CACHE_DRIFT_LIMIT};
pub use two_block::TwoBlockProblem;

use crate::engine::{self, SolverTrace};
use crate::error::{check_len, Result};

/// Scale applied to the initial Gaussian codes.
pub const CODE_INIT_SCALE: f64 = 0.1;

pub(crate) fn check_shapes(data: &TrainingSet, dict: &Dictionary, codes: &CodeTensor) -> Result<()> {
    let g = data.geometry();
    check_len("filter height", g.filter_h, dict.filter_h())?;
    check_len("filter width", g.filter_w, dict.filter_w())?;
    check_len("code images", data.len(), codes.num_images())?;
    check_len("code filters", dict.num_filters(), codes.num_filters())?;
    check_len("code map", g.padded_len(), codes.padded_len())
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dictionary: Dictionary,
    pub codes: CodeTensor,
    pub trace: SolverTrace,
}

/// Seeded start: Gaussian atoms scaled to unit norm, Gaussian codes times
/// [`CODE_INIT_SCALE`].
pub fn initialize(config: &CdlConfig, data: &TrainingSet) -> Result<(Dictionary, CodeTensor)> {
    let g = data.geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.filter_h * config.filter_w;
    let mut coeffs: Vec<f64> = (0..config.num_filters * d).map(|_| rng.sample(StandardNormal)).collect();
    for atom in coeffs.chunks_mut(d) {
        let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            atom.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let dict = Dictionary::new(config.num_filters, config.filter_h, config.filter_w, coeffs)?;
    let n = data.len() * config.num_filters * g.padded_len();
    let values = (0..n).map(|_| CODE_INIT_SCALE * rng.sample::<f64, _>(StandardNormal)).collect();
    let codes = CodeTensor::new(data.len(), config.num_filters, g.padded_len(), values)?;
    Ok((dict, codes))
}

/// Contrast-enhancement operator on the image grid of `data`.
pub fn build_ace_operator(gamma: f64, data: &TrainingSet) -> Result<AceOperator> {
    let g = data.geometry();
    AceOperator::new(gamma, g.image_h, g.image_w)
}

/// Data-fidelity term selected by `config`.
pub fn fidelity_for(config: &CdlConfig, data: &TrainingSet) -> Result<Fidelity> {
    Ok(match config.ace_gamma {
        Some(gamma) => Fidelity::Ace(build_ace_operator(gamma, data)?),
        None => Fidelity::Plain,
    })
}

/// Trains from the seeded initialization.
pub fn train(config: &CdlConfig, data: &TrainingSet) -> Result<TrainOutput> {
    config.validate()?;
    let (dict, codes) = initialize(config, data)?;
    train_from(config, data, &dict, &codes)
}

/// Trains the contrast-enhanced model; `config.ace_gamma` must be set.
pub fn train_ace(config: &CdlConfig, data: &TrainingSet) -> Result<TrainOutput> {
    if config.ace_gamma.is_none() {
        return Err(crate::Error::InvalidConfig("ace_gamma is required for contrast-enhanced training".into()));
    }
    train(config, data)
}

/// Trains from a given starting point.
pub fn train_from(
    config: &CdlConfig,
    data: &TrainingSet,
    dict: &Dictionary,
    codes: &CodeTensor,
) -> Result<TrainOutput> {
    config.validate()?;
    check_len("filter count", config.num_filters, dict.num_filters())?;
    let g = data.geometry();
    if (g.filter_h, g.filter_w) != (config.filter_h, config.filter_w) {
        return Err(crate::Error::InvalidGeometry(format!(
            "data geometry uses {}x{} filters but the config asks for {}x{}",
            g.filter_h, g.filter_w, config.filter_h, config.filter_w
        )));
    }
    let fidelity = fidelity_for(config, data)?;
    let engine_cfg = config.engine();
    let (filters, code_values, trace) = match config.majorizer.two_block_pair() {
        Some((filter_design, code_design)) => {
            let mut p = TwoBlockProblem::new(data, &fidelity, config.alpha, filter_design, code_design, dict, codes)?;
            let trace = engine::run(&mut p, &engine_cfg)?;
            (p.filters().to_vec(), p.codes().to_vec(), trace)
        }
        None => {
            let mut p = MultiBlockProblem::new(data, &fidelity, config.alpha, dict, codes)?;
            let trace = engine::run(&mut p, &engine_cfg)?;
            (p.filters().to_vec(), p.codes().to_vec(), trace)
        }
    };
    Ok(TrainOutput {
        dictionary: Dictionary::new(dict.num_filters(), dict.filter_h(), dict.filter_w(), filters)?,
        codes: CodeTensor::new(codes.num_images(), codes.num_filters(), codes.padded_len(), code_values)?,
        trace,
    })
}
