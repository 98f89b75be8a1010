use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use bpgm::cdl::{self, io, CdlConfig, CodeTensor, Dictionary, TrainingSet};
use bpgm::data::{self, DatasetManifest, GrayImage};
use bpgm::denoise::{self, DenoiseConfig};
use bpgm::dense::{self, InstanceLimits};
use bpgm::engine::{SolverTrace, StopReason};
use bpgm::signal_ops::{synthesize, Geometry};

use crate::{CdlOverrides, CheckArgs, DenoiseArgs, EvalArgs, SynthArgs, TrainArgs};

/// Margin below which a majorizer counts as failing.
const DOMINANCE_TOL: f64 = -1e-9;
/// Relative gap allowed between a stored trace and a fresh objective.
const TRACE_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] bpgm::Error),
}

impl CliError {
    /// 2 bad arguments, 3 data error, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        use bpgm::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 4,
            CliError::Core(E::InvalidConfig(_) | E::NegativeThreshold(_)) => 2,
            CliError::Core(E::NonFinite { .. } | E::MajorizationViolated { .. }) => 4,
            CliError::Core(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Core(e.into()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Core(e.into()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Core(e.into()))
}

fn resolve_cdl(file: Option<&Path>, o: &CdlOverrides) -> Result<CdlConfig> {
    let mut c = match file {
        Some(p) => CdlConfig::from_toml(&read_text(p)?)?,
        None => CdlConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {
            $(if let Some(v) = o.$field { c.$field = v; })*
        };
    }
    apply!(
        num_filters,
        filter_h,
        filter_w,
        alpha,
        scheme,
        majorizer,
        accel,
        momentum,
        tol,
        max_iter,
        seed,
        delta,
        omega,
        check_majorization
    );
    if let Some(g) = o.ace_gamma {
        c.ace_gamma = Some(g);
    }
    c.validate()?;
    Ok(c)
}

fn load_training_set(manifest: &Path, filter_h: usize, filter_w: usize) -> Result<TrainingSet> {
    let manifest = DatasetManifest::load(manifest)?;
    let dataset = data::load_dataset(&manifest)?;
    Ok(dataset.training_set(filter_h, filter_w)?)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let config = resolve_cdl(args.config.as_deref(), &args.overrides)?;
    let set = load_training_set(&args.data, config.filter_h, config.filter_w)?;
    let out = cdl::train(&config, &set)?;
    let g = set.geometry();
    create_dir(&args.out)?;
    write_text(&args.out.join("config.toml"), &config.to_toml())?;
    io::write_dictionary(&args.out.join("dictionary.cdl"), &out.dictionary)?;
    io::write_codes(&args.out.join("codes.cdz"), &out.codes, g.padded_h, g.padded_w)?;
    let mut csv = Vec::new();
    out.trace.write_csv(&mut csv).map_err(|e| CliError::Core(e.into()))?;
    fs::write(args.out.join("trace.csv"), csv).map_err(|e| CliError::Core(e.into()))?;

    let stop = match out.trace.stop {
        StopReason::Converged => "converged",
        StopReason::MaxIter => "max-iter",
    };
    let meta: BTreeMap<String, String> = [
        ("images", set.len().to_string()),
        ("image_h", g.image_h.to_string()),
        ("image_w", g.image_w.to_string()),
        ("iterations", out.trace.iterations().to_string()),
        ("stop", stop.to_string()),
        ("final_objective", sci(out.trace.final_objective())),
        ("sparsity_percent", sci(cdl::sparsity(&out.codes))),
        ("restarts", out.trace.total_restarts().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    io::write_metadata(&args.out.join("metadata.txt"), &meta)?;
    println!("iterations {} ({stop})", out.trace.iterations());
    println!("objective {}", sci(out.trace.final_objective()));
    println!("sparsity_percent {}", sci(cdl::sparsity(&out.codes)));
    Ok(())
}

/// Optional denoiser settings read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenoiseFile {
    alpha: Option<f64>,
    gamma: Option<f64>,
    max_iter: Option<usize>,
    tol: Option<f64>,
}

fn resolve_denoise(args: &DenoiseArgs, sigma: Option<f64>) -> Result<DenoiseConfig> {
    let file: DenoiseFile = match &args.config {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| CliError::Usage(e.to_string()))?,
        None => DenoiseFile::default(),
    };
    let base = match (sigma, args.ace_weights.as_deref()) {
        (Some(s), Some([a, g])) => Some(DenoiseConfig::for_ace(s, *a, *g)),
        (Some(s), _) => Some(DenoiseConfig::for_plain(s)),
        (None, _) => None,
    };
    let alpha = args.alpha.or(file.alpha).or(base.map(|b| b.alpha));
    let gamma = args.gamma.or(file.gamma).or(base.map(|b| b.gamma));
    let (Some(alpha), Some(gamma)) = (alpha, gamma) else {
        return Err(CliError::Usage(
            "denoising weights need --sigma, --noise-snr, or explicit --alpha and --gamma".into(),
        ));
    };
    let defaults = DenoiseConfig::for_plain(1.0);
    Ok(DenoiseConfig {
        alpha,
        gamma,
        max_iter: args.max_iter.or(file.max_iter).unwrap_or(defaults.max_iter),
        tol: args.tol.or(file.tol).unwrap_or(defaults.tol),
    })
}

pub fn denoise(args: DenoiseArgs) -> Result<()> {
    let dict = io::read_dictionary(&args.dictionary)?;
    let input = data::load_gray(&args.input)?;
    let (h, w) = (input.height, input.width);
    let (noisy, truth, sigma) = match args.noise_snr {
        Some(snr) => {
            let noisy = denoise::add_awgn(&input.pixels, snr, args.seed);
            let power = input.pixels.iter().map(|v| v * v).sum::<f64>() / input.pixels.len() as f64;
            let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
            (noisy, Some(input.pixels.clone()), args.sigma.or(Some(sigma)))
        }
        None => {
            let truth = match &args.truth {
                Some(p) => Some(data::load_gray(p)?.pixels),
                None => None,
            };
            (input.pixels.clone(), truth, args.sigma)
        }
    };
    let cfg = resolve_denoise(&args, sigma)?;
    let out = denoise::denoise(&noisy, h, w, &dict, &cfg)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("config.toml"), &toml::to_string(&cfg).map_err(|e| CliError::Usage(e.to_string()))?)?;
    let save = |name: &str, pixels: &[f64]| -> Result<()> {
        let img = GrayImage { height: h, width: w, pixels: pixels.to_vec() };
        Ok(data::save_gray(&args.out.join(name), &img)?)
    };
    save("denoised.png", &out.image)?;
    if args.noise_snr.is_some() {
        save("noisy.png", &noisy)?;
    }
    let mut report = BTreeMap::new();
    report.insert("iterations".to_string(), out.trace.iterations().to_string());
    report.insert("objective".to_string(), sci(out.trace.final_objective()));
    if let Some(t) = &truth {
        let before = denoise::psnr(t, &noisy)?;
        let after = denoise::psnr(t, &out.image)?;
        println!("psnr_noisy {}", sci(before));
        println!("psnr_denoised {}", sci(after));
        report.insert("psnr_noisy".to_string(), sci(before));
        report.insert("psnr_denoised".to_string(), sci(after));
    }
    io::write_metadata(&args.out.join("report.txt"), &report)?;
    println!("objective {}", sci(out.trace.final_objective()));
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    if args.data.is_none() && args.image.is_none() {
        return Err(CliError::Usage(
            "eval needs --data with --dictionary and --codes, or --image with --reference".into(),
        ));
    }
    if let (Some(manifest), Some(dict_path), Some(codes_path)) = (&args.data, &args.dictionary, &args.codes) {
        let mut config = match &args.config {
            Some(p) => CdlConfig::from_toml(&read_text(p)?)?,
            None => CdlConfig::default(),
        };
        if let Some(a) = args.alpha {
            config.alpha = a;
        }
        if let Some(g) = args.ace_gamma {
            config.ace_gamma = Some(g);
        }
        let dict = io::read_dictionary(dict_path)?;
        let (codes, _, _) = io::read_codes(codes_path)?;
        let set = load_training_set(manifest, dict.filter_h(), dict.filter_w())?;
        let fidelity = cdl::fidelity_for(&config, &set)?;
        let value = cdl::objective(&dict, &codes, &set, config.alpha, &fidelity)?;
        println!("objective {}", sci(value));
        println!("sparsity_percent {}", sci(cdl::sparsity(&codes)));
        if let Some(t) = &args.trace {
            let file = fs::File::open(t).map_err(|e| CliError::Core(e.into()))?;
            let trace = SolverTrace::read_csv(BufReader::new(file))?;
            let stored = trace.final_objective();
            let gap = (stored - value).abs() / stored.abs().max(1.0);
            println!("trace_gap {}", sci(gap));
            if gap > TRACE_MATCH_TOL {
                return Err(CliError::Numerical(format!("objective {value} does not match the trace value {stored}")));
            }
        }
    }
    if let (Some(image), Some(reference)) = (&args.image, &args.reference) {
        let a = data::load_gray(image)?;
        let b = data::load_gray(reference)?;
        println!("psnr {}", sci(denoise::psnr(&b.pixels, &a.pixels)?));
    }
    Ok(())
}

pub fn check_majorizer(args: CheckArgs) -> Result<()> {
    if args.max_k == 0 || args.max_l == 0 || args.max_image_side == 0 || args.max_filter_side == 0 {
        return Err(CliError::Usage("instance limits must be at least 1".into()));
    }
    if args.max_filter_side > args.max_image_side {
        return Err(CliError::Usage("filters cannot be larger than images".into()));
    }
    let limits = InstanceLimits {
        max_k: args.max_k,
        max_l: args.max_l,
        max_image_side: args.max_image_side,
        max_filter_side: args.max_filter_side,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let reports = dense::dominance_suite(&mut rng, args.instances, limits, args.scale);
    let mut failed = Vec::new();
    for r in &reports {
        let margin = if args.instances == 0 { 0.0 } else { r.min_margin };
        let ok = margin >= DOMINANCE_TOL;
        println!("{:<24} {:>4} {} {}", r.case.name(), r.instances, sci(margin), if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(r.case.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("majorizers not dominant: {}", failed.join(", "))))
    }
}

fn synthesize_all(dict: &Dictionary, codes: &CodeTensor, ph: usize, pw: usize) -> Result<(Geometry, Vec<Vec<f64>>)> {
    let (fh, fw) = (dict.filter_h(), dict.filter_w());
    if ph < fh || pw < fw {
        return Err(CliError::Core(bpgm::Error::InvalidGeometry("code grid is smaller than the filters".into())));
    }
    let g = Geometry::new(ph + 1 - fh, pw + 1 - fw, fh, fw)?;
    let mask = g.default_mask();
    let images = (0..codes.num_images())
        .map(|l| synthesize(dict.coeffs(), codes.row(l), &g, &mask))
        .collect::<bpgm::Result<Vec<_>>>()?;
    Ok((g, images))
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let dict = io::read_dictionary(&args.dictionary)?;
    let (codes, ph, pw) = io::read_codes(&args.codes)?;
    if codes.num_filters() != dict.num_filters() {
        return Err(CliError::Core(bpgm::Error::DimensionMismatch {
            what: "code filters",
            expected: dict.num_filters(),
            actual: codes.num_filters(),
        }));
    }
    let (g, images) = synthesize_all(&dict, &codes, ph, pw)?;
    create_dir(&args.out)?;
    for (l, img) in images.iter().enumerate() {
        let pixels = if args.rescale { data::rescale_unit(img) } else { img.clone() };
        let path = args.out.join(format!("synth_{l:03}.png"));
        data::save_gray(&path, &GrayImage { height: g.image_h, width: g.image_w, pixels })?;
        println!("{}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use bpgm::cdl::Fidelity;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage(String::new()).exit_code(), 2);
        assert_eq!(CliError::Core(bpgm::Error::InvalidConfig(String::new())).exit_code(), 2);
        assert_eq!(CliError::Core(bpgm::Error::Format(String::new())).exit_code(), 3);
        assert_eq!(CliError::Core(bpgm::Error::NonFinite { iteration: 3 }).exit_code(), 4);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "alpha = 0.5\nnum_filters = 4\n").unwrap();
        let o = CdlOverrides { alpha: Some(0.25), ..CdlOverrides::default() };
        let c = resolve_cdl(Some(&path), &o).unwrap();
        assert_eq!((c.alpha, c.num_filters), (0.25, 4));
        fs::write(&path, "alpha = 0.5\nunknown = 1\n").unwrap();
        assert_eq!(resolve_cdl(Some(&path), &o).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn plain_fidelity_for_default_config() {
        let g = Geometry::new(3, 3, 2, 2).unwrap();
        let set = TrainingSet::from_images(g, vec![vec![0.0; 9]]).unwrap();
        assert!(matches!(cdl::fidelity_for(&CdlConfig::default(), &set).unwrap(), Fidelity::Plain));
    }
}
