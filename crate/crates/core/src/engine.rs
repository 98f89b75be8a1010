//! Generic block proximal gradient solver with diagonal majorizers.
//!
//! A [`BlockProblem`] exposes its variables as `B` blocks. Each outer
//! iteration visits the blocks in order; block `b` builds its majorizer at the
//! current values of the other blocks, extrapolates, takes a majorized
//! gradient step and applies its proximal map. [`Accel`] selects momentum and
//! restart behavior.

use std::io::{BufRead, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::majorizers::MajorizerDiag;
use crate::signal_ops::{dot, norm2};

/// Variables, gradients, majorizers and proximal maps of a block
/// multi-convex problem `F(x) = f(x_1, …, x_B) + Σ_b r_b(x_b)`.
pub trait BlockProblem {
    fn num_blocks(&self) -> usize;

    /// Blocks sharing a group are pooled by the relative-change stopping rule.
    fn block_group(&self, b: usize) -> usize;

    /// Current value of block `b`.
    fn block(&self, b: usize) -> Vec<f64>;

    fn set_block(&mut self, b: usize, x: &[f64]);

    /// Majorizer of the block Hessian at the current values of the other blocks.
    fn majorizer(&mut self, b: usize) -> MajorizerDiag;

    /// Gradient of the smooth part with respect to block `b`, evaluated at `x`.
    fn gradient(&mut self, b: usize, x: &[f64]) -> Vec<f64>;

    /// `argmin_u r_b(u) + ½‖u − v‖²_M`.
    fn prox(&mut self, b: usize, v: &[f64], m: &MajorizerDiag) -> Result<Vec<f64>>;

    /// Full objective `F` at the current state.
    fn objective(&mut self) -> f64;

    /// Smooth part with block `b` replaced by `x`; enables the descent check.
    fn smooth_value(&mut self, _b: usize, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// Momentum and restart scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Accel {
    /// No extrapolation.
    Plain,
    /// Extrapolation with the momentum formula, no restarts.
    Fbpgm,
    /// Constant `w = 1` extrapolation, rejected whenever the objective rises.
    #[serde(rename = "reo")]
    ReO,
    /// Constant `w = 1` extrapolation with gradient-mapping restarts.
    #[serde(rename = "reg")]
    ReG,
    /// Momentum formula with gradient-mapping restarts.
    #[serde(rename = "reg-f")]
    ReGF,
}

impl Accel {
    fn uses_momentum_formula(self) -> bool {
        matches!(self, Accel::Fbpgm | Accel::ReGF)
    }

    fn gradient_restart(self) -> bool {
        matches!(self, Accel::ReG | Accel::ReGF)
    }
}

/// Momentum coefficient recurrence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumFormula {
    /// `θ_i = (1 + √(1 + 4θ_{i−1}²)) / 2`.
    #[default]
    Golden,
    /// `θ_i = (i + 2) / 2`.
    Linear,
}

/// Global momentum state; `θ` never decreases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentumState {
    pub theta: f64,
    pub formula: MomentumFormula,
}

impl MomentumState {
    pub fn new(formula: MomentumFormula) -> Self {
        MomentumState { theta: 1.0, formula }
    }
}

/// Advances `θ` for iteration `i` and returns `w = (θ_prev − 1)/θ`.
pub fn momentum_update(state: &mut MomentumState, i: usize) -> f64 {
    let prev = state.theta;
    let next = match state.formula {
        MomentumFormula::Golden => (1.0 + (1.0 + 4.0 * prev * prev).sqrt()) / 2.0,
        MomentumFormula::Linear => ((i as f64 + 2.0) / 2.0).max(prev),
    };
    state.theta = next;
    (prev - 1.0) / next
}

/// `W_jj = δ·min{w, √(m_prev_j / m_cur_j)}`.
pub fn extrapolation_weights(m_cur: &[f64], m_prev: &[f64], w: f64, delta: f64) -> Vec<f64> {
    m_cur.iter().zip(m_prev).map(|(&c, &p)| delta * w.min((p / c).sqrt())).collect()
}

/// Gradient-mapping restart test: `cos∠(M(x́ − x_new), x_new − x_old) > ω`.
///
/// A zero vector on either side never triggers.
pub fn restart_gradient(m: &[f64], x_acute: &[f64], x_new: &[f64], x_old: &[f64], omega: f64) -> bool {
    let mapping: Vec<f64> = m.iter().zip(x_acute.iter().zip(x_new)).map(|(mj, (a, n))| mj * (a - n)).collect();
    let momentum: Vec<f64> = x_new.iter().zip(x_old).map(|(n, o)| n - o).collect();
    let denom = norm2(&mapping) * norm2(&momentum);
    denom > 0.0 && dot(&mapping, &momentum) / denom > omega
}

/// Objective restart test: strict increase.
pub fn restart_objective(f_candidate: f64, f_prev: f64) -> bool {
    f_candidate > f_prev
}

/// `‖Δx‖/‖x_new‖ < tol` for every group; a zero denominator counts as converged.
///
/// Each entry of `groups` is `(‖x_new − x_old‖, ‖x_new‖)`.
pub fn relative_change_stop(groups: &[(f64, f64)], tol: f64) -> bool {
    groups.iter().all(|&(diff, norm)| norm == 0.0 || diff / norm < tol)
}

/// Solver settings.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub accel: Accel,
    pub momentum: MomentumFormula,
    /// Extrapolation damping, `< 1`.
    pub delta: f64,
    /// Gradient-mapping restart threshold in `[−1, 0]`.
    pub omega: f64,
    pub max_iter: usize,
    /// Relative-change tolerance; `0` disables the rule.
    pub tol: f64,
    /// Also reject objective increases when the scheme does not.
    pub objective_guard: bool,
    /// Verify the majorized descent inequality after every block step.
    pub check_majorization: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            accel: Accel::ReGF,
            momentum: MomentumFormula::Golden,
            delta: 1.0 - f64::EPSILON,
            omega: 95f64.to_radians().cos(),
            max_iter: 1000,
            tol: 1e-4,
            objective_guard: false,
            check_majorization: cfg!(debug_assertions),
        }
    }
}

/// Why a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIter,
}

/// One outer iteration. Iteration 0 holds the initial objective.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    /// `‖x^{(i+1)} − x^{(i)}‖₂` over all blocks.
    pub step_norm: f64,
    pub block_steps: Vec<f64>,
    pub restarts: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    pub stop: StopReason,
}

const TRACE_HEADER: &str = "iteration,objective,step_norm,restarts,seconds";

impl SolverTrace {
    /// Outer iterations performed.
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn total_restarts(&self) -> usize {
        self.records.iter().map(|r| r.restarts).sum()
    }

    /// Comma-separated export, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(out, "{},{:.16e},{:.16e},{},{:.6}", r.iteration, r.objective, r.step_norm, r.restarts, r.seconds)?;
        }
        Ok(())
    }

    /// Reads a trace written by [`SolverTrace::write_csv`]. Block step norms
    /// are not stored and come back empty; the stop reason reads as `MaxIter`.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == TRACE_HEADER => {}
            _ => return Err(Error::Format("missing trace header".into())),
        }
        let bad = |line: &str| Error::Format(format!("bad trace line: {line}"));
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(&line));
            }
            records.push(TraceRecord {
                iteration: f[0].parse().map_err(|_| bad(&line))?,
                objective: f[1].parse().map_err(|_| bad(&line))?,
                step_norm: f[2].parse().map_err(|_| bad(&line))?,
                block_steps: Vec::new(),
                restarts: f[3].parse().map_err(|_| bad(&line))?,
                seconds: f[4].parse().map_err(|_| bad(&line))?,
            });
        }
        Ok(SolverTrace { records, stop: StopReason::MaxIter })
    }
}

fn majorized_step<P: BlockProblem>(problem: &mut P, b: usize, x_acute: &[f64], m: &MajorizerDiag) -> Result<Vec<f64>> {
    let grad = problem.gradient(b, x_acute);
    let v: Vec<f64> = x_acute.iter().zip(&grad).zip(m.weights()).map(|((x, g), w)| x - g / w).collect();
    problem.prox(b, &v, m)
}

fn check_descent<P: BlockProblem>(
    problem: &mut P,
    b: usize,
    iteration: usize,
    x_acute: &[f64],
    x_new: &[f64],
    m: &MajorizerDiag,
) -> Result<()> {
    let (Some(at_new), Some(at_acute)) = (problem.smooth_value(b, x_new), problem.smooth_value(b, x_acute)) else {
        return Ok(());
    };
    let grad = problem.gradient(b, x_acute);
    let diff: Vec<f64> = x_new.iter().zip(x_acute).map(|(n, a)| n - a).collect();
    let quad: f64 = diff.iter().zip(m.weights()).map(|(d, w)| w * d * d).sum();
    let surrogate = at_acute + dot(&grad, &diff) + 0.5 * quad;
    let slack = 1e-9 * (1.0 + at_acute.abs() + surrogate.abs());
    if at_new > surrogate + slack {
        return Err(Error::MajorizationViolated { block: b, iteration, value: at_new, surrogate });
    }
    Ok(())
}

/// Runs the solver to convergence or `max_iter`, leaving the solution in
/// `problem`.
pub fn run<P: BlockProblem>(problem: &mut P, cfg: &EngineConfig) -> Result<SolverTrace> {
    run_with_observer(problem, cfg, |_, _| {})
}

/// Like [`run`], calling `observe(iteration, problem)` after every outer
/// iteration.
pub fn run_with_observer<P, F>(problem: &mut P, cfg: &EngineConfig, mut observe: F) -> Result<SolverTrace>
where
    P: BlockProblem,
    F: FnMut(usize, &P),
{
    if !(cfg.delta >= 0.0 && cfg.delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta must lie in [0, 1), got {}", cfg.delta)));
    }
    if !(-1.0..=0.0).contains(&cfg.omega) {
        return Err(Error::InvalidConfig(format!("omega must lie in [-1, 0], got {}", cfg.omega)));
    }
    let start = Instant::now();
    let num_blocks = problem.num_blocks();
    let num_groups = (0..num_blocks).map(|b| problem.block_group(b) + 1).max().unwrap_or(0);
    let mut previous: Vec<Vec<f64>> = (0..num_blocks).map(|b| problem.block(b)).collect();
    let mut prev_major: Vec<Option<MajorizerDiag>> = vec![None; num_blocks];
    let mut momentum = MomentumState::new(cfg.momentum);
    let objective_check = cfg.accel == Accel::ReO || cfg.objective_guard;

    let mut objective = problem.objective();
    if !objective.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    let mut records = vec![TraceRecord {
        iteration: 0,
        objective,
        step_norm: 0.0,
        block_steps: vec![0.0; num_blocks],
        restarts: 0,
        seconds: 0.0,
    }];

    let mut stop = StopReason::MaxIter;
    for i in 1..=cfg.max_iter {
        let w = match cfg.accel {
            Accel::Plain => 0.0,
            Accel::Fbpgm | Accel::ReGF => momentum_update(&mut momentum, i),
            Accel::ReO | Accel::ReG => 1.0,
        };
        debug_assert!(cfg.accel.uses_momentum_formula() || momentum.theta == 1.0);
        let mut group_diff = vec![0.0; num_groups];
        let mut group_norm = vec![0.0; num_groups];
        let mut block_steps = vec![0.0; num_blocks];
        let mut restarts = 0;

        for b in 0..num_blocks {
            let m = problem.majorizer(b);
            let x_old = problem.block(b);
            let x_acute: Vec<f64> = match &prev_major[b] {
                Some(mp) if w > 0.0 => {
                    let weights = extrapolation_weights(m.weights(), mp.weights(), w, cfg.delta);
                    x_old.iter().zip(&previous[b]).zip(&weights).map(|((x, p), wj)| x + wj * (x - p)).collect()
                }
                _ => x_old.clone(),
            };
            let extrapolated = x_acute != x_old;
            let mut x_new = majorized_step(problem, b, &x_acute, &m)?;
            let mut from = x_acute;

            if extrapolated
                && cfg.accel.gradient_restart()
                && restart_gradient(m.weights(), &from, &x_new, &x_old, cfg.omega)
            {
                restarts += 1;
                from = x_old.clone();
                x_new = majorized_step(problem, b, &from, &m)?;
            }
            if cfg.check_majorization {
                check_descent(problem, b, i, &from, &x_new, &m)?;
            }
            problem.set_block(b, &x_new);
            if objective_check {
                let candidate = problem.objective();
                if extrapolated && from != x_old && !(candidate <= objective) {
                    restarts += 1;
                    x_new = majorized_step(problem, b, &x_old, &m)?;
                    problem.set_block(b, &x_new);
                    objective = problem.objective();
                } else {
                    objective = candidate;
                }
            }

            let step: f64 = x_new.iter().zip(&x_old).map(|(n, o)| (n - o) * (n - o)).sum();
            block_steps[b] = step.sqrt();
            let gidx = problem.block_group(b);
            group_diff[gidx] += step;
            group_norm[gidx] += dot(&x_new, &x_new);
            previous[b] = x_old;
            prev_major[b] = Some(m);
        }

        if !objective_check {
            objective = problem.objective();
        }
        if !objective.is_finite() {
            return Err(Error::NonFinite { iteration: i });
        }
        let step_norm = group_diff.iter().sum::<f64>().sqrt();
        records.push(TraceRecord {
            iteration: i,
            objective,
            step_norm,
            block_steps,
            restarts,
            seconds: start.elapsed().as_secs_f64(),
        });
        observe(i, problem);

        let groups: Vec<(f64, f64)> = group_diff.iter().zip(&group_norm).map(|(d, n)| (d.sqrt(), n.sqrt())).collect();
        if cfg.tol > 0.0 && relative_change_stop(&groups, cfg.tol) {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(SolverTrace { records, stop })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_examples() {
        let mut s = MomentumState::new(MomentumFormula::Golden);
        let w = momentum_update(&mut s, 1);
        assert!((s.theta - 1.618_033_988_749_895).abs() < 1e-12);
        assert_eq!(w, 0.0);
        let w = momentum_update(&mut s, 2);
        assert!((s.theta - 2.193).abs() < 1e-3);
        assert!((w - 0.2818).abs() < 1e-4);

        let mut s = MomentumState { theta: 2.0, formula: MomentumFormula::Linear };
        let w = momentum_update(&mut s, 3);
        assert_eq!(s.theta, 2.5);
        assert!((w - 0.4).abs() < 1e-15);
    }

    #[test]
    fn extrapolation_examples() {
        let d = 1.0 - f64::EPSILON;
        assert_eq!(extrapolation_weights(&[1.0, 2.0], &[1.0, 2.0], 0.0, d), vec![0.0, 0.0]);
        assert_eq!(extrapolation_weights(&[1.0, 2.0], &[1.0, 2.0], 1.0, d), vec![d, d]);
        assert_eq!(extrapolation_weights(&[4.0, 8.0], &[1.0, 2.0], 1.0, d), vec![d * 0.5, d * 0.5]);
    }

    #[test]
    fn restart_rule_examples() {
        let omega = 95f64.to_radians().cos();
        let m = [1.0, 1.0];
        // mapping (x́ − x_new) parallel to momentum (x_new − x_old)
        assert!(restart_gradient(&m, &[2.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], omega));
        // antiparallel
        assert!(!restart_gradient(&m, &[0.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], omega));
        // orthogonal
        assert!(restart_gradient(&m, &[1.0, 1.0], &[1.0, 0.0], &[0.0, 0.0], omega));
        // zero momentum
        assert!(!restart_gradient(&m, &[2.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], omega));

        assert!(restart_objective(10.0, 9.0));
        assert!(!restart_objective(9.0, 10.0));
        assert!(!restart_objective(9.0, 9.0));
    }

    #[test]
    fn relative_change_examples() {
        assert!(relative_change_stop(&[(0.0, 1.0), (0.0, 2.0)], 1e-4));
        assert!(!relative_change_stop(&[(0.1, 1.0), (0.0, 2.0)], 1e-4));
        assert!(relative_change_stop(&[(1e-5, 1.0), (2e-5, 2.0)], 1e-4));
        assert!(relative_change_stop(&[(0.0, 0.0)], 1e-4));
    }

    /// `½‖x − c‖²` with identity majorizer and no regularizer.
    struct Quadratic {
        x: Vec<f64>,
        c: Vec<f64>,
    }

    impl BlockProblem for Quadratic {
        fn num_blocks(&self) -> usize {
            1
        }
        fn block_group(&self, _: usize) -> usize {
            0
        }
        fn block(&self, _: usize) -> Vec<f64> {
            self.x.clone()
        }
        fn set_block(&mut self, _: usize, x: &[f64]) {
            self.x = x.to_vec();
        }
        fn majorizer(&mut self, _: usize) -> MajorizerDiag {
            MajorizerDiag::from_raw(vec![1.0; self.x.len()])
        }
        fn gradient(&mut self, _: usize, x: &[f64]) -> Vec<f64> {
            x.iter().zip(&self.c).map(|(a, b)| a - b).collect()
        }
        fn prox(&mut self, _: usize, v: &[f64], _: &MajorizerDiag) -> Result<Vec<f64>> {
            Ok(v.to_vec())
        }
        fn objective(&mut self) -> f64 {
            0.5 * self.x.iter().zip(&self.c).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        }
        fn smooth_value(&mut self, _: usize, x: &[f64]) -> Option<f64> {
            Some(0.5 * x.iter().zip(&self.c).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        }
    }

    #[test]
    fn quadratic_converges_in_one_step() {
        let mut p = Quadratic { x: vec![3.0, -1.0, 0.5], c: vec![1.0, 2.0, 3.0] };
        let cfg =
            EngineConfig { accel: Accel::Plain, max_iter: 1, check_majorization: true, ..EngineConfig::default() };
        let trace = run(&mut p, &cfg).unwrap();
        assert_eq!(p.x, p.c);
        assert_eq!(trace.final_objective(), 0.0);
    }

    /// `½(uv − 1)²` over two scalar blocks.
    struct Bilinear {
        u: f64,
        v: f64,
    }

    impl BlockProblem for Bilinear {
        fn num_blocks(&self) -> usize {
            2
        }
        fn block_group(&self, b: usize) -> usize {
            b
        }
        fn block(&self, b: usize) -> Vec<f64> {
            vec![if b == 0 { self.u } else { self.v }]
        }
        fn set_block(&mut self, b: usize, x: &[f64]) {
            if b == 0 {
                self.u = x[0];
            } else {
                self.v = x[0];
            }
        }
        fn majorizer(&mut self, b: usize) -> MajorizerDiag {
            let other = if b == 0 { self.v } else { self.u };
            MajorizerDiag::from_raw(vec![other * other])
        }
        fn gradient(&mut self, b: usize, x: &[f64]) -> Vec<f64> {
            let other = if b == 0 { self.v } else { self.u };
            vec![(x[0] * other - 1.0) * other]
        }
        fn prox(&mut self, _: usize, v: &[f64], _: &MajorizerDiag) -> Result<Vec<f64>> {
            Ok(v.to_vec())
        }
        fn objective(&mut self) -> f64 {
            0.5 * (self.u * self.v - 1.0).powi(2)
        }
    }

    #[test]
    fn bilinear_descends_to_zero() {
        let mut p = Bilinear { u: 0.3, v: -2.0 };
        let cfg = EngineConfig { accel: Accel::Plain, max_iter: 50, tol: 0.0, ..EngineConfig::default() };
        let trace = run(&mut p, &cfg).unwrap();
        let obj = trace.objectives();
        assert!(obj.windows(2).all(|w| w[1] <= w[0] + 1e-10));
        // exact alternating minimization reaches uv = 1 after one sweep
        assert!(trace.final_objective() < 1e-8);
    }

    #[test]
    fn restart_schemes_keep_descent_on_separable_quadratic() {
        for accel in [Accel::ReO, Accel::Fbpgm, Accel::ReG, Accel::ReGF] {
            let mut p = Quadratic { x: vec![5.0, -4.0], c: vec![0.0, 1.0] };
            let cfg = EngineConfig { accel, max_iter: 20, tol: 0.0, ..EngineConfig::default() };
            let trace = run(&mut p, &cfg).unwrap();
            assert!(trace.final_objective() <= trace.records[0].objective);
            if accel == Accel::ReO {
                assert!(trace.objectives().windows(2).all(|w| w[1] <= w[0]));
            }
        }
    }

    #[test]
    fn trace_round_trip() {
        let mut p = Bilinear { u: 0.5, v: 0.5 };
        let trace = run(&mut p, &EngineConfig { max_iter: 5, tol: 0.0, ..EngineConfig::default() }).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = SolverTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.records.len(), trace.records.len());
        for (a, b) in back.records.iter().zip(&trace.records) {
            assert_eq!(a.objective, b.objective);
            assert_eq!(a.iteration, b.iteration);
        }
    }
}
