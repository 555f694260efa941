//! Gaussian-process regression over a layer's high-precision ratio
//! `p ∈ [0, 1]` and an upper-confidence-bound search for the best ratio.

use std::io::Write;
use std::process::{Command, Stdio};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Smallest noise variance added to the Gram diagonal.
pub const NOISE_VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("Gram matrix not positive definite with noise sigma = {noise:e}")]
    IllConditioned { noise: f64 },
    #[error("sample {p} outside [0, 1]")]
    Domain { p: f64 },
    #[error("objective failed at p = {p}: {message}")]
    Objective { p: f64, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Squared-exponential covariance `σ_f²·exp(−(x−x')²/(2ℓ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub length_scale: f64,
    pub signal: f64,
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel { length_scale: 0.1, signal: 1.0 }
    }
}

impl Kernel {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let d = x - y;
        self.signal * self.signal * (-(d * d) / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    pub fn prior_variance(&self) -> f64 {
        self.signal * self.signal
    }
}

/// Samples plus hyperparameters; the prior mean is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GpState {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub kernel: Kernel,
    /// Observation noise `σ_ε`.
    pub noise: f64,
}

impl GpState {
    pub fn new(kernel: Kernel, noise: f64) -> Self {
        GpState { xs: Vec::new(), ys: Vec::new(), kernel, noise }
    }

    pub fn push(&mut self, x: f64, y: f64) -> Result<(), GpError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(GpError::Domain { p: x });
        }
        self.xs.push(x);
        self.ys.push(y);
        Ok(())
    }

    pub fn noise_variance(&self) -> f64 {
        (self.noise * self.noise).max(NOISE_VARIANCE_FLOOR)
    }

    /// Factorizes `K(X,X) + σ_ε²I` once for repeated queries.
    pub fn fit(&self) -> Result<Posterior<'_>, GpError> {
        let n = self.xs.len();
        let noise = self.noise_variance();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            self.kernel.eval(self.xs[i], self.xs[j]) + if i == j { noise } else { 0.0 }
        });
        let chol = Cholesky::new(gram).ok_or(GpError::IllConditioned { noise: self.noise })?;
        let weights = chol.solve(&DVector::from_column_slice(&self.ys));
        Ok(Posterior { state: self, chol, weights })
    }

    /// Posterior `(mean, variance)` at `x`.
    pub fn posterior(&self, x: f64) -> Result<(f64, f64), GpError> {
        Ok(self.fit()?.at(x))
    }
}

/// A fitted posterior.
pub struct Posterior<'a> {
    state: &'a GpState,
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
}

impl Posterior<'_> {
    pub fn at(&self, x: f64) -> (f64, f64) {
        let s = self.state;
        if s.xs.is_empty() {
            return (0.0, s.kernel.prior_variance());
        }
        let k = DVector::from_iterator(s.xs.len(), s.xs.iter().map(|&xi| s.kernel.eval(x, xi)));
        let mean = k.dot(&self.weights);
        let v = self.chol.l().solve_lower_triangular(&k).expect("triangular factor is invertible");
        let var = (s.kernel.eval(x, x) - v.dot(&v)).max(0.0);
        (mean, var)
    }
}

/// `m + ω·√s`.
pub fn ucb(mean: f64, variance: f64, omega: f64) -> f64 {
    mean + omega * variance.max(0.0).sqrt()
}

/// Exploration weight per acquisition step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exploration {
    Constant(f64),
    /// `√(2·ln(t²π²/(6δ)))` with `δ = 0.1`.
    Schedule,
}

impl Default for Exploration {
    fn default() -> Self {
        Exploration::Constant(2.0)
    }
}

impl Exploration {
    /// Weight at acquisition step `t ≥ 1`.
    pub fn omega(&self, t: usize) -> f64 {
        match *self {
            Exploration::Constant(w) => w,
            Exploration::Schedule => {
                let t = t.max(1) as f64;
                let arg = t * t * std::f64::consts::PI.powi(2) / (6.0 * 0.1);
                (2.0 * arg.ln()).max(0.0).sqrt()
            }
        }
    }
}

/// Points evaluated before the acquisition loop.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDesign {
    Fixed(Vec<f64>),
    /// Uniform draws from the seeded generator, snapped to the grid.
    Random(usize),
}

impl Default for InitialDesign {
    fn default() -> Self {
        InitialDesign::Fixed(vec![0.0, 0.05, 0.2, 1.0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpConfig {
    pub kernel: Kernel,
    pub noise: f64,
    pub exploration: Exploration,
    pub initial: InitialDesign,
    /// Total objective evaluations, initial design included.
    pub n_iter: usize,
    /// Acquisition grid has `grid + 1` points `i/grid`.
    pub grid: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            kernel: Kernel::default(),
            noise: 1e-3,
            exploration: Exploration::default(),
            initial: InitialDesign::default(),
            n_iter: 30,
            grid: 1000,
            seed: 0,
        }
    }
}

/// One objective evaluation. `mean`, `var` and `ucb` are the posterior
/// at `p` just before sampling it, in objective units.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub p: f64,
    pub value: f64,
    pub mean: f64,
    pub var: f64,
    pub ucb: f64,
}

pub const TRACE_HEADER: [&str; 6] = ["iter", "p", "L", "mean", "var", "ucb"];

impl TraceRow {
    pub fn csv_record(&self) -> [String; 6] {
        [
            self.iter.to_string(),
            format!("{:.3}", self.p),
            self.value.to_string(),
            self.mean.to_string(),
            self.var.to_string(),
            self.ucb.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub best_p: f64,
    pub best_value: f64,
    pub trace: Vec<TraceRow>,
}

impl OptimizeResult {
    /// First iteration whose best-so-far sample lies within `tol` of `target`.
    pub fn iterations_to(&self, target: f64, tol: f64) -> Option<usize> {
        let mut best: Option<&TraceRow> = None;
        for row in &self.trace {
            if best.is_none_or(|b| row.value > b.value || (row.value == b.value && row.p < b.p)) {
                best = Some(row);
            }
            if (best.unwrap().p - target).abs() <= tol + 1e-12 {
                return Some(row.iter);
            }
        }
        None
    }
}

/// Search stopped by an error; `trace` holds the completed evaluations.
#[derive(Debug, Error)]
#[error("{error} (after {} evaluations)", trace.len())]
pub struct OptimizeAbort {
    pub error: GpError,
    pub trace: Vec<TraceRow>,
}

/// A black-box objective to maximize.
pub trait Objective {
    fn evaluate(&mut self, p: f64) -> Result<f64, GpError>;
}

impl<F: FnMut(f64) -> f64> Objective for F {
    fn evaluate(&mut self, p: f64) -> Result<f64, GpError> {
        Ok(self(p))
    }
}

/// Accuracy curve `a∞ − c·e^{−kp}` plus `γ` times the compression
/// contribution `share·32/(1+7p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticObjective {
    pub a_inf: f64,
    pub c: f64,
    pub k: f64,
    pub gamma: f64,
    /// Parameter share of the layer.
    pub share: f64,
}

impl SyntheticObjective {
    pub fn value(&self, p: f64) -> f64 {
        let accuracy = self.a_inf - self.c * (-self.k * p).exp();
        crate::quant::objective(accuracy, self.gamma, self.share * 32.0 / (1.0 + 7.0 * p))
    }

    /// Argmax over the grid `i/grid`, ties to the smaller `p`.
    pub fn grid_argmax(&self, grid: usize) -> f64 {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=grid {
            let p = i as f64 / grid as f64;
            let v = self.value(p);
            if v > best.0 {
                best = (v, p);
            }
        }
        best.1
    }

    /// A random instance with an accuracy knee in the small-ratio region.
    pub fn random(rng: &mut impl Rng, gamma: f64) -> Self {
        SyntheticObjective {
            a_inf: rng.gen_range(0.5..0.8),
            c: rng.gen_range(0.2..0.5),
            k: rng.gen_range(5.0..60.0),
            gamma,
            share: 1.0,
        }
    }
}

impl Objective for SyntheticObjective {
    fn evaluate(&mut self, p: f64) -> Result<f64, GpError> {
        Ok(self.value(p))
    }
}

/// Runs a command per sample: `p` on stdin, `L` or `mAP C` on stdout.
#[derive(Debug, Clone)]
pub struct ExternalObjective {
    pub program: String,
    pub args: Vec<String>,
    pub gamma: f64,
    pub layer_id: Option<u32>,
}

impl ExternalObjective {
    pub fn parse_output(text: &str, gamma: f64) -> Result<f64, String> {
        let fields: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match fields[..] {
            [l] => Ok(l),
            [acc, c] => Ok(crate::quant::objective(acc, gamma, c)),
            _ => Err(format!("expected `L` or `mAP C`, got {:?}", text.trim())),
        }
    }
}

impl Objective for ExternalObjective {
    fn evaluate(&mut self, p: f64) -> Result<f64, GpError> {
        let fail = |message: String| GpError::Objective { p, message };
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit());
        if let Some(id) = self.layer_id {
            cmd.env("LAYER_ID", id.to_string());
        }
        let mut child = cmd.spawn().map_err(|e| fail(format!("spawn {}: {e}", self.program)))?;
        {
            let mut stdin = child.stdin.take().expect("stdin piped");
            writeln!(stdin, "{p}").map_err(|e| fail(format!("write stdin: {e}")))?;
        }
        let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!("exited with {}", out.status)));
        }
        Self::parse_output(&String::from_utf8_lossy(&out.stdout), self.gamma).map_err(fail)
    }
}

fn standardize(ys: &[f64]) -> (f64, f64) {
    let n = ys.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = ys.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 1.0);
    }
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

/// Maximizes `objective` over `[0, 1]` with GP-UCB.
pub fn optimize(objective: &mut dyn Objective, cfg: &GpConfig) -> Result<OptimizeResult, OptimizeAbort> {
    let abort = |error, trace| OptimizeAbort { error, trace };
    if cfg.n_iter == 0 || cfg.grid == 0 {
        return Err(abort(GpError::Config("n_iter and grid must be positive".into()), Vec::new()));
    }
    if cfg.kernel.length_scale <= 0.0 || cfg.noise < 0.0 {
        return Err(abort(GpError::Config("length scale must be positive, noise non-negative".into()), Vec::new()));
    }
    if let Exploration::Constant(w) = cfg.exploration {
        if w.is_nan() || w < 0.0 {
            return Err(abort(GpError::Config(format!("exploration weight {w} must be non-negative")), Vec::new()));
        }
    }
    let grid = cfg.grid;
    let snap = |p: f64| (p * grid as f64).round() / grid as f64;
    let initial: Vec<f64> = match &cfg.initial {
        InitialDesign::Fixed(ps) => ps.clone(),
        InitialDesign::Random(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..*n).map(|_| snap(rng.gen_range(0.0..=1.0))).collect()
        }
    };
    if let Some(&p) = initial.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(abort(GpError::Domain { p }, Vec::new()));
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut trace: Vec<TraceRow> = Vec::new();
    for iter in 1..=cfg.n_iter {
        let (mu, sd) = standardize(&ys);
        let state = GpState {
            xs: xs.clone(),
            ys: ys.iter().map(|y| (y - mu) / sd).collect(),
            kernel: cfg.kernel,
            noise: cfg.noise,
        };
        let post = match state.fit() {
            Ok(p) => p,
            Err(e) => return Err(abort(e, trace)),
        };
        let omega = cfg.exploration.omega(iter);
        let (p, (m, s)) = if iter <= initial.len() {
            let p = initial[iter - 1];
            (p, post.at(p))
        } else {
            let mut best: Option<(f64, f64, (f64, f64))> = None;
            for i in 0..=grid {
                let p = i as f64 / grid as f64;
                let ms = post.at(p);
                let v = ucb(ms.0, ms.1, omega);
                if best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, p, ms));
                }
            }
            let (_, p, ms) = best.expect("grid is non-empty");
            (p, ms)
        };
        let value = match objective.evaluate(p) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => return Err(abort(GpError::Objective { p, message: format!("non-finite value {v}") }, trace)),
            Err(e) => return Err(abort(e, trace)),
        };
        let (mean, var) = (m * sd + mu, s * sd * sd);
        trace.push(TraceRow { iter, p, value, mean, var, ucb: ucb(mean, var, omega) });
        xs.push(p);
        ys.push(value);
    }

    let best = trace
        .iter()
        .fold(None::<&TraceRow>, |b, r| match b {
            Some(b) if b.value > r.value || (b.value == r.value && b.p <= r.p) => Some(b),
            _ => Some(r),
        })
        .expect("at least one evaluation");
    Ok(OptimizeResult { best_p: best.p, best_value: best.value, trace })
}
