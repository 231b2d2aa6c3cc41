//! Finite-difference p-Laplace evolution with zero Dirichlet data and
//! truncated spectral additive noise.
//!
//! Every step is fully implicit in the drift,
//! `X_{n+1} - dt div(phi(grad X_{n+1})) = X_n + xi_n`,
//! with `xi_n = sum_k b_k sqrt(dt) N_k e_k`. The implicit map is the resolvent
//! of a monotone operator, so synchronous couplings contract at every step.

pub mod operator;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{sine_mode, ModelParams, NoiseSpec};
use crate::rng::{domain, GaussianStream, RngStream};
use crate::stats::fit_line;

pub use operator::{Flux, Grid};

/// Nodal values on the interior grid; boundary nodes are implicitly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    pub values: Vec<f64>,
    pub params: Arc<ModelParams>,
}

impl FieldState {
    pub fn zeros(params: Arc<ModelParams>) -> Self {
        let values = vec![0.0; params.n_nodes()];
        Self { values, params }
    }

    /// Samples `f(x, y)` at the interior nodes (`y = 0` in one dimension).
    pub fn from_fn(params: Arc<ModelParams>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..params.n_nodes())
            .map(|i| {
                let (x, y) = params.node_coords(i);
                f(x, y)
            })
            .collect();
        Self { values, params }
    }

    /// `amplitude * e_k`, the unit-normalized sine mode `k`.
    pub fn from_mode(params: Arc<ModelParams>, k: usize, amplitude: f64) -> Self {
        let values = sine_mode(&params, k).into_iter().map(|v| amplitude * v).collect();
        Self { values, params }
    }

    pub fn from_values(params: Arc<ModelParams>, values: Vec<f64>) -> Result<Self> {
        if values.len() != params.n_nodes() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: params.n_nodes(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("field values must be finite".into()));
        }
        Ok(Self { values, params })
    }

    pub fn grid(&self) -> Grid {
        Grid::new(&self.params)
    }

    pub fn l2(&self) -> f64 {
        l2_norm(&self.values, self.params.cell_volume())
    }

    pub fn lm(&self, m: f64) -> f64 {
        lm_norm(&self.values, self.params.cell_volume(), m)
    }

    pub fn linf(&self) -> f64 {
        linf_norm(&self.values)
    }

    /// `(sum_faces h^d |g|^p)^(1/p)` with `p` from the parameters.
    pub fn w1p(&self) -> f64 {
        operator::gradient_p_energy(&self.grid(), self.params.p, &self.values).powf(1.0 / self.params.p)
    }

    /// `L^2` inner product under the grid quadrature.
    pub fn dot(&self, other: &FieldState) -> f64 {
        dot(&self.values, &other.values) * self.params.cell_volume()
    }

    pub fn difference(&self, other: &FieldState) -> Result<FieldState> {
        check_grid(self, other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self {
            values,
            params: self.params.clone(),
        })
    }
}

fn check_grid(a: &FieldState, b: &FieldState) -> Result<()> {
    if a.params.dim != b.params.dim || a.params.n_grid != b.params.n_grid || a.params.length != b.params.length {
        return Err(Error::MismatchedGrid("fields live on different grids".into()));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64], w: f64) -> f64 {
    (dot(v, v) * w).sqrt()
}

pub(crate) fn lm_norm(v: &[f64], w: f64, m: f64) -> f64 {
    if m == 2.0 {
        return l2_norm(v, w);
    }
    (v.iter().map(|x| x.abs().powf(m)).sum::<f64>() * w).powf(1.0 / m)
}

pub(crate) fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `div(phi(grad u))` with `phi(g) = (g^2 + eps^2)^((p-2)/2) g`.
pub fn p_laplacian(u: &FieldState, p: f64, eps_reg: f64) -> FieldState {
    let mut out = vec![0.0; u.values.len()];
    operator::apply(&u.grid(), Flux { p, eps: eps_reg }, &u.values, &mut out);
    FieldState {
        values: out,
        params: u.params.clone(),
    }
}

/// Cumulative terms of the pathwise discrete energy identity
/// `|X_N|^2 + 2 dissipation + correction = |X_0|^2 + martingale + noise_energy`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyLedger {
    /// `sum dt D(X_{n+1})`, `D(u) = sum_faces h^d phi(g) g`.
    pub dissipation: Vec<f64>,
    /// `sum dt^2 |div phi(grad X_{n+1})|^2`, the implicit-Euler numerical dissipation.
    pub correction: Vec<f64>,
    /// `sum 2 <X_n, xi_n>`.
    pub martingale: Vec<f64>,
    /// `sum |xi_n|^2`.
    pub noise_energy: Vec<f64>,
}

/// Norm diagnostics aligned with `times`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormTrace {
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub lm: Option<Vec<f64>>,
    pub linf: Vec<f64>,
    pub w1p: Vec<f64>,
    pub lm_order: Option<f64>,
    pub extinct_at: Option<f64>,
    pub energy: Option<EnergyLedger>,
}

impl NormTrace {
    fn new(lm_order: Option<f64>, energy: bool) -> Self {
        Self {
            lm: lm_order.map(|_| Vec::new()),
            lm_order,
            energy: energy.then(EnergyLedger::default),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, t: f64, grid: &Grid, p: f64, u: &[f64], acc: &Accumulators) {
        let w = grid.weight();
        self.times.push(t);
        self.l2.push(l2_norm(u, w));
        if let (Some(lm), Some(m)) = (self.lm.as_mut(), self.lm_order) {
            lm.push(lm_norm(u, w, m));
        }
        self.linf.push(linf_norm(u));
        self.w1p.push(operator::gradient_p_energy(grid, p, u).powf(1.0 / p));
        if let Some(e) = self.energy.as_mut() {
            e.dissipation.push(acc.dissipation);
            e.correction.push(acc.correction);
            e.martingale.push(acc.martingale);
            e.noise_energy.push(acc.noise_energy);
        }
    }

    /// Values of one recorded norm.
    pub fn series(&self, norm: TraceNorm) -> Result<&[f64]> {
        Ok(match norm {
            TraceNorm::L2 => &self.l2,
            TraceNorm::Linf => &self.linf,
            TraceNorm::W1p => &self.w1p,
            TraceNorm::Lm => self
                .lm
                .as_deref()
                .ok_or_else(|| Error::InvalidParams("trace has no L^m column".into()))?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceNorm {
    L2,
    Lm,
    Linf,
    W1p,
}

#[derive(Clone, Copy, Debug, Default)]
struct Accumulators {
    dissipation: f64,
    correction: f64,
    martingale: f64,
    noise_energy: f64,
}

/// How step sizes are chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepPolicy {
    /// Constant `ModelParams::dt`; output times are rounded to whole steps.
    Fixed,
    /// `dt = safety h^2 / max_face (g^2 + eps^2)^((p-2)/2)` for `p > 2`, recomputed
    /// every step and capped at `dt_max`; `safety h^2` for `p <= 2`.
    /// Steps are shortened to land exactly on output times.
    Stability { safety: f64, dt_max: f64 },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Stability {
            safety: 0.25,
            dt_max: f64::INFINITY,
        }
    }
}

/// Which states are written to the trace.
#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    /// Initial state and every step.
    EveryStep,
    /// Initial state and the given increasing times.
    Times(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolveOptions {
    pub policy: StepPolicy,
    pub record: Record,
    pub lm_order: Option<f64>,
    pub max_sweeps: usize,
    /// Declare extinction once `|u|_inf < 1e-12 |x0|_inf` and stop stepping.
    pub detect_extinction: bool,
    pub track_energy: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            policy: StepPolicy::default(),
            record: Record::EveryStep,
            lm_order: None,
            max_sweeps: 200,
            detect_extinction: true,
            track_energy: false,
        }
    }
}

impl EvolveOptions {
    pub fn at_times(times: Vec<f64>) -> Self {
        Self {
            record: Record::Times(times),
            ..Default::default()
        }
    }
}

const EXTINCTION_FRACTION: f64 = 1e-12;

/// Shared state for stepping one or two coupled fields.
struct Stepper {
    params: Arc<ModelParams>,
    grid: Grid,
    flux: Flux,
    modes: Vec<Vec<f64>>,
    coeffs: Vec<f64>,
    opts: EvolveOptions,
}

impl Stepper {
    fn new(params: Arc<ModelParams>, noise: &NoiseSpec, opts: &EvolveOptions) -> Result<Self> {
        params.validate()?;
        noise.validate(&params)?;
        if params.p < 2.0 && params.eps_reg == 0.0 {
            return Err(Error::InvalidParams("p < 2 needs eps_reg > 0 (see default_eps_reg)".into()));
        }
        if let StepPolicy::Stability { safety, dt_max } = opts.policy {
            if !(safety > 0.0) || !(dt_max > 0.0) {
                return Err(Error::InvalidParams("stability policy needs safety > 0 and dt_max > 0".into()));
            }
        }
        if let Record::Times(ts) = &opts.record {
            if ts.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) || ts.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidParams("output times must be finite, non-negative and sorted".into()));
            }
        }
        let (modes, coeffs): (Vec<_>, Vec<_>) = noise
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(k, b)| (sine_mode(&params, k), *b))
            .unzip();
        Ok(Self {
            grid: Grid::new(&params),
            flux: Flux {
                p: params.p,
                eps: params.eps_reg,
            },
            params,
            modes,
            coeffs,
            opts: opts.clone(),
        })
    }

    fn normals_per_step(&self) -> u64 {
        self.coeffs.len() as u64
    }

    fn policy_dt(&self, states: &[&[f64]]) -> f64 {
        match self.opts.policy {
            StepPolicy::Fixed => self.params.dt,
            StepPolicy::Stability { safety, dt_max } => {
                let h2 = self.grid.h * self.grid.h;
                let dt = if self.params.p > 2.0 {
                    let a = states
                        .iter()
                        .map(|u| operator::max_coeff(&self.grid, self.flux, u))
                        .fold(0.0_f64, f64::max);
                    if a > 0.0 {
                        safety * h2 / a
                    } else {
                        f64::INFINITY
                    }
                } else {
                    safety * h2
                };
                dt.min(dt_max)
            }
        }
    }

    /// `xi = sum_k b_k sqrt(dt) N_k e_k`, drawing `K` normals from `gauss`.
    fn noise(&self, dt: f64, gauss: &mut GaussianStream, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let sq = dt.sqrt();
        for (mode, b) in self.modes.iter().zip(&self.coeffs) {
            let a = b * sq * gauss.next();
            for (o, e) in out.iter_mut().zip(mode) {
                *o += a * e;
            }
        }
    }
}

/// Step sizes and record flags for a run up to `t_end`.
struct Schedule {
    targets: Vec<f64>,
    fixed_steps: Option<Vec<u64>>,
}

impl Schedule {
    fn new(opts: &EvolveOptions, params: &ModelParams, t_end: f64) -> Self {
        let mut targets: Vec<f64> = match &opts.record {
            Record::EveryStep => Vec::new(),
            Record::Times(ts) => ts.iter().copied().filter(|&t| t > 0.0 && t <= t_end).collect(),
        };
        if matches!(opts.record, Record::Times(_)) && targets.last().is_none_or(|&t| t < t_end) {
            targets.push(t_end);
        }
        let fixed_steps = matches!(opts.policy, StepPolicy::Fixed)
            .then(|| targets.iter().map(|t| (t / params.dt).round() as u64).collect());
        Self { targets, fixed_steps }
    }
}

/// Evolves one or two fields under the same noise path.
struct Run<'a> {
    stepper: &'a Stepper,
    fields: Vec<Vec<f64>>,
    t: f64,
    step: u64,
    gauss: Option<GaussianStream>,
    capture: bool,
}

struct RunOutput {
    fields: Vec<Vec<f64>>,
    traces: Vec<NormTrace>,
    diff: Option<NormTrace>,
    snapshots: Vec<Vec<f64>>,
    t: f64,
    step: u64,
}

impl Run<'_> {
    fn execute(mut self, t_end: f64, with_diff: bool) -> Result<RunOutput> {
        let s = self.stepper;
        let sched = Schedule::new(&s.opts, &s.params, t_end);
        let every = matches!(s.opts.record, Record::EveryStep);
        let nf = self.fields.len();
        let mut traces: Vec<NormTrace> = (0..nf).map(|_| NormTrace::new(s.opts.lm_order, s.opts.track_energy)).collect();
        let mut diff = with_diff.then(|| NormTrace::new(s.opts.lm_order, false));
        let mut acc = vec![Accumulators::default(); nf];
        let initial_sup: Vec<f64> = self.fields.iter().map(|u| linf_norm(u)).collect();
        let mut extinct = vec![false; nf];
        let floor = 1e-16 * initial_sup.iter().copied().fold(0.0, f64::max);
        let mut dbuf = vec![0.0; s.grid.len()];
        let len = s.grid.len();
        let mut noise = vec![0.0; len];
        let mut rhs = vec![0.0; len];
        let mut lap = vec![0.0; len];
        let mut ws = operator::Workspace::new(len);

        let record = |t: f64, fields: &[Vec<f64>], traces: &mut [NormTrace], diff: &mut Option<NormTrace>, acc: &[Accumulators], dbuf: &mut Vec<f64>| {
            for ((tr, u), a) in traces.iter_mut().zip(fields).zip(acc) {
                tr.push(t, &s.grid, s.params.p, u, a);
            }
            if let Some(d) = diff.as_mut() {
                for ((o, a), b) in dbuf.iter_mut().zip(&fields[0]).zip(&fields[1]) {
                    *o = a - b;
                }
                d.push(t, &s.grid, s.params.p, dbuf, &Accumulators::default());
            }
        };
        record(self.t, &self.fields, &mut traces, &mut diff, &acc, &mut dbuf);
        let mut snapshots = Vec::new();
        if self.capture {
            snapshots.push(self.fields[0].clone());
        }

        let tol = 1e-12 * t_end.max(1.0);
        let mut next_target = 0usize;
        // targets at or behind the start are not recorded again
        while next_target < sched.targets.len() && sched.targets[next_target] <= self.t + tol {
            next_target += 1;
        }
        let end_step = matches!(s.opts.policy, StepPolicy::Fixed).then(|| (t_end / s.params.dt).round() as u64);

        loop {
            let done = match end_step {
                Some(n) => self.step >= n,
                None => self.t >= t_end - tol,
            };
            if done || (!every && next_target >= sched.targets.len()) {
                break;
            }
            if extinct.iter().all(|&e| e) && s.coeffs.is_empty() {
                // nothing moves any more; emit remaining outputs as zeros
                let rest: Vec<f64> = if every {
                    Vec::new()
                } else {
                    sched.targets[next_target..].to_vec()
                };
                for t in rest {
                    record(t, &self.fields, &mut traces, &mut diff, &acc, &mut dbuf);
                    if self.capture {
                        snapshots.push(self.fields[0].clone());
                    }
                }
                self.t = t_end;
                break;
            }
            let states: Vec<&[f64]> = self.fields.iter().map(|v| v.as_slice()).collect();
            let mut dt = s.policy_dt(&states);
            if end_step.is_none() {
                let limit = if every || next_target >= sched.targets.len() {
                    t_end
                } else {
                    sched.targets[next_target]
                };
                if self.t + dt >= limit - tol {
                    dt = limit - self.t;
                }
            }
            if let Some(g) = self.gauss.as_mut() {
                s.noise(dt, g, &mut noise);
            }
            let t_new = match end_step {
                Some(_) => (self.step + 1) as f64 * s.params.dt,
                None => self.t + dt,
            };
            for (i, u) in self.fields.iter_mut().enumerate() {
                if extinct[i] && s.coeffs.is_empty() {
                    continue;
                }
                if self.gauss.is_some() {
                    for k in 0..len {
                        rhs[k] = u[k] + noise[k];
                    }
                } else {
                    rhs.copy_from_slice(u);
                }
                let mut w = rhs.clone();
                operator::implicit_solve(&s.grid, s.flux, dt, &rhs, &mut w, &mut ws, s.opts.max_sweeps, t_new, floor)?;
                if s.opts.track_energy {
                    let wgt = s.grid.weight();
                    operator::apply(&s.grid, s.flux, &w, &mut lap);
                    acc[i].dissipation += dt * operator::dissipation(&s.grid, s.flux, &w);
                    acc[i].correction += dt * dt * dot(&lap, &lap) * wgt;
                    if self.gauss.is_some() {
                        acc[i].martingale += 2.0 * dot(u, &noise) * wgt;
                        acc[i].noise_energy += dot(&noise, &noise) * wgt;
                    }
                }
                *u = w;
                if s.opts.detect_extinction && s.coeffs.is_empty() && !extinct[i] && linf_norm(u) < EXTINCTION_FRACTION * initial_sup[i] {
                    extinct[i] = true;
                    u.iter_mut().for_each(|v| *v = 0.0);
                    traces[i].extinct_at = Some(t_new);
                }
            }
            self.t = t_new;
            self.step += 1;
            if every {
                record(self.t, &self.fields, &mut traces, &mut diff, &acc, &mut dbuf);
                if self.capture {
                    snapshots.push(self.fields[0].clone());
                }
            }
            while !every && next_target < sched.targets.len() {
                let hit = match &sched.fixed_steps {
                    Some(st) => st[next_target] <= self.step,
                    None => sched.targets[next_target] <= self.t + tol,
                };
                if !hit {
                    break;
                }
                if sched.fixed_steps.is_none() {
                    self.t = sched.targets[next_target];
                }
                record(self.t, &self.fields, &mut traces, &mut diff, &acc, &mut dbuf);
                if self.capture {
                    snapshots.push(self.fields[0].clone());
                }
                next_target += 1;
            }
        }
        Ok(RunOutput {
            fields: self.fields,
            traces,
            diff,
            snapshots,
            t: self.t,
            step: self.step,
        })
    }
}

/// Deterministic evolution from `x0` to `t_end`.
pub fn evolve_deterministic(x0: &FieldState, t_end: f64, opts: &EvolveOptions) -> Result<(FieldState, NormTrace)> {
    evolve_spde(x0, &NoiseSpec::zero(), t_end, RngStream::new(0, 0), opts)
}

/// Stochastic evolution; with zero noise this is bitwise the deterministic path.
pub fn evolve_spde(
    x0: &FieldState,
    noise: &NoiseSpec,
    t_end: f64,
    stream: RngStream,
    opts: &EvolveOptions,
) -> Result<(FieldState, NormTrace)> {
    let run = resume_spde(x0, 0.0, 0, noise, t_end, stream, opts)?;
    Ok((run.state, run.trace))
}

/// Result of a resumable run.
#[derive(Clone, Debug)]
pub struct SpdeRun {
    pub state: FieldState,
    pub trace: NormTrace,
    pub t: f64,
    pub step: u64,
}

/// Continues a path that already took `step` steps and reached time `t0`.
///
/// Noise for step `n` always uses normals `n K .. (n + 1) K` of `stream`, so a
/// resumed path is bitwise identical to an uninterrupted one.
pub fn resume_spde(
    x: &FieldState,
    t0: f64,
    step: u64,
    noise: &NoiseSpec,
    t_end: f64,
    stream: RngStream,
    opts: &EvolveOptions,
) -> Result<SpdeRun> {
    check_time(t_end)?;
    let stepper = Stepper::new(x.params.clone(), noise, opts)?;
    let gauss = (!stepper.coeffs.is_empty()).then(|| GaussianStream::at(stream, step * stepper.normals_per_step()));
    let run = Run {
        stepper: &stepper,
        fields: vec![x.values.clone()],
        t: t0,
        step,
        gauss,
        capture: false,
    };
    let mut out = run.execute(t_end, false)?;
    Ok(SpdeRun {
        state: FieldState {
            values: out.fields.pop().expect("one field"),
            params: x.params.clone(),
        },
        trace: out.traces.pop().expect("one trace"),
        t: out.t,
        step: out.step,
    })
}

fn check_time(t_end: f64) -> Result<()> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidParams(format!("t_end must be finite and >= 0, got {t_end}")));
    }
    Ok(())
}

/// Synchronous coupling of two initial data under one noise path.
#[derive(Clone, Debug)]
pub struct CoupledRun {
    pub diff: NormTrace,
    pub x: FieldState,
    pub y: FieldState,
    pub x_trace: NormTrace,
    pub y_trace: NormTrace,
}

pub fn coupled_spde(
    x0: &FieldState,
    y0: &FieldState,
    noise: &NoiseSpec,
    t_end: f64,
    stream: RngStream,
    opts: &EvolveOptions,
) -> Result<CoupledRun> {
    check_time(t_end)?;
    check_grid(x0, y0)?;
    let mut opts = opts.clone();
    // extinction of one side must not freeze it while the other still moves
    opts.detect_extinction = false;
    let stepper = Stepper::new(x0.params.clone(), noise, &opts)?;
    let gauss = (!stepper.coeffs.is_empty()).then(|| GaussianStream::at(stream, 0));
    let run = Run {
        stepper: &stepper,
        fields: vec![x0.values.clone(), y0.values.clone()],
        t: 0.0,
        step: 0,
        gauss,
        capture: false,
    };
    let mut out = run.execute(t_end, true)?;
    let y = out.fields.pop().expect("two fields");
    let x = out.fields.pop().expect("two fields");
    let y_trace = out.traces.pop().expect("two traces");
    let x_trace = out.traces.pop().expect("two traces");
    Ok(CoupledRun {
        diff: out.diff.expect("difference trace"),
        x: FieldState {
            values: x,
            params: x0.params.clone(),
        },
        y: FieldState {
            values: y,
            params: x0.params.clone(),
        },
        x_trace,
        y_trace,
    })
}

/// `sum_k b_k sqrt(dt) N_k e_k` with the normals taken from the start of `stream`.
pub fn noise_increment(noise: &NoiseSpec, dt: f64, stream: RngStream, params: Arc<ModelParams>) -> Result<FieldState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("dt must be > 0, got {dt}")));
    }
    let stepper = Stepper::new(params.clone(), noise, &EvolveOptions::default())?;
    let mut out = vec![0.0; params.n_nodes()];
    stepper.noise(dt, &mut GaussianStream::at(stream, 0), &mut out);
    Ok(FieldState { values: out, params })
}

/// Final traces and states of `n_paths` independent paths; path `i` uses trajectory stream `i`.
pub fn spde_ensemble(
    x0: &FieldState,
    noise: &NoiseSpec,
    t_end: f64,
    n_paths: usize,
    seed: u64,
    opts: &EvolveOptions,
    exec: Execution,
) -> Result<Vec<(FieldState, NormTrace)>> {
    exec.try_map_indexed(n_paths, |i| {
        evolve_spde(x0, noise, t_end, RngStream::in_domain(seed, domain::TRAJECTORY, i as u64), opts)
    })
}

/// Snapshots of each path at `times`: `out[path][time]` holds nodal values.
pub fn spde_snapshots(
    x0: &FieldState,
    noise: &NoiseSpec,
    times: &[f64],
    n_paths: usize,
    seed: u64,
    opts: &EvolveOptions,
    exec: Execution,
) -> Result<Vec<Vec<Vec<f64>>>> {
    exec.try_map_indexed(n_paths, |i| {
        snapshot_path(x0, noise, times, RngStream::in_domain(seed, domain::TRAJECTORY, i as u64), opts)
    })
}

/// States of one path at the sorted `times`, using a single run so that
/// snapshots do not perturb the step sequence.
pub fn snapshot_path(x0: &FieldState, noise: &NoiseSpec, times: &[f64], stream: RngStream, opts: &EvolveOptions) -> Result<Vec<Vec<f64>>> {
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let mut o = opts.clone();
    o.record = Record::Times(times.to_vec());
    let stepper = Stepper::new(x0.params.clone(), noise, &o)?;
    let gauss = (!stepper.coeffs.is_empty()).then(|| GaussianStream::at(stream, 0));
    let run = Run {
        stepper: &stepper,
        fields: vec![x0.values.clone()],
        t: 0.0,
        step: 0,
        gauss,
        capture: true,
    };
    let out = run.execute(t_end, false)?;
    // recorded: the start, then every positive target once
    let mut k = 0;
    Ok(times
        .iter()
        .map(|&t| {
            if t > 0.0 {
                k += 1;
            }
            out.snapshots[k].clone()
        })
        .collect())
}

/// Decay families for [`decay_diagnostics`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayFamily {
    /// `log v = a + slope log t`.
    Polynomial,
    /// `log v = a - rate t`.
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    pub family: DecayFamily,
    /// Log-log slope (polynomial) or `-rate` (exponential).
    pub slope: f64,
    /// Decay rate, `-slope`.
    pub rate: f64,
    pub intercept: f64,
    /// RMS residual of the fit in log space.
    pub rms_residual: f64,
    pub n: usize,
}

/// Least-squares decay fit of `values` over `times` restricted to `[t_lo, t_hi)`.
///
/// Non-positive values are excluded because their logarithm is undefined.
pub fn decay_fit(times: &[f64], values: &[f64], family: DecayFamily, window: (f64, f64)) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::LengthMismatch {
            left: times.len(),
            right: values.len(),
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= window.0 && **t < window.1 && **v > 0.0 && **t > 0.0)
        .map(|(t, v)| {
            let x = match family {
                DecayFamily::Polynomial => t.ln(),
                DecayFamily::Exponential => *t,
            };
            (x, v.ln())
        })
        .unzip();
    if x.len() < 10 {
        return Err(Error::InsufficientData(format!("{} points in fit window, need 10", x.len())));
    }
    let fit = fit_line(&x, &y)?;
    Ok(DecayFit {
        family,
        slope: fit.slope,
        rate: -fit.slope,
        intercept: fit.intercept,
        rms_residual: fit.rms_residual,
        n: fit.n,
    })
}

/// [`decay_fit`] on one norm column of a trace.
pub fn decay_diagnostics(trace: &NormTrace, norm: TraceNorm, family: DecayFamily, window: (f64, f64)) -> Result<DecayFit> {
    decay_fit(&trace.times, trace.series(norm)?, family, window)
}

/// `L(t) = (sup_{s <= t} (|u^x_s|_{W^{1,p}} + |u^y_s|_{W^{1,p}}))^(p-2)`.
pub fn running_l(x: &NormTrace, y: Option<&NormTrace>, p: f64) -> Result<Vec<f64>> {
    if let Some(y) = y {
        if y.len() != x.len() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
    }
    let mut sup = 0.0_f64;
    Ok((0..x.len())
        .map(|i| {
            sup = sup.max(x.w1p[i] + y.map_or(0.0, |y| y.w1p[i]));
            sup.powf(p - 2.0)
        })
        .collect())
}

/// Default regularization for `p < 2`: `1e-8 sup|x0| / length`.
pub fn default_eps_reg(x0: &FieldState) -> f64 {
    if x0.params.p < 2.0 {
        1e-8 * x0.linf() / x0.params.length
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests;
