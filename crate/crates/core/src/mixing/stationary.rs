//! Stationary reference samples and ensemble distance curves.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::field::{coupled_spde, snapshot_path, spde_snapshots, EvolveOptions, FieldState, Record};
use crate::model::{ModelParams, NoiseSpec};
use crate::rng::{domain, RngStream};
use crate::scalar::{ensemble_snapshots, ScalarModel};
use crate::transport::EmpiricalMeasure;

use super::{curve_from_samples, DistanceCurve};

/// Burn-in recipe for field reference ensembles.
///
/// A probe couples the initial datum with zero under common noise; the
/// burn-in is `burn_factor` times the first time their difference falls
/// below `floor_fraction` of its initial size. Each chain starts from zero
/// and contributes snapshots spaced by one burn-in length.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryOptions {
    pub chains: usize,
    pub floor_fraction: f64,
    pub burn_factor: f64,
    pub probe_horizon: f64,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            chains: 16,
            floor_fraction: 1e-2,
            burn_factor: 5.0,
            probe_horizon: 1e3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryEnsemble {
    pub samples: EmpiricalMeasure,
    pub burn_in: f64,
    pub floor_time: f64,
    /// `|mean of the samples|`, which should be near 0 for symmetric noise.
    pub mean_norm: f64,
}

/// `n` approximately stationary field samples.
pub fn stationary_field_ensemble(
    x0: &FieldState,
    noise: &NoiseSpec,
    n: usize,
    seed: u64,
    sopts: &StationaryOptions,
    opts: &EvolveOptions,
    exec: Execution,
) -> Result<StationaryEnsemble> {
    if n == 0 || sopts.chains == 0 {
        return Err(Error::InvalidParams("stationary ensemble needs n > 0 and chains > 0".into()));
    }
    let params = x0.params.clone();
    let probe_start = if x0.linf() > 0.0 {
        x0.clone()
    } else {
        FieldState::from_mode(params.clone(), 0, 1.0)
    };
    let zero = FieldState::zeros(params.clone());
    let mut probe_opts = opts.clone();
    probe_opts.record = Record::EveryStep;
    // the probe only needs the first crossing; run in growing windows
    let stream = RngStream::in_domain(seed, domain::AUX, 0);
    let mut horizon = (sopts.probe_horizon / 1024.0).max(1e-6);
    let floor_time = loop {
        let run = coupled_spde(&probe_start, &zero, noise, horizon, stream, &probe_opts)?;
        let d0 = run.diff.l2[0];
        if let Some(i) = run.diff.l2.iter().position(|&d| d <= sopts.floor_fraction * d0) {
            break run.diff.times[i];
        }
        if horizon >= sopts.probe_horizon {
            return Err(Error::InsufficientData(format!(
                "coupled difference stayed above the floor up to t = {horizon}"
            )));
        }
        horizon = (horizon * 4.0).min(sopts.probe_horizon);
    };
    let burn_in = (sopts.burn_factor * floor_time).max(f64::MIN_POSITIVE);
    let per_chain = n.div_ceil(sopts.chains);
    let times: Vec<f64> = (1..=per_chain).map(|k| burn_in * k as f64).collect();
    let mut snap_opts = opts.clone();
    snap_opts.record = Record::Times(Vec::new());
    let chains = exec.try_map_indexed(sopts.chains, |c| {
        snapshot_path(&zero, noise, &times, RngStream::in_domain(seed, domain::REFERENCE, c as u64), &snap_opts)
    })?;
    let samples: Vec<Vec<f64>> = chains.into_iter().flatten().take(n).collect();
    let measure = EmpiricalMeasure::new(samples, params.cell_volume())?;
    let mean = measure.mean();
    let mean_norm = (mean.iter().map(|v| v * v).sum::<f64>() * params.cell_volume()).sqrt();
    Ok(StationaryEnsemble {
        samples: measure,
        burn_in,
        floor_time,
        mean_norm,
    })
}

/// Curve of a field model started at `x0` against a stationary reference.
/// The time-`t` ensemble has as many paths as the reference has samples.
#[allow(clippy::too_many_arguments)]
pub fn field_distance_curve(
    x0: &FieldState,
    noise: &NoiseSpec,
    times: &[f64],
    reference: &EmpiricalMeasure,
    r: f64,
    resamples: usize,
    seed: u64,
    opts: &EvolveOptions,
    exec: Execution,
) -> Result<DistanceCurve> {
    let n = reference.len();
    let paths = spde_snapshots(x0, noise, times, n, seed, opts, exec)?;
    let w = x0.params.cell_volume();
    let samples = (0..times.len())
        .map(|k| EmpiricalMeasure::new(paths.iter().map(|p| p[k].clone()).collect(), w))
        .collect::<Result<Vec<_>>>()?;
    curve_from_samples(times, &samples, reference, r, resamples, seed, exec)
}

/// Curve of the scalar model from `x0` against stationary `reference` values.
#[allow(clippy::too_many_arguments)]
pub fn scalar_distance_curve(
    model: &ScalarModel,
    x0: f64,
    times: &[f64],
    reference: &[f64],
    r: f64,
    resamples: usize,
    seed: u64,
    exec: Execution,
) -> Result<DistanceCurve> {
    if reference.is_empty() {
        return Err(Error::MissingStationary);
    }
    let steps: Vec<u64> = times.iter().map(|&t| model.steps_for(t)).collect();
    let snaps = ensemble_snapshots(model, x0, &steps, reference.len(), seed, exec)?;
    let samples = snaps
        .iter()
        .map(|s| EmpiricalMeasure::from_scalars(s))
        .collect::<Result<Vec<_>>>()?;
    let reference = EmpiricalMeasure::from_scalars(reference)?;
    curve_from_samples(times, &samples, &reference, r, resamples, seed, exec)
}

/// Uniform time grid `0, dt, ..., horizon` with `points` entries.
pub fn time_grid(horizon: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![0.0];
    }
    (0..points).map(|i| horizon * i as f64 / (points - 1) as f64).collect()
}

/// Shared parameter handle for building field states.
pub fn shared(params: ModelParams) -> Arc<ModelParams> {
    Arc::new(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{invariant_build, invariant_sample};
    use crate::stats::spearman;

    #[test]
    fn scalar_curve_flat_between_stationary_ensembles() {
        let d = invariant_build(2.0).unwrap();
        let n = 2000;
        let reference = invariant_sample(&d, n, RngStream::in_domain(3, domain::REFERENCE, 0));
        let times = time_grid(2.0, 21);
        // paths started from stationary draws: feed them as per-time samples
        let model = ScalarModel::new(2.0, 1e-3);
        let starts = invariant_sample(&d, n, RngStream::in_domain(3, domain::AUX, 1));
        let steps: Vec<u64> = times.iter().map(|&t| model.steps_for(t)).collect();
        let mut per_time: Vec<Vec<f64>> = vec![Vec::with_capacity(n); times.len()];
        for (i, &x) in starts.iter().enumerate() {
            per_time[0].push(x);
            let mut k = 1;
            model
                .run_path(x, 0, *steps.last().unwrap(), RngStream::in_domain(3, domain::TRAJECTORY, i as u64), |s, v| {
                    if k < steps.len() && steps[k] == s {
                        per_time[k].push(v);
                        k += 1;
                    }
                })
                .unwrap();
        }
        let samples: Vec<EmpiricalMeasure> = per_time.iter().map(|s| EmpiricalMeasure::from_scalars(s).unwrap()).collect();
        let c = curve_from_samples(&times, &samples, &EmpiricalMeasure::from_scalars(&reference).unwrap(), 2.0, 0, 1, Execution::Sequential).unwrap();
        let rho = spearman(&times, &c.raw);
        assert!(rho.abs() < 0.2, "trend {rho}");
        assert!(c.raw.iter().all(|&w| w < 0.1));
    }

    #[test]
    fn field_reference_ensemble() {
        let params = shared(ModelParams {
            p: 2.0,
            n_grid: 8,
            ..Default::default()
        });
        let x0 = FieldState::from_mode(params.clone(), 0, 1.0);
        let noise = NoiseSpec::new(vec![0.5, 0.3]);
        let st = stationary_field_ensemble(&x0, &noise, 20, 5, &StationaryOptions { chains: 4, ..Default::default() }, &EvolveOptions::default(), Execution::Sequential).unwrap();
        assert_eq!(st.samples.len(), 20);
        // heat probe: |e^{-lambda_1 t}| reaches 1e-2 at log(100)/lambda_1
        let lam = crate::model::mode_eigenvalue(&params, 0);
        assert!((st.floor_time - 100f64.ln() / lam).abs() < 0.05 * st.floor_time);
        // stationary mode-1 variance b^2 / (2 lambda)
        let e1 = crate::model::sine_mode(&params, 0);
        let w = params.cell_volume();
        let var: f64 = st
            .samples
            .samples
            .iter()
            .map(|s| (s.iter().zip(&e1).map(|(a, b)| a * b).sum::<f64>() * w).powi(2))
            .sum::<f64>()
            / 20.0;
        let expect = 0.25 / (2.0 * lam);
        assert!(var > 0.2 * expect && var < 3.0 * expect, "{var} vs {expect}");
    }
}
