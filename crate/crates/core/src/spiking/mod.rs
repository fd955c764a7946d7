//! Non-leaky integrate-and-fire neurons with exponential synaptic kernels and
//! time-to-first-spike coding.
//!
//! A neuron receiving input spikes at times `t_j` with weights `w_j` has the
//! membrane potential
//!
//! ```text
//! u(t) = Σ_{t_j ≤ t} w_j (1 − exp(−(t − t_j) / τ))
//! ```
//!
//! and fires once, at the first time `u(t)` reaches the threshold. Within the
//! interval between two consecutive inputs the crossing time has a closed
//! form, so the first spike is found by scanning prefixes of the sorted
//! inputs.

mod population;
mod srgcn;

use std::io::Write;
use std::path::Path;

pub use population::{PopulationCache, SpikePopulations};
pub use srgcn::{CausalStats, SrgcnCache, SrgcnLayer, SRGCN_INIT_MEAN, SRGCN_INIT_STD};

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_THRESHOLD: f64 = 1.0;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct NlifConfig {
    /// Synaptic time constant.
    pub tau: f64,
    pub threshold: f64,
    /// Number of fixed input neurons per population.
    pub inputs: usize,
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for NlifConfig {
    fn default() -> Self {
        NlifConfig {
            tau: DEFAULT_TAU,
            threshold: DEFAULT_THRESHOLD,
            inputs: 16,
            t_min: -1.0,
            t_max: 1.0,
        }
    }
}

impl NlifConfig {
    pub fn with_inputs(inputs: usize) -> Self {
        NlifConfig {
            inputs,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.threshold > 0.0) {
            return Err(Error::Config("tau and threshold must be positive".into()));
        }
        if self.inputs == 0 || !(self.t_max >= self.t_min) {
            return Err(Error::Config(
                "need at least one input over a valid interval".into(),
            ));
        }
        Ok(())
    }

    /// Evenly spaced over `[t_min, t_max]`; a single input sits at the midpoint.
    pub fn input_times(&self) -> Vec<f64> {
        if self.inputs == 1 {
            return vec![0.5 * (self.t_min + self.t_max)];
        }
        let step = (self.t_max - self.t_min) / (self.inputs - 1) as f64;
        (0..self.inputs)
            .map(|k| self.t_min + k as f64 * step)
            .collect()
    }

    /// Value reported for a neuron that never fires, given its latest input.
    pub fn no_spike_time(&self, latest_input: f64) -> f64 {
        latest_input + 3.0 * self.tau
    }
}

/// First spike of one neuron.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Spike {
    pub time: f64,
    /// Length of the causal prefix of the time-sorted inputs. Equals the
    /// number of inputs when the neuron does not fire.
    pub causal: usize,
    pub fired: bool,
}

/// First threshold crossing for inputs sorted by time.
pub fn nlif_spike_time(weights: &[f64], times: &[f64], tau: f64, threshold: f64) -> Spike {
    nlif_spike_time_by(times.len(), |k| (weights[k], times[k]), tau, threshold)
}

/// As [`nlif_spike_time`], with the `k`-th (weight, time) pair produced by
/// `event`.
#[inline]
pub(crate) fn nlif_spike_time_by(
    n: usize,
    mut event: impl FnMut(usize) -> (f64, f64),
    tau: f64,
    threshold: f64,
) -> Spike {
    if n == 0 {
        return Spike {
            time: f64::INFINITY,
            causal: 0,
            fired: false,
        };
    }
    let t0 = event(0).1;
    let mut drive = 0.0;
    // Σ w_j exp((t_j − t0) / τ), shifted for range.
    let mut weighted = 0.0;
    let mut last = t0;
    for k in 0..n {
        let (w, t) = event(k);
        drive += w;
        weighted += w * ((t - t0) / tau).exp();
        last = t;
        if drive > threshold && weighted > 0.0 {
            let crossing = t0 + tau * (weighted / (drive - threshold)).ln();
            let before_next = k + 1 == n || crossing < event(k + 1).1;
            if crossing >= t && before_next {
                return Spike {
                    time: crossing,
                    causal: k + 1,
                    fired: true,
                };
            }
        }
    }
    Spike {
        time: last + 3.0 * tau,
        causal: n,
        fired: false,
    }
}

/// Partial derivatives of a fired spike time with respect to the weights and
/// times of its causal inputs, written into `d_weights[..causal]` and
/// `d_times[..causal]`. Entries past the causal prefix are set to zero. A
/// neuron that did not fire has zero gradients.
pub fn nlif_spike_grad(
    weights: &[f64],
    times: &[f64],
    spike: &Spike,
    tau: f64,
    threshold: f64,
    d_weights: &mut [f64],
    d_times: &mut [f64],
) {
    d_weights.iter_mut().for_each(|x| *x = 0.0);
    d_times.iter_mut().for_each(|x| *x = 0.0);
    if !spike.fired {
        return;
    }
    nlif_spike_grad_by(
        spike,
        |k| (weights[k], times[k]),
        tau,
        threshold,
        |k, dw, dt| {
            d_weights[k] = dw;
            d_times[k] = dt;
        },
    );
}

/// Calls `sink(k, ∂t/∂w_k, ∂t/∂t_k)` for every causal input `k`.
#[inline]
pub(crate) fn nlif_spike_grad_by(
    spike: &Spike,
    mut event: impl FnMut(usize) -> (f64, f64),
    tau: f64,
    threshold: f64,
    mut sink: impl FnMut(usize, f64, f64),
) {
    if !spike.fired || spike.causal == 0 {
        return;
    }
    let t0 = event(0).1;
    let mut drive = 0.0;
    let mut weighted = 0.0;
    for k in 0..spike.causal {
        let (w, t) = event(k);
        drive += w;
        weighted += w * ((t - t0) / tau).exp();
    }
    let inv_excess = 1.0 / (drive - threshold);
    for k in 0..spike.causal {
        let (w, t) = event(k);
        let e = ((t - t0) / tau).exp() / weighted;
        sink(k, tau * (e - inv_excess), w * e);
    }
}

/// `‖t_s − t_o − Δ_p‖₁`
pub fn spike_decoder(ts: &[f64], delta: &[f64], to: &[f64]) -> Result<f64> {
    if ts.len() != delta.len() || ts.len() != to.len() {
        return Err(Error::Shape("spike vectors differ in length".into()));
    }
    Ok(crate::shallow::Decoder::SpikeL1.distance(ts, delta, to))
}

/// `δ · Σ_neurons max(0, threshold − Σ_j w_j)` over the rows of `weights`
/// (`neurons x inputs`, row-major). Adds `∂penalty/∂w` into `grad` when
/// given.
pub fn nonspike_penalty(
    weights: &[f64],
    inputs: usize,
    threshold: f64,
    delta: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    assert!(delta >= 0.0, "penalty weight must be non-negative");
    let mut total = 0.0;
    for (n, row) in weights.chunks(inputs).enumerate() {
        let gap = threshold - row.iter().sum::<f64>();
        if gap > 0.0 {
            total += delta * gap;
            if let Some(g) = grad.as_deref_mut() {
                g[n * inputs..(n + 1) * inputs]
                    .iter_mut()
                    .for_each(|x| *x -= delta);
            }
        }
    }
    total
}

/// Writes `entity<TAB>neuron<TAB>time<TAB>fired` rows for a raster plot.
pub fn write_raster(
    path: &Path,
    rows: impl IntoIterator<Item = (String, Vec<Spike>)>,
) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "entity\tneuron\ttime\tfired")?;
    for (name, spikes) in rows {
        for (i, s) in spikes.iter().enumerate() {
            writeln!(w, "{name}\t{i}\t{}\t{}", s.time, s.fired)?;
        }
    }
    w.flush()?;
    Ok(())
}
