//! Monte Carlo evaluation of the detector under slotted PMU transmission:
//! truth generation, measurement noise, the per-channel frame buffer with
//! stale-data semantics, and probability-of-detection curves for the
//! scheduled policy against a per-trial random transmission order.

use crate::detector::{
    chi2_threshold, glrt_statistic, DetectorError, GlrtStat, MeasurementSet, NoiseParams,
};
use crate::network::{BusId, IncidenceMatrix, PowerNetwork, SusceptanceVector};
use crate::schedule::{truncate_schedule, Schedule};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("frame length {frame_len} differs from the schedule's frame {schedule}")]
    FrameMismatch { frame_len: usize, schedule: usize },
    #[error("relative shift must exceed -1, got {0}")]
    BadShift(f64),
    #[error("alpha grid must be non-empty with entries in (0, 0.2], got {0:?}")]
    BadAlphaGrid(Vec<f64>),
    #[error("pmu limit {limit} outside 1..={slots}")]
    BadPmuLimit { limit: usize, slots: usize },
    #[error("{failed} of {trials} trials failed in the detector (limit is 1%)")]
    TooManyFailures { failed: usize, trials: usize },
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// Experiment configuration. All randomness derives from `seed`.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Frame length T in time units; must match the schedule.
    pub frame_len: usize,
    pub trials: usize,
    /// Relative susceptance change applied from the second time unit on;
    /// zero reproduces the null hypothesis.
    pub shift: f64,
    pub alpha_grid: Vec<f64>,
    pub seed: u64,
    pub noise: NoiseParams,
    /// Restrict transmissions to the first `m` scheduled PMUs.
    pub pmu_limit: Option<usize>,
}

impl SimConfig {
    /// `count` false-alarm rates evenly spaced over (0, 0.2].
    pub fn default_alpha_grid(count: usize) -> Vec<f64> {
        // i/count first so the last point is exactly 0.2
        (1..=count)
            .map(|i| 0.2 * (i as f64 / count as f64))
            .collect()
    }

    fn validate(&self, schedule: &Schedule) -> Result<(), SimError> {
        if self.trials == 0 {
            return Err(SimError::NoTrials);
        }
        if self.frame_len != schedule.frame_len() {
            return Err(SimError::FrameMismatch {
                frame_len: self.frame_len,
                schedule: schedule.frame_len(),
            });
        }
        if !self.shift.is_finite() || self.shift <= -1.0 {
            return Err(SimError::BadShift(self.shift));
        }
        if self.alpha_grid.is_empty()
            || self
                .alpha_grid
                .iter()
                .any(|&a| !(a > 0.0 && a <= 0.2))
        {
            return Err(SimError::BadAlphaGrid(self.alpha_grid.clone()));
        }
        if let Some(limit) = self.pmu_limit {
            if limit == 0 || limit > schedule.slot_count() {
                return Err(SimError::BadPmuLimit {
                    limit,
                    slots: schedule.slot_count(),
                });
            }
        }
        Ok(())
    }
}

/// Noiseless one-frame truth: angles drawn i.i.d. standard normal and the
/// DC flows they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthFrame {
    /// B x T bus angles.
    pub angles: DMatrix<f64>,
    /// K x T branch flows.
    pub flows: DMatrix<f64>,
}

/// Generates one frame of truth data. The susceptance change `shift`
/// applies from the second time unit on; the first column always uses the
/// nominal vector, so `shift = 0` reproduces the unchanged frame for the
/// same seed bit for bit.
pub fn generate_truth(
    s0: &SusceptanceVector,
    incidence: &IncidenceMatrix,
    frame_len: usize,
    shift: f64,
    seed: u64,
) -> TruthFrame {
    let b = incidence.bus_count();
    let k = incidence.branch_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut angles = DMatrix::zeros(b, frame_len);
    for t in 0..frame_len {
        for bus in 0..b {
            angles[(bus, t)] =
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        }
    }
    let diffs = incidence.as_matrix() * &angles;
    let mut flows = DMatrix::zeros(k, frame_len);
    for t in 0..frame_len {
        let factor = if t == 0 { 1.0 } else { 1.0 + shift };
        for branch in 0..k {
            flows[(branch, t)] = factor * s0.as_vector()[branch] * diffs[(branch, t)];
        }
    }
    TruthFrame { angles, flows }
}

/// Adds i.i.d. Gaussian noise at the configured variances; deterministic
/// in `seed`.
pub fn add_noise(truth: &TruthFrame, noise: &NoiseParams, seed: u64) -> MeasurementSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flow_std = noise.flow_var().sqrt();
    let angle_std = noise.angle_var().sqrt();
    let mut flows = truth.flows.clone();
    for t in 0..flows.ncols() {
        for k in 0..flows.nrows() {
            flows[(k, t)] +=
                flow_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        }
    }
    let mut angles = truth.angles.clone();
    for t in 0..angles.ncols() {
        for b in 0..angles.nrows() {
            angles[(b, t)] += angle_std
                * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        }
    }
    MeasurementSet::new(flows, angles).expect("noisy copies of finite truth are finite")
}

/// Measurement channels a PMU at `bus` refreshes: its own and its
/// neighbors' angle channels, and the flow channels of incident branches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSet {
    /// 1-based bus ids whose angle rows are observed.
    pub angle_buses: Vec<BusId>,
    /// 1-based branch indices whose flow rows are observed.
    pub flow_branches: Vec<usize>,
}

/// Channels observed by a PMU at `bus`: the bus voltage phasor plus the
/// incident line currents, from which the neighbor angles follow.
pub fn pmu_channels(net: &PowerNetwork, bus: BusId) -> ChannelSet {
    let mut angle_buses = net.neighbors(bus);
    angle_buses.push(bus);
    angle_buses.sort_unstable();
    ChannelSet {
        angle_buses,
        flow_branches: net.incident_branches(bus),
    }
}

/// Per-channel freshest samples with the slot that last refreshed each
/// channel (0 = still the previous-frame baseline).
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    meas: MeasurementSet,
    angle_stamp: Vec<usize>,
    flow_stamp: Vec<usize>,
}

impl FrameBuffer {
    /// Starts a frame with every channel carrying baseline samples.
    pub fn from_baseline(baseline: &MeasurementSet) -> Self {
        FrameBuffer {
            meas: baseline.clone(),
            angle_stamp: vec![0; baseline.angles().nrows()],
            flow_stamp: vec![0; baseline.flows().nrows()],
        }
    }

    /// Overwrites the given channels with current-frame samples and stamps
    /// them with `slot`. Re-refreshed channels keep the latest write.
    pub fn refresh(&mut self, channels: &ChannelSet, current: &MeasurementSet, slot: usize) {
        for &bus in &channels.angle_buses {
            let row = bus - 1;
            self.meas
                .angles_mut()
                .row_mut(row)
                .copy_from(&current.angles().row(row));
            self.angle_stamp[row] = self.angle_stamp[row].max(slot);
        }
        for &branch in &channels.flow_branches {
            let row = branch - 1;
            self.meas
                .flows_mut()
                .row_mut(row)
                .copy_from(&current.flows().row(row));
            self.flow_stamp[row] = self.flow_stamp[row].max(slot);
        }
    }

    pub fn measurements(&self) -> &MeasurementSet {
        &self.meas
    }

    /// Slot that last refreshed each angle channel (index = bus - 1).
    pub fn angle_stamps(&self) -> &[usize] {
        &self.angle_stamp
    }

    /// Slot that last refreshed each flow channel (index = branch - 1).
    pub fn flow_stamps(&self) -> &[usize] {
        &self.flow_stamp
    }
}

/// Statistic evaluation after one slot's transmission.
#[derive(Debug)]
pub struct SlotResult {
    /// 1-based slot number.
    pub slot: usize,
    /// Slot-end time within the frame.
    pub time: usize,
    pub outcome: Result<GlrtStat, DetectorError>,
}

/// Plays one frame under `order`: each slot refreshes the transmitting
/// PMU's channels from `current` and evaluates the GLRT on the buffer
/// snapshot. Detector failures are recorded per slot without aborting.
#[allow(clippy::too_many_arguments)]
fn run_frame_order(
    net: &PowerNetwork,
    incidence: &IncidenceMatrix,
    order: &[BusId],
    boundaries: &[usize],
    current: &MeasurementSet,
    baseline: &MeasurementSet,
    noise: &NoiseParams,
    s0: &SusceptanceVector,
) -> Vec<SlotResult> {
    let mut buffer = FrameBuffer::from_baseline(baseline);
    order
        .iter()
        .zip(boundaries)
        .enumerate()
        .map(|(i, (&bus, &time))| {
            let slot = i + 1;
            buffer.refresh(&pmu_channels(net, bus), current, slot);
            SlotResult {
                slot,
                time,
                outcome: glrt_statistic(buffer.measurements(), incidence, noise, s0),
            }
        })
        .collect()
}

/// One frame under the schedule's own transmission order.
pub fn run_frame(
    net: &PowerNetwork,
    schedule: &Schedule,
    current: &MeasurementSet,
    baseline: &MeasurementSet,
    noise: &NoiseParams,
    s0: &SusceptanceVector,
) -> Vec<SlotResult> {
    let incidence = net.incidence();
    run_frame_order(
        net,
        &incidence,
        schedule.order(),
        schedule.slot_boundaries(),
        current,
        baseline,
        noise,
        s0,
    )
}

/// Detection-probability curves per slot, averaged over trials and then
/// over the false-alarm grid, for the scheduled order and the per-trial
/// random order.
#[derive(Debug, Clone, PartialEq)]
pub struct PdCurve {
    /// Slot-end times.
    pub times: Vec<usize>,
    pub pd_scheduled: Vec<f64>,
    pub pd_random: Vec<f64>,
    pub trials: usize,
    pub alpha_grid: Vec<f64>,
    /// Trials with at least one failed slot evaluation in either policy.
    pub failed_trials: usize,
}

// stream labels for per-trial seed derivation
const STREAM_TRUTH: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_PERMUTATION: u64 = 2;

/// Stable per-trial, per-purpose seed derivation (splitmix64 over the
/// combined label).
fn derive_seed(root: u64, trial: u64, purpose: u64) -> u64 {
    let mut z = root
        .wrapping_add(trial.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(purpose.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone)]
struct TrialCounts {
    /// detections[policy][slot][alpha]
    detections: [Vec<Vec<u64>>; 2],
    /// successful evaluations[policy][slot]
    successes: [Vec<u64>; 2],
    failed_trials: u64,
}

impl TrialCounts {
    fn zero(slots: usize, alphas: usize) -> Self {
        TrialCounts {
            detections: [
                vec![vec![0; alphas]; slots],
                vec![vec![0; alphas]; slots],
            ],
            successes: [vec![0; slots], vec![0; slots]],
            failed_trials: 0,
        }
    }

    fn merge(mut self, other: TrialCounts) -> Self {
        for p in 0..2 {
            for s in 0..self.successes[p].len() {
                self.successes[p][s] += other.successes[p][s];
                for a in 0..self.detections[p][s].len() {
                    self.detections[p][s][a] += other.detections[p][s][a];
                }
            }
        }
        self.failed_trials += other.failed_trials;
        self
    }
}

/// Runs the full paired experiment: per trial, one shared truth-and-noise
/// realization feeds both the scheduled order and a fresh uniform random
/// order, and detections are counted per slot against each alpha's
/// threshold. Deterministic in the root seed regardless of worker count.
pub fn monte_carlo_pd(
    cfg: &SimConfig,
    net: &PowerNetwork,
    schedule: &Schedule,
) -> Result<PdCurve, SimError> {
    cfg.validate(schedule)?;
    let effective = match cfg.pmu_limit {
        Some(limit) if limit < schedule.slot_count() => truncate_schedule(schedule, limit),
        _ => schedule.clone(),
    };
    let slots = effective.slot_count();
    let alphas = cfg.alpha_grid.len();
    let incidence = net.incidence();
    let s0 = net.nominal_susceptance();
    let thresholds: Vec<f64> = cfg
        .alpha_grid
        .iter()
        .map(|&a| chi2_threshold(s0.len(), a))
        .collect::<Result<_, _>>()?;

    let totals = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut counts = TrialCounts::zero(slots, alphas);
            let truth_seed = derive_seed(cfg.seed, trial, STREAM_TRUTH);
            let noise_seed = derive_seed(cfg.seed, trial, STREAM_NOISE);

            // same seed lineage: the baseline is the unchanged frame, so it
            // agrees with the current frame wherever the change is absent
            let baseline_truth =
                generate_truth(&s0, &incidence, cfg.frame_len, 0.0, truth_seed);
            let current_truth =
                generate_truth(&s0, &incidence, cfg.frame_len, cfg.shift, truth_seed);
            let baseline = add_noise(&baseline_truth, &cfg.noise, noise_seed);
            let current = add_noise(&current_truth, &cfg.noise, noise_seed);

            let mut random_order = effective.order().to_vec();
            let mut perm_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                trial,
                STREAM_PERMUTATION,
            ));
            random_order.shuffle(&mut perm_rng);

            let mut any_failed = false;
            for (policy, order) in [effective.order(), random_order.as_slice()]
                .into_iter()
                .enumerate()
            {
                let results = run_frame_order(
                    net,
                    &incidence,
                    order,
                    effective.slot_boundaries(),
                    &current,
                    &baseline,
                    &cfg.noise,
                    &s0,
                );
                for res in results {
                    match res.outcome {
                        Ok(stat) => {
                            counts.successes[policy][res.slot - 1] += 1;
                            for (a, &rho) in thresholds.iter().enumerate() {
                                if stat.statistic > rho {
                                    counts.detections[policy][res.slot - 1][a] += 1;
                                }
                            }
                        }
                        Err(_) => any_failed = true,
                    }
                }
            }
            if any_failed {
                counts.failed_trials = 1;
            }
            counts
        })
        .reduce(|| TrialCounts::zero(slots, alphas), TrialCounts::merge);

    let failed = totals.failed_trials as usize;
    if failed * 100 > cfg.trials {
        return Err(SimError::TooManyFailures {
            failed,
            trials: cfg.trials,
        });
    }

    let pd = |policy: usize| -> Vec<f64> {
        (0..slots)
            .map(|s| {
                let succ = totals.successes[policy][s];
                if succ == 0 {
                    return 0.0;
                }
                let mean_over_alpha: f64 = totals.detections[policy][s]
                    .iter()
                    .map(|&d| d as f64 / succ as f64)
                    .sum::<f64>()
                    / alphas as f64;
                mean_over_alpha
            })
            .collect()
    };

    Ok(PdCurve {
        times: effective.slot_boundaries().to_vec(),
        pd_scheduled: pd(0),
        pd_random: pd(1),
        trials: cfg.trials,
        alpha_grid: cfg.alpha_grid.clone(),
        failed_trials: failed,
    })
}
