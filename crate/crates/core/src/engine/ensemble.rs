use rayon::prelude::*;

use super::noise::NoiseStream;
use super::simulate::{bounded, Gain, Initial, Stepper};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{HatCoordinates, SystemSpec};
use crate::schedules::SchedulePair;

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub replicas: usize,
    pub steps: u64,
    /// Steps at which hat coordinates are recorded; entries above `steps` are dropped.
    pub checkpoints: Vec<u64>,
    pub base_seed: u64,
    pub init: Option<Initial>,
    pub gain: Option<Gain>,
}

impl EnsembleOptions {
    pub fn new(replicas: usize, steps: u64, checkpoints: Vec<u64>, base_seed: u64) -> Self {
        Self { replicas, steps, checkpoints, base_seed, init: None, gain: None }
    }

    pub fn with_init(mut self, init: Initial) -> Self {
        self.init = Some(init);
        self
    }

    pub fn with_gain(mut self, gain: Gain) -> Self {
        self.gain = Some(gain);
        self
    }
}

/// Hat coordinates of every replica at one step; row `i` is replica `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleCheckpoint {
    pub k: u64,
    pub beta: f64,
    /// Step size used for the fast block (equal to `beta` for a joint gain).
    pub gamma: f64,
    pub theta_hat: Matrix,
    pub r_hat: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub checkpoints: Vec<EnsembleCheckpoint>,
}

impl EnsembleResult {
    pub fn at(&self, k: u64) -> Option<&EnsembleCheckpoint> {
        self.checkpoints.iter().find(|c| c.k == k)
    }

    pub fn last(&self) -> Option<&EnsembleCheckpoint> {
        self.checkpoints.last()
    }
}

/// Replicas advanced together so their dependency chains overlap.
const LANES: usize = 4;
/// Steps between divergence checks; a failed check replays the block step by step.
const CHECK_EVERY: usize = 32;

/// Per-lane outcome: `Err(k)` is the first step index at which the state left
/// the bounded region.
type LaneResult = std::result::Result<(), u64>;

/// Advances each state over consecutive steps starting at `from`. Lane `l`
/// uses `noises[l]`; lanes never interact, so the result for a replica does
/// not depend on how replicas are grouped.
fn advance(
    stepper: &Stepper,
    noises: &[NoiseStream],
    states: &mut [Vec<f64>],
    status: &mut [LaneResult],
    from: u64,
    betas: &[f64],
    gammas: &[f64],
) {
    macro_rules! dispatch {
        ($($d:literal)*) => {
            match (stepper.dim, states.len()) {
                $(($d, LANES) => return advance_fixed::<$d, LANES>(stepper, noises, states, status, from, betas, gammas),)*
                $(($d, 1) => return advance_fixed::<$d, 1>(stepper, noises, states, status, from, betas, gammas),)*
                _ => {}
            }
        };
    }
    dispatch!(1 2 3 4);
    for (l, z) in states.iter_mut().enumerate() {
        if status[l].is_err() {
            continue;
        }
        let mut u = vec![0.0; z.len()];
        for (off, (&b, &g)) in betas.iter().zip(gammas).enumerate() {
            let k = from + off as u64;
            noises[l].draw(k, &mut u);
            stepper.step(z, &u, b, g);
            if !bounded(z) {
                status[l] = Err(k + 1);
                break;
            }
        }
    }
}

fn advance_fixed<const D: usize, const L: usize>(
    stepper: &Stepper,
    noises: &[NoiseStream],
    states: &mut [Vec<f64>],
    status: &mut [LaneResult],
    from: u64,
    betas: &[f64],
    gammas: &[f64],
) {
    let stepper = stepper.fixed::<D>();
    let noises: [_; L] = std::array::from_fn(|l| noises[l].fixed::<D>());
    let mut s = [[0.0f64; D]; L];
    for (lane, z) in s.iter_mut().zip(states.iter()) {
        lane.copy_from_slice(z);
    }
    let mut u = [[0.0f64; D]; L];
    let mut start = 0;
    while start < betas.len() {
        let end = (start + CHECK_EVERY).min(betas.len());
        let saved = s;
        for i in start..end {
            let k = from + i as u64;
            let sizes = stepper.sizes(betas[i], gammas[i]);
            for l in 0..L {
                noises[l].draw(k, &mut u[l]);
                stepper.step(&mut s[l], &u[l], &sizes);
            }
        }
        for l in 0..L {
            if status[l].is_ok() && !bounded(&s[l]) {
                // replay this lane to find the exact step
                let mut z = saved[l];
                let mut ul = [0.0f64; D];
                for i in start..end {
                    let k = from + i as u64;
                    noises[l].draw(k, &mut ul);
                    stepper.step(&mut z, &ul, &stepper.sizes(betas[i], gammas[i]));
                    if !bounded(&z) {
                        status[l] = Err(k + 1);
                        break;
                    }
                }
            }
            if status[l].is_err() {
                // park dead lanes at the origin so they stay finite
                s[l] = [0.0; D];
            }
        }
        start = end;
    }
    for (lane, z) in s.iter().zip(states.iter_mut()) {
        z.copy_from_slice(lane);
    }
}

/// Independent replicas from the origin without gain.
pub fn run_ensemble(
    spec: &SystemSpec,
    pair: &SchedulePair,
    replicas: usize,
    steps: u64,
    checkpoints: &[u64],
    base_seed: u64,
) -> Result<EnsembleResult> {
    run_ensemble_with(spec, pair, &EnsembleOptions::new(replicas, steps, checkpoints.to_vec(), base_seed))
}

/// Runs the replicas on the current rayon pool. Replica `i` draws from stream
/// `(base_seed, i)`, so results do not depend on the number of threads.
pub fn run_ensemble_with(spec: &SystemSpec, pair: &SchedulePair, opts: &EnsembleOptions) -> Result<EnsembleResult> {
    if opts.replicas == 0 {
        return Err(Error::InvalidArgument("at least one replica is required".into()));
    }
    let init = opts.init.clone().unwrap_or_else(|| Initial::origin(spec));
    init.check(spec)?;
    let stepper = Stepper::new(spec, opts.gain.as_ref())?;
    let hats = HatCoordinates::new(spec)?;
    let noise = NoiseStream::new(spec, opts.base_seed, 0)?;
    let mut wanted: Vec<u64> = opts.checkpoints.iter().copied().filter(|&k| k <= opts.steps).collect();
    wanted.sort_unstable();
    wanted.dedup();
    let (n, dim) = (spec.n(), spec.dim());
    let table = pair.table(opts.steps);
    let gammas = if stepper.single_scale { &table.beta } else { &table.gamma };
    let z0 = init.flat();

    // each task runs a group of consecutive replicas and returns their samples
    let run_group = |first: usize| -> Vec<std::result::Result<Vec<f64>, u64>> {
        let count = LANES.min(opts.replicas - first);
        let noises: Vec<NoiseStream> = (first..first + count).map(|r| noise.for_replica(r as u64)).collect();
        let mut states = vec![z0.clone(); count];
        let mut status: Vec<LaneResult> = vec![Ok(()); count];
        let mut out = vec![vec![0.0; wanted.len() * dim]; count];
        let mut k = 0u64;
        for (c, &target) in wanted.iter().enumerate() {
            let (lo, hi) = (k as usize, target as usize);
            if count == LANES {
                advance(&stepper, &noises, &mut states, &mut status, k, &table.beta[lo..hi], &gammas[lo..hi]);
            } else {
                for l in 0..count {
                    advance(
                        &stepper,
                        &noises[l..l + 1],
                        &mut states[l..l + 1],
                        &mut status[l..l + 1],
                        k,
                        &table.beta[lo..hi],
                        &gammas[lo..hi],
                    );
                }
            }
            k = target;
            for l in 0..count {
                hats.apply_flat(n, &states[l], &mut out[l][c * dim..(c + 1) * dim]);
            }
        }
        out.into_iter().zip(status).map(|(o, s)| s.map(|_| o)).collect()
    };

    let groups: Vec<usize> = (0..opts.replicas).step_by(LANES).collect();
    let runs: Vec<Vec<std::result::Result<Vec<f64>, u64>>> = groups.into_par_iter().map(run_group).collect();
    let mut samples = Vec::with_capacity(opts.replicas);
    for (replica, run) in runs.into_iter().flatten().enumerate() {
        match run {
            Ok(v) => samples.push(v),
            Err(k) => return Err(Error::ReplicaDiverged { replica: replica as u64, k }),
        }
    }

    let checkpoints = wanted
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            let i = k as usize;
            let theta_hat = Matrix::from_fn(opts.replicas, n, |row, col| samples[row][c * dim + col]);
            let r_hat = Matrix::from_fn(opts.replicas, dim - n, |row, col| samples[row][c * dim + n + col]);
            EnsembleCheckpoint { k, beta: table.beta[i], gamma: gammas[i], theta_hat, r_hat }
        })
        .collect();
    Ok(EnsembleResult { checkpoints })
}
