//! Optimization machinery: golden-section line search, gradient ascent for
//! continuous technique parameters, and simulated annealing over viewpoints.
//!
//! Everything here is generic over the energy function, which the render
//! layer supplies as a closure; the optimizers never touch meshes or grids
//! directly. That keeps them cheap to test against closed-form functions.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::math::GOLDEN_RATIO;

/// Smallest admissible seed-strength: ascent proposals below it are clamped
/// rather than letting the seed velocity reverse direction.
pub const ALPHA_FLOOR: f64 = 1e-4;

/// Bracket and stopping width for the one-dimensional line search.
#[derive(Debug, Clone, Copy)]
pub struct LineSearch {
    pub lo: f64,
    pub hi: f64,
    /// Stop once the bracket is narrower than this.
    pub stop: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch { lo: 0.0, hi: 0.25, stop: 0.01 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GoldenResult {
    pub x: f64,
    pub value: f64,
    pub evals: usize,
}

/// Golden-section search for the maximum of a unimodal function.
///
/// Interior probes are reused across iterations, so narrowing [lo, hi] from
/// 0.25 to 0.01 costs 2 + ⌈log_Φ 25⌉ = 9 evaluations. A bracket already
/// narrower than `stop` is answered with its midpoint.
pub fn golden_section_max(mut f: impl FnMut(f64) -> f64, line: &LineSearch) -> GoldenResult {
    let (mut x1, mut x4) = (line.lo, line.hi);
    if x4 - x1 <= line.stop {
        let mid = 0.5 * (x1 + x4);
        return GoldenResult { x: mid, value: f(mid), evals: 1 };
    }
    let mut x2 = x4 - (x4 - x1) / GOLDEN_RATIO;
    let mut x3 = x1 + (x4 - x1) / GOLDEN_RATIO;
    let mut f2 = f(x2);
    let mut f3 = f(x3);
    let mut evals = 2;
    while x4 - x1 > line.stop {
        if f2 >= f3 {
            x4 = x3;
            x3 = x2;
            f3 = f2;
            x2 = x4 - (x4 - x1) / GOLDEN_RATIO;
            f2 = f(x2);
        } else {
            x1 = x2;
            x2 = x3;
            f2 = f3;
            x3 = x1 + (x4 - x1) / GOLDEN_RATIO;
            f3 = f(x3);
        }
        evals += 1;
    }
    if f2 >= f3 {
        GoldenResult { x: x2, value: f2, evals }
    } else {
        GoldenResult { x: x3, value: f3, evals }
    }
}

/// How ascent obtains a gradient.
pub enum Gradient<'a> {
    /// One-sided differences, reusing the already-known energy at the base
    /// point: one extra evaluation per coordinate.
    ForwardDiff { epsilon: f64 },
    /// Two-sided differences: two evaluations per coordinate.
    CentralDiff { epsilon: f64 },
    /// Caller-supplied gradient (e.g. assembled from per-pixel trajectory
    /// sensitivities). Receives the point and its energy.
    Supplied(&'a mut dyn FnMut(&[f64], f64) -> Result<Vec<f64>>),
}

/// Gradient source selector for interfaces that cannot carry a closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct AscentConfig {
    pub line: LineSearch,
    /// Safety valve; ascent normally halts on its own when a line search
    /// fails to improve the energy.
    pub max_iters: usize,
    /// Step for finite-difference gradients.
    pub fd_epsilon: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig { line: LineSearch::default(), max_iters: 30, fd_epsilon: 0.025 }
    }
}

/// One ascent iteration: the point it started from and what the line search
/// found along the normalized gradient.
#[derive(Debug, Clone, Serialize)]
pub struct AscentStep {
    pub params: Vec<f64>,
    pub energy: f64,
    pub gradient: Vec<f64>,
    pub step_len: f64,
    pub line_energy: f64,
    pub committed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AscentOutcome {
    pub params: Vec<f64>,
    pub energy: f64,
    pub steps: Vec<AscentStep>,
}

/// Gradient ascent with a golden-section line search along the normalized
/// gradient. Halts when the line search cannot improve on the current
/// energy (the failed step is recorded with `committed: false`), when the
/// gradient vanishes, or after `max_iters` iterations.
pub fn ascend(
    x0: Vec<f64>,
    energy: &mut dyn FnMut(&[f64]) -> Result<f64>,
    mut gradient: Gradient<'_>,
    project: &dyn Fn(&mut [f64]),
    cfg: &AscentConfig,
) -> Result<AscentOutcome> {
    let mut x = x0;
    project(&mut x);
    let mut e = energy(&x)?;
    let mut steps = Vec::new();

    for _ in 0..cfg.max_iters {
        let g = match &mut gradient {
            Gradient::ForwardDiff { epsilon } => {
                let mut g = vec![0.0; x.len()];
                for (i, gi) in g.iter_mut().enumerate() {
                    let mut y = x.clone();
                    y[i] += *epsilon;
                    *gi = (energy(&y)? - e) / *epsilon;
                }
                g
            }
            Gradient::CentralDiff { epsilon } => {
                let mut g = vec![0.0; x.len()];
                for (i, gi) in g.iter_mut().enumerate() {
                    let mut hi = x.clone();
                    let mut lo = x.clone();
                    hi[i] += *epsilon;
                    lo[i] -= *epsilon;
                    *gi = (energy(&hi)? - energy(&lo)?) / (2.0 * *epsilon);
                }
                g
            }
            Gradient::Supplied(f) => f(&x, e)?,
        };

        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            break;
        }
        let dir: Vec<f64> = g.iter().map(|v| v / norm).collect();
        let candidate = |s: f64| {
            let mut y: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + s * di).collect();
            project(&mut y);
            y
        };

        let mut probe_err = None;
        let gold = golden_section_max(
            |s| match energy(&candidate(s)) {
                Ok(v) => v,
                Err(err) => {
                    probe_err.get_or_insert(err);
                    f64::NEG_INFINITY
                }
            },
            &cfg.line,
        );
        if let Some(err) = probe_err {
            return Err(err);
        }

        let committed = gold.value >= e;
        steps.push(AscentStep {
            params: x.clone(),
            energy: e,
            gradient: g,
            step_len: gold.x,
            line_energy: gold.value,
            committed,
        });
        if !committed {
            break;
        }
        x = candidate(gold.x);
        e = gold.value;
    }

    Ok(AscentOutcome { params: x, energy: e, steps })
}

/// Ascent over the seed strength, clamped to stay positive.
pub fn optimize_alpha(
    alpha0: f64,
    energy: &mut dyn FnMut(f64) -> Result<f64>,
    gradient: Gradient<'_>,
    cfg: &AscentConfig,
) -> Result<AscentOutcome> {
    let mut vec_energy = |x: &[f64]| energy(x[0]);
    ascend(
        vec![alpha0],
        &mut vec_energy,
        gradient,
        &|x: &mut [f64]| x[0] = x[0].max(ALPHA_FLOOR),
        cfg,
    )
}

/// Ascent over the five mirror shape coefficients with forward-difference
/// gradients.
pub fn optimize_mirror(
    omega0: [f64; 5],
    energy: &mut dyn FnMut(&[f64; 5]) -> Result<f64>,
    cfg: &AscentConfig,
) -> Result<AscentOutcome> {
    let mut vec_energy = |x: &[f64]| {
        let w: [f64; 5] = x.try_into().expect("five mirror coefficients");
        energy(&w)
    };
    ascend(
        omega0.to_vec(),
        &mut vec_energy,
        Gradient::ForwardDiff { epsilon: cfg.fd_epsilon },
        &|_: &mut [f64]| {},
        cfg,
    )
}

/// Fold a proposed viewpoint back into θ ∈ [0, π], φ ∈ [0, 2π): θ reflects
/// off the poles (which flips φ by π), φ wraps.
pub fn wrap_viewpoint(theta: f64, phi: f64) -> (f64, f64) {
    let (mut th, mut ph) = (theta, phi);
    if th < 0.0 {
        th = -th;
        ph += PI;
    } else if th > PI {
        th = 2.0 * PI - th;
        ph += PI;
    }
    (th, ph.rem_euclid(2.0 * PI))
}

#[derive(Debug, Clone)]
pub struct AnnealConfig {
    pub steps: usize,
    pub t0: f64,
    pub cooling: f64,
    /// Half-width of the uniform proposal in each angle, radians.
    pub proposal_radius: f64,
    /// Multiplies the energy difference in the acceptance exponent.
    pub accept_scale: f64,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            steps: 100,
            t0: 1.0,
            cooling: 0.95,
            proposal_radius: PI / 3.0,
            accept_scale: 10.0,
            seed: 0,
        }
    }
}

/// Metropolis acceptance probability for moving from `e_old` to `e_new` at
/// temperature `t`; 1 for any uphill move.
pub fn acceptance_probability(e_old: f64, e_new: f64, t: f64, scale: f64) -> f64 {
    (scale * (e_new - e_old) / t).exp().min(1.0)
}

/// One annealing proposal as logged: the candidate itself, not the state
/// the walk ended up in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnealSample {
    pub step: usize,
    pub theta: f64,
    pub phi: f64,
    pub energy: f64,
    pub accepted: bool,
    pub temperature: f64,
}

#[derive(Debug)]
pub struct AnnealOutcome<P> {
    pub theta: f64,
    pub phi: f64,
    pub energy: f64,
    /// Payload returned by the energy function at the best-ever candidate.
    pub payload: P,
    pub samples: Vec<AnnealSample>,
}

/// Simulated annealing over the viewpoint sphere.
///
/// The energy function may carry a payload (e.g. a per-candidate
/// re-optimized seed strength); the payload of the best-ever candidate is
/// returned. Proposals are uniform in a ±`proposal_radius` box around the
/// current angles, folded back onto the sphere. Draws come from a
/// seed-determined stream, so equal seeds replay the identical walk.
pub fn anneal_with<P>(
    theta0: f64,
    phi0: f64,
    mut energy_fn: impl FnMut(f64, f64) -> Result<(f64, P)>,
    cfg: &AnnealConfig,
) -> Result<AnnealOutcome<P>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut th, mut ph) = wrap_viewpoint(theta0, phi0);
    let (mut e, p) = energy_fn(th, ph)?;
    let mut best = AnnealOutcome { theta: th, phi: ph, energy: e, payload: p, samples: Vec::new() };

    let mut t = cfg.t0;
    for step in 0..cfg.steps {
        let r = cfg.proposal_radius;
        let dth = rng.gen_range(-r..=r);
        let dph = rng.gen_range(-r..=r);
        let (th2, ph2) = wrap_viewpoint(th + dth, ph + dph);
        let (e2, p2) = energy_fn(th2, ph2)?;

        let accepted =
            e2 >= e || rng.gen::<f64>() < acceptance_probability(e, e2, t, cfg.accept_scale);
        if accepted {
            th = th2;
            ph = ph2;
            e = e2;
        }
        if e2 > best.energy {
            best.theta = th2;
            best.phi = ph2;
            best.energy = e2;
            best.payload = p2;
        }
        best.samples.push(AnnealSample {
            step,
            theta: th2,
            phi: ph2,
            energy: e2,
            accepted,
            temperature: t,
        });
        t *= cfg.cooling;
    }
    Ok(best)
}

/// Annealing without a payload.
pub fn anneal(
    theta0: f64,
    phi0: f64,
    mut energy_fn: impl FnMut(f64, f64) -> Result<f64>,
    cfg: &AnnealConfig,
) -> Result<AnnealOutcome<()>> {
    anneal_with(theta0, phi0, |th, ph| energy_fn(th, ph).map(|e| (e, ())), cfg)
}
