//! Behavioral matching: a genetic algorithm over the four Peltier parameters
//! minimising the combined output and control-action mismatch between a
//! recorded run and the twin re-running the same closed loop.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::PeltierParams;
use crate::runlog::{DataError, RunLog};
use crate::sim::{rerun_closed_loop, TwinModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid matching config: {0}")]
    Config(String),
}

/// Closed search interval per parameter, `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamBounds {
    pub alpha: [f64; 2],
    pub r: [f64; 2],
    pub k: [f64; 2],
    pub c: [f64; 2],
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            alpha: [0.010, 0.200],
            r: [1.8, 6.0],
            k: [0.2, 0.833],
            c: [15.0, 30.0],
        }
    }
}

impl ParamBounds {
    fn intervals(&self) -> [[f64; 2]; 4] {
        [self.alpha, self.r, self.k, self.c]
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        for (name, [lo, hi]) in ["alpha", "r", "k", "c"].into_iter().zip(self.intervals()) {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                return Err(MatchError::Config(format!(
                    "bounds for {name} must satisfy 0 < lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &PeltierParams) -> bool {
        p.as_array()
            .iter()
            .zip(self.intervals())
            .all(|(v, [lo, hi])| (lo..=hi).contains(v))
    }

    fn sample_gene<R: Rng>(&self, gene: usize, rng: &mut R) -> f64 {
        let [lo, hi] = self.intervals()[gene];
        rng.random_range(lo..=hi)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> PeltierParams {
        PeltierParams::from_array(std::array::from_fn(|g| self.sample_gene(g, rng)))
    }
}

/// Weights of the output and control-action terms of the cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub w_y: f64,
    pub w_u: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { w_y: 1.0, w_u: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub generations: usize,
    /// Survivors kept per generation; also the initial pool size.
    pub parent_pool: usize,
    pub mutation_probability: f64,
    /// Genes resampled by one mutation.
    pub features_per_mutation: usize,
    pub offspring_per_generation: usize,
    pub elitism: usize,
    pub seed: u64,
    /// Stop once the best cost is at or below this value. 0 disables.
    pub early_stop_tolerance: f64,
    pub weights: CostWeights,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            generations: 100,
            parent_pool: 3,
            mutation_probability: 0.9,
            features_per_mutation: 2,
            offspring_per_generation: 6,
            elitism: 1,
            seed: 0,
            early_stop_tolerance: 0.0,
            weights: CostWeights::default(),
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        let fail = |m: &str| Err(MatchError::Config(m.to_string()));
        if self.parent_pool < 2 {
            return fail("parent_pool must be at least 2");
        }
        if self.features_per_mutation > 4 {
            return fail("features_per_mutation must be at most 4");
        }
        if !(0.0..=1.0).contains(&self.mutation_probability) {
            return fail("mutation_probability must lie in [0, 1]");
        }
        if self.elitism < 1 || self.elitism > self.parent_pool {
            return fail("elitism must lie in [1, parent_pool]");
        }
        if self.offspring_per_generation == 0 {
            return fail("offspring_per_generation must be positive");
        }
        if !(self.early_stop_tolerance >= 0.0) {
            return fail("early_stop_tolerance must be >= 0");
        }
        if !(self.weights.w_y >= 0.0 && self.weights.w_u >= 0.0) {
            return fail("cost weights must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: PeltierParams,
    pub best_cost: f64,
    /// Best cost after the initial pool, then after each generation.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Candidates scored in one generation (generation 0 is the initial pool).
#[derive(Debug, Clone)]
pub struct GenerationReport<'a> {
    pub generation: usize,
    pub evaluated: &'a [(PeltierParams, f64)],
    pub best_cost: f64,
}

/// Trapezoidal integral of `w_y (y_r − y_c)² + w_u (u_r − u_c)²` over the
/// common time grid.
pub fn cost_weighted(reference: &RunLog, candidate: &RunLog, w: CostWeights) -> Result<f64, DataError> {
    if reference.len() < 2 {
        return Err(DataError::TooShort {
            needed: 2,
            got: reference.len(),
        });
    }
    reference.same_grid(candidate)?;
    let integrand: Vec<f64> = reference
        .samples
        .iter()
        .zip(&candidate.samples)
        .map(|(a, b)| {
            let dy = a.y - b.y;
            let du = a.u - b.u;
            w.w_y * dy * dy + w.w_u * du * du
        })
        .collect();
    Ok(reference
        .samples
        .windows(2)
        .zip(integrand.windows(2))
        .map(|(s, f)| 0.5 * (s[1].t - s[0].t) * (f[0] + f[1]))
        .sum())
}

pub fn cost(reference: &RunLog, candidate: &RunLog) -> Result<f64, DataError> {
    cost_weighted(reference, candidate, CostWeights::default())
}

/// Cost of the twin with `params` re-running the reference's closed loop.
/// Diverging candidates score `+∞`.
pub fn evaluate_params(reference: &RunLog, model: &TwinModel, params: PeltierParams, w: CostWeights) -> f64 {
    let model = TwinModel { params, ..*model };
    match rerun_closed_loop(reference, &model) {
        Ok(run) => match cost_weighted(reference, &run, w) {
            Ok(j) if j.is_finite() => j,
            _ => f64::INFINITY,
        },
        Err(_) => f64::INFINITY,
    }
}

pub fn ga_optimize(
    reference: &RunLog,
    bounds: &ParamBounds,
    cfg: &GaConfig,
    model: &TwinModel,
) -> Result<GaResult, MatchError> {
    ga_optimize_observed(reference, bounds, cfg, model, None, |_| {})
}

#[derive(Debug, Clone, Copy)]
struct Individual {
    params: PeltierParams,
    cost: f64,
}

/// Picks the better of two random pool members.
fn tournament<R: Rng>(pool: &[Individual], rng: &mut R) -> usize {
    let a = rng.random_range(0..pool.len());
    let b = rng.random_range(0..pool.len());
    if pool[b].cost < pool[a].cost {
        b
    } else {
        a
    }
}

/// [`ga_optimize`] with an optional seed individual placed in the initial
/// pool and a per-generation observer.
pub fn ga_optimize_observed<F>(
    reference: &RunLog,
    bounds: &ParamBounds,
    cfg: &GaConfig,
    model: &TwinModel,
    initial_guess: Option<PeltierParams>,
    mut observe: F,
) -> Result<GaResult, MatchError>
where
    F: FnMut(&GenerationReport<'_>),
{
    reference.validate()?;
    if reference.len() < 2 {
        return Err(DataError::TooShort {
            needed: 2,
            got: reference.len(),
        }
        .into());
    }
    bounds.validate()?;
    cfg.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let evaluate = |cands: Vec<PeltierParams>| -> Vec<Individual> {
        cands
            .into_par_iter()
            .map(|params| Individual {
                params,
                cost: evaluate_params(reference, model, params, cfg.weights),
            })
            .collect()
    };
    let report = |generation: usize, batch: &[Individual], best: f64, observe: &mut F| {
        let evaluated: Vec<_> = batch.iter().map(|i| (i.params, i.cost)).collect();
        observe(&GenerationReport {
            generation,
            evaluated: &evaluated,
            best_cost: best,
        });
    };

    let mut initial: Vec<PeltierParams> = (0..cfg.parent_pool).map(|_| bounds.sample(&mut rng)).collect();
    if let Some(guess) = initial_guess.filter(|g| bounds.contains(g)) {
        initial[0] = guess;
    }
    let mut pool = evaluate(initial);
    let mut evaluations = pool.len();
    let mut best = *pool
        .iter()
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .expect("pool is non-empty");
    let mut history = vec![best.cost];
    report(0, &pool, best.cost, &mut observe);

    for generation in 1..=cfg.generations {
        if cfg.early_stop_tolerance > 0.0 && best.cost <= cfg.early_stop_tolerance {
            break;
        }
        let children: Vec<PeltierParams> = (0..cfg.offspring_per_generation)
            .map(|_| {
                let a = pool[tournament(&pool, &mut rng)].params.as_array();
                let b = pool[tournament(&pool, &mut rng)].params.as_array();
                let mut genes: [f64; 4] =
                    std::array::from_fn(|g| if rng.random_bool(0.5) { a[g] } else { b[g] });
                if rng.random_bool(cfg.mutation_probability) {
                    for g in sample_indices(&mut rng, 4, cfg.features_per_mutation) {
                        genes[g] = bounds.sample_gene(g, &mut rng);
                    }
                }
                PeltierParams::from_array(genes)
            })
            .collect();
        let children = evaluate(children);
        evaluations += children.len();
        report(generation, &children, best.cost.min(min_cost(&children)), &mut observe);

        let mut combined: Vec<Individual> = pool.iter().chain(&children).copied().collect();
        combined.sort_by(|a, b| a.cost.total_cmp(&b.cost));
        let mut rest = combined.split_off(cfg.elitism);
        let mut next = combined;
        while next.len() < cfg.parent_pool && !rest.is_empty() {
            let pick = tournament(&rest, &mut rng);
            next.push(rest.swap_remove(pick));
        }
        pool = next;

        if pool[0].cost < best.cost {
            best = pool[0];
        }
        history.push(best.cost);
    }

    Ok(GaResult {
        best: best.params,
        best_cost: best.cost,
        history,
        evaluations,
    })
}

fn min_cost(batch: &[Individual]) -> f64 {
    batch.iter().map(|i| i.cost).fold(f64::INFINITY, f64::min)
}
