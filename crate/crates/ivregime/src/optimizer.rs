//! Derivative-free maximization over the unit sphere of regime
//! coefficients: a real-coded genetic algorithm with tournament
//! selection, blend crossover, Gaussian mutation, and renormalization
//! after every operation, plus an exhaustive spherical grid search used
//! as a test oracle in three dimensions.

use crate::data::Regime;
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub mutation_scale: f64,
    pub elite_count: usize,
    pub seed: u64,
    /// Stop after this many generations without improvement above 1e-6.
    pub stall_generations: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 100,
            generations: 60,
            crossover_rate: 0.8,
            mutation_rate: 0.2,
            mutation_scale: 0.2,
            elite_count: 2,
            seed: 0,
            stall_generations: 15,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<()> {
        if self.population_size < 4 {
            return Err(Error::invalid("population size must be at least 4"));
        }
        if self.elite_count >= self.population_size {
            return Err(Error::invalid("elite count must be below the population size"));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate)
        {
            return Err(Error::invalid("rates must lie in [0, 1]"));
        }
        if !(self.mutation_scale > 0.0) {
            return Err(Error::invalid("mutation scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub regime: Regime,
    pub value: f64,
    /// Best-ever value after each generation (nondecreasing).
    pub history: Vec<f64>,
    pub evaluations: u64,
    /// Candidates discarded for non-finite objective values.
    pub discarded: u64,
}

const IMPROVEMENT_TOL: f64 = 1e-6;

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        // Box-Muller pairs; normalized Gaussians are uniform on the sphere
        let mut v = Vec::with_capacity(dim);
        while v.len() < dim {
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            v.push(r * theta.cos());
            if v.len() < dim {
                v.push(r * theta.sin());
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

fn renormalize(v: &mut Vec<f64>, rng: &mut ChaCha8Rng) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        *v = random_unit(rng, v.len());
    }
}

/// Maximize `objective` over unit vectors of length `dim` with a seeded,
/// fully deterministic genetic algorithm. Candidates with non-finite
/// objective values are discarded (never selected, never elite); a
/// generation in which every candidate is non-finite aborts the run.
pub fn optimize(
    objective: impl Fn(&Regime) -> f64,
    dim: usize,
    config: &GaConfig,
) -> Result<OptimizationResult> {
    config.validate()?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pop_size = config.population_size;

    let mut evaluations = 0u64;
    let mut discarded = 0u64;
    let eval = |v: &[f64], evaluations: &mut u64, discarded: &mut u64| -> f64 {
        *evaluations += 1;
        let regime = Regime::from_unit(v.to_vec()).expect("candidates stay unit norm");
        let val = objective(&regime);
        if val.is_finite() {
            val
        } else {
            *discarded += 1;
            f64::NEG_INFINITY
        }
    };

    let mut population: Vec<Vec<f64>> =
        (0..pop_size).map(|_| random_unit(&mut rng, dim)).collect();
    let mut fitness: Vec<f64> = population
        .iter()
        .map(|v| eval(v, &mut evaluations, &mut discarded))
        .collect();
    if fitness.iter().all(|f| *f == f64::NEG_INFINITY) {
        return Err(Error::Optimization(
            "every candidate in the initial population was non-finite".into(),
        ));
    }

    // best-ever, earliest-evaluated wins ties
    let mut best_idx = 0;
    for i in 1..pop_size {
        if fitness[i] > fitness[best_idx] {
            best_idx = i;
        }
    }
    let mut best_vec = population[best_idx].clone();
    let mut best_val = fitness[best_idx];
    let mut history = vec![best_val];
    let mut stall = 0usize;

    for _gen in 0..config.generations {
        // elite indices by fitness, stable in original order on ties
        let mut ranked: Vec<usize> = (0..pop_size).collect();
        ranked.sort_by(|&a, &b| fitness[b].partial_cmp(&fitness[a]).unwrap().then(a.cmp(&b)));
        let mut next: Vec<Vec<f64>> = ranked[..config.elite_count]
            .iter()
            .map(|&i| population[i].clone())
            .collect();
        let mut next_fit: Vec<f64> = ranked[..config.elite_count]
            .iter()
            .map(|&i| fitness[i])
            .collect();

        let tournament = |rng: &mut ChaCha8Rng, fitness: &[f64]| -> usize {
            let mut best = rng.random_range(0..pop_size);
            for _ in 1..3 {
                let c = rng.random_range(0..pop_size);
                if fitness[c] > fitness[best] {
                    best = c;
                }
            }
            best
        };

        while next.len() < pop_size {
            let p1 = tournament(&mut rng, &fitness);
            let p2 = tournament(&mut rng, &fitness);
            let mut child: Vec<f64> = if rng.random_range(0.0..1.0) < config.crossover_rate {
                // per-coordinate convex blend with a fresh mixing weight
                population[p1]
                    .iter()
                    .zip(&population[p2])
                    .map(|(a, b)| {
                        let lambda: f64 = rng.random_range(0.0..1.0);
                        lambda * a + (1.0 - lambda) * b
                    })
                    .collect()
            } else {
                population[p1].clone()
            };
            if rng.random_range(0.0..1.0) < config.mutation_rate {
                for x in child.iter_mut() {
                    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.random_range(0.0..1.0);
                    let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    *x += config.mutation_scale * g;
                }
            }
            renormalize(&mut child, &mut rng);
            let f = eval(&child, &mut evaluations, &mut discarded);
            next.push(child);
            next_fit.push(f);
        }

        population = next;
        fitness = next_fit;
        if fitness.iter().all(|f| *f == f64::NEG_INFINITY) {
            return Err(Error::Optimization(
                "every candidate in a generation was non-finite".into(),
            ));
        }

        let mut gen_best = 0;
        for i in 1..pop_size {
            if fitness[i] > fitness[gen_best] {
                gen_best = i;
            }
        }
        if fitness[gen_best] > best_val + IMPROVEMENT_TOL {
            stall = 0;
        } else {
            stall += 1;
        }
        if fitness[gen_best] > best_val {
            best_val = fitness[gen_best];
            best_vec = population[gen_best].clone();
        }
        history.push(best_val);
        if stall >= config.stall_generations {
            break;
        }
    }

    Ok(OptimizationResult {
        regime: Regime::from_unit(best_vec).expect("best candidate stays unit norm"),
        value: best_val,
        history,
        evaluations,
        discarded,
    })
}

/// Exhaustive spherical-coordinate search on the 2-sphere: polar angles
/// at cell midpoints, azimuths at cell left edges, so a resolution of 1
/// degree evaluates exactly 180 x 360 points. Supported only for
/// `dim = 3`.
pub fn grid_search_sphere(
    objective: impl Fn(&Regime) -> f64,
    dim: usize,
    resolution_degrees: f64,
) -> Result<OptimizationResult> {
    if dim != 3 {
        return Err(Error::invalid("spherical grid search supports dim = 3 only"));
    }
    if !(resolution_degrees > 0.0 && resolution_degrees <= 90.0) {
        return Err(Error::invalid("resolution must lie in (0, 90] degrees"));
    }
    let n_theta = (180.0 / resolution_degrees).round() as usize;
    let n_phi = (360.0 / resolution_degrees).round() as usize;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evaluations = 0u64;
    let mut discarded = 0u64;
    for it in 0..n_theta {
        let theta = (it as f64 + 0.5) * std::f64::consts::PI / n_theta as f64;
        for ip in 0..n_phi {
            let phi = ip as f64 * 2.0 * std::f64::consts::PI / n_phi as f64;
            let mut v = vec![
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ];
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            let regime = Regime::from_unit(v.clone()).expect("grid points are unit norm");
            evaluations += 1;
            let val = objective(&regime);
            if !val.is_finite() {
                discarded += 1;
                continue;
            }
            if best.as_ref().map_or(true, |(b, _)| val > *b) {
                best = Some((val, v));
            }
        }
    }
    let (value, vec) = best.ok_or_else(|| {
        Error::Optimization("every lattice point had a non-finite objective".into())
    })?;
    Ok(OptimizationResult {
        regime: Regime::from_unit(vec).expect("unit"),
        value,
        history: vec![value],
        evaluations,
        discarded,
    })
}
