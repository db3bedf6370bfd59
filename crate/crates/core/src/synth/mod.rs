//! Benchmark dataset generators with known latent structure.
//!
//! Two families: a separable-DAG tabular benchmark where four perturbations
//! shift the means of three independent latent coordinates, and a mixture
//! benchmark where seven perturbations re-target individual components of a
//! six-component 1-D mixture. Both map latents through a random invertible
//! MLP so the observed coordinates are an entangled view of the latents,
//! while ground-truth interacting pairs and closed-form latent divergences
//! stay available for calibration. A low-rank reward generator rounds out
//! the set for exercising matrix-completion policies.

pub mod mlp;

pub use mlp::{apply_diffeomorphism, RandomMlp};

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{canonical_pair, Condition, ExperimentDataset, PerturbationId, SampleMatrix};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::score::ScoreMatrix;

/// Mean shift applied to every intervened latent coordinate in the
/// separable benchmark.
pub const SEPARABLE_SHIFT: f64 = 3.0;

/// Leaky-ReLU slope of the mixture benchmark's observation map.
const MIXTURE_LEAKY_SLOPE: f64 = 0.2;

/// Configuration of the separable-DAG tabular benchmark.
#[derive(Debug, Clone)]
pub struct SeparableSpec {
    pub n_per_class: usize,
    /// Depth of the observation MLP; zero keeps observations equal to the
    /// latents (testing hook).
    pub mlp_depth: usize,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for SeparableSpec {
    fn default() -> Self {
        Self {
            n_per_class: 20_000,
            mlp_depth: 7,
            leaky_slope: 0.2,
            seed: 0,
        }
    }
}

/// Configuration of the mixture benchmark.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub n_per_class: usize,
    /// Depth of the observation MLP; zero keeps observations equal to the
    /// latents (testing hook).
    pub mlp_depth: usize,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            n_per_class: 20_000,
            mlp_depth: 10,
            seed: 0,
        }
    }
}

/// Control, all singles, then all doubles in canonical order.
fn all_conditions(n_perturbations: usize) -> Vec<Condition> {
    let mut conds = vec![Condition::Control];
    for i in 0..n_perturbations {
        conds.push(Condition::Single(i));
    }
    for i in 0..n_perturbations {
        for j in (i + 1)..n_perturbations {
            conds.push(Condition::Double(i, j));
        }
    }
    conds
}

fn separable_single_coords(id: PerturbationId) -> Result<BTreeSet<usize>> {
    // Perturbations A..D target latent coordinates {0}, {0,1}, {2}, {2}:
    // A and B collide on coordinate 0, C and D on coordinate 2.
    let coords: &[usize] = match id {
        0 => &[0],
        1 => &[0, 1],
        2 => &[2],
        3 => &[2],
        _ => {
            return Err(Error::InvalidArg(format!(
                "separable benchmark has 4 perturbations; id {id} out of range"
            )))
        }
    };
    Ok(coords.iter().copied().collect())
}

/// Latent coordinates whose mean a condition shifts in the separable
/// benchmark.
pub fn separable_intervened_coords(cond: &Condition) -> Result<BTreeSet<usize>> {
    match *cond {
        Condition::Control => Ok(BTreeSet::new()),
        Condition::Single(i) => separable_single_coords(i),
        Condition::Double(i, j) => {
            let mut coords = separable_single_coords(i)?;
            coords.extend(separable_single_coords(j)?);
            Ok(coords)
        }
    }
}

/// Closed-form latent KL from control to a condition of the separable
/// benchmark. Every intervention is a unit-variance mean shift, so each
/// intervened coordinate contributes shift²/2.
pub fn separable_latent_kl(cond: &Condition) -> Result<f64> {
    let coords = separable_intervened_coords(cond)?;
    Ok(coords.len() as f64 * SEPARABLE_SHIFT * SEPARABLE_SHIFT / 2.0)
}

/// Closed-form latent separability score |KL_i + KL_j − KL_ij| of a pair in
/// the separable benchmark: zero for separable pairs, shift²/2 for the two
/// colliding pairs.
pub fn separable_latent_score(i: PerturbationId, j: PerturbationId) -> Result<f64> {
    let (i, j) = canonical_pair(i, j)?;
    let kl_i = separable_latent_kl(&Condition::Single(i))?;
    let kl_j = separable_latent_kl(&Condition::Single(j))?;
    let kl_ij = separable_latent_kl(&Condition::Double(i, j))?;
    Ok((kl_i + kl_j - kl_ij).abs())
}

/// Generates the separable-DAG benchmark: control, 4 singles, all 6
/// doubles, each with `n_per_class` samples of 3-D observations. Ground
/// truth marks the two pairs that collide on a latent coordinate.
pub fn gen_separable_tabular(spec: &SeparableSpec) -> Result<ExperimentDataset> {
    if spec.n_per_class == 0 {
        return Err(Error::InvalidArg("n_per_class must be positive".into()));
    }
    let mut rng = rng_from_seed(spec.seed);
    let mlp = RandomMlp::new(3, spec.mlp_depth, spec.leaky_slope, &mut rng)?;
    let n = spec.n_per_class;
    let mut samples = Vec::new();
    for cond in all_conditions(4) {
        let coords = separable_intervened_coords(&cond)?;
        let mut flat = Vec::with_capacity(n * 3);
        for _ in 0..n {
            for c in 0..3 {
                let mean = if coords.contains(&c) { SEPARABLE_SHIFT } else { 0.0 };
                let z: f64 = StandardNormal.sample(&mut rng);
                flat.push(mean + z);
            }
        }
        let latents = SampleMatrix::new(
            Array2::from_shape_vec((n, 3), flat).expect("sized above"),
        )?;
        samples.push((cond, mlp.apply(&latents)?));
    }
    ExperimentDataset::new(4, samples)?
        .with_names(["A", "B", "C", "D"].map(String::from).to_vec())?
        .with_ground_truth(vec![(0, 1), (2, 3)])
}

/// Distribution of one mixture component in the 1-D latent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentDist {
    Normal { mean: f64, sd: f64 },
    Cauchy { loc: f64, scale: f64 },
}

impl ComponentDist {
    fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            ComponentDist::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            ComponentDist::Cauchy { loc, scale } => {
                // Inverse CDF of one uniform: keeps the draw an explicit
                // function of the stream, independent of distribution-crate
                // internals.
                let u: f64 = rng.gen();
                loc + scale * (std::f64::consts::PI * (u - 0.5)).tan()
            }
        }
    }
}

/// Mixing weights of the six latent components; no perturbation ever
/// changes them.
pub const MIXTURE_WEIGHTS: [f64; 6] = [0.125, 0.125, 0.125, 0.125, 0.25, 0.25];

const MIXTURE_CONTROL: ComponentDist = ComponentDist::Normal { mean: 0.0, sd: 1.0 };

/// Component a single perturbation re-targets, and the distribution it
/// installs there. Ids 0..7 are named A..G.
fn mixture_single_intervention(id: PerturbationId) -> Result<(usize, ComponentDist)> {
    let hit = match id {
        0 => (1, ComponentDist::Normal { mean: 5.0, sd: 1.0 }),
        1 => (2, ComponentDist::Normal { mean: 10.0, sd: 1.0 }),
        2 => (3, ComponentDist::Normal { mean: -5.0, sd: 5.0 }),
        3 => (4, ComponentDist::Normal { mean: 0.0, sd: 5.0 }),
        4 => (4, ComponentDist::Normal { mean: -10.0, sd: 5.0 }),
        5 => (5, ComponentDist::Cauchy { loc: 15.0, scale: 1.0 }),
        6 => (5, ComponentDist::Cauchy { loc: -15.0, scale: 1.0 }),
        _ => {
            return Err(Error::InvalidArg(format!(
                "mixture benchmark has 7 perturbations; id {id} out of range"
            )))
        }
    };
    Ok(hit)
}

/// Component distributions in effect under a condition. Doubles targeting
/// two distinct components apply both single interventions; the two
/// colliding doubles (D-E and F-G) install a joint distribution of their
/// own on the shared component.
pub fn mixture_component_table(cond: &Condition) -> Result<[ComponentDist; 6]> {
    let mut table = [MIXTURE_CONTROL; 6];
    match *cond {
        Condition::Control => {}
        Condition::Single(i) => {
            let (comp, dist) = mixture_single_intervention(i)?;
            table[comp] = dist;
        }
        Condition::Double(i, j) => {
            let (i, j) = canonical_pair(i, j)?;
            let (comp_i, dist_i) = mixture_single_intervention(i)?;
            let (comp_j, dist_j) = mixture_single_intervention(j)?;
            if comp_i == comp_j {
                table[comp_i] = match (i, j) {
                    (3, 4) => ComponentDist::Normal { mean: 10.0, sd: 5.0 },
                    (5, 6) => ComponentDist::Cauchy { loc: 20.0, scale: 1.0 },
                    // Only D-E and F-G share a component.
                    _ => unreachable!("no other pair shares a component"),
                };
            } else {
                table[comp_i] = dist_i;
                table[comp_j] = dist_j;
            }
        }
    }
    Ok(table)
}

fn draw_component(rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, w) in MIXTURE_WEIGHTS.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    MIXTURE_WEIGHTS.len() - 1
}

/// Draws `n` latent mixture values for a condition, returning each draw's
/// component label alongside the value. This is the categorical machinery
/// the full generator runs per condition, exposed so tests can count
/// component assignments and inspect per-component distributions.
pub fn mixture_latent_draw(
    cond: &Condition,
    n: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let table = mixture_component_table(cond)?;
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let k = draw_component(rng);
        labels.push(k);
        values.push(table[k].draw(rng));
    }
    Ok((labels, values))
}

/// Generates the mixture benchmark: control, 7 singles, all 21 doubles.
/// The 1-D mixture latent is padded with two standard-normal nuisance
/// coordinates and mapped through the observation MLP. Ground truth marks
/// D-E and F-G, the pairs whose interventions collide on a component.
pub fn gen_disjoint_mixture(spec: &MixtureSpec) -> Result<ExperimentDataset> {
    if spec.n_per_class == 0 {
        return Err(Error::InvalidArg("n_per_class must be positive".into()));
    }
    let mut rng = rng_from_seed(spec.seed);
    let mlp = RandomMlp::new(3, spec.mlp_depth, MIXTURE_LEAKY_SLOPE, &mut rng)?;
    let n = spec.n_per_class;
    let mut samples = Vec::new();
    for cond in all_conditions(7) {
        let (_, values) = mixture_latent_draw(&cond, n, &mut rng)?;
        let mut flat = Vec::with_capacity(n * 3);
        for value in values {
            flat.push(value);
            for _ in 0..2 {
                let z: f64 = StandardNormal.sample(&mut rng);
                flat.push(z);
            }
        }
        let latents = SampleMatrix::new(
            Array2::from_shape_vec((n, 3), flat).expect("sized above"),
        )?;
        samples.push((cond, mlp.apply(&latents)?));
    }
    ExperimentDataset::new(7, samples)?
        .with_names(["A", "B", "C", "D", "E", "F", "G"].map(String::from).to_vec())?
        .with_ground_truth(vec![(3, 4), (5, 6)])
}

fn draw_factors(n: usize, rank: usize, rng: &mut Rng) -> Array2<f64> {
    // Entry sd 1/√rank gives the implied Gram diagonal unit expectation.
    let sd = (rank as f64).sqrt().recip();
    let mut u = Array2::<f64>::zeros((n, rank));
    for v in u.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = sd * z;
    }
    u
}

fn validate_lowrank(n: usize, rank: usize) -> Result<()> {
    if rank == 0 || rank > n {
        return Err(Error::InvalidArg(format!(
            "rank {rank} out of range [1, {n}]"
        )));
    }
    Ok(())
}

/// Factor matrix behind [`gen_lowrank_reward`] for the same `seed`:
/// the reward entries are the pairwise row inner products of this matrix
/// (before noise).
pub fn lowrank_factors(n: usize, rank: usize, seed: u64) -> Result<Array2<f64>> {
    validate_lowrank(n, rank)?;
    let mut rng = rng_from_seed(seed);
    Ok(draw_factors(n, rank, &mut rng))
}

/// Fully observed synthetic score matrix R = U·Uᵀ with factor entries iid
/// normal (sd 1/√rank) and symmetric observation noise added to the upper
/// triangle; the diagonal is not represented.
pub fn gen_lowrank_reward(
    n: usize,
    rank: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<ScoreMatrix> {
    validate_lowrank(n, rank)?;
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidArg(format!(
            "noise_sd must be finite and nonnegative, got {noise_sd}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let u = draw_factors(n, rank, &mut rng);
    let mut matrix = ScoreMatrix::new(n)?;
    for i in 0..n {
        for j in (i + 1)..n {
            let base = u.row(i).dot(&u.row(j));
            let z: f64 = StandardNormal.sample(&mut rng);
            matrix.set(i, j, base + noise_sd * z)?;
        }
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lu_factor;
    use crate::rng::rng_from_seed;

    fn column_means(m: &SampleMatrix) -> Vec<f64> {
        let n = m.n_samples() as f64;
        m.data()
            .sum_axis(ndarray::Axis(0))
            .iter()
            .map(|s| s / n)
            .collect()
    }

    #[test]
    fn separable_default_shape_and_metadata() {
        let spec = SeparableSpec {
            n_per_class: 200,
            ..Default::default()
        };
        let ds = gen_separable_tabular(&spec).unwrap();
        assert_eq!(ds.n_conditions(), 11);
        assert_eq!(ds.n_perturbations(), 4);
        assert_eq!(ds.dim(), 3);
        for (_, m) in ds.conditions() {
            assert_eq!(m.n_samples(), 200);
        }
        assert_eq!(ds.names().unwrap(), ["A", "B", "C", "D"]);
        assert_eq!(ds.ground_truth_pairs().unwrap(), [(0, 1), (2, 3)]);
    }

    #[test]
    fn separable_identity_map_latent_means() {
        let spec = SeparableSpec {
            mlp_depth: 0,
            seed: 3,
            ..Default::default()
        };
        let ds = gen_separable_tabular(&spec).unwrap();
        let cases = [
            (Condition::Control, [0.0, 0.0, 0.0]),
            (Condition::Single(0), [3.0, 0.0, 0.0]),
            (Condition::Double(0, 1), [3.0, 3.0, 0.0]),
            (Condition::Double(2, 3), [0.0, 0.0, 3.0]),
            (Condition::Double(1, 3), [3.0, 3.0, 3.0]),
        ];
        for (cond, want) in cases {
            let mean = column_means(ds.get(&cond).unwrap());
            for (m, w) in mean.iter().zip(want) {
                assert!((m - w).abs() < 0.05, "{cond}: {mean:?}");
            }
        }
    }

    #[test]
    fn separable_same_seed_reproduces() {
        let spec = SeparableSpec {
            n_per_class: 50,
            seed: 11,
            ..Default::default()
        };
        let a = gen_separable_tabular(&spec).unwrap();
        let b = gen_separable_tabular(&spec).unwrap();
        for ((ca, ma), (cb, mb)) in a.conditions().zip(b.conditions()) {
            assert_eq!(ca, cb);
            assert_eq!(ma, mb);
        }
    }

    #[test]
    fn latent_kl_oracle_values() {
        assert_eq!(separable_latent_kl(&Condition::Control).unwrap(), 0.0);
        assert_eq!(separable_latent_kl(&Condition::Single(0)).unwrap(), 4.5);
        assert_eq!(separable_latent_kl(&Condition::Single(1)).unwrap(), 9.0);
        assert_eq!(separable_latent_kl(&Condition::Double(0, 1)).unwrap(), 9.0);
        assert_eq!(separable_latent_kl(&Condition::Double(2, 3)).unwrap(), 4.5);
        assert_eq!(separable_latent_kl(&Condition::Double(1, 3)).unwrap(), 13.5);
        // Colliding pairs score shift²/2; separable pairs score zero.
        assert_eq!(separable_latent_score(0, 1).unwrap(), 4.5);
        assert_eq!(separable_latent_score(2, 3).unwrap(), 4.5);
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            assert_eq!(separable_latent_score(i, j).unwrap(), 0.0, "({i},{j})");
        }
        assert!(separable_latent_kl(&Condition::Single(4)).is_err());
    }

    #[test]
    fn mixture_shape_and_metadata() {
        let spec = MixtureSpec {
            n_per_class: 100,
            ..Default::default()
        };
        let ds = gen_disjoint_mixture(&spec).unwrap();
        assert_eq!(ds.n_conditions(), 29);
        assert_eq!(ds.n_perturbations(), 7);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.names().unwrap().len(), 7);
        assert_eq!(ds.ground_truth_pairs().unwrap(), [(3, 4), (5, 6)]);
    }

    #[test]
    fn mixture_weights_recovered_by_counting() {
        let mut rng = rng_from_seed(17);
        let n = 20_000;
        let (labels, _) = mixture_latent_draw(&Condition::Control, n, &mut rng).unwrap();
        let mut counts = [0usize; 6];
        for l in labels {
            counts[l] += 1;
        }
        for (k, want) in MIXTURE_WEIGHTS.iter().enumerate() {
            let got = counts[k] as f64 / n as f64;
            assert!((got - want).abs() < 0.01, "component {k}: {got} vs {want}");
        }
    }

    #[test]
    fn mixture_condition_d_changes_only_component_4() {
        let mut rng = rng_from_seed(23);
        let n = 20_000;
        let (labels, values) =
            mixture_latent_draw(&Condition::Single(3), n, &mut rng).unwrap();
        for comp in 0..6 {
            let vals: Vec<f64> = labels
                .iter()
                .zip(&values)
                .filter(|(l, _)| **l == comp)
                .map(|(_, v)| *v)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (vals.len() - 1) as f64;
            let want = if comp == 4 { 25.0 } else { 1.0 };
            assert!(
                (var / want - 1.0).abs() < 0.2,
                "component {comp}: variance {var}, want {want}"
            );
            assert!(mean.abs() < if comp == 4 { 0.5 } else { 0.1 }, "component {comp}: mean {mean}");
        }
    }

    /// Two-element multiset equality of component distributions.
    fn mixes_equal(a: (ComponentDist, ComponentDist), b: (ComponentDist, ComponentDist)) -> bool {
        (a.0 == b.0 && a.1 == b.1) || (a.0 == b.1 && a.1 == b.0)
    }

    #[test]
    fn component_tables_satisfy_mixture_null_exactly_for_disjoint_pairs() {
        let control = mixture_component_table(&Condition::Control).unwrap();
        for i in 0..7 {
            for j in (i + 1)..7 {
                let ti = mixture_component_table(&Condition::Single(i)).unwrap();
                let tj = mixture_component_table(&Condition::Single(j)).unwrap();
                let tij = mixture_component_table(&Condition::Double(i, j)).unwrap();
                // Mixture of control and double vs mixture of the singles,
                // component by component.
                let holds = (0..6)
                    .all(|k| mixes_equal((control[k], tij[k]), (ti[k], tj[k])));
                let interacting = [(3, 4), (5, 6)].contains(&(i, j));
                assert_eq!(holds, !interacting, "pair ({i},{j})");
            }
        }
    }

    #[test]
    fn cauchy_draw_is_inverse_cdf_of_one_uniform() {
        let dist = ComponentDist::Cauchy { loc: 15.0, scale: 1.0 };
        let mut rng_a = rng_from_seed(31);
        let mut rng_b = rng_from_seed(31);
        for _ in 0..100 {
            let drawn = dist.draw(&mut rng_a);
            let u: f64 = rng_b.gen();
            let manual = 15.0 + (std::f64::consts::PI * (u - 0.5)).tan();
            assert_eq!(drawn.to_bits(), manual.to_bits());
        }
        // Median sits at the location parameter.
        let mut rng = rng_from_seed(37);
        let mut draws: Vec<f64> = (0..10_000).map(|_| dist.draw(&mut rng)).collect();
        draws.sort_by(f64::total_cmp);
        let median = draws[draws.len() / 2];
        assert!((median - 15.0).abs() < 0.05, "median {median}");
    }

    #[test]
    fn mixture_same_seed_reproduces() {
        let spec = MixtureSpec {
            n_per_class: 40,
            seed: 5,
            ..Default::default()
        };
        let a = gen_disjoint_mixture(&spec).unwrap();
        let b = gen_disjoint_mixture(&spec).unwrap();
        for ((ca, ma), (cb, mb)) in a.conditions().zip(b.conditions()) {
            assert_eq!(ca, cb);
            assert_eq!(ma, mb);
        }
    }

    #[test]
    fn lowrank_full_rank_gram_matrix() {
        let n = 6;
        let u = lowrank_factors(n, n, 7).unwrap();
        let gram = u.dot(&u.t());
        let det = lu_factor(&gram).unwrap().det();
        assert!(det.abs() > 1e-8, "det {det}");
        // The returned matrix holds exactly the off-diagonal Gram entries
        // (compared via the same row-dot evaluation order).
        let r = gen_lowrank_reward(n, n, 0.0, 7).unwrap();
        for (i, j, v) in r.observed() {
            assert_eq!(v.to_bits(), u.row(i).dot(&u.row(j)).to_bits());
            assert!((v - gram[(i, j)]).abs() < 1e-12);
        }
        assert!(r.is_fully_observed());
    }

    #[test]
    fn lowrank_rank_one_minors_vanish() {
        let n = 8;
        let r = gen_lowrank_reward(n, 1, 0.0, 13).unwrap();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let distinct = i != j && i != k && i != l && j != k && j != l && k != l;
                        if !distinct {
                            continue;
                        }
                        let m = r.get(i, j).unwrap() * r.get(k, l).unwrap()
                            - r.get(i, l).unwrap() * r.get(k, j).unwrap();
                        let scale = 1.0
                            + (r.get(i, j).unwrap() * r.get(k, l).unwrap()).abs()
                            + (r.get(i, l).unwrap() * r.get(k, j).unwrap()).abs();
                        assert!(m.abs() < 1e-8 * scale, "minor ({i},{j},{k},{l}) = {m}");
                    }
                }
            }
        }
    }

    #[test]
    fn lowrank_same_seed_identical_and_noise_perturbs() {
        let a = gen_lowrank_reward(5, 2, 0.3, 99).unwrap();
        let b = gen_lowrank_reward(5, 2, 0.3, 99).unwrap();
        for (i, j, v) in a.observed() {
            assert_eq!(v.to_bits(), b.get(i, j).unwrap().to_bits());
        }
        let clean = gen_lowrank_reward(5, 2, 0.0, 99).unwrap();
        let differs = a
            .observed()
            .any(|(i, j, v)| (v - clean.get(i, j).unwrap()).abs() > 1e-12);
        assert!(differs);
    }

    #[test]
    fn lowrank_rejects_bad_rank() {
        assert!(gen_lowrank_reward(5, 0, 0.0, 1).is_err());
        assert!(gen_lowrank_reward(5, 6, 0.0, 1).is_err());
        assert!(gen_lowrank_reward(5, 2, f64::NAN, 1).is_err());
    }
}
