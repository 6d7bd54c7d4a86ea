//! Monte-Carlo experiments: limit detection against a PNE catalog, basin
//! statistics, non-convergence near unstable equilibria and order
//! preservation of the conjugate flow.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{domain, Error, Result};
use crate::flow::{
    check_cooperative_irreducible, check_strong_monotonicity, classify_stability, enumerate_pne,
    Componentwise, CooperativityReport, EquilibriumReport, FlowOptions, COOP_TOL, EPS_STABILITY,
};
use crate::games::{inf_distance, t_operator, MixedProfile};
use crate::response::BestResponseField;
use crate::stochastic::{
    apt_distance, rng_for, run_sfp, RunOptions, SfpStart, StoragePolicy, Trajectory, DEFAULT_PREFIX,
    STORAGE_BUDGET,
};

/// Where the initial empirical frequencies come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StartSpec {
    #[default]
    Uniform,
    Vertex { profile: Vec<usize> },
    Profile { blocks: Vec<Vec<f64>> },
}

/// Equilibria that verdicts are matched against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CatalogSource {
    Computed { random_seeds: usize },
    Inline { points: Vec<Vec<Vec<f64>>> },
}

impl Default for CatalogSource {
    fn default() -> Self {
        CatalogSource::Computed { random_seeds: 50 }
    }
}

fn default_window() -> usize {
    1000
}

fn default_tol() -> f64 {
    1e-2
}

fn default_prefix() -> u64 {
    DEFAULT_PREFIX
}

/// Tolerance used to build a computed catalog.
pub const CATALOG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    /// Convergence window, in stored iterates at the end of each run.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub catalog: CatalogSource,
    #[serde(default)]
    pub start: StartSpec,
    /// Synthetic history length behind the start profile.
    #[serde(default = "default_prefix")]
    pub prefix: u64,
    /// Run even when the game is not strictly supermodular.
    #[serde(default)]
    pub force: bool,
    /// Worker threads (0: all cores). Not echoed in reports.
    #[serde(default, skip_serializing)]
    pub jobs: usize,
    /// Times at which `d_X(t, 1)` is sampled per run.
    #[serde(default)]
    pub apt_times: Vec<f64>,
}

impl ExperimentConfig {
    pub fn new(runs: usize, steps: u64, seed: u64) -> Self {
        ExperimentConfig {
            runs,
            steps,
            seed,
            window: default_window(),
            tol: default_tol(),
            catalog: CatalogSource::default(),
            start: StartSpec::Uniform,
            prefix: DEFAULT_PREFIX,
            force: false,
            jobs: 0,
            apt_times: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(domain("runs must be at least 1"));
        }
        if self.window < 10 {
            return Err(domain("convergence window must hold at least 10 iterates"));
        }
        if !(self.tol > 0.0) {
            return Err(domain("tol must be positive"));
        }
        if self.prefix == 0 {
            return Err(domain("prefix must be positive"));
        }
        if self.steps < 2 * self.window as u64 {
            return Err(domain("steps must cover at least two convergence windows"));
        }
        Ok(())
    }

    fn start_profile(&self, field: &BestResponseField) -> Result<SfpStart> {
        let actions = field.actions();
        match &self.start {
            StartSpec::Uniform => SfpStart::interior(MixedProfile::uniform(actions), self.prefix),
            StartSpec::Vertex { profile } => {
                SfpStart::interior(MixedProfile::vertex(actions, profile)?, self.prefix)
            }
            StartSpec::Profile { blocks } => {
                let p = MixedProfile::new(blocks.clone())?;
                if p.actions() != actions {
                    return Err(crate::error::structural("start profile does not match the game"));
                }
                SfpStart::interior(p, self.prefix)
            }
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| domain(format!("cannot start worker pool: {e}")))
    }
}

/// Builds the catalog named by `source`.
pub fn build_catalog(field: &BestResponseField, source: &CatalogSource, seed: u64) -> Result<Vec<EquilibriumReport>> {
    match source {
        CatalogSource::Computed { random_seeds } => {
            Ok(enumerate_pne(field, (*random_seeds).max(1), CATALOG_TOL, seed)?.reports)
        }
        CatalogSource::Inline { points } => points
            .iter()
            .map(|blocks| classify_stability(field, &MixedProfile::new(blocks.clone())?, EPS_STABILITY))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    ConvergedTo { index: usize, distance: f64 },
    Stalled { diameter: f64 },
    Undecided { diameter: f64 },
}

/// `max − min` per coordinate over the last `w` states, maximised: the
/// ∞-norm diameter of the window.
pub fn window_diameter(traj: &Trajectory, w: usize) -> f64 {
    let d = traj.dim();
    let (mut lo, mut hi) = (vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
    for k in traj.len() - w..traj.len() {
        for (i, v) in traj.state(k).iter().enumerate() {
            lo[i] = lo[i].min(*v);
            hi[i] = hi[i].max(*v);
        }
    }
    lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max)
}

/// Classifies the end of a trajectory. When the last `w` states span at most
/// `tol`, the final state is `ConvergedTo` a catalog entry within `tol`, and
/// `Stalled` if every entry is farther than `10·tol`. Everything else is
/// `Undecided`.
pub fn detect_limit(traj: &Trajectory, catalog: &[EquilibriumReport], w: usize, tol: f64) -> Result<Verdict> {
    if catalog.is_empty() {
        return Err(domain("detect_limit needs a nonempty catalog"));
    }
    if w == 0 || traj.len() < 2 * w {
        return Err(Error::Precondition(format!(
            "trajectory holds {} states, window {w} needs {}",
            traj.len(),
            2 * w
        )));
    }
    let diameter = window_diameter(traj, w);
    if diameter > tol {
        return Ok(Verdict::Undecided { diameter });
    }
    let last = traj.last_state();
    let (index, distance) = catalog
        .iter()
        .enumerate()
        .map(|(k, r)| (k, inf_distance(r.point.as_slice(), last)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("catalog is nonempty");
    if distance <= tol {
        Ok(Verdict::ConvergedTo { index, distance })
    } else if distance > 10.0 * tol {
        Ok(Verdict::Stalled { diameter })
    } else {
        Ok(Verdict::Undecided { diameter })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    pub final_state: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apt_samples: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    fn failed(run: usize, e: Error) -> Self {
        RunRecord {
            run,
            verdict: None,
            start: None,
            final_state: Vec::new(),
            apt_samples: None,
            error: Some(format!("{}: {e}", e.kind())),
        }
    }
}

/// Two-sided Clopper–Pearson interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: usize, n: usize, confidence: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let alpha = 1.0 - confidence;
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(kf, nf - kf + 1.0).expect("positive shapes").inverse_cdf(alpha / 2.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf).expect("positive shapes").inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

#[derive(Debug, Clone, Serialize)]
pub struct BasinRow {
    pub index: usize,
    pub label: String,
    pub count: usize,
    pub frequency: f64,
    pub ci95: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub converged: usize,
    pub stalled: usize,
    pub undecided: usize,
    pub errors: usize,
    pub basins: Vec<BasinRow>,
    /// Runs converging to entries that are not linearly unstable.
    pub stable_fraction: f64,
    pub stable_ci95: (f64, f64),
    pub unstable_fraction: f64,
    pub unstable_ci95: (f64, f64),
}

impl Aggregate {
    fn fold(records: &[RunRecord], catalog: &[EquilibriumReport]) -> Self {
        let runs = records.len();
        let mut counts = vec![0usize; catalog.len()];
        let (mut stalled, mut undecided, mut errors) = (0, 0, 0);
        for r in records {
            match r.verdict {
                Some(Verdict::ConvergedTo { index, .. }) => counts[index] += 1,
                Some(Verdict::Stalled { .. }) => stalled += 1,
                Some(Verdict::Undecided { .. }) => undecided += 1,
                None => errors += 1,
            }
        }
        let basins = catalog
            .iter()
            .zip(&counts)
            .enumerate()
            .map(|(index, (rep, &count))| BasinRow {
                index,
                label: rep.label.as_str().to_string(),
                count,
                frequency: count as f64 / runs as f64,
                ci95: clopper_pearson(count, runs, 0.95),
            })
            .collect();
        let unstable: usize = catalog
            .iter()
            .zip(&counts)
            .filter(|(r, _)| r.label.is_unstable())
            .map(|(_, c)| c)
            .sum();
        let converged: usize = counts.iter().sum();
        let stable = converged - unstable;
        Aggregate {
            runs,
            converged,
            stalled,
            undecided,
            errors,
            basins,
            stable_fraction: stable as f64 / runs as f64,
            stable_ci95: clopper_pearson(stable, runs, 0.95),
            unstable_fraction: unstable as f64 / runs as f64,
            unstable_ci95: clopper_pearson(unstable, runs, 0.95),
        }
    }

    /// Basin rows as CSV.
    pub fn basins_csv(&self) -> String {
        let mut s = String::from("index,label,count,frequency,ci_lo,ci_hi\n");
        for b in &self.basins {
            s.push_str(&format!(
                "{},{},{},{:.16e},{:.16e},{:.16e}\n",
                b.index, b.label, b.count, b.frequency, b.ci95.0, b.ci95.1
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub field: String,
    pub catalog: Vec<EquilibriumReport>,
    pub runs: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

/// Whether the game passes the strict supermodularity guard.
fn require_supermodular(field: &BestResponseField, force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    let rep = field.game().is_supermodular(true, 0.0);
    if rep.holds {
        Ok(())
    } else {
        Err(Error::Precondition(
            "game is not strictly supermodular (use force to run anyway)".into(),
        ))
    }
}

fn run_options(cfg: &ExperimentConfig, dim: usize, run: usize) -> Result<RunOptions> {
    let storage = if cfg.apt_times.is_empty() {
        let mut p = StoragePolicy::within_budget(cfg.steps, dim, STORAGE_BUDGET);
        p.dense_tail = cfg.window;
        p
    } else {
        // d_X needs every knot
        let bytes = (cfg.steps as usize + 1).saturating_mul((dim + 2) * 8);
        if bytes > STORAGE_BUDGET {
            return Err(domain("apt sampling needs full storage, which exceeds the memory budget"));
        }
        StoragePolicy::full()
    };
    Ok(RunOptions {
        storage,
        record_noise_from: None,
        stream: run as u64,
    })
}

fn simulate_one(
    field: &BestResponseField,
    cfg: &ExperimentConfig,
    catalog: &[EquilibriumReport],
    start: &SfpStart,
    run: usize,
) -> Result<RunRecord> {
    let opts = run_options(cfg, field.mixed_dim(), run)?;
    let sim = run_sfp(field, start, cfg.steps, cfg.seed, &opts, false)?;
    let traj = &sim.trajectory;
    let verdict = detect_limit(traj, catalog, cfg.window, cfg.tol)?;
    let apt_samples = if cfg.apt_times.is_empty() {
        None
    } else {
        let flow_opts = FlowOptions::default();
        Some(
            cfg.apt_times
                .iter()
                .map(|&t| Ok((t, apt_distance(traj, field, t, 1.0, &flow_opts)?)))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    Ok(RunRecord {
        run,
        verdict: Some(verdict),
        start: Some(traj.state(0).to_vec()),
        final_state: traj.last_state().to_vec(),
        apt_samples,
        error: None,
    })
}

fn finish_batch(records: &[RunRecord]) -> Result<()> {
    let errors = records.iter().filter(|r| r.error.is_some()).count();
    if errors * 10 > records.len() {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(domain(format!(
            "{errors} of {} runs failed (first: {first})",
            records.len()
        )));
    }
    Ok(())
}

/// Independent SFP runs from the configured start, each classified by
/// [`detect_limit`]. Runs that fail are recorded; the batch fails only when
/// more than 10% do.
pub fn convergence_experiment(field: &BestResponseField, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    require_supermodular(field, cfg.force)?;
    let catalog = build_catalog(field, &cfg.catalog, cfg.seed)?;
    let start = cfg.start_profile(field)?;
    let records: Vec<RunRecord> = cfg.pool()?.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|run| simulate_one(field, cfg, &catalog, &start, run).unwrap_or_else(|e| RunRecord::failed(run, e)))
            .collect()
    });
    finish_batch(&records)?;
    let aggregate = Aggregate::fold(&records, &catalog);
    Ok(ExperimentReport {
        config: cfg.clone(),
        field: crate::flow::VectorField::describe(field),
        catalog,
        runs: records,
        aggregate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NonconvergenceReport {
    pub config: ExperimentConfig,
    pub target: EquilibriumReport,
    pub start_radius: f64,
    /// Largest ∞-distance between a realized start and the target.
    pub max_start_offset: f64,
    pub runs: Vec<RunRecord>,
    pub converged_to_target: usize,
    pub fraction: f64,
    pub ci95: (f64, f64),
}

/// A uniform draw from the tangent ball of radius `r` (Euclidean) around `p`,
/// projected back to the simplex.
fn tangent_ball_point(p: &MixedProfile, r: f64, rng: &mut impl Rng) -> MixedProfile {
    let basis = crate::stochastic::tangent_basis(p.actions());
    let k = basis.ncols();
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let radius = r * rng.random::<f64>().powf(1.0 / k as f64);
    let dir = if z.norm() > 0.0 { z.normalize() } else { z };
    let shift = basis * dir * radius;
    let data = p.as_slice().iter().zip(shift.iter()).map(|(a, b)| a + b).collect();
    MixedProfile::projected(p.actions(), data)
}

const START_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// SFP runs started within `start_radius` of a linearly unstable equilibrium;
/// reports how many converge back to it.
pub fn nonconvergence_experiment(
    field: &BestResponseField,
    cfg: &ExperimentConfig,
    target: &EquilibriumReport,
    start_radius: f64,
) -> Result<NonconvergenceReport> {
    cfg.validate()?;
    if !target.label.is_unstable() {
        return Err(Error::Precondition(format!(
            "target equilibrium is {}, not linearly unstable",
            target.label.as_str()
        )));
    }
    if !(start_radius >= 0.0) {
        return Err(domain("start radius must be nonnegative"));
    }
    let catalog = vec![target.clone()];
    let records: Vec<RunRecord> = cfg.pool()?.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|run| {
                let mut rng = rng_for(cfg.seed ^ START_SALT, run as u64);
                let x = tangent_ball_point(&target.point, start_radius, &mut rng);
                let start = SfpStart::interior(x, cfg.prefix)?;
                simulate_one(field, cfg, &catalog, &start, run)
            })
            .enumerate()
            .map(|(run, res)| res.unwrap_or_else(|e| RunRecord::failed(run, e)))
            .collect()
    });
    finish_batch(&records)?;
    let hits = records
        .iter()
        .filter(|r| matches!(r.verdict, Some(Verdict::ConvergedTo { .. })))
        .count();
    let max_start_offset = records
        .iter()
        .filter_map(|r| r.start.as_ref())
        .map(|s| inf_distance(s, target.point.as_slice()))
        .fold(0.0, f64::max);
    Ok(NonconvergenceReport {
        config: cfg.clone(),
        target: target.clone(),
        start_radius,
        max_start_offset,
        runs: records,
        converged_to_target: hits,
        fraction: hits as f64 / cfg.runs as f64,
        ci95: clopper_pearson(hits, cfg.runs, 0.95),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderReport {
    pub pairs: usize,
    pub times: Vec<f64>,
    pub preserved: usize,
    pub preservation_rate: f64,
    /// Smallest strict-domination margin at `t = 5`.
    pub min_margin_t5: f64,
    /// Smallest margin over all times `≥ 1`.
    pub min_margin: f64,
    pub jacobian: CooperativityReport,
}

pub const ORDER_TIMES: [f64; 3] = [1.0, 5.0, 10.0];

/// A `≤_T`-ordered pair of distinct T-images: componentwise min and max of
/// the images of two random interior profiles.
pub fn sample_ordered_pair(actions: &[usize], rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    loop {
        let x = t_operator(&random_profile(actions, rng));
        let y = t_operator(&random_profile(actions, rng));
        let lo: Vec<f64> = x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a.min(*b)).collect();
        let hi: Vec<f64> = x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a.max(*b)).collect();
        if lo != hi {
            return (lo, hi);
        }
    }
}

/// Dirichlet(1) per block.
pub fn random_profile(actions: &[usize], rng: &mut impl Rng) -> MixedProfile {
    let mut data = Vec::with_capacity(actions.iter().sum());
    for &m in actions {
        let w: Vec<f64> = (0..m).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let s: f64 = w.iter().sum();
        data.extend(w.into_iter().map(|v| v / s));
    }
    MixedProfile::projected(actions, data)
}

/// Integrates the conjugate dynamic from `pairs` ordered pairs and checks the
/// order at `t ∈ {1, 5, 10}`, plus the off-diagonal sign of the conjugate
/// Jacobian at `jacobian_points` random T-images.
pub fn order_experiment(
    field: &BestResponseField,
    pairs: usize,
    jacobian_points: usize,
    seed: u64,
    force: bool,
) -> Result<OrderReport> {
    require_supermodular(field, force)?;
    let conj = field.conjugate();
    let opts = FlowOptions::default();
    let mut rng = rng_for(seed, 0);
    let samples: Vec<(Vec<f64>, Vec<f64>)> =
        (0..pairs).map(|_| sample_ordered_pair(field.actions(), &mut rng)).collect();
    let results: Vec<crate::flow::MonotonicityReport> = samples
        .par_iter()
        .map(|(a, b)| check_strong_monotonicity(&conj, a, b, &ORDER_TIMES, &Componentwise, &opts))
        .collect::<Result<_>>()?;
    let preserved = results.iter().filter(|r| r.holds).count();
    let min_margin_t5 = results.iter().map(|r| r.margins[1]).fold(f64::INFINITY, f64::min);
    let min_margin = results.iter().map(|r| r.min_strict_margin).fold(f64::INFINITY, f64::min);
    let mut jrng = rng_for(seed, 1);
    let points: Vec<Vec<f64>> = (0..jacobian_points)
        .map(|_| t_operator(&random_profile(field.actions(), &mut jrng)).into_vec())
        .collect();
    let jacobian = check_cooperative_irreducible(&conj, &points, COOP_TOL)?;
    Ok(OrderReport {
        pairs,
        times: ORDER_TIMES.to_vec(),
        preserved,
        preservation_rate: if pairs == 0 { 1.0 } else { preserved as f64 / pairs as f64 },
        min_margin_t5,
        min_margin,
        jacobian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::Game;
    use crate::stochastic::TrajectoryMeta;

    fn meta() -> TrajectoryMeta {
        TrajectoryMeta {
            schedule: "test".into(),
            seed: 0,
            field: "none".into(),
            stride: 1,
        }
    }

    fn catalog(eta: f64) -> (BestResponseField, Vec<EquilibriumReport>) {
        let f = BestResponseField::logit(Game::coordination(), eta).unwrap();
        let c = enumerate_pne(&f, 20, 1e-10, 0).unwrap().reports;
        (f, c)
    }

    #[test]
    fn detect_limit_examples() {
        let (_, cat) = catalog(0.5);
        let p = cat[0].point.as_slice().to_vec();
        let n = 40;
        let constant = Trajectory::from_samples(
            4,
            (0..n).map(|k| k as f64).collect(),
            vec![p.clone(); n],
            meta(),
        )
        .unwrap();
        assert_eq!(
            detect_limit(&constant, &cat, 10, 1e-2).unwrap(),
            Verdict::ConvergedTo { index: 0, distance: 0.0 }
        );
        let osc = Trajectory::from_samples(
            4,
            (0..n).map(|k| k as f64).collect(),
            (0..n)
                .map(|k| if k % 2 == 0 { vec![1.0, 0.0, 1.0, 0.0] } else { vec![0.0, 1.0, 0.0, 1.0] })
                .collect(),
            meta(),
        )
        .unwrap();
        assert!(matches!(detect_limit(&osc, &cat, 10, 1e-2).unwrap(), Verdict::Undecided { .. }));
        let far = Trajectory::from_samples(
            4,
            (0..n).map(|k| k as f64).collect(),
            vec![vec![0.5, 0.5, 0.5, 0.5]; n],
            meta(),
        )
        .unwrap();
        assert!(matches!(detect_limit(&far, &cat, 10, 1e-2).unwrap(), Verdict::Stalled { .. }));
        assert!(matches!(detect_limit(&far, &[], 10, 1e-2), Err(Error::Domain(_))));
        assert!(matches!(detect_limit(&far, &cat, 25, 1e-2), Err(Error::Precondition(_))));
    }

    #[test]
    fn sfp_from_a_vertex_reaches_a_stable_pne() {
        let (f, cat) = catalog(0.5);
        assert_eq!(cat.len(), 1);
        let start = SfpStart::vertex(&[2, 2], &[0, 0]).unwrap();
        let opts = RunOptions {
            storage: StoragePolicy::strided(1000, 1000),
            ..RunOptions::default()
        };
        let run = run_sfp(&f, &start, 1_000_000, 1, &opts, false).unwrap();
        match detect_limit(&run.trajectory, &cat, 1000, 1e-2).unwrap() {
            Verdict::ConvergedTo { index, .. } => assert!(!cat[index].label.is_unstable()),
            v => panic!("unexpected verdict {v:?}"),
        }
    }

    #[test]
    fn verdicts_stay_converged_on_longer_windows() {
        let (f, cat) = catalog(0.5);
        let start = SfpStart::interior(MixedProfile::uniform(&[2, 2]), 1000).unwrap();
        let run = run_sfp(&f, &start, 200_000, 4, &RunOptions::default(), false).unwrap();
        let mut prev: Option<f64> = None;
        for w in [1000, 2000, 5000] {
            match detect_limit(&run.trajectory, &cat, w, 1e-2).unwrap() {
                Verdict::ConvergedTo { distance, .. } => {
                    if let Some(p) = prev {
                        assert!(distance <= p + 2e-2);
                    }
                    prev = Some(distance);
                }
                v => panic!("window {w}: {v:?}"),
            }
        }
    }

    #[test]
    fn clopper_pearson_examples() {
        let (lo, hi) = clopper_pearson(0, 500, 0.95);
        assert_eq!(lo, 0.0);
        // closed form for k = 0: 1 − (α/2)^{1/n}
        assert!((hi - (1.0 - 0.025f64.powf(1.0 / 500.0))).abs() < 1e-10);
        let (lo, hi) = clopper_pearson(5, 10, 0.95);
        assert!((lo - 0.187_086_028_447_3).abs() < 1e-9, "{lo}");
        assert!((hi - 0.812_913_971_552_7).abs() < 1e-9, "{hi}");
        assert_eq!(clopper_pearson(10, 10, 0.95).1, 1.0);
    }

    #[test]
    fn convergence_experiment_basics() {
        let f = BestResponseField::logit(Game::coordination(), 10.0).unwrap();
        let mut cfg = ExperimentConfig::new(1, 20_000, 3);
        let rep = convergence_experiment(&f, &cfg).unwrap();
        assert_eq!(rep.runs.len(), 1);
        cfg.runs = 50;
        cfg.steps = 100_000;
        let rep = convergence_experiment(&f, &cfg).unwrap();
        assert_eq!(rep.aggregate.converged, 50);
        let a = &rep.aggregate;
        assert_eq!(a.converged + a.stalled + a.undecided + a.errors, a.runs);
        // same config, different worker count: identical output
        cfg.jobs = 1;
        let again = convergence_experiment(&f, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&rep).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn experiments_refuse_non_supermodular_games() {
        let pennies = Game::bimatrix(
            &[vec![1.0, -1.0], vec![-1.0, 1.0]],
            &[vec![-1.0, 1.0], vec![1.0, -1.0]],
        )
        .unwrap();
        let f = BestResponseField::logit(pennies, 1.0).unwrap();
        let mut cfg = ExperimentConfig::new(2, 5_000, 0);
        assert!(matches!(convergence_experiment(&f, &cfg), Err(Error::Precondition(_))));
        cfg.force = true;
        assert!(convergence_experiment(&f, &cfg).is_ok());
        assert!(order_experiment(&f, 2, 2, 0, false).is_err());
    }

    #[test]
    fn config_validation_and_json() {
        let mut cfg = ExperimentConfig::new(1, 1000, 0);
        cfg.window = 5;
        assert!(cfg.validate().is_err());
        cfg.window = 10;
        cfg.tol = 0.0;
        assert!(cfg.validate().is_err());
        let parsed: ExperimentConfig = serde_json::from_str(
            r#"{"runs": 3, "steps": 5000, "start": {"kind": "vertex", "profile": [1, 1]},
                "catalog": {"kind": "inline", "points": [[[0.5, 0.5], [0.5, 0.5]]]}}"#,
        )
        .unwrap();
        assert_eq!(parsed.window, 1000);
        assert_eq!(parsed.start, StartSpec::Vertex { profile: vec![1, 1] });
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"runs": 1, "steps": 10, "bogus": 1}"#).is_err());
    }

    #[test]
    fn nonconvergence_guards() {
        let (f, cat) = catalog(0.2);
        assert_eq!(cat.len(), 3);
        let cfg = ExperimentConfig::new(2, 5_000, 0);
        assert!(matches!(
            nonconvergence_experiment(&f, &cfg, &cat[0], 1e-3),
            Err(Error::Precondition(_))
        ));
        let rep = nonconvergence_experiment(&f, &cfg, &cat[1], 1e-3).unwrap();
        // radius plus half a prefix grid cell
        assert!(rep.max_start_offset <= 1e-3 + 0.5 / cfg.prefix as f64 + 1e-12);
    }

    #[test]
    fn ordered_pairs_are_distinct_and_ordered() {
        let mut rng = rng_for(0, 0);
        for _ in 0..100 {
            let (a, b) = sample_ordered_pair(&[2, 3], &mut rng);
            assert!(a != b);
            assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
        }
        let f = BestResponseField::logit(Game::coordination(), 0.5).unwrap();
        let rep = order_experiment(&f, 5, 20, 1, false).unwrap();
        assert_eq!(rep.preserved, 5);
        assert!(rep.min_margin > 0.0);
        // swapped roles: the reversed pair is rejected as unordered
        let (a, b) = sample_ordered_pair(&[2, 2], &mut rng);
        let conj = f.conjugate();
        assert!(check_strong_monotonicity(&conj, &b, &a, &ORDER_TIMES, &Componentwise, &FlowOptions::default()).is_err());
        assert!(check_strong_monotonicity(&conj, &a, &b, &ORDER_TIMES, &Componentwise, &FlowOptions::default())
            .unwrap()
            .holds);
    }
}
