//! Deterministic ODE machinery: fixed-step RK4 flows, perturbed-equilibrium
//! location, linear stability, and cooperativity / monotonicity checks.

use std::collections::VecDeque;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::error::{domain, structural, Error, Result};
use crate::games::{inf_distance, tail_sums_into, MixedProfile};
use crate::response::BestResponseField;

/// Width of the dead zone around zero in which a spectrum is `Marginal`.
pub const EPS_STABILITY: f64 = 1e-6;

/// Jacobian threshold for cooperativity and irreducibility.
pub const COOP_TOL: f64 = 1e-9;

/// Time after which strong monotonicity must be strict.
pub const T_STRICT: f64 = 0.1;

/// Margin a strictly ordered pair must exceed in every coordinate.
pub const STRICT_MARGIN: f64 = 1e-10;

/// Residual required before a point is accepted as an equilibrium by
/// [`classify_stability`].
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

/// A vector field `F: ℝᵈ → ℝᵈ`. Implementations must be re-entrant.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// Analytic `DF(x)`, when the field provides one.
    fn jacobian(&self, _x: &[f64]) -> Option<Result<DMatrix<f64>>> {
        None
    }

    /// Maps a state back onto the field's invariant domain after a step.
    fn project(&self, _x: &mut [f64]) {}

    fn describe(&self) -> String {
        format!("field(d={})", self.dim())
    }
}

/// `F(x) = A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearField {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(structural("linear field matrix must be square"));
        }
        let d = matrix.nrows();
        Ok(LinearField {
            matrix,
            offset: DVector::zeros(d),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(structural("linear field matrix must be square"));
        }
        LinearField::new(DMatrix::from_fn(d, d, |r, c| rows[r][c]))
    }

    pub fn with_offset(mut self, offset: &[f64]) -> Result<Self> {
        if offset.len() != self.matrix.nrows() {
            return Err(structural("offset length does not match the matrix"));
        }
        self.offset = DVector::from_column_slice(offset);
        Ok(self)
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.offset[r]
                + self
                    .matrix
                    .row(r)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
        Ok(())
    }

    fn jacobian(&self, _x: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(self.matrix.clone()))
    }

    fn describe(&self) -> String {
        format!("linear{:?}", self.matrix.as_slice())
    }
}

/// Wraps a closure as a field without a Jacobian.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(x, out);
        Ok(())
    }
}

/// Central-difference Jacobian with step `h`.
pub fn finite_difference_jacobian(
    field: &dyn VectorField,
    x: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    let d = field.dim();
    let mut jac = DMatrix::zeros(d, d);
    let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
    let (mut fp, mut fm) = (vec![0.0; d], vec![0.0; d]);
    for c in 0..d {
        xp[c] = x[c] + h;
        xm[c] = x[c] - h;
        field.eval(&xp, &mut fp)?;
        field.eval(&xm, &mut fm)?;
        for r in 0..d {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
        xp[c] = x[c];
        xm[c] = x[c];
    }
    Ok(jac)
}

/// Analytic Jacobian when available, central differences otherwise.
pub fn field_jacobian(field: &dyn VectorField, x: &[f64]) -> Result<DMatrix<f64>> {
    match field.jacobian(x) {
        Some(j) => j,
        None => finite_difference_jacobian(field, x, 1e-6),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowOptions {
    pub step: f64,
    pub method: Method,
    pub max_time: f64,
    /// States with `‖x‖∞` above this are reported as divergent.
    pub bound: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            step: 0.01,
            method: Method::Rk4,
            max_time: 1e6,
            bound: 1e12,
        }
    }
}

impl FlowOptions {
    pub fn with_step(step: f64) -> Result<Self> {
        let opts = FlowOptions {
            step,
            ..FlowOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 0.1) {
            return Err(domain(format!("flow step must lie in (0, 0.1], got {}", self.step)));
        }
        if !(self.max_time > 0.0) {
            return Err(domain("max_time must be positive"));
        }
        Ok(())
    }
}

/// Reusable RK4 stage buffers.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(d: usize) -> Self {
        Rk4 {
            k1: vec![0.0; d],
            k2: vec![0.0; d],
            k3: vec![0.0; d],
            k4: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }

    pub(crate) fn step(&mut self, field: &dyn VectorField, x: &mut [f64], h: f64) -> Result<()> {
        let Rk4 { k1, k2, k3, k4, tmp } = self;
        field.eval(x, k1)?;
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        field.eval(tmp, k2)?;
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        field.eval(tmp, k3)?;
        for i in 0..x.len() {
            tmp[i] = x[i] + h * k3[i];
        }
        field.eval(tmp, k4)?;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        field.project(x);
        Ok(())
    }
}

/// Integrates `x` forward by `t` with uniform steps no longer than
/// `opts.step`.
pub(crate) fn advance(
    field: &dyn VectorField,
    x: &mut [f64],
    t: f64,
    opts: &FlowOptions,
    rk: &mut Rk4,
) -> Result<()> {
    if t == 0.0 {
        return Ok(());
    }
    let n = (t / opts.step - 1e-9).ceil().max(1.0) as usize;
    let h = t / n as f64;
    for k in 0..n {
        rk.step(field, x, h)?;
        if x.iter().any(|v| !v.is_finite() || v.abs() > opts.bound) {
            return Err(Error::Divergence { step: k + 1 });
        }
    }
    Ok(())
}

/// RK4 approximation of `Φ_t(x0)`.
pub fn flow(field: &dyn VectorField, x0: &[f64], t: f64, opts: &FlowOptions) -> Result<Vec<f64>> {
    opts.validate()?;
    check_dim(field, x0)?;
    if !(t >= 0.0) || t > opts.max_time {
        return Err(domain(format!("flow time must lie in [0, {}], got {t}", opts.max_time)));
    }
    let mut x = x0.to_vec();
    let mut rk = Rk4::new(x.len());
    advance(field, &mut x, t, opts, &mut rk)?;
    Ok(x)
}

/// States `Φ_t(x0)` at each of the nondecreasing `times`.
pub fn flow_at_times(
    field: &dyn VectorField,
    x0: &[f64],
    times: &[f64],
    opts: &FlowOptions,
) -> Result<Vec<Vec<f64>>> {
    opts.validate()?;
    check_dim(field, x0)?;
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
        return Err(domain("flow times must be nonnegative and nondecreasing"));
    }
    let mut rk = Rk4::new(x0.len());
    let mut x = x0.to_vec();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        advance(field, &mut x, t - now, opts, &mut rk)?;
        now = t;
        out.push(x.clone());
    }
    Ok(out)
}

fn check_dim(field: &dyn VectorField, x: &[f64]) -> Result<()> {
    if x.len() != field.dim() {
        return Err(structural(format!(
            "state has {} coordinates, field expects {}",
            x.len(),
            field.dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StabilityLabel {
    LinearlyUnstable,
    NotLinearlyUnstable,
    Marginal { eps: f64 },
}

impl StabilityLabel {
    pub fn from_spectrum(spectrum: &[Complex<f64>], eps: f64) -> Self {
        let max_re = spectrum.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        if max_re > eps {
            StabilityLabel::LinearlyUnstable
        } else if max_re >= -eps {
            StabilityLabel::Marginal { eps }
        } else {
            StabilityLabel::NotLinearlyUnstable
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            StabilityLabel::LinearlyUnstable => "linearly_unstable",
            StabilityLabel::NotLinearlyUnstable => "not_linearly_unstable",
            StabilityLabel::Marginal { .. } => "marginal",
        }
    }

    pub fn is_unstable(&self) -> bool {
        matches!(self, StabilityLabel::LinearlyUnstable)
    }
}

impl Serialize for StabilityLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

/// A located perturbed equilibrium with its tangent-space spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub point: MixedProfile,
    pub residual: f64,
    pub spectrum: Vec<Complex<f64>>,
    pub label: StabilityLabel,
}

impl EquilibriumReport {
    pub fn max_real_part(&self) -> f64 {
        self.spectrum.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Serialize for EquilibriumReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire<'a> {
            point: Vec<Vec<f64>>,
            residual: f64,
            eigenvalues: Vec<[f64; 2]>,
            label: &'a StabilityLabel,
        }
        Wire {
            point: self.point.to_blocks(),
            residual: self.residual,
            eigenvalues: self.spectrum.iter().map(|z| [z.re, z.im]).collect(),
            label: &self.label,
        }
        .serialize(s)
    }
}

/// Restricts a full-coordinate Jacobian to the tangent chart obtained by
/// dropping the last coordinate of each block.
pub fn reduced_jacobian(full: &DMatrix<f64>, actions: &[usize]) -> DMatrix<f64> {
    let chart = chart_indices(actions);
    let k = chart.len();
    DMatrix::from_fn(k, k, |r, c| {
        let (row, (col, last)) = (chart[r].0, chart[c]);
        full[(row, col)] - full[(row, last)]
    })
}

/// `(full index, last index of its block)` for every chart coordinate.
fn chart_indices(actions: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut off = 0;
    for &m in actions {
        for k in 0..m - 1 {
            out.push((off + k, off + m - 1));
        }
        off += m;
    }
    out
}

fn spectrum_of(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut eig: Vec<Complex<f64>> = m.clone().complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    eig
}

/// Eigenvalues of `DF(p)` on the tangent chart and the resulting label.
pub fn classify_stability(
    field: &BestResponseField,
    p: &MixedProfile,
    eps_spec: f64,
) -> Result<EquilibriumReport> {
    let f = field.vector_field(p)?;
    let residual = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if residual > EQUILIBRIUM_TOL {
        return Err(Error::Precondition(format!(
            "not an equilibrium: residual {residual:e} exceeds {EQUILIBRIUM_TOL:e}"
        )));
    }
    let jac = reduced_jacobian(&field.jacobian(p)?, field.actions());
    let spectrum = spectrum_of(&jac);
    let label = StabilityLabel::from_spectrum(&spectrum, eps_spec);
    Ok(EquilibriumReport {
        point: p.clone(),
        residual,
        spectrum,
        label,
    })
}

fn residual_of(field: &BestResponseField, x: &[f64], buf: &mut [f64]) -> Result<f64> {
    field.eval(x, buf)?;
    Ok(buf.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

/// Damped Newton on the tangent chart. Returns `None` when the iteration
/// stalls or leaves the simplex.
fn newton(
    field: &BestResponseField,
    mut x: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Option<(Vec<f64>, f64)>> {
    let actions = field.actions();
    let chart = chart_indices(actions);
    let mut fx = vec![0.0; x.len()];
    let mut r = residual_of(field, &x, &mut fx)?;
    let mut polish = 0;
    for _ in 0..max_iter {
        if r <= tol {
            // a few extra steps drive the residual to rounding level
            polish += 1;
            if polish > 3 {
                break;
            }
        }
        let jac = reduced_jacobian(&(field.br_jacobian_flat(&x)? - DMatrix::identity(x.len(), x.len())), actions);
        let g = DVector::from_iterator(chart.len(), chart.iter().map(|&(i, _)| fx[i]));
        let Some(delta) = jac.lu().solve(&(-g)) else {
            break;
        };
        let mut full = vec![0.0; x.len()];
        for (k, &(i, last)) in chart.iter().enumerate() {
            full[i] += delta[k];
            full[last] -= delta[k];
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut trial = x.clone();
        let mut ft = vec![0.0; x.len()];
        for _ in 0..40 {
            for k in 0..x.len() {
                trial[k] = x[k] + alpha * full[k];
            }
            if trial.iter().all(|v| *v >= 0.0) {
                crate::games::project_flat(actions, &mut trial);
                let rt = residual_of(field, &trial, &mut ft)?;
                if rt < r || (r <= tol && rt <= r) {
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        let improved = residual_of(field, &trial, &mut ft)?;
        let done = improved >= r && r <= tol;
        x.copy_from_slice(&trial);
        fx.copy_from_slice(&ft);
        r = improved;
        if done {
            break;
        }
    }
    Ok((r <= tol).then_some((x, r)))
}

/// Locates a perturbed equilibrium from `x0`.
///
/// Newton on the tangent chart is tried first since it also reaches
/// equilibria that repel the damped iteration. If it fails, the damped
/// iteration `x ← ½x + ½br(x)` runs until `tol` and Newton polishes the result.
pub fn find_pne(
    field: &BestResponseField,
    x0: &MixedProfile,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumReport> {
    if !(tol > 0.0) {
        return Err(domain("tolerance must be positive"));
    }
    if x0.actions() != field.actions() {
        return Err(structural("start profile does not match the game"));
    }
    let (point, _) = match newton(field, x0.as_slice().to_vec(), tol, 60)? {
        Some(hit) => hit,
        None => {
            let mut x = x0.as_slice().to_vec();
            let mut br = vec![0.0; x.len()];
            let mut scratch = field.scratch();
            let mut r = f64::INFINITY;
            for _ in 0..max_iter {
                field.best_response_into(&x, &mut br, &mut scratch)?;
                r = inf_distance(&br, &x);
                if r <= tol {
                    break;
                }
                for (xi, bi) in x.iter_mut().zip(&br) {
                    *xi = 0.5 * *xi + 0.5 * bi;
                }
            }
            if r > tol {
                return Err(Error::NonConvergence {
                    iterations: max_iter,
                    residual: r,
                    last: x,
                });
            }
            match newton(field, x.clone(), tol, 10)? {
                Some(hit) => hit,
                None => (x, r),
            }
        }
    };
    let p = MixedProfile::projected(field.actions(), point);
    classify_stability(field, &p, EPS_STABILITY)
}

/// The perturbed equilibria found by [`enumerate_pne`].
#[derive(Debug, Clone, Serialize)]
pub struct PneCatalog {
    pub reports: Vec<EquilibriumReport>,
    /// Starts that did not converge.
    pub dropped: usize,
}

impl PneCatalog {
    /// ≤_T-smallest and largest entries (first and last after sorting).
    pub fn extremes(&self) -> Option<(&EquilibriumReport, &EquilibriumReport)> {
        Some((self.reports.first()?, self.reports.last()?))
    }
}

fn random_interior(actions: &[usize], rng: &mut ChaCha8Rng) -> MixedProfile {
    let mut data = Vec::with_capacity(actions.iter().sum());
    for &m in actions {
        let w: Vec<f64> = (0..m).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let s: f64 = w.iter().sum();
        data.extend(w.into_iter().map(|v| v / s));
    }
    MixedProfile::projected(actions, data)
}

/// Multistart search from every pure profile and `seeds` random interior
/// points, deduplicated at distance `10·tol` and sorted along a linear
/// extension of ≤_T (total tail mass).
pub fn enumerate_pne(
    field: &BestResponseField,
    seeds: usize,
    tol: f64,
    rng_seed: u64,
) -> Result<PneCatalog> {
    if seeds == 0 {
        return Err(domain("enumerate_pne needs at least one random seed"));
    }
    let game = field.game();
    let mut starts: Vec<MixedProfile> = (0..game.profile_count())
        .map(|k| MixedProfile::vertex(field.actions(), &game.profile_of(k)))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    starts.extend((0..seeds).map(|_| random_interior(field.actions(), &mut rng)));

    let mut reports: Vec<EquilibriumReport> = Vec::new();
    let mut dropped = 0;
    for s in &starts {
        match find_pne(field, s, tol, 100_000) {
            Ok(rep) => {
                if !reports.iter().any(|r| r.point.distance_inf(&rep.point) <= 10.0 * tol) {
                    reports.push(rep);
                }
            }
            Err(Error::NonConvergence { .. }) | Err(Error::Precondition(_)) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    let mass = |r: &EquilibriumReport| {
        let mut v = vec![0.0; field.t_dim()];
        tail_sums_into(field.actions(), r.point.as_slice(), &mut v);
        v.iter().sum::<f64>()
    };
    reports.sort_by(|a, b| mass(a).total_cmp(&mass(b)));
    Ok(PneCatalog { reports, dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CooperativityWitness {
    NegativeOffDiagonal {
        sample: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    Reducible {
        sample: usize,
        unreachable: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CooperativityReport {
    pub holds: bool,
    pub witness: Option<CooperativityWitness>,
    /// Smallest off-diagonal entry seen over all samples.
    pub min_off_diagonal: f64,
}

/// Nodes not reachable from node 0 along edges `r → c` where `adj(r, c)`.
fn unreachable_from_zero(d: usize, adj: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut seen = vec![false; d];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(r) = queue.pop_front() {
        for c in 0..d {
            if !seen[c] && adj(r, c) {
                seen[c] = true;
                queue.push_back(c);
            }
        }
    }
    (0..d).filter(|&k| !seen[k]).collect()
}

/// Checks that `DF` has off-diagonal entries `≥ −tol` and that the graph of
/// entries with `|DF_ij| > tol` is strongly connected at every sample.
pub fn check_cooperative_irreducible(
    field: &dyn VectorField,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<CooperativityReport> {
    let d = field.dim();
    let mut min_off = f64::INFINITY;
    for (s, x) in samples.iter().enumerate() {
        check_dim(field, x)?;
        let jac = field_jacobian(field, x)?;
        for r in 0..d {
            for c in (0..d).filter(|&c| c != r) {
                let v = jac[(r, c)];
                min_off = min_off.min(v);
                if v < -tol {
                    return Ok(CooperativityReport {
                        holds: false,
                        witness: Some(CooperativityWitness::NegativeOffDiagonal {
                            sample: s,
                            row: r,
                            col: c,
                            value: v,
                        }),
                        min_off_diagonal: min_off,
                    });
                }
            }
        }
        let edge = |r: usize, c: usize| r != c && jac[(r, c)].abs() > tol;
        let mut unreachable = unreachable_from_zero(d, edge);
        if unreachable.is_empty() {
            unreachable = unreachable_from_zero(d, |r, c| edge(c, r));
        }
        if !unreachable.is_empty() {
            return Ok(CooperativityReport {
                holds: false,
                witness: Some(CooperativityWitness::Reducible {
                    sample: s,
                    unreachable,
                }),
                min_off_diagonal: min_off,
            });
        }
    }
    Ok(CooperativityReport {
        holds: true,
        witness: None,
        min_off_diagonal: min_off,
    })
}

/// A partial order on states used by [`check_strong_monotonicity`].
pub trait StateOrder {
    fn leq(&self, a: &[f64], b: &[f64]) -> bool;

    /// Smallest coordinate gap by which `b` dominates `a`; negative when the
    /// order fails somewhere.
    fn margin(&self, a: &[f64], b: &[f64]) -> f64;
}

/// The componentwise order on `ℝᵈ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Componentwise;

impl StateOrder for Componentwise {
    fn leq(&self, a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| x <= y)
    }

    fn margin(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| y - x).fold(f64::INFINITY, f64::min)
    }
}

/// ≤_T on full mixed-strategy coordinates, via tail sums.
#[derive(Debug, Clone)]
pub struct StochasticDominance {
    actions: Vec<usize>,
}

impl StochasticDominance {
    pub fn new(actions: &[usize]) -> Self {
        StochasticDominance {
            actions: actions.to_vec(),
        }
    }

    fn tails(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; x.len() - self.actions.len()];
        tail_sums_into(&self.actions, x, &mut v);
        v
    }
}

impl StateOrder for StochasticDominance {
    fn leq(&self, a: &[f64], b: &[f64]) -> bool {
        Componentwise.leq(&self.tails(a), &self.tails(b))
    }

    fn margin(&self, a: &[f64], b: &[f64]) -> f64 {
        Componentwise.margin(&self.tails(a), &self.tails(b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub holds: bool,
    /// Order margin at each requested time.
    pub margins: Vec<f64>,
    /// Smallest margin over times `≥ T_STRICT`.
    pub min_strict_margin: f64,
}

/// Integrates both states and checks the order at every requested time,
/// strictly (margin `≥ STRICT_MARGIN`) from `T_STRICT` on.
pub fn check_strong_monotonicity(
    field: &dyn VectorField,
    x0: &[f64],
    y0: &[f64],
    times: &[f64],
    order: &dyn StateOrder,
    opts: &FlowOptions,
) -> Result<MonotonicityReport> {
    if x0 == y0 {
        return Err(domain("strong monotonicity needs two distinct states"));
    }
    if !order.leq(x0, y0) {
        return Err(domain("initial states are not ordered"));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let xs = flow_at_times(field, x0, &sorted, opts)?;
    let ys = flow_at_times(field, y0, &sorted, opts)?;
    let mut holds = true;
    let mut margins = Vec::with_capacity(sorted.len());
    let mut min_strict = f64::INFINITY;
    for ((t, x), y) in sorted.iter().zip(&xs).zip(&ys) {
        let m = order.margin(x, y);
        margins.push(m);
        if !order.leq(x, y) {
            holds = false;
        }
        if *t >= T_STRICT {
            min_strict = min_strict.min(m);
            if m < STRICT_MARGIN {
                holds = false;
            }
        }
    }
    Ok(MonotonicityReport {
        holds,
        margins,
        min_strict_margin: min_strict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{t_operator, Game};
    use approx::assert_abs_diff_eq;

    fn sigma(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    /// Roots of `p − σ((3p − 2)/η)` by bracketing on a fine grid and bisecting.
    pub(crate) fn bisection_roots(eta: f64) -> Vec<f64> {
        let g = |p: f64| p - sigma((3.0 * p - 2.0) / eta);
        let n = 20_000;
        let mut roots = Vec::new();
        for k in 0..n {
            let (mut a, mut b) = (k as f64 / n as f64, (k + 1) as f64 / n as f64);
            if g(a) * g(b) > 0.0 {
                continue;
            }
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if g(a) * g(m) <= 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            roots.push(0.5 * (a + b));
        }
        roots
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let f = LinearField::from_rows(&[vec![-1.0]]).unwrap();
        let x = flow(&f, &[1.0], 1.0, &FlowOptions::with_step(0.01).unwrap()).unwrap();
        assert_abs_diff_eq!(x[0], (-1.0f64).exp(), epsilon = 1e-8);
        assert_abs_diff_eq!(x[0], 0.367_879_4, epsilon = 1e-7);
        assert_eq!(flow(&f, &[0.7], 0.0, &FlowOptions::default()).unwrap(), vec![0.7]);
    }

    #[test]
    fn flow_validates_options_and_divergence() {
        let f = LinearField::from_rows(&[vec![1.0]]).unwrap();
        assert!(FlowOptions::with_step(0.2).is_err());
        assert!(FlowOptions::with_step(0.0).is_err());
        let opts = FlowOptions {
            bound: 10.0,
            ..FlowOptions::default()
        };
        assert!(matches!(flow(&f, &[1.0], 5.0, &opts), Err(Error::Divergence { .. })));
        assert!(flow(&f, &[1.0, 2.0], 1.0, &opts).is_err());
        assert!(flow(&f, &[1.0], -1.0, &opts).is_err());
    }

    #[test]
    fn pbr_flow_semigroup() {
        let f = BestResponseField::logit(Game::coordination(), 0.5).unwrap();
        let x0 = [0.3, 0.7, 0.8, 0.2];
        let opts = FlowOptions::default();
        let a = flow(&f, &flow(&f, &x0, 1.0, &opts).unwrap(), 1.0, &opts).unwrap();
        let b = flow(&f, &x0, 2.0, &opts).unwrap();
        assert!(inf_distance(&a, &b) <= 1e-7);
    }

    #[test]
    fn roots_of_the_symmetric_family() {
        assert_eq!(bisection_roots(0.2).len(), 3);
        assert_eq!(bisection_roots(0.5).len(), 1);
        assert_eq!(bisection_roots(10.0).len(), 1);
    }

    #[test]
    fn find_pne_locates_all_three_roots() {
        let f = BestResponseField::logit(Game::coordination(), 0.2).unwrap();
        let oracle = bisection_roots(0.2);
        for (seed, root) in [0.01, 0.667, 0.99].iter().zip(&oracle) {
            let x0 = MixedProfile::new(vec![vec![1.0 - seed, *seed]; 2]).unwrap();
            let rep = find_pne(&f, &x0, 1e-10, 10_000).unwrap();
            assert!(rep.residual <= 1e-10);
            for i in 0..2 {
                assert_abs_diff_eq!(rep.point.block(i)[1], *root, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn large_eta_has_a_unique_pne_near_uniform() {
        let f = BestResponseField::logit(Game::coordination(), 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let first = find_pne(&f, &random_interior(&[2, 2], &mut rng), 1e-10, 10_000).unwrap();
        assert!(first.point.distance_inf(&MixedProfile::uniform(&[2, 2])) <= 0.1);
        for _ in 0..20 {
            let rep = find_pne(&f, &random_interior(&[2, 2], &mut rng), 1e-10, 10_000).unwrap();
            assert!(rep.point.distance_inf(&first.point) <= 1e-8);
        }
        assert_eq!(first.label, StabilityLabel::NotLinearlyUnstable);
    }

    #[test]
    fn enumerate_counts_and_order() {
        let f = BestResponseField::logit(Game::coordination(), 0.2).unwrap();
        let cat = enumerate_pne(&f, 20, 1e-10, 1).unwrap();
        assert_eq!(cat.reports.len(), 3);
        for w in cat.reports.windows(2) {
            assert!(crate::games::t_leq(&w[0].point, &w[1].point).unwrap());
        }
        let labels: Vec<_> = cat.reports.iter().map(|r| r.label).collect();
        assert_eq!(
            labels,
            vec![
                StabilityLabel::NotLinearlyUnstable,
                StabilityLabel::LinearlyUnstable,
                StabilityLabel::NotLinearlyUnstable
            ]
        );
        let f = BestResponseField::logit(Game::coordination(), 10.0).unwrap();
        assert_eq!(enumerate_pne(&f, 20, 1e-10, 1).unwrap().reports.len(), 1);
        let f = BestResponseField::logit(Game::coordination(), 0.5).unwrap();
        assert_eq!(enumerate_pne(&f, 20, 1e-10, 1).unwrap().reports.len(), 1);
    }

    #[test]
    fn classifier_agrees_with_slope_oracle() {
        for eta in [0.2, 0.25, 0.3, 0.5, 1.0, 10.0] {
            let f = BestResponseField::logit(Game::coordination(), eta).unwrap();
            for p in bisection_roots(eta) {
                let x = MixedProfile::new(vec![vec![1.0 - p, p]; 2]).unwrap();
                let x = find_pne(&f, &x, 1e-12, 1000).unwrap().point;
                let rep = classify_stability(&f, &x, EPS_STABILITY).unwrap();
                let z = (3.0 * p - 2.0) / eta;
                let slope = sigma(z) * (1.0 - sigma(z)) * 3.0 / eta;
                // reduced Jacobian is [[-1, s], [s, -1]]: eigenvalues -1 ± s
                assert_abs_diff_eq!(rep.max_real_part(), slope - 1.0, epsilon = 1e-6);
                assert_eq!(rep.label.is_unstable(), slope > 1.0);
            }
        }
    }

    #[test]
    fn classify_rejects_non_equilibria_and_linear_field_is_stable() {
        let f = BestResponseField::logit(Game::coordination(), 0.5).unwrap();
        assert!(matches!(
            classify_stability(&f, &MixedProfile::uniform(&[2, 2]), EPS_STABILITY),
            Err(Error::Precondition(_))
        ));
        let lin = LinearField::from_rows(&[vec![-1.0]]).unwrap();
        let spec = spectrum_of(&lin.matrix);
        assert_eq!(spec, vec![Complex::new(-1.0, 0.0)]);
        assert_eq!(
            StabilityLabel::from_spectrum(&spec, EPS_STABILITY),
            StabilityLabel::NotLinearlyUnstable
        );
        assert_eq!(
            StabilityLabel::from_spectrum(&[Complex::new(1e-8, 0.0)], EPS_STABILITY),
            StabilityLabel::Marginal { eps: EPS_STABILITY }
        );
    }

    #[test]
    fn cooperativity_examples() {
        let coop = LinearField::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let pts = vec![vec![0.0, 0.0], vec![1.0, 2.0]];
        assert!(check_cooperative_irreducible(&coop, &pts, COOP_TOL).unwrap().holds);
        let diag = LinearField::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let r = check_cooperative_irreducible(&diag, &pts, COOP_TOL).unwrap();
        assert!(!r.holds);
        assert!(matches!(r.witness, Some(CooperativityWitness::Reducible { .. })));
        let comp = LinearField::from_rows(&[vec![-1.0, -1.0], vec![1.0, -1.0]]).unwrap();
        let r = check_cooperative_irreducible(&comp, &pts, COOP_TOL).unwrap();
        assert!(matches!(
            r.witness,
            Some(CooperativityWitness::NegativeOffDiagonal { row: 0, col: 1, .. })
        ));
        // one-way coupling is not strongly connected
        let tri = LinearField::from_rows(&[vec![-1.0, 1.0], vec![0.0, -1.0]]).unwrap();
        assert!(!check_cooperative_irreducible(&tri, &pts, COOP_TOL).unwrap().holds);
    }

    #[test]
    fn conjugate_field_of_coordination_game_is_cooperative() {
        let f = BestResponseField::logit(Game::coordination(), 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..100)
            .map(|_| t_operator(&random_interior(&[2, 2], &mut rng)).into_vec())
            .collect();
        let conj = f.conjugate();
        assert!(check_cooperative_irreducible(&conj, &pts, COOP_TOL).unwrap().holds);
        // same verdict from the finite-difference oracle
        let fd = FnField::new(2, |v: &[f64], out: &mut [f64]| conj.eval(v, out).unwrap());
        assert!(check_cooperative_irreducible(&fd, &pts, COOP_TOL).unwrap().holds);
    }

    #[test]
    fn strong_monotonicity_examples() {
        let lin = LinearField::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let opts = FlowOptions::default();
        let r = check_strong_monotonicity(&lin, &[0.0, 0.0], &[1.0, 0.0], &[1.0], &Componentwise, &opts)
            .unwrap();
        assert!(r.holds);
        // exp(At)(1,0): ((1 + e^{-2t})/2, (1 − e^{-2t})/2)
        let e = (-2.0f64).exp();
        assert_abs_diff_eq!(r.margins[0], (1.0 - e) / 2.0, epsilon = 1e-9);
        assert!(check_strong_monotonicity(&lin, &[0.0, 0.0], &[0.0, 0.0], &[1.0], &Componentwise, &opts).is_err());
        assert!(check_strong_monotonicity(&lin, &[1.0, 0.0], &[0.0, 0.0], &[1.0], &Componentwise, &opts).is_err());

        let f = BestResponseField::logit(Game::coordination(), 0.5).unwrap();
        let r = check_strong_monotonicity(
            &f.conjugate(),
            &[0.0, 0.0],
            &[1.0, 1.0],
            &[1.0, 5.0, 10.0],
            &Componentwise,
            &opts,
        )
        .unwrap();
        assert!(r.holds, "{r:?}");
        // same statement in full coordinates under ≤_T
        let r = check_strong_monotonicity(
            &f,
            MixedProfile::lowest(&[2, 2]).as_slice(),
            MixedProfile::highest(&[2, 2]).as_slice(),
            &[1.0, 5.0, 10.0],
            &StochasticDominance::new(&[2, 2]),
            &opts,
        )
        .unwrap();
        assert!(r.holds);
    }

    #[test]
    fn simplex_is_forward_invariant() {
        let f = BestResponseField::logit(Game::coordination(), 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let opts = FlowOptions::default();
        let mut rk = Rk4::new(4);
        for _ in 0..20 {
            let mut x = random_interior(&[2, 2], &mut rng).into_vec();
            for _ in 0..5000 {
                // one raw step without projection: drift must stay tiny
                let mut raw = x.clone();
                let mut k = [vec![0.0; 4], vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]];
                let h = opts.step;
                f.eval(&raw, &mut k[0]).unwrap();
                let mut tmp: Vec<f64> = raw.iter().zip(&k[0]).map(|(a, b)| a + 0.5 * h * b).collect();
                f.eval(&tmp, &mut k[1]).unwrap();
                tmp = raw.iter().zip(&k[1]).map(|(a, b)| a + 0.5 * h * b).collect();
                f.eval(&tmp, &mut k[2]).unwrap();
                tmp = raw.iter().zip(&k[2]).map(|(a, b)| a + h * b).collect();
                f.eval(&tmp, &mut k[3]).unwrap();
                for i in 0..4 {
                    raw[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
                }
                for b in [&raw[0..2], &raw[2..4]] {
                    assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    assert!(b.iter().all(|v| *v >= -1e-12));
                }
                rk.step(&f, &mut x, h).unwrap();
            }
        }
    }

    #[test]
    fn rk4_is_fourth_order_on_pbr_field() {
        let f = BestResponseField::logit(Game::coordination(), 0.3).unwrap();
        let x0 = [0.6, 0.4, 0.2, 0.8];
        let at = |h: f64| flow(&f, &x0, 1.0, &FlowOptions::with_step(h).unwrap()).unwrap();
        let reference = at(0.1 / 16.0);
        let coarse = inf_distance(&at(0.1), &reference);
        let fine = inf_distance(&at(0.05), &reference);
        assert!(coarse / fine >= 12.0, "ratio {}", coarse / fine);
    }
}
