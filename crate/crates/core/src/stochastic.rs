//! Stochastic simulators (Robbins-Monro, stochastic fictitious play,
//! decreasing-noise diffusion), the interpolated process, asymptotic
//! pseudo-trajectory distances, ω-rate bounds and noise statistics.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{domain, structural, Error, Result};
use crate::flow::{FlowOptions, Rk4, VectorField};
use crate::games::{inf_distance, tail_sums_into, MixedProfile};
use crate::response::BestResponseField;

/// Generator behind every simulator. One independent stream per run.
pub type SimRng = ChaCha8Rng;

/// The stream for run `stream` of an experiment seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Below this index power sums are added term by term.
const DIRECT_TERMS: u64 = 1000;

fn em_tail_from(a: f64, p: f64) -> f64 {
    // Euler-Maclaurin for Σ_{k≥a} k^{-p}, p > 1.
    a.powf(1.0 - p) / (p - 1.0) + a.powf(-p) / 2.0 + p * a.powf(-p - 1.0) / 12.0
        - p * (p + 1.0) * (p + 2.0) * a.powf(-p - 3.0) / 720.0
        + p * (p + 1.0) * (p + 2.0) * (p + 3.0) * (p + 4.0) * a.powf(-p - 5.0) / 30240.0
}

/// `Σ_{k=1}^{n} k^{-p}`.
pub fn power_sum(n: u64, p: f64) -> f64 {
    if n < DIRECT_TERMS {
        return (1..=n).rev().map(|k| (k as f64).powf(-p)).sum();
    }
    let head: f64 = (1..DIRECT_TERMS).rev().map(|k| (k as f64).powf(-p)).sum();
    let (a, b) = (DIRECT_TERMS as f64, n as f64);
    let f = |x: f64| x.powf(-p);
    let d1 = |x: f64| -p * x.powf(-p - 1.0);
    let d3 = |x: f64| -p * (p + 1.0) * (p + 2.0) * x.powf(-p - 3.0);
    let d5 = |x: f64| -p * (p + 1.0) * (p + 2.0) * (p + 3.0) * (p + 4.0) * x.powf(-p - 5.0);
    let integral = if (p - 1.0).abs() < 1e-15 {
        (b / a).ln()
    } else {
        (b.powf(1.0 - p) - a.powf(1.0 - p)) / (1.0 - p)
    };
    let block = integral + (f(a) + f(b)) / 2.0 + (d1(b) - d1(a)) / 12.0 - (d3(b) - d3(a)) / 720.0
        + (d5(b) - d5(a)) / 30240.0;
    head + block
}

/// `Σ_{k=n}^{∞} k^{-p}` for `p > 1`.
pub fn power_tail(n: u64, p: f64) -> f64 {
    let n = n.max(1);
    if n >= DIRECT_TERMS {
        return em_tail_from(n as f64, p);
    }
    let head: f64 = (n..DIRECT_TERMS).rev().map(|k| (k as f64).powf(-p)).sum();
    head + em_tail_from(DIRECT_TERMS as f64, p)
}

/// Step sizes `γₙ` of a stochastic approximation.
#[derive(Clone)]
pub enum StepSchedule {
    /// `γₙ = 1/n`.
    Harmonic,
    /// `γₙ = n^{-α}`, `α ∈ (1/2, 1]`.
    PowerLaw { alpha: f64 },
    Custom {
        name: String,
        gamma: Arc<dyn Fn(u64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl StepSchedule {
    pub fn power_law(alpha: f64) -> Result<Self> {
        if !(alpha > 0.5 && alpha <= 1.0) {
            return Err(domain(format!("power-law exponent must lie in (0.5, 1], got {alpha}")));
        }
        Ok(StepSchedule::PowerLaw { alpha })
    }

    /// A user schedule. The first 10⁴ terms must be positive and
    /// nonincreasing, and `n γₙ` at `n = 10⁴` must stay above `γ₁ / 10`,
    /// which rejects schedules decaying visibly faster than `1/n`.
    pub fn custom(
        name: impl Into<String>,
        gamma: Arc<dyn Fn(u64) -> f64 + Send + Sync>,
    ) -> Result<Self> {
        const N: u64 = 10_000;
        let mut prev = f64::INFINITY;
        for n in 1..=N {
            let g = gamma(n);
            if !(g > 0.0) || !g.is_finite() || g > prev {
                return Err(domain(format!(
                    "custom schedule must be positive and nonincreasing (fails at n = {n})"
                )));
            }
            prev = g;
        }
        if (N as f64) * gamma(N) < 0.1 * gamma(1) {
            return Err(domain("custom schedule fails the divergent-sum tail test"));
        }
        Ok(StepSchedule::Custom {
            name: name.into(),
            gamma,
        })
    }

    pub fn describe(&self) -> String {
        match self {
            StepSchedule::Harmonic => "harmonic".into(),
            StepSchedule::PowerLaw { alpha } => format!("power-law({alpha})"),
            StepSchedule::Custom { name, .. } => format!("custom({name})"),
        }
    }

    fn exponent(&self) -> Option<f64> {
        match self {
            StepSchedule::Harmonic => Some(1.0),
            StepSchedule::PowerLaw { alpha } => Some(*alpha),
            StepSchedule::Custom { .. } => None,
        }
    }

    /// `γₙ` for `n ≥ 1`.
    pub fn gamma(&self, n: u64) -> f64 {
        match self {
            StepSchedule::Harmonic => 1.0 / n as f64,
            StepSchedule::PowerLaw { alpha } => (n as f64).powf(-alpha),
            StepSchedule::Custom { gamma, .. } => gamma(n),
        }
    }

    /// `τₙ = Σ_{i≤n} γᵢ`, with `τ₀ = 0`.
    pub fn tau(&self, n: u64) -> f64 {
        match self.exponent() {
            Some(a) => power_sum(n, a),
            None => (1..=n).map(|k| self.gamma(k)).sum(),
        }
    }

    /// Largest `i` with `τᵢ ≤ t`.
    pub fn index_at(&self, t: f64) -> u64 {
        if t <= 0.0 {
            return 0;
        }
        if self.exponent().is_none() {
            let (mut i, mut tau) = (0u64, 0.0);
            loop {
                let next = tau + self.gamma(i + 1);
                if next > t {
                    return i;
                }
                tau = next;
                i += 1;
            }
        }
        let mut hi = 1u64;
        while self.tau(hi) <= t {
            hi *= 2;
        }
        let mut lo = hi / 2;
        // invariant: tau(lo) <= t < tau(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.tau(mid) <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// `γ̄(t) = γ_{i+1}` on `[τᵢ, τᵢ₊₁)`.
    pub fn gamma_bar(&self, t: f64) -> f64 {
        self.gamma(self.index_at(t) + 1)
    }

    /// `Σ_{k≥n} γₖ^power`, in closed form for the built-in schedules.
    fn power_tail_sum(&self, n: u64, power: f64) -> Result<f64> {
        match self.exponent() {
            Some(a) if a * power > 1.0 => Ok(power_tail(n, a * power)),
            Some(_) => Err(domain("step-size power series diverges")),
            None => accelerated_tail(n, |k| self.gamma(k).powf(power)),
        }
    }
}

/// `Σ_{k≥n} term(k)` for a positive, eventually nonincreasing sequence, summed
/// in doubling blocks and closed with a geometric estimate from the ratio of
/// the last two block sums.
fn accelerated_tail(n: u64, term: impl Fn(u64) -> f64) -> Result<f64> {
    const MAX_BLOCK: u64 = 1 << 26;
    let n = n.max(1);
    let mut total = 0.0;
    let mut start = n;
    let mut len = 64u64;
    let mut prev_block: Option<f64> = None;
    loop {
        let block: f64 = (start..start + len).map(&term).sum();
        total += block;
        if block == 0.0 || block <= 1e-17 * total {
            return Ok(total);
        }
        if let Some(prev) = prev_block {
            // block lengths double, so a k^{-p} tail gives ratio 2^{1-p}
            let ratio = block / prev;
            if ratio < 0.999 {
                let rest = block * ratio / (1.0 - ratio);
                if rest <= 1e-12 * total {
                    return Ok(total + rest);
                }
                if len >= MAX_BLOCK {
                    return Ok(total + rest);
                }
            } else if len >= MAX_BLOCK {
                return Err(domain("series tail does not converge"));
            }
        }
        prev_block = Some(block);
        start += len;
        len *= 2;
    }
}

/// Identity and provenance of a simulated path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryMeta {
    pub schedule: String,
    pub seed: u64,
    pub field: String,
    pub stride: usize,
}

/// Time-stamped states. `indices[k]` is the iteration number of knot `k`
/// (the Euler step count for diffusions).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    indices: Vec<u64>,
    states: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn from_samples(
        dim: usize,
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
        meta: TrajectoryMeta,
    ) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(structural("a trajectory needs as many states as times, at least one"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("trajectory times must be strictly increasing"));
        }
        if states.iter().any(|s| s.len() != dim || s.iter().any(|v| !v.is_finite())) {
            return Err(domain("trajectory states must be finite with the declared dimension"));
        }
        Ok(Trajectory {
            dim,
            indices: (0..times.len() as u64).collect(),
            times,
            states: states.into_iter().flatten().collect(),
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn time_range(&self) -> (f64, f64) {
        (self.times[0], self.times[self.len() - 1])
    }

    /// The piecewise-affine interpolated process at time `t`. Knots return
    /// the stored state exactly.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        let (lo, hi) = self.time_range();
        if !(t >= lo && t <= hi) {
            return Err(Error::Range { t, lo, hi });
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        if self.times[k] == t || k + 1 == self.len() {
            return Ok(self.state(k).to_vec());
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let s = (t - t0) / (t1 - t0);
        let (a, b) = (self.state(k), self.state(k + 1));
        Ok(a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect())
    }

    /// CSV with header `t,x_0,…,x_{D-1}` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim).map(|i| format!("x_{i}")).collect();
        writeln!(w, "t,{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(self.states()) {
            write!(w, "{t:.16e}")?;
            for v in x {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Which iterates a simulator keeps: every `stride`-th plus the last
/// `dense_tail` iterates, and always the first and last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StoragePolicy {
    pub stride: usize,
    pub dense_tail: usize,
}

impl StoragePolicy {
    pub fn full() -> Self {
        StoragePolicy {
            stride: 1,
            dense_tail: 0,
        }
    }

    pub fn strided(stride: usize, dense_tail: usize) -> Self {
        StoragePolicy {
            stride: stride.max(1),
            dense_tail,
        }
    }

    /// Smallest stride keeping a run of `steps` iterates of dimension `dim`
    /// within `bytes`.
    pub fn within_budget(steps: u64, dim: usize, bytes: usize) -> Self {
        let per_knot = (dim + 2) * 8;
        let knots = (bytes / per_knot).max(2) as u64;
        StoragePolicy::strided(steps.div_ceil(knots).max(1) as usize, 0)
    }
}

/// 64 MB per run.
pub const STORAGE_BUDGET: usize = 64 << 20;

struct Recorder {
    policy: StoragePolicy,
    dim: usize,
    count: u64,
    times: Vec<f64>,
    indices: Vec<u64>,
    states: Vec<f64>,
    tail: VecDeque<(f64, u64, Vec<f64>)>,
    last: Option<(f64, u64, Vec<f64>)>,
}

impl Recorder {
    fn new(policy: StoragePolicy, dim: usize) -> Self {
        Recorder {
            policy,
            dim,
            count: 0,
            times: Vec::new(),
            indices: Vec::new(),
            states: Vec::new(),
            tail: VecDeque::new(),
            last: None,
        }
    }

    fn record(&mut self, t: f64, index: u64, x: &[f64]) {
        if self.count % self.policy.stride as u64 == 0 {
            self.times.push(t);
            self.indices.push(index);
            self.states.extend_from_slice(x);
        }
        if self.policy.dense_tail > 0 {
            if self.tail.len() == self.policy.dense_tail {
                self.tail.pop_front();
            }
            self.tail.push_back((t, index, x.to_vec()));
        } else {
            match &mut self.last {
                Some((lt, li, lx)) => {
                    *lt = t;
                    *li = index;
                    lx.copy_from_slice(x);
                }
                None => self.last = Some((t, index, x.to_vec())),
            }
        }
        self.count += 1;
    }

    fn finish(mut self, meta: TrajectoryMeta) -> Trajectory {
        let mut extra: Vec<(f64, u64, Vec<f64>)> = self.tail.into_iter().collect();
        extra.extend(self.last.take());
        if let Some(first) = extra.first().map(|e| e.1) {
            let keep = self.indices.partition_point(|&i| i < first);
            self.times.truncate(keep);
            self.indices.truncate(keep);
            self.states.truncate(keep * self.dim);
            for (t, i, x) in extra {
                self.times.push(t);
                self.indices.push(i);
                self.states.extend_from_slice(&x);
            }
        }
        Trajectory {
            dim: self.dim,
            times: self.times,
            indices: self.indices,
            states: self.states,
            meta,
        }
    }
}

/// Increments `Uₙ₊₁` and the states `xₙ` they were drawn at.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseRecord {
    pub dim: usize,
    pub indices: Vec<u64>,
    pub increments: Vec<f64>,
    pub states: Vec<f64>,
}

impl NoiseRecord {
    fn new(dim: usize) -> Self {
        NoiseRecord {
            dim,
            ..Default::default()
        }
    }

    fn push(&mut self, n: u64, x: &[f64], u: &[f64]) {
        self.indices.push(n);
        self.states.extend_from_slice(x);
        self.increments.extend_from_slice(u);
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// Sidecar CSV: `n,x_0..,u_0..`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let xs: Vec<String> = (0..self.dim).map(|i| format!("x_{i}")).collect();
        let us: Vec<String> = (0..self.dim).map(|i| format!("u_{i}")).collect();
        writeln!(w, "n,{},{}", xs.join(","), us.join(","))?;
        for k in 0..self.len() {
            write!(w, "{}", self.indices[k])?;
            for v in self.state(k).iter().chain(self.increment(k)) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Conditionally mean-zero noise for [`run_robbins_monro`].
pub trait NoiseSource: Send + Sync {
    fn sample(&self, x: &[f64], rng: &mut SimRng, out: &mut [f64]);

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn sample(&self, _x: &[f64], _rng: &mut SimRng, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn describe(&self) -> String {
        "zero".into()
    }
}

/// I.i.d. `N(0, std²)` per coordinate.
#[derive(Debug, Clone, Copy)]
pub struct GaussianNoise {
    pub std: f64,
}

impl NoiseSource for GaussianNoise {
    fn sample(&self, _x: &[f64], rng: &mut SimRng, out: &mut [f64]) {
        for o in out {
            let z: f64 = rng.sample(StandardNormal);
            *o = self.std * z;
        }
    }

    fn describe(&self) -> String {
        format!("gaussian({})", self.std)
    }
}

/// I.i.d. uniform on `[−w, w]` per coordinate (bounded noise).
#[derive(Debug, Clone, Copy)]
pub struct UniformNoise {
    pub half_width: f64,
}

impl NoiseSource for UniformNoise {
    fn sample(&self, _x: &[f64], rng: &mut SimRng, out: &mut [f64]) {
        for o in out {
            *o = self.half_width * (2.0 * rng.random::<f64>() - 1.0);
        }
    }

    fn describe(&self) -> String {
        format!("uniform({})", self.half_width)
    }
}

/// Options shared by the discrete simulators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunOptions {
    pub storage: StoragePolicy,
    /// Record increments from this step on (`None`: no record).
    pub record_noise_from: Option<u64>,
    /// Random stream within the seed; experiments use the run index.
    pub stream: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            storage: StoragePolicy::full(),
            record_noise_from: None,
            stream: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RmRun {
    pub trajectory: Trajectory,
    pub noise: Option<NoiseRecord>,
}

/// `xₙ₊₁ = xₙ + γₙ₊₁ (F(xₙ) + Uₙ₊₁)`, knots at `τₙ`.
pub fn run_robbins_monro(
    field: &dyn VectorField,
    x0: &[f64],
    noise: &dyn NoiseSource,
    sched: &StepSchedule,
    n_steps: u64,
    seed: u64,
    opts: &RunOptions,
) -> Result<RmRun> {
    let d = field.dim();
    if x0.len() != d {
        return Err(structural(format!("start has {} coordinates, field expects {d}", x0.len())));
    }
    let mut rng = rng_for(seed, opts.stream);
    let mut x = x0.to_vec();
    let (mut f, mut u) = (vec![0.0; d], vec![0.0; d]);
    let mut rec = Recorder::new(opts.storage, d);
    let mut noise_rec = opts.record_noise_from.map(|_| NoiseRecord::new(d));
    let mut t = 0.0;
    rec.record(t, 0, &x);
    for n in 0..n_steps {
        field.eval(&x, &mut f)?;
        noise.sample(&x, &mut rng, &mut u);
        if let (Some(nr), Some(from)) = (noise_rec.as_mut(), opts.record_noise_from) {
            if n >= from {
                nr.push(n, &x, &u);
            }
        }
        let g = sched.gamma(n + 1);
        for i in 0..d {
            x[i] += g * (f[i] + u[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: n as usize + 1 });
        }
        t += g;
        rec.record(t, n + 1, &x);
    }
    let meta = TrajectoryMeta {
        schedule: sched.describe(),
        seed,
        field: format!("{} + {}", field.describe(), noise.describe()),
        stride: opts.storage.stride,
    };
    Ok(RmRun {
        trajectory: rec.finish(meta),
        noise: noise_rec,
    })
}

/// Initial empirical history of a stochastic fictitious play run: `prefix`
/// synthetic rounds whose action counts match `profile` up to `1/prefix`.
#[derive(Debug, Clone, PartialEq)]
pub struct SfpStart {
    pub profile: MixedProfile,
    pub prefix: u64,
}

/// Synthetic prefix length used for interior starts.
pub const DEFAULT_PREFIX: u64 = 1000;

impl SfpStart {
    /// Start from one round of the pure profile `δ_a`.
    pub fn vertex(actions: &[usize], profile: &[usize]) -> Result<Self> {
        Ok(SfpStart {
            profile: MixedProfile::vertex(actions, profile)?,
            prefix: 1,
        })
    }

    pub fn interior(profile: MixedProfile, prefix: u64) -> Result<Self> {
        if prefix == 0 {
            return Err(domain("prefix length must be positive"));
        }
        Ok(SfpStart { profile, prefix })
    }

    /// Action counts by largest-remainder rounding of `profile · prefix`.
    pub fn counts(&self) -> Vec<u64> {
        let n = self.prefix;
        let mut counts = Vec::with_capacity(self.profile.dim());
        for block in self.profile.blocks() {
            let exact: Vec<f64> = block.iter().map(|p| p * n as f64).collect();
            let mut c: Vec<u64> = exact.iter().map(|v| v.floor() as u64).collect();
            let mut missing = n - c.iter().sum::<u64>().min(n);
            let mut order: Vec<usize> = (0..block.len()).collect();
            order.sort_by(|&a, &b| {
                let (fa, fb) = (exact[a] - c[a] as f64, exact[b] - c[b] as f64);
                fb.total_cmp(&fa).then(a.cmp(&b))
            });
            for &k in order.iter().cycle() {
                if missing == 0 {
                    break;
                }
                c[k] += 1;
                missing -= 1;
            }
            counts.extend(c);
        }
        counts
    }

    /// The empirical profile the run actually starts from.
    pub fn realized(&self) -> MixedProfile {
        let n = self.prefix as f64;
        let data = self.counts().into_iter().map(|c| c as f64 / n).collect();
        MixedProfile::projected(self.profile.actions(), data)
    }
}

#[derive(Debug, Clone)]
pub struct SfpRun {
    pub trajectory: Trajectory,
    pub noise: Option<NoiseRecord>,
    /// Sampled actions, `players` entries per step, when requested.
    pub actions: Option<Vec<u32>>,
    pub initial_counts: Vec<u64>,
}

/// Stochastic fictitious play: each round every player samples an action from
/// its perturbed best response to the opponents' empirical frequencies.
///
/// The state after round `n` is the exact empirical frequency `counts / n`,
/// which coincides with `x̄ₙ₊₁ = x̄ₙ + (F(x̄ₙ) + Uₙ₊₁)/(n+1)` for
/// `Uₙ₊₁ = δ_{aₙ₊₁} − br(x̄ₙ)`.
pub fn run_sfp(
    field: &BestResponseField,
    start: &SfpStart,
    n_steps: u64,
    seed: u64,
    opts: &RunOptions,
    record_actions: bool,
) -> Result<SfpRun> {
    if start.profile.actions() != field.actions() {
        return Err(structural("start profile does not match the game"));
    }
    let actions = field.actions().to_vec();
    let offsets = field.offsets().to_vec();
    let d = field.mixed_dim();
    let mut rng = rng_for(seed, opts.stream);
    let initial_counts = start.counts();
    let mut counts = initial_counts.clone();
    let mut n = start.prefix;
    let mut x: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut br = vec![0.0; d];
    let mut scratch = field.scratch();
    let mut u = vec![0.0; d];
    let mut rec = Recorder::new(opts.storage, d);
    let mut noise_rec = opts.record_noise_from.map(|_| NoiseRecord::new(d));
    let mut log = record_actions.then(|| Vec::with_capacity((n_steps as usize) * actions.len()));
    let mut t = power_sum(n, 1.0);
    rec.record(t, n, &x);
    for step in 0..n_steps {
        field.best_response_into(&x, &mut br, &mut scratch)?;
        let recording = opts.record_noise_from.is_some_and(|from| step >= from);
        for (&off, &m) in offsets.iter().zip(&actions) {
            let p = &br[off..off + m];
            let draw: f64 = rng.random();
            let mut acc = 0.0;
            let mut a = m - 1;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if draw < acc {
                    a = k;
                    break;
                }
            }
            counts[off + a] += 1;
            if let Some(l) = log.as_mut() {
                l.push(a as u32);
            }
            if recording {
                for k in 0..m {
                    u[off + k] = if k == a { 1.0 } else { 0.0 } - p[k];
                }
            }
        }
        if recording {
            if let Some(nr) = noise_rec.as_mut() {
                nr.push(n, &x, &u);
            }
        }
        n += 1;
        t += 1.0 / n as f64;
        let inv = 1.0 / n as f64;
        for (xi, &c) in x.iter_mut().zip(&counts) {
            *xi = c as f64 * inv;
        }
        rec.record(t, n, &x);
    }
    let meta = TrajectoryMeta {
        schedule: StepSchedule::Harmonic.describe(),
        seed,
        field: field.describe(),
        stride: opts.storage.stride,
    };
    Ok(SfpRun {
        trajectory: rec.finish(meta),
        noise: noise_rec,
        actions: log,
        initial_counts,
    })
}

/// `γ(t) = γ₀ e^{−bt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffusionDecay {
    pub gamma0: f64,
    pub rate: f64,
}

impl DiffusionDecay {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(domain(format!("decay rate must be positive, got {rate}")));
        }
        Ok(DiffusionDecay { gamma0: 1.0, rate })
    }

    pub fn gamma(&self, t: f64) -> f64 {
        self.gamma0 * (-self.rate * t).exp()
    }
}

/// Euler–Maruyama for `dX = F(X)dt + √γ(t) dB_t`.
pub fn run_diffusion(
    field: &dyn VectorField,
    x0: &[f64],
    decay: &DiffusionDecay,
    t_end: f64,
    dt: f64,
    seed: u64,
    opts: &RunOptions,
) -> Result<Trajectory> {
    let d = field.dim();
    if x0.len() != d {
        return Err(structural(format!("start has {} coordinates, field expects {d}", x0.len())));
    }
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(domain(format!("diffusion step must lie in (0, 0.01], got {dt}")));
    }
    if !(decay.rate > 0.0) || !(decay.gamma0 > 0.0) {
        return Err(domain("decay needs positive rate and initial level"));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(domain("t_end must be positive"));
    }
    let steps = (t_end / dt - 1e-9).ceil().max(1.0) as u64;
    let h = t_end / steps as f64;
    let mut rng = rng_for(seed, opts.stream);
    let mut x = x0.to_vec();
    let mut f = vec![0.0; d];
    let mut rec = Recorder::new(opts.storage, d);
    rec.record(0.0, 0, &x);
    for k in 0..steps {
        let t = k as f64 * h;
        field.eval(&x, &mut f)?;
        let scale = (decay.gamma(t) * h).sqrt();
        for i in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            x[i] += f[i] * h + scale * z;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k as usize + 1 });
        }
        rec.record((k + 1) as f64 * h, k + 1, &x);
    }
    let meta = TrajectoryMeta {
        schedule: format!("exp-decay(gamma0={}, b={})", decay.gamma0, decay.rate),
        seed,
        field: field.describe(),
        stride: opts.storage.stride,
    };
    Ok(rec.finish(meta))
}

/// `d(t, T) = sup_{h∈[0,T]} ‖X(t+h) − Φ_h(X(t))‖∞`, with the supremum taken
/// over a grid of step `min(0.01, opts.step)`.
pub fn apt_distance(
    traj: &Trajectory,
    field: &dyn VectorField,
    t: f64,
    horizon: f64,
    opts: &FlowOptions,
) -> Result<f64> {
    opts.validate()?;
    if !(horizon >= 0.0) {
        return Err(domain("horizon must be nonnegative"));
    }
    let (lo, hi) = traj.time_range();
    if !(t >= lo && t + horizon <= hi) {
        return Err(Error::Range {
            t: if t < lo { t } else { t + horizon },
            lo,
            hi,
        });
    }
    if field.dim() != traj.dim() {
        return Err(structural("field and trajectory dimensions differ"));
    }
    let mut y = traj.interpolate(t)?;
    if horizon == 0.0 {
        return Ok(0.0);
    }
    let grid = opts.step.min(0.01);
    let n = (horizon / grid - 1e-9).ceil().max(1.0) as usize;
    let h = horizon / n as f64;
    let mut rk = Rk4::new(y.len());
    let mut sup = 0.0f64;
    for k in 1..=n {
        rk.step(field, &mut y, h)?;
        let s = if k == n { t + horizon } else { t + k as f64 * h };
        sup = sup.max(inf_distance(&traj.interpolate(s)?, &y));
    }
    Ok(sup)
}

/// Rate function of the deviation bound
/// `P(d(t,T) ≥ δ | F_t) ≤ ∫_t^{t+T} r(s,δ,T) ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum OmegaRate {
    /// `r = B γ̄(s)^{q/2} / δ^q`.
    MomentQ { q: f64, b: f64 },
    /// `r = 2d exp(−Bδ² / γ̄(s))`.
    Subgaussian { b: f64, dim: usize },
}

impl OmegaRate {
    pub fn moment(q: f64, b: f64) -> Result<Self> {
        if !(q >= 2.0) || !(b > 0.0) {
            return Err(domain("moment rate needs q ≥ 2 and B > 0"));
        }
        Ok(OmegaRate::MomentQ { q, b })
    }

    pub fn subgaussian(b: f64, dim: usize) -> Result<Self> {
        if !(b > 0.0) || dim == 0 {
            return Err(domain("subgaussian rate needs B > 0 and d ≥ 1"));
        }
        Ok(OmegaRate::Subgaussian { b, dim })
    }

    pub fn b(&self) -> f64 {
        match *self {
            OmegaRate::MomentQ { b, .. } | OmegaRate::Subgaussian { b, .. } => b,
        }
    }

    /// `r(s, δ, T)` given `γ̄(s)`.
    pub fn integrand(&self, gamma_bar: f64, delta: f64) -> f64 {
        match *self {
            OmegaRate::MomentQ { q, b } => b * gamma_bar.powf(q / 2.0) / delta.powf(q),
            OmegaRate::Subgaussian { b, dim } => {
                2.0 * dim as f64 * (-b * delta * delta / gamma_bar).exp()
            }
        }
    }
}

/// First `k ≥ 1` with `γₖ ≤ Bδ²/2`.
pub fn omega_k0(rate: &OmegaRate, sched: &StepSchedule, delta: f64) -> u64 {
    let level = rate.b() * delta * delta / 2.0;
    if sched.gamma(1) <= level {
        return 1;
    }
    let mut hi = 2u64;
    while sched.gamma(hi) > level {
        hi *= 2;
    }
    let mut lo = hi / 2;
    // gamma(lo) > level >= gamma(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if sched.gamma(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// `ω(t, δ, T) = ∫_t^∞ r(s, δ, T) ds` with the piecewise-constant `γ̄`.
///
/// On `[τᵢ, τᵢ₊₁)` the integrand is constant at `r(γᵢ₊₁)` over a length
/// `γᵢ₊₁`, so the integral is the partial first piece plus
/// `Σ_{k≥i+2} γₖ r(γₖ)`. For the moment case that tail is
/// `B/δ^q · Σ γₖ^{1+q/2}`, evaluated in closed form for the built-in
/// schedules.
pub fn omega_bound(
    rate: &OmegaRate,
    sched: &StepSchedule,
    t: f64,
    delta: f64,
    _horizon: f64,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(domain("delta must be positive"));
    }
    let k0 = omega_k0(rate, sched, delta);
    let t0 = sched.tau(k0);
    if t < t0 {
        return Err(Error::Precondition(format!(
            "omega bound holds only for t ≥ τ_k0 = {t0} (k0 = {k0})"
        )));
    }
    let i = sched.index_at(t);
    let g = sched.gamma(i + 1);
    let first = (sched.tau(i + 1) - t).max(0.0) * rate.integrand(g, delta);
    let rest = match *rate {
        OmegaRate::MomentQ { q, b } => b / delta.powf(q) * sched.power_tail_sum(i + 2, 1.0 + q / 2.0)?,
        OmegaRate::Subgaussian { .. } => accelerated_tail(i + 2, |k| {
            let g = sched.gamma(k);
            g * rate.integrand(g, delta)
        })?,
    };
    Ok(first + rest)
}

/// `Q(x)`: block-diagonal covariance `diag(brⁱ) − brⁱ brⁱᵀ` of the SFP
/// increment drawn at `x`.
pub fn analytic_q(field: &BestResponseField, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = field.mixed_dim();
    if x.len() != d {
        return Err(structural("state dimension does not match the game"));
    }
    let mut br = vec![0.0; d];
    field.best_response_into(x, &mut br, &mut field.scratch())?;
    let mut q = DMatrix::zeros(d, d);
    add_q(field, &br, &mut q);
    Ok(q)
}

fn add_q(field: &BestResponseField, br: &[f64], q: &mut DMatrix<f64>) {
    for (&off, &m) in field.offsets().iter().zip(field.actions()) {
        for r in 0..m {
            for c in 0..m {
                let diag = if r == c { br[off + r] } else { 0.0 };
                q[(off + r, off + c)] += diag - br[off + r] * br[off + c];
            }
        }
    }
}

/// Orthonormal basis of `TΔ` (columns), `Σmⁱ × Σ(mⁱ−1)`.
pub fn tangent_basis(actions: &[usize]) -> DMatrix<f64> {
    let d: usize = actions.iter().sum();
    let k = d - actions.len();
    let mut raw = DMatrix::zeros(d, k);
    let (mut off, mut col) = (0, 0);
    for &m in actions {
        for j in 0..m - 1 {
            raw[(off + j, col)] = 1.0;
            raw[(off + j + 1, col)] = -1.0;
            col += 1;
        }
        off += m;
    }
    raw.qr().q()
}

/// Smallest and largest eigenvalue of a quadratic form restricted to `TΔ`.
pub fn tangent_spectrum(q: &DMatrix<f64>, basis: &DMatrix<f64>) -> (f64, f64) {
    let restricted = basis.transpose() * q * basis;
    let eig = SymmetricEigen::new(restricted).eigenvalues;
    (eig.min(), eig.max())
}

#[derive(Debug, Clone, Serialize)]
pub struct BucketStats {
    /// Cell index along each tail-sum axis.
    pub key: Vec<usize>,
    pub count: usize,
    pub mean_state: Vec<f64>,
    pub mean_increment: Vec<f64>,
    pub std_increment: Vec<f64>,
    /// `|mean| ≤ 4·std/√count` in every coordinate.
    pub martingale_ok: bool,
    pub empirical_q: Vec<Vec<f64>>,
    pub analytic_q: Vec<Vec<f64>>,
    /// Max over the eigen-directions ζ of the analytic form on `TΔ` of
    /// `|Q̂(ζ) − Q(ζ)| / Q(ζ)`.
    pub max_relative_deviation: f64,
    pub frobenius_relative_deviation: f64,
    pub empirical_tangent_range: (f64, f64),
    pub analytic_tangent_range: (f64, f64),
    /// Whether both ranges lie in the configured `[Λ⁻, Λ⁺]`.
    pub within_bounds: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseStatsReport {
    pub cells_per_axis: usize,
    pub samples: usize,
    pub buckets: Vec<BucketStats>,
    /// Occupied buckets skipped for holding fewer than `MIN_BUCKET` samples.
    pub sparse_buckets: usize,
}

impl NoiseStatsReport {
    /// The bucket holding the most samples.
    pub fn densest(&self) -> &BucketStats {
        self.buckets.iter().max_by_key(|b| b.count).expect("report has a bucket")
    }
}

pub const MIN_BUCKET: usize = 100;

/// Compares the empirical conditional covariance of SFP increments against
/// `Q(x)` on a fixed grid over tail-sum coordinates.
pub fn noise_stats(
    rec: &NoiseRecord,
    field: &BestResponseField,
    buckets: usize,
    bounds: Option<(f64, f64)>,
) -> Result<NoiseStatsReport> {
    let d = field.mixed_dim();
    if rec.dim != d {
        return Err(structural("noise record dimension does not match the game"));
    }
    let cells = buckets.clamp(1, 8);
    struct Acc {
        count: usize,
        sx: DVector<f64>,
        su: DVector<f64>,
        suu: DMatrix<f64>,
        sq: DMatrix<f64>,
    }
    let mut accs: BTreeMap<Vec<usize>, Acc> = BTreeMap::new();
    let mut v = vec![0.0; field.t_dim()];
    let mut br = vec![0.0; d];
    let mut scratch = field.scratch();
    for k in 0..rec.len() {
        let (x, u) = (rec.state(k), rec.increment(k));
        tail_sums_into(field.actions(), x, &mut v);
        let key: Vec<usize> = v
            .iter()
            .map(|c| ((c * cells as f64).floor().max(0.0) as usize).min(cells - 1))
            .collect();
        let acc = accs.entry(key).or_insert_with(|| Acc {
            count: 0,
            sx: DVector::zeros(d),
            su: DVector::zeros(d),
            suu: DMatrix::zeros(d, d),
            sq: DMatrix::zeros(d, d),
        });
        let uv = DVector::from_column_slice(u);
        acc.count += 1;
        acc.sx += DVector::from_column_slice(x);
        acc.suu += &uv * uv.transpose();
        acc.su += uv;
        field.best_response_into(x, &mut br, &mut scratch)?;
        add_q(field, &br, &mut acc.sq);
    }
    let basis = tangent_basis(field.actions());
    let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect();
    let mut out = Vec::new();
    let mut sparse = 0;
    for (key, acc) in accs {
        if acc.count < MIN_BUCKET {
            sparse += 1;
            continue;
        }
        let n = acc.count as f64;
        let mean_u = &acc.su / n;
        let emp = &acc.suu / n;
        let ana = &acc.sq / n;
        let std: Vec<f64> = (0..d)
            .map(|i| (emp[(i, i)] - mean_u[i] * mean_u[i]).max(0.0).sqrt())
            .collect();
        let martingale_ok = (0..d).all(|i| mean_u[i].abs() <= 4.0 * std[i] / n.sqrt() + 1e-15);
        let restricted = basis.transpose() * &ana * &basis;
        let eig = SymmetricEigen::new(restricted);
        let mut max_rel = 0.0f64;
        for (j, lambda) in eig.eigenvalues.iter().enumerate() {
            let zeta = &basis * eig.eigenvectors.column(j);
            let qhat = (zeta.transpose() * &emp * &zeta)[(0, 0)];
            max_rel = max_rel.max((qhat - lambda).abs() / lambda);
        }
        let frob = (&emp - &ana).norm() / ana.norm();
        let emp_range = tangent_spectrum(&emp, &basis);
        let ana_range = tangent_spectrum(&ana, &basis);
        let within_bounds = bounds.map(|(lo, hi)| {
            [emp_range, ana_range].iter().all(|&(a, b)| a >= lo && b <= hi)
        });
        out.push(BucketStats {
            key,
            count: acc.count,
            mean_state: (&acc.sx / n).iter().copied().collect(),
            mean_increment: mean_u.iter().copied().collect(),
            std_increment: std,
            martingale_ok,
            empirical_q: rows(&emp),
            analytic_q: rows(&ana),
            max_relative_deviation: max_rel,
            frobenius_relative_deviation: frob,
            empirical_tangent_range: emp_range,
            analytic_tangent_range: ana_range,
            within_bounds,
        });
    }
    if out.is_empty() {
        return Err(Error::Insufficient(format!(
            "no bucket holds {MIN_BUCKET} samples ({} samples in {sparse} buckets)",
            rec.len()
        )));
    }
    Ok(NoiseStatsReport {
        cells_per_axis: cells,
        samples: rec.len(),
        buckets: out,
        sparse_buckets: sparse,
    })
}
