//! Finite normal-form games, mixed-strategy geometry and the stochastic
//! dominance order used for supermodular games.
//!
//! Actions are indexed `0..m` in the API. The index order is the action order,
//! so "higher action" always means "larger index".

use serde::{Deserialize, Serialize};

use crate::error::{domain, structural, Result};

/// Tolerance on simplex membership before re-projection.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Tolerance on the monotonicity of tail-sum coordinates.
pub const TIMAGE_TOL: f64 = 1e-12;

/// An N-player normal-form game with dense payoff tensors.
///
/// Tensors are stored row-major with player 0 as the most significant axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameJson", into = "GameJson")]
pub struct Game {
    actions: Vec<usize>,
    strides: Vec<usize>,
    payoffs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameJson {
    players: usize,
    actions: Vec<usize>,
    payoffs: Vec<Vec<f64>>,
}

impl TryFrom<GameJson> for Game {
    type Error = crate::Error;

    fn try_from(g: GameJson) -> Result<Self> {
        if g.players != g.actions.len() {
            return Err(structural(format!(
                "players = {} but {} action counts given",
                g.players,
                g.actions.len()
            )));
        }
        Game::new(g.actions, g.payoffs)
    }
}

impl From<Game> for GameJson {
    fn from(g: Game) -> Self {
        GameJson {
            players: g.actions.len(),
            actions: g.actions,
            payoffs: g.payoffs,
        }
    }
}

impl Game {
    pub fn new(actions: Vec<usize>, payoffs: Vec<Vec<f64>>) -> Result<Self> {
        if actions.len() < 2 {
            return Err(structural("a game needs at least two players"));
        }
        if let Some(i) = actions.iter().position(|&m| m < 2) {
            return Err(structural(format!("player {i} has fewer than two actions")));
        }
        if payoffs.len() != actions.len() {
            return Err(structural(format!(
                "expected {} payoff tensors, got {}",
                actions.len(),
                payoffs.len()
            )));
        }
        let total: usize = actions.iter().product();
        for (i, u) in payoffs.iter().enumerate() {
            if u.len() != total {
                return Err(structural(format!(
                    "payoff tensor of player {i} has {} entries, expected {total}",
                    u.len()
                )));
            }
            if let Some(k) = u.iter().position(|v| !v.is_finite()) {
                return Err(structural(format!(
                    "payoff tensor of player {i} has a non-finite entry at {k}"
                )));
            }
        }
        let mut strides = vec![1; actions.len()];
        for j in (0..actions.len() - 1).rev() {
            strides[j] = strides[j + 1] * actions[j + 1];
        }
        Ok(Game {
            actions,
            strides,
            payoffs,
        })
    }

    /// Two-player game from row-player and column-player matrices
    /// (`a[r][c]` is player 0's payoff, `b[r][c]` player 1's).
    pub fn bimatrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        let rows = a.len();
        let cols = a.first().map_or(0, Vec::len);
        let shape_ok = |m: &[Vec<f64>]| m.len() == rows && m.iter().all(|r| r.len() == cols);
        if !shape_ok(a) || !shape_ok(b) {
            return Err(structural("bimatrix payoffs must be rectangular and equal-sized"));
        }
        let flat = |m: &[Vec<f64>]| m.iter().flatten().copied().collect::<Vec<_>>();
        Game::new(vec![rows, cols], vec![flat(a), flat(b)])
    }

    /// The symmetric 2×2 coordination game `u¹ = u²ᵀ = [[2,0],[0,1]]`.
    pub fn coordination() -> Self {
        let u = vec![vec![2.0, 0.0], vec![0.0, 1.0]];
        Game::bimatrix(&u, &u).expect("static game is valid")
    }

    pub fn num_players(&self) -> usize {
        self.actions.len()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn profile_count(&self) -> usize {
        self.payoffs[0].len()
    }

    /// Sum of action counts, the dimension of the mixed-strategy space.
    pub fn mixed_dim(&self) -> usize {
        self.actions.iter().sum()
    }

    pub fn payoff_tensor(&self, player: usize) -> &[f64] {
        &self.payoffs[player]
    }

    pub fn index_of(&self, profile: &[usize]) -> usize {
        profile.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn profile_of(&self, mut index: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|s| {
                let a = index / s;
                index %= s;
                a
            })
            .collect()
    }

    pub fn payoff(&self, player: usize, profile: &[usize]) -> f64 {
        self.payoffs[player][self.index_of(profile)]
    }

    fn check_profile(&self, x: &MixedProfile) -> Result<()> {
        if x.actions() != self.actions() {
            return Err(structural(format!(
                "profile shape {:?} does not match game shape {:?}",
                x.actions(),
                self.actions
            )));
        }
        Ok(())
    }

    fn check_player(&self, i: usize) -> Result<()> {
        if i >= self.num_players() {
            return Err(structural(format!(
                "player index {i} out of range for a {}-player game",
                self.num_players()
            )));
        }
        Ok(())
    }

    /// Expected payoff of player `i` under the product distribution `x`.
    pub fn expected_payoff(&self, i: usize, x: &MixedProfile) -> Result<f64> {
        self.check_player(i)?;
        self.check_profile(x)?;
        let offsets = x.offsets();
        let u = &self.payoffs[i];
        let mut digits = vec![0usize; self.num_players()];
        let mut total = 0.0;
        for &v in u {
            let w: f64 = digits
                .iter()
                .enumerate()
                .map(|(j, &a)| x.data[offsets[j] + a])
                .product();
            total += v * w;
            self.advance(&mut digits);
        }
        Ok(total)
    }

    /// Payoff of each pure action of player `i` against the opponents' blocks
    /// of `x` (block `i` itself is ignored).
    pub fn marginal_payoff_vector(&self, i: usize, x: &MixedProfile) -> Result<Vec<f64>> {
        self.check_player(i)?;
        self.check_profile(x)?;
        let mut out = vec![0.0; self.actions[i]];
        self.marginal_payoffs_into(i, x.as_slice(), x.offsets(), &mut out);
        Ok(out)
    }

    /// Unchecked kernel behind [`Game::marginal_payoff_vector`] operating on a
    /// flat profile.
    pub(crate) fn marginal_payoffs_into(
        &self,
        i: usize,
        x: &[f64],
        offsets: &[usize],
        out: &mut [f64],
    ) {
        let u = &self.payoffs[i];
        out.fill(0.0);
        if self.num_players() == 2 {
            let (m0, m1) = (self.actions[0], self.actions[1]);
            if i == 0 {
                let y = &x[offsets[1]..offsets[1] + m1];
                for (a, o) in out.iter_mut().enumerate() {
                    let row = &u[a * m1..(a + 1) * m1];
                    *o = row.iter().zip(y).map(|(p, q)| p * q).sum();
                }
            } else {
                let y = &x[offsets[0]..offsets[0] + m0];
                for (a, &ya) in y.iter().enumerate() {
                    let row = &u[a * m1..(a + 1) * m1];
                    for (o, p) in out.iter_mut().zip(row) {
                        *o += p * ya;
                    }
                }
            }
            return;
        }
        let mut digits = vec![0usize; self.num_players()];
        for &v in u {
            let w: f64 = digits
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &a)| x[offsets[j] + a])
                .product();
            out[digits[i]] += v * w;
            self.advance(&mut digits);
        }
    }

    /// `∂Πⁱ_β / ∂xʲ_γ`: payoff of player `i` with `i` fixed at `β`, `j` fixed
    /// at `γ`, remaining players mixed. Row-major `mⁱ × mʲ`.
    pub(crate) fn cross_payoffs(&self, i: usize, j: usize, x: &[f64], offsets: &[usize]) -> Vec<f64> {
        let (mi, mj) = (self.actions[i], self.actions[j]);
        let mut out = vec![0.0; mi * mj];
        let mut digits = vec![0usize; self.num_players()];
        for &v in &self.payoffs[i] {
            let w: f64 = digits
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i && k != j)
                .map(|(k, &a)| x[offsets[k] + a])
                .product();
            out[digits[i] * mj + digits[j]] += v * w;
            self.advance(&mut digits);
        }
        out
    }

    fn advance(&self, digits: &mut [usize]) {
        for j in (0..digits.len()).rev() {
            digits[j] += 1;
            if digits[j] < self.actions[j] {
                return;
            }
            digits[j] = 0;
        }
    }

    /// Checks (strict) supermodularity by enumerating every
    /// `(i, high > low, j ≠ i, context)` tuple and every adjacent pair of
    /// actions of `j`.
    ///
    /// The increment `Δ(aʲ⁺¹) − Δ(aʲ)` of the gain `Δ = uⁱ(high,·) − uⁱ(low,·)`
    /// must exceed `margin` when `strict`, and be at least `−margin` otherwise.
    pub fn is_supermodular(&self, strict: bool, margin: f64) -> SupermodularityReport {
        let n = self.num_players();
        let mut min_increment = f64::INFINITY;
        let mut weakest = None;
        for i in 0..n {
            let u = &self.payoffs[i];
            for idx in 0..self.profile_count() {
                let profile = self.profile_of(idx);
                // `profile[i]` is `low`; every `high > low` is visited.
                let low = profile[i];
                for high in low + 1..self.actions[i] {
                    for j in (0..n).filter(|&j| j != i) {
                        let aj = profile[j];
                        if aj + 1 >= self.actions[j] {
                            continue;
                        }
                        let gain = |aj: usize| {
                            let base = idx - profile[j] * self.strides[j] + aj * self.strides[j];
                            let hi = base - low * self.strides[i] + high * self.strides[i];
                            u[hi] - u[base]
                        };
                        let inc = gain(aj + 1) - gain(aj);
                        let witness = || SupermodularityWitness {
                            player: i,
                            high,
                            low,
                            opponent: j,
                            opponent_low: aj,
                            opponent_high: aj + 1,
                            context: profile.clone(),
                            increment: inc,
                        };
                        if inc < min_increment {
                            min_increment = inc;
                            weakest = Some(witness());
                        }
                        let ok = if strict { inc > margin } else { inc >= -margin };
                        if !ok {
                            return SupermodularityReport {
                                holds: false,
                                strict,
                                witness: Some(witness()),
                                min_increment: inc,
                                near_tie: false,
                            };
                        }
                    }
                }
            }
        }
        let scale = self
            .payoffs
            .iter()
            .flatten()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(1.0);
        let near_tie = min_increment.is_finite() && min_increment.abs() <= 1e-9 * scale;
        SupermodularityReport {
            holds: true,
            strict,
            witness: if near_tie { weakest } else { None },
            min_increment,
            near_tie,
        }
    }
}

/// Outcome of [`Game::is_supermodular`].
///
/// On failure `witness` is the violating tuple. On success it is populated
/// only when the smallest increment is a near-tie relative to the payoff scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupermodularityReport {
    pub holds: bool,
    pub strict: bool,
    pub witness: Option<SupermodularityWitness>,
    pub min_increment: f64,
    pub near_tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupermodularityWitness {
    pub player: usize,
    pub high: usize,
    pub low: usize,
    pub opponent: usize,
    pub opponent_low: usize,
    pub opponent_high: usize,
    /// Full pure profile; entries for `player` and `opponent` are the low actions.
    pub context: Vec<usize>,
    pub increment: f64,
}

/// A point of the product of simplices `×ᵢ Δⁱ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileJson", into = "ProfileJson")]
pub struct MixedProfile {
    actions: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileJson {
    blocks: Vec<Vec<f64>>,
}

impl TryFrom<ProfileJson> for MixedProfile {
    type Error = crate::Error;

    fn try_from(p: ProfileJson) -> Result<Self> {
        MixedProfile::new(p.blocks)
    }
}

impl From<MixedProfile> for ProfileJson {
    fn from(p: MixedProfile) -> Self {
        ProfileJson { blocks: p.to_blocks() }
    }
}

pub(crate) fn offsets_of(actions: &[usize]) -> Vec<usize> {
    actions
        .iter()
        .scan(0, |acc, &m| {
            let o = *acc;
            *acc += m;
            Some(o)
        })
        .collect()
}

/// Clip negatives and renormalize one block in place.
pub(crate) fn project_block(block: &mut [f64]) {
    let mut sum = 0.0;
    for v in block.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
        sum += *v;
    }
    if sum > 0.0 {
        block.iter_mut().for_each(|v| *v /= sum);
    } else {
        let u = 1.0 / block.len() as f64;
        block.fill(u);
    }
}

pub(crate) fn project_flat(actions: &[usize], data: &mut [f64]) {
    let mut off = 0;
    for &m in actions {
        project_block(&mut data[off..off + m]);
        off += m;
    }
}

impl MixedProfile {
    pub fn new(blocks: Vec<Vec<f64>>) -> Result<Self> {
        let actions: Vec<usize> = blocks.iter().map(Vec::len).collect();
        let data = blocks.into_iter().flatten().collect();
        MixedProfile::from_flat(&actions, data)
    }

    /// Validates each block against [`SIMPLEX_TOL`] and re-projects onto the
    /// exact simplex.
    pub fn from_flat(actions: &[usize], mut data: Vec<f64>) -> Result<Self> {
        if actions.is_empty() {
            return Err(structural("a profile needs at least one block"));
        }
        if let Some(i) = actions.iter().position(|&m| m == 0) {
            return Err(structural(format!("block {i} is empty")));
        }
        let dim: usize = actions.iter().sum();
        if data.len() != dim {
            return Err(structural(format!(
                "profile has {} coordinates, expected {dim}",
                data.len()
            )));
        }
        let offsets = offsets_of(actions);
        for (i, (&off, &m)) in offsets.iter().zip(actions).enumerate() {
            let block = &data[off..off + m];
            if block.iter().any(|v| !v.is_finite() || *v < -SIMPLEX_TOL) {
                return Err(domain(format!("block {i} has a negative or non-finite entry")));
            }
            let sum: f64 = block.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(domain(format!("block {i} sums to {sum}, not 1")));
            }
        }
        project_flat(actions, &mut data);
        Ok(MixedProfile {
            actions: actions.to_vec(),
            offsets,
            data,
        })
    }

    /// Builds a profile without tolerance checks, projecting onto the simplex.
    pub(crate) fn projected(actions: &[usize], mut data: Vec<f64>) -> Self {
        project_flat(actions, &mut data);
        MixedProfile {
            actions: actions.to_vec(),
            offsets: offsets_of(actions),
            data,
        }
    }

    pub fn uniform(actions: &[usize]) -> Self {
        let data = actions
            .iter()
            .flat_map(|&m| std::iter::repeat_n(1.0 / m as f64, m))
            .collect();
        MixedProfile {
            actions: actions.to_vec(),
            offsets: offsets_of(actions),
            data,
        }
    }

    /// The pure profile `δ_a`.
    pub fn vertex(actions: &[usize], profile: &[usize]) -> Result<Self> {
        if profile.len() != actions.len() || profile.iter().zip(actions).any(|(a, m)| a >= m) {
            return Err(structural(format!(
                "pure profile {profile:?} does not fit shape {actions:?}"
            )));
        }
        let mut data = vec![0.0; actions.iter().sum()];
        for (off, a) in offsets_of(actions).into_iter().zip(profile) {
            data[off + a] = 1.0;
        }
        Ok(MixedProfile {
            actions: actions.to_vec(),
            offsets: offsets_of(actions),
            data,
        })
    }

    /// All players on their lowest action.
    pub fn lowest(actions: &[usize]) -> Self {
        MixedProfile::vertex(actions, &vec![0; actions.len()]).expect("lowest vertex fits")
    }

    /// All players on their highest action.
    pub fn highest(actions: &[usize]) -> Self {
        let top: Vec<usize> = actions.iter().map(|m| m - 1).collect();
        MixedProfile::vertex(actions, &top).expect("highest vertex fits")
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn num_players(&self) -> usize {
        self.actions.len()
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[self.offsets[i]..self.offsets[i] + self.actions[i]]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.num_players()).map(|i| self.block(i))
    }

    pub fn to_blocks(&self) -> Vec<Vec<f64>> {
        self.blocks().map(<[f64]>::to_vec).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn distance_inf(&self, other: &MixedProfile) -> f64 {
        inf_distance(&self.data, &other.data)
    }
}

pub(crate) fn inf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |d, (x, y)| d.max((x - y).abs()))
}

/// Per-player tail sums `vⁱ_j = Σ_{k>j} xⁱ_k`, each block of length `mⁱ − 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TImage {
    actions: Vec<usize>,
    data: Vec<f64>,
}

impl TImage {
    /// Validates `1 ≥ v₁ ≥ … ≥ v_{m−1} ≥ 0` per block within [`TIMAGE_TOL`].
    pub fn from_flat(actions: &[usize], data: Vec<f64>) -> Result<Self> {
        let dim: usize = actions.iter().map(|m| m - 1).sum();
        if data.len() != dim {
            return Err(structural(format!(
                "T-image has {} coordinates, expected {dim}",
                data.len()
            )));
        }
        let mut off = 0;
        for (i, &m) in actions.iter().enumerate() {
            let block = &data[off..off + m - 1];
            let mut prev = 1.0;
            for (j, &v) in block.iter().enumerate() {
                if !v.is_finite() || v > prev + TIMAGE_TOL {
                    return Err(domain(format!(
                        "T-image block {i} is not non-increasing at entry {j}"
                    )));
                }
                prev = v;
            }
            if prev < -TIMAGE_TOL {
                return Err(domain(format!("T-image block {i} has a negative entry")));
            }
            off += m - 1;
        }
        Ok(TImage {
            actions: actions.to_vec(),
            data,
        })
    }

    pub fn new(actions: &[usize], blocks: Vec<Vec<f64>>) -> Result<Self> {
        TImage::from_flat(actions, blocks.into_iter().flatten().collect())
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, i: usize) -> &[f64] {
        let off: usize = self.actions[..i].iter().map(|m| m - 1).sum();
        &self.data[off..off + self.actions[i] - 1]
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }
}

/// Tail sums of a flat profile into `out` (length `Σ(mⁱ−1)`).
pub(crate) fn tail_sums_into(actions: &[usize], x: &[f64], out: &mut [f64]) {
    let (mut xo, mut vo) = (0, 0);
    for &m in actions {
        let mut acc = 0.0;
        for j in (0..m - 1).rev() {
            acc += x[xo + j + 1];
            out[vo + j] = acc;
        }
        xo += m;
        vo += m - 1;
    }
}

/// First differences `x₁ = 1 − v₁, x_k = v_{k−1} − v_k, x_m = v_{m−1}`.
pub(crate) fn first_differences_into(actions: &[usize], v: &[f64], out: &mut [f64]) {
    let (mut xo, mut vo) = (0, 0);
    for &m in actions {
        let b = &v[vo..vo + m - 1];
        out[xo] = 1.0 - b[0];
        for k in 1..m - 1 {
            out[xo + k] = b[k - 1] - b[k];
        }
        out[xo + m - 1] = b[m - 2];
        xo += m;
        vo += m - 1;
    }
}

pub fn t_operator(x: &MixedProfile) -> TImage {
    let mut data = vec![0.0; x.dim() - x.num_players()];
    tail_sums_into(x.actions(), x.as_slice(), &mut data);
    TImage {
        actions: x.actions().to_vec(),
        data,
    }
}

pub fn t_inverse(v: &TImage) -> Result<MixedProfile> {
    let mut data = vec![0.0; v.actions.iter().sum()];
    first_differences_into(&v.actions, &v.data, &mut data);
    MixedProfile::from_flat(&v.actions, data)
}

/// `x ≤_T y`: every tail sum of `x` is at most the matching tail sum of `y`.
pub fn t_leq(x: &MixedProfile, y: &MixedProfile) -> Result<bool> {
    if x.actions() != y.actions() {
        return Err(structural("profiles have different shapes"));
    }
    let (tx, ty) = (t_operator(x), t_operator(y));
    Ok(tx.data.iter().zip(&ty.data).all(|(a, b)| a <= b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pennies() -> Game {
        let a = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        let b = vec![vec![-1.0, 1.0], vec![1.0, -1.0]];
        Game::bimatrix(&a, &b).unwrap()
    }

    #[test]
    fn vertex_payoff_is_tensor_entry() {
        let g = Game::coordination();
        let x = MixedProfile::vertex(g.actions(), &[0, 0]).unwrap();
        assert_eq!(g.expected_payoff(0, &x).unwrap(), 2.0);
        for idx in 0..g.profile_count() {
            let a = g.profile_of(idx);
            let x = MixedProfile::vertex(g.actions(), &a).unwrap();
            for i in 0..2 {
                assert_eq!(g.expected_payoff(i, &x).unwrap(), g.payoff(i, &a));
            }
        }
    }

    #[test]
    fn uniform_payoff_by_enumeration() {
        let g = Game::coordination();
        let x = MixedProfile::uniform(g.actions());
        assert_abs_diff_eq!(g.expected_payoff(0, &x).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn marginal_payoffs() {
        let g = Game::coordination();
        let x = MixedProfile::new(vec![vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        assert_eq!(g.marginal_payoff_vector(0, &x).unwrap(), vec![2.0, 0.0]);
        let x = MixedProfile::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(g.marginal_payoff_vector(0, &x).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn three_player_marginal_at_vertex_is_lookup() {
        let actions = vec![2, 3, 2];
        let total = 12;
        let payoffs: Vec<Vec<f64>> = (0..3)
            .map(|p| (0..total).map(|k| (k * 7 + p * 3) as f64 % 5.0).collect())
            .collect();
        let g = Game::new(actions.clone(), payoffs).unwrap();
        let x = MixedProfile::vertex(&actions, &[1, 2, 0]).unwrap();
        let v = g.marginal_payoff_vector(1, &x).unwrap();
        for b in 0..3 {
            assert_eq!(v[b], g.payoff(1, &[1, b, 0]));
        }
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let g = Game::coordination();
        let x = MixedProfile::uniform(&[3, 2]);
        assert!(matches!(g.expected_payoff(0, &x), Err(crate::Error::Structural(_))));
        assert!(matches!(
            g.marginal_payoff_vector(0, &x),
            Err(crate::Error::Structural(_))
        ));
    }

    #[test]
    fn rejects_bad_games() {
        assert!(Game::new(vec![2, 1], vec![vec![0.0; 2], vec![0.0; 2]]).is_err());
        assert!(Game::new(vec![2, 2], vec![vec![0.0; 4], vec![0.0; 3]]).is_err());
        assert!(Game::new(vec![2, 2], vec![vec![0.0; 4], vec![f64::NAN; 4]]).is_err());
        assert!(Game::new(vec![2], vec![vec![0.0; 2]]).is_err());
    }

    #[test]
    fn coordination_is_strictly_supermodular() {
        let r = Game::coordination().is_supermodular(true, 0.0);
        assert!(r.holds);
        assert!(r.witness.is_none());
        assert_eq!(r.min_increment, 3.0);
    }

    #[test]
    fn matching_pennies_fails_with_witness() {
        let r = pennies().is_supermodular(false, 0.0);
        assert!(!r.holds);
        let w = r.witness.unwrap();
        assert!(w.increment < 0.0);
        assert!(w.high > w.low);
        assert_ne!(w.player, w.opponent);
    }

    #[test]
    fn near_tie_is_flagged() {
        // Gain differences are exactly zero: weakly but not strictly supermodular.
        let u = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let g = Game::bimatrix(&u, &u).unwrap();
        assert!(!g.is_supermodular(true, 0.0).holds);
        let weak = g.is_supermodular(false, 0.0);
        assert!(weak.holds && weak.near_tie && weak.witness.is_some());
    }

    #[test]
    fn t_operator_examples() {
        let x = MixedProfile::new(vec![vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(t_operator(&x).as_slice(), &[0.0, 0.0]);
        let x = MixedProfile::new(vec![vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(t_operator(&x).as_slice(), &[1.0, 1.0]);
        let x = MixedProfile::new(vec![vec![0.2, 0.3, 0.5]]).unwrap();
        let v = t_operator(&x);
        assert_abs_diff_eq!(v.as_slice()[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(v.as_slice()[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn t_inverse_examples() {
        let v = TImage::new(&[3], vec![vec![0.0, 0.0]]).unwrap();
        assert_eq!(t_inverse(&v).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        let v = TImage::new(&[3], vec![vec![0.8, 0.5]]).unwrap();
        let x = t_inverse(&v).unwrap();
        for (a, b) in x.as_slice().iter().zip([0.2, 0.3, 0.5]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn t_image_rejects_increasing_block() {
        assert!(matches!(
            TImage::new(&[3], vec![vec![0.4, 0.6]]),
            Err(crate::Error::Domain(_))
        ));
        assert!(TImage::new(&[3], vec![vec![1.2, 0.6]]).is_err());
    }

    #[test]
    fn t_leq_examples() {
        let x = MixedProfile::new(vec![vec![0.5, 0.5]]).unwrap();
        let y = MixedProfile::new(vec![vec![0.4, 0.6]]).unwrap();
        assert!(t_leq(&x, &x).unwrap());
        assert!(t_leq(&x, &y).unwrap());
        assert!(!t_leq(&y, &x).unwrap());
        let lo = MixedProfile::lowest(&[2, 3]);
        let hi = MixedProfile::highest(&[2, 3]);
        let mid = MixedProfile::new(vec![vec![0.3, 0.7], vec![0.1, 0.6, 0.3]]).unwrap();
        assert!(t_leq(&lo, &mid).unwrap() && t_leq(&mid, &hi).unwrap());
    }

    #[test]
    fn profile_validation_and_projection() {
        assert!(MixedProfile::new(vec![vec![0.5, 0.6]]).is_err());
        assert!(MixedProfile::new(vec![vec![1.1, -0.1]]).is_err());
        let x = MixedProfile::new(vec![vec![1.0 + 5e-13, -5e-13]]).unwrap();
        assert_eq!(x.block(0)[1], 0.0);
        assert_abs_diff_eq!(x.block(0).iter().sum::<f64>(), 1.0, epsilon = 1e-16);
    }

    #[test]
    fn json_schema_round_trip() {
        let g: Game =
            serde_json::from_str(r#"{"players":2,"actions":[2,2],"payoffs":[[2,0,0,1],[2,0,0,1]]}"#)
                .unwrap();
        assert_eq!(g, Game::coordination());
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"players":2,"actions":[2,2],"payoffs":[[2.0,0.0,0.0,1.0],[2.0,0.0,0.0,1.0]]}"#);
        assert!(serde_json::from_str::<Game>(r#"{"players":3,"actions":[2,2],"payoffs":[[0,0,0,0],[0,0,0,0]]}"#).is_err());
        let x: MixedProfile = serde_json::from_str(r#"{"blocks":[[0.25,0.75],[1,0]]}"#).unwrap();
        assert_eq!(x.block(0), &[0.25, 0.75]);
    }
}
