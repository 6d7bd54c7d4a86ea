//! Smooth choice functions and the perturbed best-response field
//! `F(x) = br(x) − x` together with its Jacobian and its conjugate in
//! tail-sum coordinates.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, structural, Error, Result};
use crate::flow::VectorField;
use crate::games::{
    first_differences_into, offsets_of, project_flat, tail_sums_into, Game, MixedProfile, TImage,
};

/// Overflow-safe logit (softmax with temperature `eta`).
pub fn logit(pi: &[f64], eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(domain(format!("logit temperature must be positive, got {eta}")));
    }
    if pi.is_empty() {
        return Err(domain("logit of an empty payoff vector"));
    }
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(domain("logit payoffs must be finite"));
    }
    let mut out = vec![0.0; pi.len()];
    logit_into(pi, eta, &mut out);
    Ok(out)
}

pub(crate) fn logit_into(pi: &[f64], eta: f64, out: &mut [f64]) {
    let max = pi.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for (o, &p) in out.iter_mut().zip(pi) {
        // Floor at the smallest normal double so the output stays interior
        // even when the payoff gap over η exceeds the exponent range.
        *o = ((p - max) / eta).exp().max(f64::MIN_POSITIVE);
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// `η⁻¹(diag(L) − L Lᵀ)`, the derivative of the logit map at the point whose
/// image is `l`.
pub fn logit_jacobian(l: &[f64], eta: f64) -> DMatrix<f64> {
    let m = l.len();
    DMatrix::from_fn(m, m, |r, c| {
        let d = if r == c { l[r] } else { 0.0 };
        (d - l[r] * l[c]) / eta
    })
}

/// A user-supplied choice function `ℝᵐ → int(Δᵐ)`.
///
/// Implementations must be re-entrant; they are called concurrently from
/// experiment workers.
pub trait ChoiceMap: Send + Sync + fmt::Debug {
    fn choose(&self, payoffs: &[f64], out: &mut [f64]);

    /// Derivative of the choice with respect to the payoff vector, if known.
    fn jacobian(&self, _payoffs: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Clone)]
pub enum ChoiceSpec {
    Logit { eta: f64 },
    Custom { name: String, map: Arc<dyn ChoiceMap> },
}

impl fmt::Debug for ChoiceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChoiceSpec::Logit { eta } => write!(f, "Logit(eta={eta})"),
            ChoiceSpec::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl ChoiceSpec {
    pub fn logit(eta: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(domain(format!("logit temperature must be positive, got {eta}")));
        }
        Ok(ChoiceSpec::Logit { eta })
    }

    pub fn custom(name: impl Into<String>, map: Arc<dyn ChoiceMap>) -> Self {
        ChoiceSpec::Custom {
            name: name.into(),
            map,
        }
    }

    fn apply(&self, payoffs: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            ChoiceSpec::Logit { eta } => {
                logit_into(payoffs, *eta, out);
                Ok(())
            }
            ChoiceSpec::Custom { name, map } => {
                map.choose(payoffs, out);
                let sum: f64 = out.iter().sum();
                if out.iter().any(|v| !(*v > 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Contract(format!(
                        "choice map '{name}' returned {out:?}, not an interior simplex point"
                    )));
                }
                Ok(())
            }
        }
    }

    fn jacobian(&self, payoffs: &[f64], choice: &[f64]) -> Result<DMatrix<f64>> {
        match self {
            ChoiceSpec::Logit { eta } => Ok(logit_jacobian(choice, *eta)),
            ChoiceSpec::Custom { name, map } => map
                .jacobian(payoffs)
                .ok_or_else(|| domain(format!("choice map '{name}' has no Jacobian"))),
        }
    }

    pub fn to_json(&self) -> ChoiceSpecJson {
        match self {
            ChoiceSpec::Logit { eta } => ChoiceSpecJson::Logit { eta: *eta },
            ChoiceSpec::Custom { name, .. } => ChoiceSpecJson::Custom { name: name.clone() },
        }
    }
}

/// Wire form of a [`ChoiceSpec`]: `{"kind":"logit","eta":0.5}` or
/// `{"kind":"custom","name":"<registry key>"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ChoiceSpecJson {
    Logit { eta: f64 },
    Custom { name: String },
}

/// Named custom choice maps that JSON configs can refer to.
#[derive(Default, Clone)]
pub struct ChoiceRegistry {
    maps: HashMap<String, Arc<dyn ChoiceMap>>,
}

impl ChoiceRegistry {
    pub fn register(&mut self, name: impl Into<String>, map: Arc<dyn ChoiceMap>) {
        self.maps.insert(name.into(), map);
    }

    pub fn resolve(&self, spec: &ChoiceSpecJson) -> Result<ChoiceSpec> {
        match spec {
            ChoiceSpecJson::Logit { eta } => ChoiceSpec::logit(*eta),
            ChoiceSpecJson::Custom { name } => self
                .maps
                .get(name)
                .map(|m| ChoiceSpec::custom(name.clone(), m.clone()))
                .ok_or_else(|| structural(format!("unknown custom choice map '{name}'"))),
        }
    }

    /// Parses either one spec (applied to every player) or an array with one
    /// spec per player.
    pub fn parse(&self, json: &str, players: usize) -> Result<Vec<ChoiceSpec>> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OneOrMany {
            One(ChoiceSpecJson),
            Many(Vec<ChoiceSpecJson>),
        }
        let specs = match serde_json::from_str::<OneOrMany>(json)? {
            OneOrMany::One(s) => vec![s; players],
            OneOrMany::Many(v) => v,
        };
        if specs.len() != players {
            return Err(structural(format!(
                "{} choice specs for {players} players",
                specs.len()
            )));
        }
        specs.iter().map(|s| self.resolve(s)).collect()
    }
}

/// The perturbed best-response map of a game with one choice function per
/// player.
#[derive(Debug, Clone)]
pub struct BestResponseField {
    game: Game,
    choices: Vec<ChoiceSpec>,
    offsets: Vec<usize>,
}

impl BestResponseField {
    pub fn new(game: Game, choices: Vec<ChoiceSpec>) -> Result<Self> {
        if choices.len() != game.num_players() {
            return Err(structural(format!(
                "{} choice specs for {} players",
                choices.len(),
                game.num_players()
            )));
        }
        let offsets = offsets_of(game.actions());
        Ok(BestResponseField {
            game,
            choices,
            offsets,
        })
    }

    /// Every player uses logit with the same temperature.
    pub fn logit(game: Game, eta: f64) -> Result<Self> {
        let spec = ChoiceSpec::logit(eta)?;
        let n = game.num_players();
        BestResponseField::new(game, vec![spec; n])
    }

    pub fn game(&self) -> &Game {
        &self.game
    }

    pub fn choices(&self) -> &[ChoiceSpec] {
        &self.choices
    }

    pub fn actions(&self) -> &[usize] {
        self.game.actions()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn mixed_dim(&self) -> usize {
        self.game.mixed_dim()
    }

    /// Dimension of the tail-sum coordinates, `Σ(mⁱ − 1)`.
    pub fn t_dim(&self) -> usize {
        self.mixed_dim() - self.game.num_players()
    }

    fn check(&self, x: &MixedProfile) -> Result<()> {
        if x.actions() != self.actions() {
            return Err(structural(format!(
                "profile shape {:?} does not match game shape {:?}",
                x.actions(),
                self.actions()
            )));
        }
        Ok(())
    }

    /// `br(x)` on a flat state. `payoffs` is scratch of length `max mⁱ`.
    pub(crate) fn best_response_into(
        &self,
        x: &[f64],
        out: &mut [f64],
        payoffs: &mut [f64],
    ) -> Result<()> {
        for (i, (&off, &m)) in self.offsets.iter().zip(self.actions()).enumerate() {
            let pi = &mut payoffs[..m];
            self.game.marginal_payoffs_into(i, x, &self.offsets, pi);
            self.choices[i].apply(pi, &mut out[off..off + m])?;
        }
        Ok(())
    }

    pub(crate) fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.actions().iter().copied().max().unwrap_or(0)]
    }

    pub fn best_response(&self, x: &MixedProfile) -> Result<MixedProfile> {
        self.check(x)?;
        let mut out = vec![0.0; x.dim()];
        self.best_response_into(x.as_slice(), &mut out, &mut self.scratch())?;
        Ok(MixedProfile::projected(self.actions(), out))
    }

    /// `br(x) − x`; every block sums to zero.
    pub fn vector_field(&self, x: &MixedProfile) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut out = vec![0.0; x.dim()];
        self.eval(x.as_slice(), &mut out)?;
        Ok(out)
    }

    /// `D br` at a flat state, full coordinates. Diagonal blocks are zero.
    pub(crate) fn br_jacobian_flat(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.mixed_dim();
        let n = self.game.num_players();
        let mut jac = DMatrix::zeros(d, d);
        let mut pi = self.scratch();
        let mut choice = self.scratch();
        for i in 0..n {
            let (oi, mi) = (self.offsets[i], self.actions()[i]);
            self.game.marginal_payoffs_into(i, x, &self.offsets, &mut pi[..mi]);
            self.choices[i].apply(&pi[..mi], &mut choice[..mi])?;
            let dc = self.choices[i].jacobian(&pi[..mi], &choice[..mi])?;
            for j in (0..n).filter(|&j| j != i) {
                let (oj, mj) = (self.offsets[j], self.actions()[j]);
                let cross = DMatrix::from_row_slice(mi, mj, &self.game.cross_payoffs(i, j, x, &self.offsets));
                let block = &dc * cross;
                jac.view_mut((oi, oj), (mi, mj)).copy_from(&block);
            }
        }
        Ok(jac)
    }

    /// `DF(x) = D br(x) − I` in full coordinates.
    pub fn jacobian(&self, x: &MixedProfile) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let d = x.dim();
        Ok(self.br_jacobian_flat(x.as_slice())? - DMatrix::identity(d, d))
    }

    /// `T(br(T⁻¹(v))) − v`.
    pub fn conjugate_field(&self, v: &TImage) -> Result<Vec<f64>> {
        if v.actions() != self.actions() {
            return Err(structural("T-image shape does not match the game"));
        }
        let mut out = vec![0.0; v.dim()];
        self.conjugate().eval(v.as_slice(), &mut out)?;
        Ok(out)
    }

    /// Jacobian of the conjugate field in tail-sum coordinates, by the chain
    /// rule `T · D br · T⁻¹ − I`.
    pub fn conjugate_jacobian(&self, v: &TImage) -> Result<DMatrix<f64>> {
        if v.actions() != self.actions() {
            return Err(structural("T-image shape does not match the game"));
        }
        self.conjugate_jacobian_flat(v.as_slice())
    }

    fn conjugate_jacobian_flat(&self, v: &[f64]) -> Result<DMatrix<f64>> {
        let mut x = vec![0.0; self.mixed_dim()];
        first_differences_into(self.actions(), v, &mut x);
        let dbr = self.br_jacobian_flat(&x)?;
        let (t, tinv) = self.t_matrices();
        let k = self.t_dim();
        Ok(t * dbr * tinv - DMatrix::identity(k, k))
    }

    /// Linear parts of `T` (`Σ(mⁱ−1) × Σmⁱ`) and `T⁻¹` (`Σmⁱ × Σ(mⁱ−1)`).
    pub fn t_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (d, k) = (self.mixed_dim(), self.t_dim());
        let mut t = DMatrix::zeros(k, d);
        let mut tinv = DMatrix::zeros(d, k);
        let (mut xo, mut vo) = (0, 0);
        for &m in self.actions() {
            for j in 0..m - 1 {
                for col in j + 1..m {
                    t[(vo + j, xo + col)] = 1.0;
                }
            }
            tinv[(xo, vo)] = -1.0;
            for r in 1..m - 1 {
                tinv[(xo + r, vo + r - 1)] = 1.0;
                tinv[(xo + r, vo + r)] = -1.0;
            }
            tinv[(xo + m - 1, vo + m - 2)] = 1.0;
            xo += m;
            vo += m - 1;
        }
        (t, tinv)
    }

    /// The conjugate dynamic as a [`VectorField`] on tail-sum coordinates.
    pub fn conjugate(&self) -> ConjugateField<'_> {
        ConjugateField { inner: self }
    }
}

impl VectorField for BestResponseField {
    fn dim(&self) -> usize {
        self.mixed_dim()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.best_response_into(x, out, &mut self.scratch())?;
        out.iter_mut().zip(x).for_each(|(o, xi)| *o -= xi);
        Ok(())
    }

    fn jacobian(&self, x: &[f64]) -> Option<Result<DMatrix<f64>>> {
        let d = self.mixed_dim();
        Some(self.br_jacobian_flat(x).map(|j| j - DMatrix::identity(d, d)))
    }

    fn project(&self, x: &mut [f64]) {
        project_flat(self.actions(), x);
    }

    fn describe(&self) -> String {
        format!("pbr{:?}{:?}", self.actions(), self.choices)
    }
}

/// `v ↦ T(br(T⁻¹ v)) − v` on `×ᵢ ℝ^{mⁱ−1}`.
#[derive(Debug, Clone, Copy)]
pub struct ConjugateField<'a> {
    inner: &'a BestResponseField,
}

impl VectorField for ConjugateField<'_> {
    fn dim(&self) -> usize {
        self.inner.t_dim()
    }

    fn eval(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let f = self.inner;
        let mut x = vec![0.0; f.mixed_dim()];
        first_differences_into(f.actions(), v, &mut x);
        let mut br = vec![0.0; x.len()];
        f.best_response_into(&x, &mut br, &mut f.scratch())?;
        tail_sums_into(f.actions(), &br, out);
        out.iter_mut().zip(v).for_each(|(o, vi)| *o -= vi);
        Ok(())
    }

    fn jacobian(&self, v: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(self.inner.conjugate_jacobian_flat(v))
    }

    fn describe(&self) -> String {
        format!("conjugate-{}", self.inner.describe())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::finite_difference_jacobian;
    use crate::games::t_operator;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_profile(actions: &[usize], rng: &mut ChaCha8Rng) -> MixedProfile {
        let blocks = actions
            .iter()
            .map(|&m| {
                let w: Vec<f64> = (0..m).map(|_| -rng.random::<f64>().ln()).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            })
            .collect();
        MixedProfile::new(blocks).unwrap()
    }

    #[test]
    fn logit_examples() {
        for m in 1..6 {
            let l = logit(&vec![0.0; m], 0.3).unwrap();
            assert!(l.iter().all(|v| (v - 1.0 / m as f64).abs() < 1e-15));
        }
        // e / (1 + e) evaluated independently
        let e = std::f64::consts::E;
        let l = logit(&[1.0, 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(l[0], e / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(l[0], 0.731_058_578_630_004_9, epsilon = 1e-15);
        assert_abs_diff_eq!(l[1], 0.268_941_421_369_995_1, epsilon = 1e-15);
        for c in [-50.0, 3.5, 1e3] {
            let s = logit(&[c + 1.0, c], 1.0).unwrap();
            assert_abs_diff_eq!(s[0], l[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn logit_rejects_bad_input() {
        assert!(matches!(logit(&[1.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(logit(&[1.0], -1.0), Err(Error::Domain(_))));
        assert!(matches!(logit(&[f64::NAN, 0.0], 1.0), Err(Error::Domain(_))));
        assert!(matches!(logit(&[f64::INFINITY, 0.0], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn logit_extreme_inputs_stay_positive() {
        let l = logit(&[1e6, -1e6, 0.0], 1e-3).unwrap();
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(l[0], 1.0);
        assert!(l.iter().all(|v| *v > 0.0));
        let l = logit(&[-1e6, 1e6, 1e6], 1e-3).unwrap();
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(l.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn best_response_examples() {
        let f = BestResponseField::logit(Game::coordination(), 0.5).unwrap();
        let x = MixedProfile::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let br = f.best_response(&x).unwrap();
        let e4 = 4f64.exp();
        assert_abs_diff_eq!(br.block(0)[0], e4 / (1.0 + e4), epsilon = 1e-15);
        assert_abs_diff_eq!(br.block(0)[1], 1.0 / (1.0 + e4), epsilon = 1e-15);
        assert_abs_diff_eq!(br.block(0)[0], 0.982_013, epsilon = 1e-6);
        assert_eq!(br.block(0), br.block(1));

        let flat = BestResponseField::logit(Game::coordination(), 1e6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = random_profile(&[2, 2], &mut rng);
            let br = flat.best_response(&x).unwrap();
            assert!(br.as_slice().iter().all(|v| (v - 0.5).abs() < 1e-5));
        }
    }

    #[test]
    fn vector_field_is_tangent() {
        let g = Game::new(
            vec![3, 2, 2],
            (0..3).map(|p| (0..12).map(|k| ((k * 5 + p) % 7) as f64).collect()).collect(),
        )
        .unwrap();
        let f = BestResponseField::logit(g, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x = random_profile(f.actions(), &mut rng);
            let v = f.vector_field(&x).unwrap();
            for (off, m) in f.offsets().iter().zip(f.actions()) {
                let s: f64 = v[*off..off + m].iter().sum();
                assert!(s.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn field_at_lowest_vertex_points_upward() {
        let f = BestResponseField::logit(Game::coordination(), 0.2).unwrap();
        let x = MixedProfile::lowest(&[2, 2]);
        let br = f.best_response(&x).unwrap();
        let (tb, tx) = (t_operator(&br), t_operator(&x));
        assert!(tb.as_slice().iter().zip(tx.as_slice()).all(|(a, b)| a >= b));
    }

    #[test]
    fn jacobian_structure_and_finite_differences() {
        let g = Game::new(
            vec![2, 3, 2],
            (0..3).map(|p| (0..12).map(|k| (((k + 1) * (p + 2)) % 5) as f64 - 1.5).collect()).collect(),
        )
        .unwrap();
        let f = BestResponseField::logit(g, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_profile(f.actions(), &mut rng);
            let dbr = f.br_jacobian_flat(x.as_slice()).unwrap();
            for (&o, &m) in f.offsets().iter().zip(f.actions()) {
                assert!(dbr.view((o, o), (m, m)).iter().all(|v| *v == 0.0));
                // Σ_β ∂brⁱ_β / ∂x_γ = 0 for every γ
                for c in 0..f.mixed_dim() {
                    let s: f64 = (o..o + m).map(|r| dbr[(r, c)]).sum();
                    assert!(s.abs() < 1e-12);
                }
            }
            let analytic = f.jacobian(&x).unwrap();
            let fd = finite_difference_jacobian(&f, x.as_slice(), 1e-6).unwrap();
            assert!((analytic - fd).amax() <= 1e-5);
        }
    }

    #[test]
    fn conjugate_field_consistency() {
        let f = BestResponseField::logit(Game::coordination(), 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (t, _) = f.t_matrices();
        for _ in 0..200 {
            let x = random_profile(f.actions(), &mut rng);
            let v = t_operator(&x);
            let c = f.conjugate_field(&v).unwrap();
            assert_eq!(c.len(), 2);
            let fx = nalgebra::DVector::from_vec(f.vector_field(&x).unwrap());
            let tf = &t * fx;
            for (a, b) in c.iter().zip(tf.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conjugate_jacobian_matches_finite_differences() {
        let u1 = vec![vec![3.0, 1.0, 0.0], vec![2.0, 2.5, 1.0], vec![0.0, 2.0, 3.0]];
        let u2: Vec<Vec<f64>> = (0..3).map(|r| (0..3).map(|c| u1[c][r]).collect()).collect();
        let f = BestResponseField::logit(Game::bimatrix(&u1, &u2).unwrap(), 0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let v = t_operator(&random_profile(f.actions(), &mut rng));
            let a = f.conjugate_jacobian(&v).unwrap();
            let fd = finite_difference_jacobian(&f.conjugate(), v.as_slice(), 1e-6).unwrap();
            assert!((a - fd).amax() <= 1e-5);
        }
    }

    #[derive(Debug)]
    struct Boundary;
    impl ChoiceMap for Boundary {
        fn choose(&self, payoffs: &[f64], out: &mut [f64]) {
            out.fill(0.0);
            out[payoffs.len() - 1] = 1.0;
        }
    }

    #[derive(Debug)]
    struct Half;
    impl ChoiceMap for Half {
        fn choose(&self, payoffs: &[f64], out: &mut [f64]) {
            logit_into(payoffs, 2.0, out);
        }
        fn jacobian(&self, payoffs: &[f64]) -> Option<DMatrix<f64>> {
            Some(logit_jacobian(&logit(payoffs, 2.0).unwrap(), 2.0))
        }
    }

    #[test]
    fn custom_choice_contract_and_registry() {
        let g = Game::coordination();
        let bad = ChoiceSpec::custom("edge", Arc::new(Boundary));
        let f = BestResponseField::new(g.clone(), vec![bad.clone(), bad]).unwrap();
        assert!(matches!(
            f.best_response(&MixedProfile::uniform(&[2, 2])),
            Err(Error::Contract(_))
        ));

        let mut reg = ChoiceRegistry::default();
        reg.register("half", Arc::new(Half));
        let specs = reg.parse(r#"[{"kind":"custom","name":"half"},{"kind":"logit","eta":2.0}]"#, 2).unwrap();
        let f = BestResponseField::new(g.clone(), specs).unwrap();
        let x = MixedProfile::new(vec![vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let reference = BestResponseField::logit(g, 2.0).unwrap();
        assert_eq!(f.best_response(&x).unwrap(), reference.best_response(&x).unwrap());
        assert!((f.jacobian(&x).unwrap() - reference.jacobian(&x).unwrap()).amax() < 1e-15);

        assert!(reg.parse(r#"{"kind":"custom","name":"nope"}"#, 2).is_err());
        assert_eq!(reg.parse(r#"{"kind":"logit","eta":0.5}"#, 3).unwrap().len(), 3);
        assert!(reg.parse(r#"{"kind":"logit","eta":-1}"#, 2).is_err());
    }
}
