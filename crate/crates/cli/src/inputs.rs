//! Input loading, field selection and error mapping.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use fictplay_core::flow::LinearField;
use fictplay_core::response::{ChoiceRegistry, ChoiceSpec};
use fictplay_core::{BestResponseField, Error, Game, MixedProfile, TImage, VectorField};
use serde::Deserialize;
use serde_json::Value;

/// Exit status 1 for domain failures, 2 for bad configuration or input.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Domain(Error),
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Domain(_) | CliError::Output(_) => 1,
        }
    }

    /// One JSON line for the diagnostic stream.
    pub fn line(&self) -> String {
        let (kind, message) = match self {
            CliError::Config(m) => ("config", m.clone()),
            CliError::Domain(e) => (e.kind(), e.to_string()),
            CliError::Output(m) => ("output", m.clone()),
        };
        serde_json::json!({ "error": kind, "message": message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Structural(_) | Error::Json(_) | Error::Io(_) => CliError::Config(e.to_string()),
            other => CliError::Domain(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))
}

/// `--game`, `--choices` and the `--eta` shorthand.
#[derive(Args, Debug, Clone)]
pub struct GameArgs {
    /// Game file (schema: game)
    #[arg(long)]
    pub game: Option<PathBuf>,
    /// Choice-map file (schema: choices)
    #[arg(long)]
    pub choices: Option<PathBuf>,
    /// Logit noise level for every player; shorthand for a choices file
    #[arg(long)]
    pub eta: Option<f64>,
}

impl GameArgs {
    pub fn load_game(&self) -> CliResult<Game> {
        let path = self.game.as_ref().ok_or_else(|| config("--game is required"))?;
        read_json(path)
    }

    pub fn load(&self) -> CliResult<BestResponseField> {
        let game = self.load_game()?;
        let players = game.num_players();
        let choices = match (&self.choices, self.eta) {
            (Some(_), Some(_)) => return Err(config("give either --choices or --eta, not both")),
            (Some(path), None) => ChoiceRegistry::default().parse(&read_text(path)?, players)?,
            (None, Some(eta)) => vec![ChoiceSpec::logit(eta)?; players],
            (None, None) => return Err(config("a choice map is required (--choices or --eta)")),
        };
        Ok(BestResponseField::new(game, choices)?)
    }
}

/// Non-game vector fields (schema: field).
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `F(x) = A x + b`.
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
}

/// Either a game-derived field (optionally its conjugate) or a field file.
#[derive(Args, Debug, Clone)]
pub struct FieldArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// Vector-field file (schema: field), instead of a game
    #[arg(long, conflicts_with = "game")]
    pub field: Option<PathBuf>,
    /// Use the conjugate field on tail-sum coordinates
    #[arg(long)]
    pub conjugate: bool,
}

pub enum LoadedField {
    Game { field: BestResponseField, conjugate: bool },
    Linear(LinearField),
}

impl FieldArgs {
    pub fn load(&self) -> CliResult<LoadedField> {
        match &self.field {
            Some(path) => {
                if self.conjugate {
                    return Err(config("--conjugate needs a game"));
                }
                let FieldSpec::Linear { matrix, offset } = read_json(path)?;
                let mut f = LinearField::from_rows(&matrix)?;
                if let Some(b) = offset {
                    f = f.with_offset(&b)?;
                }
                Ok(LoadedField::Linear(f))
            }
            None => Ok(LoadedField::Game {
                field: self.game.load()?,
                conjugate: self.conjugate,
            }),
        }
    }
}

impl LoadedField {
    pub fn as_field(&self) -> Box<dyn VectorField + '_> {
        match self {
            LoadedField::Game { field, conjugate: true } => Box::new(field.conjugate()),
            LoadedField::Game { field, .. } => Box::new(field.clone()),
            LoadedField::Linear(f) => Box::new(f.clone()),
        }
    }

    /// Reads a state: a profile (`{"blocks": …}`) for game fields, a
    /// T-image (`{"blocks": …}` in tail-sum coordinates) for conjugate fields,
    /// or a plain array for any field.
    pub fn read_state(&self, path: &Path) -> CliResult<Vec<f64>> {
        let value: Value = read_json(path)?;
        if value.is_array() {
            return serde_json::from_value(value).map_err(|e| config(format!("{}: {e}", path.display())));
        }
        let blocks: Vec<Vec<f64>> = value
            .get("blocks")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| config(format!("{}: {e}", path.display())))?
            .ok_or_else(|| config(format!("{}: expected an array or {{\"blocks\": …}}", path.display())))?;
        match self {
            LoadedField::Game { field, conjugate: true } => Ok(TImage::new(field.actions(), blocks)?.into_vec()),
            _ => Ok(MixedProfile::new(blocks)?.into_vec()),
        }
    }
}

/// `harmonic` or `power:ALPHA`.
pub fn parse_schedule(s: &str) -> CliResult<fictplay_core::StepSchedule> {
    use fictplay_core::StepSchedule;
    match s.split_once(':') {
        None if s == "harmonic" => Ok(StepSchedule::Harmonic),
        Some(("power", a)) => {
            let alpha: f64 = a.parse().map_err(|_| config(format!("bad exponent in schedule '{s}'")))?;
            Ok(StepSchedule::power_law(alpha)?)
        }
        _ => Err(config(format!("unknown schedule '{s}' (harmonic | power:ALPHA)"))),
    }
}

/// Comma-separated numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| config(format!("bad list entry '{p}'"))))
        .collect()
}

/// Reads a trajectory CSV written by `simulate-*`.
pub fn read_trajectory(path: &Path) -> CliResult<fictplay_core::Trajectory> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| config("empty trajectory file"))?;
    let dim = header.split(',').count().saturating_sub(1);
    if dim == 0 || !header.starts_with("t,") {
        return Err(config("trajectory header must be t,x_0,…"));
    }
    let (mut times, mut states) = (Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let row: Vec<f64> = parse_list(line).map_err(|_| config(format!("bad number on data line {}", k + 1)))?;
        if row.len() != dim + 1 {
            return Err(config(format!("data line {} has {} fields", k + 1, row.len())));
        }
        times.push(row[0]);
        states.push(row[1..].to_vec());
    }
    let meta = fictplay_core::stochastic::TrajectoryMeta {
        schedule: "file".into(),
        seed: 0,
        field: path.display().to_string(),
        stride: 1,
    };
    Ok(fictplay_core::Trajectory::from_samples(dim, times, states, meta)?)
}
