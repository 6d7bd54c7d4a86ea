//! `fictplay`: command-line front end.

mod inputs;
mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;
use fictplay_core::analysis::{
    self, build_catalog, convergence_experiment, nonconvergence_experiment, order_experiment,
    ExperimentConfig,
};
use fictplay_core::flow::{self as flowmod, check_cooperative_irreducible, COOP_TOL, EPS_STABILITY};
use fictplay_core::stochastic::{
    self as st, omega_bound, omega_k0, run_diffusion, run_robbins_monro, run_sfp, DiffusionDecay,
    GaussianNoise, NoiseSource, RunOptions, SfpStart, StoragePolicy, UniformNoise, ZeroNoise,
};
use fictplay_core::{classify_stability, enumerate_pne, find_pne, MixedProfile, OmegaRate};
use serde_json::{json, Value};

use inputs::{config, parse_list, parse_schedule, read_json, read_trajectory, CliResult, FieldArgs, GameArgs};
use output::{emit_json, print_line, write_atomic, write_json};

const SCHEMAS: &str = "\
Input schemas:
  game        {\"players\": N, \"actions\": [m1, ...], \"payoffs\": [[...], ...]}
              one dense row-major tensor per player, player 0 most significant
  choices     {\"kind\": \"logit\", \"eta\": 0.5}, or an array with one spec per player
  profile     {\"blocks\": [[...], ...]}, one probability vector per player
  field       {\"kind\": \"linear\", \"matrix\": [[...]], \"offset\": [...]}
  state       a profile, a T-image with --conjugate, or a plain array
  experiment  {\"runs\": 200, \"steps\": 1000000, \"seed\": 0, \"window\": 1000, \"tol\": 0.01,
               \"catalog\": {\"kind\": \"computed\", \"random_seeds\": 50},
               \"start\": {\"kind\": \"uniform\"}, \"prefix\": 1000, \"force\": false,
               \"jobs\": 0, \"apt_times\": []}

Exit status: 0 success, 1 domain error, 2 configuration or parse error.
Errors are reported as one JSON line on stderr.";

#[derive(Parser)]
#[command(name = "fictplay", version, about = "Stochastic fictitious play and stochastic approximation", after_help = SCHEMAS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RateCase {
    Moment,
    Subgaussian,
}

#[derive(Subcommand)]
enum Command {
    /// Check (strict) supermodularity of a game [schema: game]
    CheckGame {
        #[arg(long)]
        game: PathBuf,
        /// Check weak instead of strict supermodularity
        #[arg(long)]
        weak: bool,
    },
    /// Locate perturbed Nash equilibria [schemas: game, choices, profile]
    SolvePne {
        #[command(flatten)]
        game: GameArgs,
        /// Start profile for a single search; without it every vertex and random seeds are tried
        #[arg(long)]
        start: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linear stability of an equilibrium [schemas: game, choices, profile]
    Classify {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long)]
        point: PathBuf,
        #[arg(long, default_value_t = EPS_STABILITY)]
        eps: f64,
    },
    /// Cooperativity and irreducibility of the Jacobian at sample points [schemas: game, choices, field]
    CheckCoop {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = COOP_TOL)]
        tol: f64,
    },
    /// Integrate the deterministic flow [schemas: game, choices, field, state]
    Flow {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long)]
        x0: PathBuf,
        /// Final time
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Comma-separated output times (CSV output)
        #[arg(long)]
        times: Option<String>,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate stochastic fictitious play [schemas: game, choices, profile]
    SimulateSfp {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Interior start profile (default: uniform)
        #[arg(long, conflicts_with = "vertex")]
        start: Option<PathBuf>,
        /// Pure start profile, comma-separated action indices
        #[arg(long)]
        vertex: Option<String>,
        /// Synthetic history length for interior starts
        #[arg(long, default_value_t = st::DEFAULT_PREFIX)]
        prefix: u64,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        dense_tail: usize,
        /// Record increments from this step on (noise.csv)
        #[arg(long)]
        record_noise_from: Option<u64>,
        /// Write the sampled actions (actions.csv)
        #[arg(long)]
        record_actions: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a Robbins-Monro process [schemas: game, choices, field, state]
    SimulateRm {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long)]
        x0: PathBuf,
        /// zero | gaussian:STD | uniform:HALF_WIDTH
        #[arg(long, default_value = "zero")]
        noise: String,
        /// harmonic | power:ALPHA
        #[arg(long, default_value = "harmonic")]
        schedule: String,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        record_noise_from: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate dX = F(X)dt + sqrt(gamma(t)) dB with gamma(t) = exp(-rate t) [schemas: game, choices, field, state]
    SimulateDiffusion {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long)]
        x0: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        t_end: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distance d(t, T) between a stored trajectory and the flow [schemas: game, choices, field; trajectory CSV]
    AptMetric {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// Deviation bound omega(t, delta, T) for a step schedule
    OmegaBound {
        #[arg(long, value_enum)]
        case: RateCase,
        /// Moment order (moment case)
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long)]
        b: f64,
        /// Noise dimension (subgaussian case)
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// harmonic | power:ALPHA
        #[arg(long, default_value = "harmonic")]
        schedule: String,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
    },
    /// Convergence experiment over independent SFP runs [schemas: game, choices, experiment]
    Experiment {
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Runs started next to a linearly unstable equilibrium [schemas: game, choices, experiment]
    NonconvExperiment {
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Catalog index of the target (default: first linearly unstable entry)
        #[arg(long)]
        target: Option<usize>,
        #[arg(long, default_value_t = 1e-3)]
        radius: f64,
    },
    /// Order preservation of the conjugate flow [schemas: game, choices]
    OrderExperiment {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long, default_value_t = 50)]
        pairs: usize,
        /// Random points for the Jacobian sign check
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args, Clone, Debug)]
struct ExperimentArgs {
    /// Experiment file (schema: experiment)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Override a config key, e.g. --set tol=0.005 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn build(&self) -> CliResult<ExperimentConfig> {
        let mut value: Value = match &self.config {
            Some(p) => read_json(p)?,
            None => json!({}),
        };
        let obj = value.as_object_mut().ok_or_else(|| config("experiment config must be an object"))?;
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| config(format!("override '{kv}' is not KEY=VALUE")))?;
            let parsed = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            obj.insert(k.to_string(), parsed);
        }
        if let Some(r) = self.runs {
            obj.insert("runs".into(), json!(r));
        }
        if let Some(s) = self.steps {
            obj.insert("steps".into(), json!(s));
        }
        if let Some(s) = self.seed {
            obj.insert("seed".into(), json!(s));
        }
        if let Some(j) = self.jobs {
            obj.insert("jobs".into(), json!(j));
        }
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

fn parse_noise(s: &str) -> CliResult<Box<dyn NoiseSource>> {
    let param = |p: &str| p.parse::<f64>().map_err(|_| config(format!("bad noise parameter in '{s}'")));
    match s.split_once(':') {
        None if s == "zero" => Ok(Box::new(ZeroNoise)),
        Some(("gaussian", p)) => Ok(Box::new(GaussianNoise { std: param(p)? })),
        Some(("uniform", p)) => Ok(Box::new(UniformNoise { half_width: param(p)? })),
        _ => Err(config(format!("unknown noise '{s}' (zero | gaussian:STD | uniform:W)"))),
    }
}

fn write_trajectory(out: Option<&Path>, traj: &fictplay_core::Trajectory) -> CliResult<()> {
    match out {
        Some(dir) => {
            write_atomic(dir, "trajectory.csv", |w| traj.write_csv(w))?;
            write_json(dir, "meta.json", &traj.meta)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            match traj.write_csv(&mut lock).and_then(|_| lock.flush()) {
                Ok(()) => Ok(()),
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
                Err(e) => Err(inputs::CliError::Output(e.to_string())),
            }
        }
    }
}

fn write_timing(dir: &Path, started: Instant, jobs: usize) -> CliResult<()> {
    let seconds = started.elapsed().as_secs_f64();
    write_json(dir, "timing.json", &json!({ "wall_clock_seconds": seconds, "jobs": jobs }))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::CheckGame { game, weak } => {
            let g: fictplay_core::Game = read_json(&game)?;
            let rep = g.is_supermodular(!weak, 0.0);
            let verdict = match (rep.holds, weak) {
                (true, false) => "strict",
                (true, true) => "weak",
                (false, _) => "no",
            };
            print_line(&format!("supermodular: {verdict}"))?;
            if let Some(w) = &rep.witness {
                print_line(&serde_json::to_string(w).map_err(|e| config(e.to_string()))?)?;
            }
        }
        Command::SolvePne { game, start, seeds, tol, seed, out } => {
            let f = game.load()?;
            match start {
                Some(p) => {
                    let x0: MixedProfile = read_json(&p)?;
                    emit_json(out.as_deref(), "pne.json", &find_pne(&f, &x0, tol, 100_000)?)?;
                }
                None => emit_json(out.as_deref(), "catalog.json", &enumerate_pne(&f, seeds, tol, seed)?)?,
            }
        }
        Command::Classify { game, point, eps } => {
            let f = game.load()?;
            let p: MixedProfile = read_json(&point)?;
            emit_json(None, "", &classify_stability(&f, &p, eps)?)?;
        }
        Command::CheckCoop { field, samples, seed, tol } => {
            let loaded = field.load()?;
            let vf = loaded.as_field();
            let mut rng = st::rng_for(seed, 0);
            let points: Vec<Vec<f64>> = match &loaded {
                inputs::LoadedField::Game { field: f, conjugate } => (0..samples)
                    .map(|_| {
                        let x = analysis::random_profile(f.actions(), &mut rng);
                        if *conjugate {
                            fictplay_core::t_operator(&x).into_vec()
                        } else {
                            x.into_vec()
                        }
                    })
                    .collect(),
                // uniform in the unit cube
                inputs::LoadedField::Linear(_) => (0..samples)
                    .map(|_| (0..vf.dim()).map(|_| rng.random::<f64>()).collect())
                    .collect(),
            };
            emit_json(None, "", &check_cooperative_irreducible(vf.as_ref(), &points, tol)?)?;
        }
        Command::Flow { field, x0, t, times, step, out } => {
            let loaded = field.load()?;
            let vf = loaded.as_field();
            let x = loaded.read_state(&x0)?;
            let opts = flowmod::FlowOptions::with_step(step)?;
            match times {
                Some(list) => {
                    let ts: Vec<f64> = parse_list(&list)?;
                    let states = flowmod::flow_at_times(vf.as_ref(), &x, &ts, &opts)?;
                    let meta = st::TrajectoryMeta {
                        schedule: format!("rk4(h={step})"),
                        seed: 0,
                        field: vf.describe(),
                        stride: 1,
                    };
                    let traj = fictplay_core::Trajectory::from_samples(x.len(), ts, states, meta)?;
                    write_trajectory(out.as_deref(), &traj)?;
                }
                None => {
                    let end = flowmod::flow(vf.as_ref(), &x, t, &opts)?;
                    emit_json(out.as_deref(), "flow.json", &json!({ "t": t, "state": end }))?;
                }
            }
        }
        Command::SimulateSfp {
            game,
            steps,
            seed,
            start,
            vertex,
            prefix,
            stride,
            dense_tail,
            record_noise_from,
            record_actions,
            out,
        } => {
            let f = game.load()?;
            let s = match (start, vertex) {
                (Some(p), _) => SfpStart::interior(read_json(&p)?, prefix)?,
                (None, Some(v)) => SfpStart::vertex(f.actions(), &parse_list::<usize>(&v)?)?,
                (None, None) => SfpStart::interior(MixedProfile::uniform(f.actions()), prefix)?,
            };
            let opts = RunOptions {
                storage: StoragePolicy::strided(stride, dense_tail),
                record_noise_from,
                stream: 0,
            };
            let run = run_sfp(&f, &s, steps, seed, &opts, record_actions)?;
            let dir = out.as_deref();
            write_trajectory(dir, &run.trajectory)?;
            if let Some(dir) = dir {
                if let Some(rec) = &run.noise {
                    write_atomic(dir, "noise.csv", |w| rec.write_csv(w))?;
                }
                if let Some(actions) = &run.actions {
                    let players = f.actions().len();
                    write_atomic(dir, "actions.csv", |w| {
                        let header: Vec<String> = (0..players).map(|i| format!("a_{i}")).collect();
                        writeln!(w, "{}", header.join(","))?;
                        for row in actions.chunks(players) {
                            let cells: Vec<String> = row.iter().map(u32::to_string).collect();
                            writeln!(w, "{}", cells.join(","))?;
                        }
                        Ok(())
                    })?;
                }
            }
        }
        Command::SimulateRm { field, x0, noise, schedule, steps, seed, stride, record_noise_from, out } => {
            let loaded = field.load()?;
            let vf = loaded.as_field();
            let x = loaded.read_state(&x0)?;
            let noise = parse_noise(&noise)?;
            let sched = parse_schedule(&schedule)?;
            let opts = RunOptions {
                storage: StoragePolicy::strided(stride, 0),
                record_noise_from,
                stream: 0,
            };
            let run = run_robbins_monro(vf.as_ref(), &x, noise.as_ref(), &sched, steps, seed, &opts)?;
            write_trajectory(out.as_deref(), &run.trajectory)?;
            if let (Some(dir), Some(rec)) = (out.as_deref(), &run.noise) {
                write_atomic(dir, "noise.csv", |w| rec.write_csv(w))?;
            }
        }
        Command::SimulateDiffusion { field, x0, rate, t_end, dt, seed, stride, out } => {
            let loaded = field.load()?;
            let vf = loaded.as_field();
            let x = loaded.read_state(&x0)?;
            let opts = RunOptions {
                storage: StoragePolicy::strided(stride, 0),
                ..RunOptions::default()
            };
            let traj = run_diffusion(vf.as_ref(), &x, &DiffusionDecay::new(rate)?, t_end, dt, seed, &opts)?;
            write_trajectory(out.as_deref(), &traj)?;
        }
        Command::AptMetric { field, trajectory, t, horizon, step } => {
            let loaded = field.load()?;
            let vf = loaded.as_field();
            let traj = read_trajectory(&trajectory)?;
            let opts = flowmod::FlowOptions::with_step(step)?;
            let d = st::apt_distance(&traj, vf.as_ref(), t, horizon, &opts)?;
            emit_json(None, "", &json!({ "t": t, "horizon": horizon, "distance": d }))?;
        }
        Command::OmegaBound { case, q, b, dim, schedule, t, delta, horizon } => {
            let rate = match case {
                RateCase::Moment => OmegaRate::moment(q, b)?,
                RateCase::Subgaussian => OmegaRate::subgaussian(b, dim)?,
            };
            let sched = parse_schedule(&schedule)?;
            let k0 = omega_k0(&rate, &sched, delta);
            let omega = omega_bound(&rate, &sched, t, delta, horizon)?;
            emit_json(
                None,
                "",
                &json!({
                    "rate": rate,
                    "schedule": sched.describe(),
                    "t": t,
                    "delta": delta,
                    "horizon": horizon,
                    "k0": k0,
                    "tau_k0": sched.tau(k0),
                    "omega": omega,
                }),
            )?;
        }
        Command::Experiment { game, exp } => {
            let started = Instant::now();
            let f = game.load()?;
            let cfg = exp.build()?;
            let rep = convergence_experiment(&f, &cfg)?;
            let dir = exp.out_dir();
            write_json(&dir, "report.json", &rep)?;
            write_atomic(&dir, "basins.csv", |w| w.write_all(rep.aggregate.basins_csv().as_bytes()))?;
            write_timing(&dir, started, cfg.jobs)?;
            let a = &rep.aggregate;
            print_line(&format!(
                "runs {} converged {} stalled {} undecided {} errors {} stable_fraction {} unstable_fraction {}",
                a.runs, a.converged, a.stalled, a.undecided, a.errors, a.stable_fraction, a.unstable_fraction
            ))?;
        }
        Command::NonconvExperiment { game, exp, target, radius } => {
            let started = Instant::now();
            let f = game.load()?;
            let cfg = exp.build()?;
            let catalog = build_catalog(&f, &cfg.catalog, cfg.seed)?;
            let target = match target {
                Some(i) => catalog
                    .get(i)
                    .cloned()
                    .ok_or_else(|| config(format!("catalog has {} entries, no index {i}", catalog.len())))?,
                None => catalog
                    .iter()
                    .find(|r| r.label.is_unstable())
                    .cloned()
                    .ok_or_else(|| inputs::CliError::Domain(fictplay_core::Error::Precondition(
                        "catalog has no linearly unstable equilibrium".into(),
                    )))?,
            };
            let rep = nonconvergence_experiment(&f, &cfg, &target, radius)?;
            let dir = exp.out_dir();
            write_json(&dir, "report.json", &rep)?;
            write_timing(&dir, started, cfg.jobs)?;
            print_line(&format!(
                "runs {} converged_to_target {} fraction {} ci95_upper {}",
                cfg.runs, rep.converged_to_target, rep.fraction, rep.ci95.1
            ))?;
        }
        Command::OrderExperiment { game, pairs, points, seed, force, out } => {
            let f = game.load()?;
            emit_json(out.as_deref(), "order.json", &order_experiment(&f, pairs, points, seed, force)?)?;
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version go to stdout with status 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{}", e.line());
        std::process::exit(e.exit_code());
    }
}
