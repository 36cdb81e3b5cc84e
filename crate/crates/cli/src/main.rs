use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use reclearn::analytics::{accuracy, iteration_comparison, sample_for_embedding, tsne, Confusion, SampleSpace};
use reclearn::engine::{run_stream, FnSink, LatencyStats};
use reclearn::io::bus::TelemetryBus;
use reclearn::io::config::{read_profile, Config};
use reclearn::io::embedding_file::write_embedding;
use reclearn::io::live::LineSource;
use reclearn::io::manifest::{load_session, SessionManifest};
use reclearn::io::model_file::read_model;
use reclearn::io::recording_file::read_recording;
use reclearn::io::server::{run_controller, serve};
use reclearn::io::telemetry::TelemetryMessage;
use reclearn::{
    Engine, Intent, Recording, Role, SampleSource, Session, SessionError, SimulatedSubject, Stage, SubjectMeta,
    SubjectProfile,
};

const SUBJECT_STATE: &str = "subject_state.json";

#[derive(Parser)]
#[command(name = "reclearn", version, about = "EMG intent inferral and reciprocal-learning sessions")]
struct Cli {
    /// TOML file with tunables; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every simulator-backed step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Session manifest. Recordings and models are stored beside it.
    #[arg(long, global = true, default_value = "session/manifest.json")]
    manifest: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SubjectArgs {
    /// sim:adaptive, sim:static, profile:<path> or live:<host:port>.
    #[arg(long, default_value = "sim:adaptive")]
    subject: String,
    /// Subject identifier stored in the manifest of a new session.
    #[arg(long, default_value = "sim-01")]
    subject_id: String,
}

#[derive(Subcommand)]
enum Command {
    /// Record the current iteration's cued recordings.
    Collect(SubjectArgs),
    /// Fit the classifier on the current iteration's training recordings.
    Train,
    /// Score the current model on the held-out recordings.
    Evaluate,
    /// Live feedback practice with the current model.
    Practice {
        #[command(flatten)]
        subject: SubjectArgs,
        #[arg(long)]
        duration_ms: Option<u64>,
    },
    /// Run complete iterations into a fresh session.
    Iterate {
        #[command(flatten)]
        subject: SubjectArgs,
        #[arg(long, default_value_t = 2)]
        iterations: u32,
        /// Replace an existing session at the manifest path.
        #[arg(long)]
        force: bool,
    },
    /// Stream a recording file through the engine.
    Replay {
        #[arg(long)]
        input: PathBuf,
        /// Model file; defaults to the session's current model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Write every telemetry line here.
        #[arg(long)]
        telemetry: Option<PathBuf>,
    },
    /// Embed sampled recordings in 3D.
    Tsne {
        /// `iter<N>_<train|test>` from the session, or recording files.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        per_intent: usize,
        /// Embed raw signals instead of preprocessed ones.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare two iterations' reports.
    Report {
        #[arg(long, default_value_t = 1)]
        first: u32,
        #[arg(long, default_value_t = 2)]
        second: u32,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve telemetry and accept control messages over TCP.
    Serve {
        #[command(flatten)]
        subject: SubjectArgs,
        #[arg(long)]
        bind: Option<String>,
        /// Stream as fast as possible instead of at 50Hz.
        #[arg(long)]
        no_realtime: bool,
    },
}

struct Ctx {
    config: Config,
    seed: u64,
    manifest: PathBuf,
}

impl Ctx {
    fn session_config(&self) -> reclearn::SessionConfig {
        let mut c = self.config.session.clone();
        c.seed = self.seed;
        c
    }

    fn state_path(&self) -> PathBuf {
        self.manifest.parent().unwrap_or(Path::new(".")).join(SUBJECT_STATE)
    }

    fn load(&self) -> Result<Session> {
        let mut session =
            load_session(&self.manifest).with_context(|| format!("loading session {}", self.manifest.display()))?;
        session.persist_to(&self.manifest)?;
        Ok(session)
    }

    fn load_or_new(&self, subject_id: &str) -> Result<Session> {
        if self.manifest.exists() {
            return self.load();
        }
        let mut session = Session::new(SubjectMeta::simulated(subject_id), self.session_config());
        session.persist_to(&self.manifest)?;
        Ok(session)
    }

    fn profile(&self, spec: &str) -> Result<Option<SubjectProfile>> {
        let mut profile = match spec {
            "sim:adaptive" => SubjectProfile::default_adaptive(),
            "sim:static" => SubjectProfile::default_static(),
            s if s.starts_with("profile:") => read_profile(Path::new(&s["profile:".len()..]))?,
            s if s.starts_with("live:") => return Ok(None),
            other => bail!("unknown subject `{other}`; use sim:adaptive, sim:static, profile:<path> or live:<addr>"),
        };
        self.config.subject.apply(&mut profile);
        profile.seed = self.seed;
        Ok(Some(profile))
    }

    /// A simulated subject resumes from its saved state when one exists.
    fn source(&self, spec: &str, resume: bool) -> Result<Source> {
        if let Some(addr) = spec.strip_prefix("live:") {
            let src = LineSource::connect(addr).with_context(|| format!("connecting to {addr}"))?;
            return Ok(Source::Live(Box::new(src)));
        }
        let state = self.state_path();
        let profile = if resume && state.exists() {
            read_profile(&state).with_context(|| format!("reading {}", state.display()))?
        } else {
            self.profile(spec)?.expect("simulated profile")
        };
        Ok(Source::Sim(Box::new(SimulatedSubject::new(profile))))
    }
}

enum Source {
    Sim(Box<SimulatedSubject>),
    Live(Box<dyn SampleSource + Send>),
}

impl Source {
    fn as_source(&mut self) -> &mut dyn SampleSource {
        match self {
            Source::Sim(s) => s.as_mut(),
            Source::Live(s) => s.as_mut(),
        }
    }

    /// Saves an adapted simulated subject so the next command continues it.
    fn save(&self, path: &Path) -> Result<()> {
        if let Source::Sim(s) = self {
            let mut p = s.snapshot();
            p.seed = p.seed.wrapping_add(1 + s.frames_observed());
            reclearn::io::config::write_profile(&p, path)?;
        }
        Ok(())
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = cli.seed.unwrap_or(config.session.seed);
    let ctx = Ctx { config, seed, manifest: cli.manifest };
    if let Some(dir) = ctx.manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    match cli.command {
        Command::Collect(subject) => {
            let mut session = ctx.load_or_new(&subject.subject_id)?;
            let mut source = ctx.source(&subject.subject, true)?;
            session.begin_stage(Stage::Collect)?;
            let recs = session.run_collection(source.as_source())?;
            source.save(&ctx.state_path())?;
            println!("iteration {}: collected {} recordings", session.iteration(), recs.len());
        }
        Command::Train => {
            let mut session = ctx.load()?;
            session.begin_stage(Stage::Train)?;
            let model = session.train_iteration()?;
            println!(
                "iteration {}: trained, open weight variance {:.3e}",
                session.iteration(),
                reclearn::classifier::weight_variance(&model, Intent::Open)
            );
        }
        Command::Evaluate => {
            let mut session = if ctx.manifest.exists() {
                ctx.load()?
            } else {
                Session::new(SubjectMeta::simulated(""), ctx.session_config())
            };
            if session.current_model().is_none() {
                return Err(SessionError::NoModel(session.iteration()).into());
            }
            session.begin_stage(Stage::Evaluate)?;
            let r = session.evaluate_iteration()?;
            println!(
                "iteration {}: accuracy {:.4} (raw {:.4}), open weight variance {:.3e}, silhouette {:.4}",
                r.iteration, r.test_accuracy, r.raw_accuracy, r.weight_variance_open, r.silhouette
            );
            for c in &r.per_condition {
                println!("  {}: {:.4}", c.condition, c.accuracy);
            }
        }
        Command::Practice { subject, duration_ms } => {
            let mut session = if ctx.manifest.exists() {
                ctx.load()?
            } else {
                Session::new(SubjectMeta::simulated(""), ctx.session_config())
            };
            if session.current_model().is_none() {
                return Err(SessionError::NoModel(session.iteration()).into());
            }
            let mut source = ctx.source(&subject.subject, true)?;
            session.begin_stage(Stage::Practice)?;
            let duration = duration_ms.unwrap_or(session.config().practice_duration_ms);
            let s = session.run_practice(source.as_source(), duration)?;
            source.save(&ctx.state_path())?;
            println!(
                "practice: {} frames, {} intent changes, {} hand transitions",
                s.frames, s.intent_changes, s.hand_transitions
            );
        }
        Command::Iterate { subject, iterations, force } => {
            if ctx.manifest.exists() && !force {
                bail!("{} already exists; pass --force to replace it", ctx.manifest.display());
            }
            let mut session = Session::new(SubjectMeta::simulated(&subject.subject_id), ctx.session_config());
            session.persist_to(&ctx.manifest)?;
            let mut source = ctx.source(&subject.subject, false)?;
            let reports = session.iterate(source.as_source(), iterations)?;
            source.save(&ctx.state_path())?;
            for r in &reports {
                println!(
                    "iteration {}: accuracy {:.4} (raw {:.4}), open weight variance {:.3e}, silhouette {:.4}",
                    r.iteration, r.test_accuracy, r.raw_accuracy, r.weight_variance_open, r.silhouette
                );
            }
            println!("manifest written to {}", ctx.manifest.display());
        }
        Command::Replay { input, model, telemetry } => replay(&ctx, &input, model.as_deref(), telemetry.as_deref())?,
        Command::Tsne { input, per_intent, raw, output } => tsne_cmd(&ctx, &input, per_intent, raw, output)?,
        Command::Report { first, second, csv } => {
            let manifest = SessionManifest::read(&ctx.manifest)?;
            let get = |n: u32| {
                manifest
                    .iteration(n)
                    .and_then(|e| e.report.clone())
                    .ok_or_else(|| anyhow!("no report for iteration {n} in {}", ctx.manifest.display()))
            };
            let table = iteration_comparison(&get(first)?, &get(second)?);
            print!("{}", table.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, table.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Serve { subject, bind, no_realtime } => {
            let mut session = ctx.load_or_new(&subject.subject_id)?;
            let bus = TelemetryBus::new(ctx.config.server.queue_capacity);
            session.attach_telemetry(bus.clone());
            let mut source = ctx.source(&subject.subject, true)?;
            let (tx, rx) = mpsc::channel();
            let bind = bind.unwrap_or_else(|| ctx.config.server.bind.clone());
            let server = serve(bind.as_str(), bus, tx).with_context(|| format!("binding {bind}"))?;
            println!("serving on {}", server.local_addr());
            run_controller(&mut session, source.as_source(), &rx, ctx.config.server.realtime && !no_realtime);
            source.save(&ctx.state_path())?;
            server.shutdown();
        }
    }
    Ok(())
}

fn replay(ctx: &Ctx, input: &Path, model: Option<&Path>, telemetry: Option<&Path>) -> Result<()> {
    let recording = read_recording(input).with_context(|| format!("reading {}", input.display()))?;
    let model = match model {
        Some(p) => Arc::new(read_model(p).with_context(|| format!("reading {}", p.display()))?),
        None => ctx.load()?.current_model().cloned().ok_or(SessionError::NoModel(0))?,
    };
    let mut engine = Engine::with_model(ctx.config.session.engine, model);
    let mut lines = Vec::new();
    let mut confusion = Confusion::default();
    let truth: std::collections::HashMap<u64, Intent> =
        recording.samples.iter().filter_map(|s| s.cue.map(|c| (s.t_ms, c))).collect();
    let started = Instant::now();
    let summary = run_stream(
        &mut engine,
        recording.samples.iter().map(|s| Ok::<_, std::convert::Infallible>(*s)),
        FnSink(|frame: &reclearn::FeedbackFrame| {
            if let Some(&cue) = truth.get(&frame.t_ms) {
                confusion.record(cue, frame.intent);
            }
            if telemetry.is_some() {
                lines.push(TelemetryMessage::frame(frame).to_line());
            }
        }),
    );
    let wall = started.elapsed();
    if let Some(path) = telemetry {
        let mut text = lines.join("\n");
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let LatencyStats { p50_us, p99_us, max_us, .. } = summary.latency;
    println!(
        "{} frames in {:.3}s, latency p50 {p50_us:.1}us p99 {p99_us:.1}us max {max_us:.1}us, {} hand transitions",
        summary.frames,
        wall.as_secs_f64(),
        summary.hand_transitions
    );
    if let Ok(acc) = accuracy(&confusion) {
        println!("accuracy against cues {acc:.4}");
    }
    if let Some(e) = summary.error {
        bail!("stream stopped early: {e}");
    }
    Ok(())
}

fn resolve_inputs(ctx: &Ctx, inputs: &[String]) -> Result<Vec<Recording>> {
    let mut out = Vec::new();
    let mut session: Option<Session> = None;
    for input in inputs {
        if let Some((iteration, role)) = parse_selector(input) {
            if session.is_none() {
                session = Some(load_session(&ctx.manifest)?);
            }
            let data = session
                .as_ref()
                .and_then(|s| s.datasets().get(&iteration))
                .ok_or_else(|| anyhow!("no recordings for iteration {iteration}"))?;
            out.extend(data.role(role).iter().cloned());
        } else {
            out.push(read_recording(Path::new(input)).with_context(|| format!("reading {input}"))?);
        }
    }
    Ok(out)
}

fn parse_selector(s: &str) -> Option<(u32, Role)> {
    let rest = s.strip_prefix("iter")?;
    let (n, role) = rest.split_once('_')?;
    let role = match role {
        "train" => Role::Train,
        "test" => Role::Test,
        _ => return None,
    };
    Some((n.parse().ok()?, role))
}

fn tsne_cmd(ctx: &Ctx, inputs: &[String], per_intent: usize, raw: bool, output: Option<PathBuf>) -> Result<()> {
    let recordings = resolve_inputs(ctx, inputs)?;
    let refs: Vec<&Recording> = recordings.iter().collect();
    let space = if raw { SampleSpace::Raw } else { SampleSpace::Preprocessed };
    let sample = sample_for_embedding(&refs, per_intent, ctx.seed, space);
    for s in &sample.shortfall {
        println!("shortfall: {s:?}");
    }
    let points: Vec<Vec<f64>> = sample.x.iter().map(|c| c.to_vec()).collect();
    let params = reclearn::analytics::TsneParams { seed: ctx.seed, ..ctx.config.tsne };
    let started = Instant::now();
    let result = tsne(&points, &sample.labels, &params)?;
    let output = output.unwrap_or_else(|| {
        let stem = inputs.first().map(|s| Path::new(s).file_stem().unwrap_or_default().to_string_lossy().into_owned());
        PathBuf::from(format!("tsne_{}.csv", stem.unwrap_or_default()))
    });
    write_embedding(&result, &output)?;
    info!("embedding took {:.1}s", started.elapsed().as_secs_f64());
    println!(
        "{} points, KL {:.4} -> {:.4}, written to {}",
        result.points.len(),
        result.kl_initial,
        result.kl_final,
        output.display()
    );
    Ok(())
}
