use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use qcorr::ann::{self, MlpModel, ModelConfig, Samples, TrainConfig, HIDDEN_WIDTH};
use qcorr::collective::{feature_index, ReductionPlan, NUM_FEATURES};
use qcorr::dataset::{self, Dataset, Split, SPLIT_FILES};
use qcorr::metrics::{subset_scores, DEFAULT_SUBSETS};
use qcorr::selfcheck::{self, SelfTestSize};
use qcorr::states::StateMeasure;
use qcorr::sweep::{run_sweep, SweepConfig, SweepReport};
use qcorr::Error;

use crate::config::{self, Resolver, Switch};
use crate::manifest::RunManifest;
use crate::{Cli, Command, EqualizeArgs, EvalArgs, GenArgs, ModelArgs, ReportArgs, SelftestArgs, SplitArgs, SweepArgs, TrainArgs};

pub const MODEL_FILE: &str = "model.qcm";
pub const HISTORY_FILE: &str = "history.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SWEEP_FILE: &str = "sweep.json";

/// 2 for bad input or configuration, 3 for numerical divergence, 4 for I/O
/// and corrupt files.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Divergence { .. } | Error::NumericalDegeneracy { .. } => 3,
                Error::Io(_) | Error::Corrupt(_) => 4,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 4;
        }
    }
    2
}

struct Run {
    resolver: Resolver,
    manifest: RunManifest,
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => config::load(p).with_context(|| format!("config file {}", p.display()))?,
        None => Default::default(),
    };
    let threads = if cli.deterministic {
        1
    } else {
        cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    };
    if threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;

    let name = match &cli.command {
        Command::Gen(_) => "gen",
        Command::Equalize(_) => "equalize",
        Command::Split(_) => "split",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Sweep(_) => "sweep",
        Command::Report(_) => "report",
        Command::Selftest(_) => "selftest",
    };
    let mut ctx = Run {
        resolver: Resolver::new(file),
        manifest: RunManifest::new(name, threads, cli.deterministic),
    };
    if let Some(p) = &cli.config {
        ctx.manifest.input(p)?;
    }
    let code = match cli.command {
        Command::Gen(a) => gen(&mut ctx, a)?,
        Command::Equalize(a) => equalize(&mut ctx, a)?,
        Command::Split(a) => split(&mut ctx, a)?,
        Command::Train(a) => train(&mut ctx, a)?,
        Command::Eval(a) => eval(&mut ctx, a)?,
        Command::Sweep(a) => sweep(&mut ctx, a)?,
        Command::Report(a) => report(&mut ctx, a)?,
        Command::Selftest(a) => selftest(&mut ctx, a)?,
    };
    for key in ctx.resolver.unused() {
        log::warn!("config key {key} not used by {name}");
    }
    Ok(code)
}

impl Run {
    fn finish(&mut self, path: &Path) -> Result<()> {
        let mut m = self.manifest.clone();
        m.config = self.resolver.resolved().clone();
        m.write(path)
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn gen(ctx: &mut Run, a: GenArgs) -> Result<ExitCode> {
    let r = &mut ctx.resolver;
    let count = r.require("count", a.count)?;
    let seed = r.get("seed", a.seed, 0u64)?;
    let measure_name = r.get("measure", a.measure, StateMeasure::default().name().to_string())?;
    let measure = StateMeasure::from_name(&measure_name)
        .ok_or_else(|| Error::Config(format!("unknown measure {measure_name:?}")))?;
    let ds = dataset::generate(count, seed, measure)?;
    ds.save(&a.out)?;
    ctx.manifest.output(&a.out)?;
    if let Some(csv) = &a.csv {
        let mut w = BufWriter::new(File::create(csv)?);
        ds.write_csv(&mut w)?;
        w.flush()?;
        ctx.manifest.output(csv)?;
    }
    println!("{} states written to {}; class counts {:?}", ds.len(), a.out.display(), ds.class_counts());
    ctx.finish(&sidecar(&a.out))?;
    Ok(ExitCode::SUCCESS)
}

fn equalize(ctx: &mut Run, a: EqualizeArgs) -> Result<ExitCode> {
    let seed = ctx.resolver.get("seed", a.seed, 0u64)?;
    ctx.manifest.input(&a.dataset)?;
    let raw = Dataset::load(&a.dataset).with_context(|| format!("loading {}", a.dataset.display()))?;
    let eq = dataset::equalize(&raw, seed)?;
    eq.save(&a.out)?;
    ctx.manifest.output(&a.out)?;
    println!(
        "{} of {} states kept ({:.3}); raw class counts {:?}",
        eq.len(),
        raw.len(),
        eq.len() as f64 / raw.len() as f64,
        raw.class_counts()
    );
    ctx.finish(&sidecar(&a.out))?;
    Ok(ExitCode::SUCCESS)
}

fn split(ctx: &mut Run, a: SplitArgs) -> Result<ExitCode> {
    let seed = ctx.resolver.get("seed", a.seed, 0u64)?;
    ctx.manifest.input(&a.dataset)?;
    let ds = Dataset::load(&a.dataset).with_context(|| format!("loading {}", a.dataset.display()))?;
    let s = dataset::split(&ds, seed)?;
    std::fs::create_dir_all(&a.out)?;
    s.save(&a.out)?;
    for f in SPLIT_FILES {
        ctx.manifest.output(&a.out.join(f))?;
    }
    println!(
        "train {} / validation {} / test {} written to {}",
        s.train.len(),
        s.validation.len(),
        s.test.len(),
        a.out.display()
    );
    ctx.finish(&a.out.join(MANIFEST_FILE))?;
    Ok(ExitCode::SUCCESS)
}

/// `paper` or `custom:<priority list>`.
pub fn parse_plan(spec: &str) -> Result<ReductionPlan, Error> {
    if spec == "paper" {
        return Ok(ReductionPlan::paper());
    }
    let list = spec
        .strip_prefix("custom:")
        .ok_or_else(|| Error::Config(format!("plan must be paper or custom:<list>, got {spec:?}")))?;
    let priority = list
        .split(',')
        .map(|item| {
            let item = item.trim();
            item.parse::<usize>()
                .ok()
                .filter(|&i| i < NUM_FEATURES)
                .or_else(|| feature_index(item))
                .ok_or_else(|| Error::Config(format!("unknown feature {item:?} in plan")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    ReductionPlan::from_priority(&priority)
}

fn parse_list(key: &str, s: &str) -> Result<Vec<usize>, Error> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: {v:?} is not a non-negative integer")))
        })
        .collect()
}

struct ModelSettings {
    plan: ReductionPlan,
    bn_input: bool,
    hidden: Vec<usize>,
    seed: u64,
    train: TrainConfig,
}

fn model_settings(r: &mut Resolver, a: ModelArgs) -> Result<ModelSettings> {
    let d = TrainConfig::default();
    let plan_spec = r.get("plan", a.plan, "paper".to_string())?;
    let hidden = r.get("hidden", a.hidden, format!("{HIDDEN_WIDTH},{HIDDEN_WIDTH}"))?;
    let seed = r.get("seed", a.seed, 0u64)?;
    let train = TrainConfig {
        learning_rate: r.get("learning-rate", a.learning_rate, d.learning_rate)?,
        phase2_learning_rate: r.get_opt("phase2-learning-rate", a.phase2_learning_rate)?,
        phase1_batch: r.get("phase1-batch", a.phase1_batch, d.phase1_batch)?,
        phase2_batch: r.get("phase2-batch", a.phase2_batch, d.phase2_batch)?,
        max_epochs: r.get("max-epochs", a.max_epochs, d.max_epochs)?,
        patience: r.get("patience", a.patience, d.patience)?,
        micro_batch: r.get("micro-batch", a.micro_batch, d.micro_batch)?,
        seed,
        ..d
    };
    train.validate()?;
    Ok(ModelSettings {
        plan: parse_plan(&plan_spec)?,
        bn_input: r.get("bn-input", a.bn_input, Switch(true))?.0,
        hidden: parse_list("hidden", &hidden)?,
        seed,
        train,
    })
}

fn load_split(ctx: &mut Run, dir: &Path) -> Result<Split> {
    for f in SPLIT_FILES {
        ctx.manifest.input(&dir.join(f))?;
    }
    Ok(Split::load(dir).with_context(|| format!("loading split from {}", dir.display()))?)
}

fn save_model_outputs(ctx: &mut Run, dir: &Path, model: &MlpModel, history: &ann::History) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let model_path = dir.join(MODEL_FILE);
    ann::save_model(model, &model_path)?;
    let hist_path = dir.join(HISTORY_FILE);
    let mut w = BufWriter::new(File::create(&hist_path)?);
    history.write_csv(&mut w)?;
    w.flush()?;
    ctx.manifest.output(&model_path)?;
    ctx.manifest.output(&hist_path)?;
    Ok(())
}

fn train(ctx: &mut Run, a: TrainArgs) -> Result<ExitCode> {
    let n = ctx.resolver.get("n-features", a.n_features, NUM_FEATURES)?;
    let s = model_settings(&mut ctx.resolver, a.model)?;
    let indices = s
        .plan
        .retained(n)
        .ok_or_else(|| Error::Config(format!("no feature set of length {n} in the plan")))?
        .to_vec();
    let split = load_split(ctx, &a.dataset)?;
    let mut mc = ModelConfig::new(indices.clone(), s.seed);
    mc.bn_input = s.bn_input;
    mc.hidden = s.hidden;
    let mut model = MlpModel::new(&mc)?;
    let tr = Samples::from_dataset(&split.train, &indices);
    let va = Samples::from_dataset(&split.validation, &indices);
    let history = ann::train(&mut model, &tr, &va, &s.train)?;
    save_model_outputs(ctx, &a.out, &model, &history)?;
    let last = history.epochs.iter().find(|e| e.epoch == history.best_epoch);
    println!(
        "n = {n}: {} epochs, best epoch {} (validation loss {:.5}, accuracy {:.4})",
        history.epochs.len(),
        history.best_epoch,
        history.best_val_loss,
        last.map_or(f64::NAN, |e| e.val_acc)
    );
    ctx.finish(&a.out.join(MANIFEST_FILE))?;
    Ok(ExitCode::SUCCESS)
}

fn eval(ctx: &mut Run, a: EvalArgs) -> Result<ExitCode> {
    let subsets = ctx.resolver.get("subsets", a.subsets, DEFAULT_SUBSETS)?;
    let seed = ctx.resolver.get("seed", a.seed, 0u64)?;
    ctx.manifest.input(&a.model)?;
    let model = ann::load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let path = if a.dataset.is_dir() {
        a.dataset.join(SPLIT_FILES[2])
    } else {
        a.dataset.clone()
    };
    ctx.manifest.input(&path)?;
    let ds = Dataset::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let data = Samples::from_dataset(&ds, model.feature_indices());
    let (loss, _, predicted) = ann::evaluate(&model, &data)?;
    let rep = subset_scores(&ds.labels(), &predicted, subsets, seed)?;
    println!("n = {}, {} states, loss {loss:.5}", model.n_inputs(), ds.len());
    print!("{rep}");
    print!("{}", rep.confusion);
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        let scores = out.join("scores.csv");
        rep.write_csv(BufWriter::new(File::create(&scores)?))?;
        let cm = out.join("confusion.csv");
        rep.confusion.write_csv(BufWriter::new(File::create(&cm)?))?;
        let json = out.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(&rep)?)?;
        for p in [&scores, &cm, &json] {
            ctx.manifest.output(p)?;
        }
        ctx.finish(&out.join(MANIFEST_FILE))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn print_sweep(report: &SweepReport) {
    println!("{:>3} {:>9} {:>9}  F1: sep / ent / FEF / steer / Bell", "n", "A", "relaxed");
    let mut rows: Vec<_> = report.rows.iter().collect();
    rows.sort_by(|a, b| b.n.cmp(&a.n));
    for r in rows {
        let f1: Vec<String> = r.report.f1.iter().map(|e| format!("{:.2}", 100.0 * e.mean)).collect();
        println!(
            "{:>3} {:>9.2} {:>9.2}  {}",
            r.n,
            100.0 * r.report.overall.accuracy,
            100.0 * r.report.overall.relaxed_accuracy,
            f1.join(" / ")
        );
    }
}

fn write_sweep_outputs(ctx: &mut Run, report: &SweepReport, dir: &Path) -> Result<()> {
    for p in report.write_dir(dir)? {
        ctx.manifest.output(&p)?;
    }
    Ok(())
}

fn sweep(ctx: &mut Run, a: SweepArgs) -> Result<ExitCode> {
    let lengths = ctx.resolver.get_opt("lengths", a.lengths)?;
    let baseline = ctx.resolver.get("baseline", a.baseline, Switch(true))?.0;
    let subsets = ctx.resolver.get("subsets", a.subsets, DEFAULT_SUBSETS)?;
    let s = model_settings(&mut ctx.resolver, a.model)?;
    let split = load_split(ctx, &a.dataset)?;
    let mut cfg = SweepConfig::new(s.plan, s.train);
    if let Some(l) = lengths {
        cfg.lengths = parse_list("lengths", &l)?;
    }
    cfg.baseline = baseline;
    cfg.bn_input = s.bn_input;
    cfg.hidden = s.hidden;
    cfg.model_seed = s.seed;
    cfg.subsets = subsets;
    cfg.subset_seed = s.seed;

    std::fs::create_dir_all(&a.out)?;
    let report = run_sweep(&split, &cfg, |row, model, history| {
        let dir = a.out.join(format!("n{}", row.n));
        save_model_outputs(ctx, &dir, model, history).map_err(|e| Error::Io(std::io::Error::other(format!("{e:#}"))))
    })?;
    let json = a.out.join(SWEEP_FILE);
    std::fs::write(&json, serde_json::to_string_pretty(&report)?)?;
    ctx.manifest.output(&json)?;
    write_sweep_outputs(ctx, &report, &a.out)?;
    print_sweep(&report);
    ctx.finish(&a.out.join(MANIFEST_FILE))?;
    Ok(ExitCode::SUCCESS)
}

fn report(ctx: &mut Run, a: ReportArgs) -> Result<ExitCode> {
    let json = a.sweep.join(SWEEP_FILE);
    ctx.manifest.input(&json)?;
    let text = std::fs::read_to_string(&json).with_context(|| format!("reading {}", json.display()))?;
    let report: SweepReport = serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", json.display())))?;
    let out = a.out.unwrap_or(a.sweep);
    write_sweep_outputs(ctx, &report, &out)?;
    print_sweep(&report);
    for r in &report.rows {
        println!("\nn = {}\n{}", r.n, r.report.confusion);
    }
    ctx.finish(&out.join("report.manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

fn selftest(ctx: &mut Run, a: SelftestArgs) -> Result<ExitCode> {
    let d = SelfTestSize::default();
    let r = &mut ctx.resolver;
    let seed = r.get("seed", a.seed, 0u64)?;
    let size = SelfTestSize {
        oracle_states: r.get("oracle-states", a.oracle_states, d.oracle_states)?,
        hierarchy_states: r.get("hierarchy-states", a.hierarchy_states, d.hierarchy_states)?,
        gradient_configs: r.get("gradient-configs", a.gradient_configs, d.gradient_configs)?,
    };
    let outcomes = selfcheck::run_all(size, seed)?;
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        bail!(Error::Config(format!("{failed} self-test check(s) failed")));
    }
    Ok(ExitCode::SUCCESS)
}
