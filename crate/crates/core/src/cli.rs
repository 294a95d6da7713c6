//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::fap;
use crate::klda::ClassId;
use crate::pipeline::{self, Domain, RunConfig, ScoreTable, TaskSpec, UniformZeroShot, ZeroShot};
use crate::storage::config::{config_echo, load_config};
use crate::storage::emb1::{self, Emb1, FLAG_PROBABILITIES, FLAG_SOURCE};
use crate::storage::golden::{self, Golden};
use crate::storage::report::RunReport;
use crate::storage::snapshot::{self, Snapshot};
use crate::synth::{self, Shift, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "sfcdcl", version, about = "Source-free continual domain adaptation with streaming kernel LDA")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the source model on labeled source tasks (one EMB1 file per task).
    PretrainSource(PretrainArgs),
    /// Adapt to unlabeled target tasks from a source model snapshot.
    AdaptTarget(AdaptArgs),
    /// Score model snapshots on labeled test files.
    Eval(EvalArgs),
    /// Write a synthetic source/target stream as EMB1 files.
    GenSynth(SynthArgs),
    /// Write Haar sub-bands of a grid (the built-in 8x8 grid by default).
    DwtGolden(GoldenArgs),
    /// Print the header of an EMB1, KLDA, GRID or HAAR file.
    Inspect { file: PathBuf },
}

#[derive(Debug, Args)]
struct Common {
    /// key = value run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON report destination.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// Labeled source task files, in stream order.
    #[arg(long = "source", required = true)]
    sources: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Directory for a snapshot after every task (stage_1.klda, ...).
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    source_model: PathBuf,
    /// Unlabeled target task files, in stream order.
    #[arg(long = "target", required = true)]
    targets: Vec<PathBuf>,
    /// Class set of each target task, e.g. `0,1,2`. One per --target.
    #[arg(long = "classes", required = true)]
    classes: Vec<String>,
    /// Zero-shot probability tables, one per --target.
    #[arg(long = "scores")]
    scores: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Source data is never accepted here; present only to reject it explicitly.
    #[arg(long = "source", hide = true)]
    source_data: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// One snapshot per stage for a full matrix, or a single final snapshot.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Labeled test files, one per task.
    #[arg(long = "test", required = true)]
    tests: Vec<PathBuf>,
    /// Fuse with zero-shot tables (columns: all classes of the model, ascending).
    #[arg(long = "scores")]
    scores: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 12)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    tasks: usize,
    #[arg(long, default_value_t = 100)]
    train_per_class: usize,
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 30.0)]
    rotation_deg: f64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 1.0)]
    translation: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.85)]
    oracle_accuracy: f64,
    #[arg(long, default_value_t = 0.7)]
    oracle_peak: f64,
}

#[derive(Debug, Args)]
struct GoldenArgs {
    /// GRID file to transform.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::PretrainSource(a) => pretrain(a),
        Command::AdaptTarget(a) => adapt(a),
        Command::Eval(a) => eval(a),
        Command::GenSynth(a) => gen_synth(a),
        Command::DwtGolden(a) => dwt_golden(a),
        Command::Inspect { file } => inspect(&file),
    }
}

fn run_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(path) => load_config(path),
        None => Ok(RunConfig::default()),
    }
}

fn base_report(command: &str, config: &RunConfig) -> RunReport {
    let mut report = RunReport::new(command);
    report.config = config_echo(config);
    report.seeds.insert("rff_seed".into(), config.rff.seed);
    report.seeds.insert("augment_seed".into(), config.augment_seed);
    report
}

fn finish(report: &mut RunReport, start: Instant, path: Option<&Path>) -> Result<String> {
    report.wall_times.insert("total".into(), start.elapsed().as_secs_f64());
    if let Some(p) = path {
        report.write(p)?;
        report.outputs.push(p.display().to_string());
    }
    Ok(report.to_text())
}

fn parse_classes(text: &str) -> Result<Vec<ClassId>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<ClassId>()
                .map_err(|e| Error::invalid(format!("bad class id {s:?} in {text:?}: {e}")))
        })
        .collect()
}

fn pretrain(a: PretrainArgs) -> Result<String> {
    let start = Instant::now();
    let config = run_config(&a.common)?;
    let mut report = base_report("pretrain-source", &config);
    let mut tasks = Vec::new();
    for (t, path) in a.sources.iter().enumerate() {
        let file = emb1::read_emb1(path)?;
        report.inputs.push(path.display().to_string());
        if file.labels.is_none() {
            return Err(Error::Protocol(format!("{} has no labels", path.display())));
        }
        tasks.push(file.to_task(t, Domain::Source, None)?);
    }
    report.wall_times.insert("read".into(), start.elapsed().as_secs_f64());
    if let Some(dir) = &a.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut checkpoints = Vec::new();
    let train = Instant::now();
    let trained = pipeline::pretrain_source_with(&tasks, &config, |task, model, rff| {
        if let Some(dir) = &a.checkpoint_dir {
            let path = dir.join(format!("stage_{}.klda", task.task_id + 1));
            snapshot::save(&Snapshot::new(model.clone(), rff), &path)?;
            checkpoints.push(path.display().to_string());
        }
        Ok(())
    })?;
    report.wall_times.insert("train".into(), train.elapsed().as_secs_f64());
    snapshot::save(&Snapshot::new(trained.model, &trained.rff), &a.out)?;
    report.outputs.extend(checkpoints);
    report.outputs.push(a.out.display().to_string());
    finish(&mut report, start, a.common.report.as_deref())
}

fn adapt(a: AdaptArgs) -> Result<String> {
    let start = Instant::now();
    if !a.source_data.is_empty() {
        return Err(Error::Protocol(
            "adapt-target accepts no source data; pass only target files".into(),
        ));
    }
    if a.classes.len() != a.targets.len() {
        return Err(Error::invalid(format!(
            "{} --classes given for {} --target files",
            a.classes.len(),
            a.targets.len()
        )));
    }
    if !a.scores.is_empty() && a.scores.len() != a.targets.len() {
        return Err(Error::invalid(format!(
            "{} --scores given for {} --target files",
            a.scores.len(),
            a.targets.len()
        )));
    }
    let config = run_config(&a.common)?;
    // Headers first, so source or labeled data is refused before any payload is read.
    for path in &a.targets {
        let header = emb1::read_header(path)?;
        if header.is_source() {
            return Err(Error::Protocol(format!("{} is flagged as source data", path.display())));
        }
        if header.has_labels() {
            return Err(Error::Protocol(format!("{} carries labels; target data must be unlabeled", path.display())));
        }
        if header.is_probabilities() {
            return Err(Error::Protocol(format!("{} is a probability table, not a sample file", path.display())));
        }
    }
    let mut report = base_report("adapt-target", &config);
    let source = snapshot::load(&a.source_model)?;
    report.models.push(a.source_model.display().to_string());
    if !source.model.is_finalized() {
        return Err(Error::NotFinalized);
    }
    let rff = source.feature_map()?;

    let mut tasks = Vec::new();
    let mut table = ScoreTable::new();
    for (t, path) in a.targets.iter().enumerate() {
        let classes = parse_classes(&a.classes[t])?;
        let file = emb1::read_emb1(path)?;
        report.inputs.push(path.display().to_string());
        let task = file.to_task(t, Domain::Target, Some(classes))?;
        if let Some(score_path) = a.scores.get(t) {
            let scores = emb1::read_emb1(score_path)?;
            report.inputs.push(score_path.display().to_string());
            if scores.is_source() {
                return Err(Error::Protocol(format!("{} is flagged as source data", score_path.display())));
            }
            if scores.count != task.len() {
                return Err(Error::shape(format!("{} score rows", task.len()), scores.count));
            }
            scores.add_scores(&mut table, t, &task.class_set)?;
        }
        tasks.push(task);
    }
    let zero_shot: &dyn ZeroShot = if a.scores.is_empty() { &UniformZeroShot } else { &table };

    if let Some(dir) = &a.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut checkpoints = Vec::new();
    let adapt_start = Instant::now();
    let (model, log) =
        pipeline::adapt_target_with(&tasks, &source.model, &rff, zero_shot, &config, |task, model| {
            if let Some(dir) = &a.checkpoint_dir {
                let path = dir.join(format!("stage_{}.klda", task.task_id + 1));
                snapshot::save(&Snapshot::new(model.clone(), &rff), &path)?;
                checkpoints.push(path.display().to_string());
            }
            Ok(())
        })?;
    report.wall_times.insert("adapt".into(), adapt_start.elapsed().as_secs_f64());
    snapshot::save(&Snapshot::new(model, &rff), &a.out)?;
    report.warnings = log.warnings();
    report.adaptation = Some(log);
    report.outputs.extend(checkpoints);
    report.outputs.push(a.out.display().to_string());
    finish(&mut report, start, a.common.report.as_deref())
}

fn eval(a: EvalArgs) -> Result<String> {
    let start = Instant::now();
    let config = run_config(&a.common)?;
    let mut report = base_report("eval", &config);
    if a.models.len() != 1 && a.models.len() != a.tests.len() {
        return Err(Error::invalid(format!(
            "give one --model per --test ({}) or a single final model, got {}",
            a.tests.len(),
            a.models.len()
        )));
    }
    if !a.scores.is_empty() && a.scores.len() != a.tests.len() {
        return Err(Error::invalid("give one --scores file per --test"));
    }
    let mut snapshots = Vec::new();
    for path in &a.models {
        snapshots.push(snapshot::load(path)?);
        report.models.push(path.display().to_string());
    }
    let rff = snapshots[0].feature_map()?;
    if snapshots.iter().any(|s| s.rff != snapshots[0].rff || s.input_dim != snapshots[0].input_dim) {
        return Err(Error::invalid("all snapshots must share one feature map"));
    }
    let mut tests: Vec<TaskSpec> = Vec::new();
    for (t, path) in a.tests.iter().enumerate() {
        let file = emb1::read_emb1(path)?;
        report.inputs.push(path.display().to_string());
        if file.labels.is_none() {
            return Err(Error::Protocol(format!("test file {} has no labels", path.display())));
        }
        tests.push(file.to_task(t, Domain::Target, None)?);
    }
    let final_model = &snapshots.last().expect("at least one model").model;
    let mut table = ScoreTable::new();
    for (t, path) in a.scores.iter().enumerate() {
        let scores = emb1::read_emb1(path)?;
        report.inputs.push(path.display().to_string());
        scores.add_scores(&mut table, t, &final_model.class_ids())?;
    }
    let fused = (!a.scores.is_empty()).then_some((&table as &dyn ZeroShot, config.temperature));
    let mut eval = pipeline::Evaluator::new(&tests);
    if let Some((zs, temp)) = fused {
        eval = eval.with_zero_shot(zs, temp);
    }
    if snapshots.len() == tests.len() {
        for s in &snapshots {
            eval.record(&s.model, &rff)?;
        }
        report.set_accuracy(eval.finish());
    } else {
        let accs = tests
            .iter()
            .map(|t| pipeline::task_accuracy(final_model, &rff, t, fused))
            .collect::<Result<Vec<_>>>()?;
        report.average_accuracy = Some(accs.iter().sum::<f64>() / accs.len() as f64);
        report.final_accuracies = accs;
    }
    finish(&mut report, start, a.common.report.as_deref())
}

fn gen_synth(a: SynthArgs) -> Result<String> {
    let spec = SynthSpec {
        num_classes: a.classes,
        num_tasks: a.tasks,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        dim: a.dim,
        separation: a.separation,
        spread: a.spread,
        shift: Shift {
            rotation_deg: a.rotation_deg,
            scale: a.scale,
            translation: a.translation,
            noise: a.noise,
        },
        seed: a.seed,
    };
    let streams = synth::gen_synthetic_sfcdcl(&spec)?;
    let oracle = synth::oracle_scores(
        &streams.target_train,
        &streams.target_train_labels,
        a.oracle_accuracy,
        a.oracle_peak,
        a.seed,
    )?;
    std::fs::create_dir_all(&a.out_dir)?;
    let mut manifest = String::new();
    let write = |name: String, file: Emb1| -> Result<String> {
        let path = a.out_dir.join(&name);
        emb1::write_emb1(&file, &path)?;
        Ok(name)
    };
    let embeddings = |task: &TaskSpec| match &task.samples {
        pipeline::Samples::Embeddings(x) => x.clone(),
        _ => unreachable!("synthetic tasks hold plain embeddings"),
    };
    for t in 0..spec.num_tasks {
        let classes = &streams.source_train[t].class_set;
        let list = classes.iter().map(ClassId::to_string).collect::<Vec<_>>().join(",");
        manifest.push_str(&format!("task {t} classes {list}\n"));
        let files = [
            (format!("source_train_{t}.emb1"), &streams.source_train[t], true),
            (format!("source_test_{t}.emb1"), &streams.source_test[t], true),
            (format!("target_train_{t}.emb1"), &streams.target_train[t], false),
            (format!("target_test_{t}.emb1"), &streams.target_test[t], false),
        ];
        for (name, task, source) in files {
            let file = Emb1::from_array(&embeddings(task), task.labels.clone())?.with_flag(FLAG_SOURCE, source);
            manifest.push_str(&format!("  {}\n", write(name, file)?));
        }
        let (_, rows) = oracle.get(t).expect("oracle covers every task");
        let scores = Emb1::from_array(&rows.to_owned(), None)?.with_flag(FLAG_PROBABILITIES, true);
        manifest.push_str(&format!("  {}\n", write(format!("target_scores_{t}.emb1"), scores)?));
    }
    std::fs::write(a.out_dir.join("manifest.txt"), &manifest)?;
    Ok(manifest)
}

fn dwt_golden(a: GoldenArgs) -> Result<String> {
    let grid = match &a.grid {
        Some(p) => golden::read_grid(p)?,
        None => fap::golden_grid(),
    };
    let g = Golden::compute(&grid)?;
    golden::write_golden(&g, &a.out)?;
    Ok(format!(
        "wrote {} ({}x{}x{} grid)\n",
        a.out.display(),
        grid.channels(),
        grid.height(),
        grid.width()
    ))
}

fn inspect(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len() as u64, "file too short to identify"));
    }
    let mut out = format!("file: {}\nbytes: {}\n", path.display(), bytes.len());
    match &bytes[..4] {
        b"EMB1" => {
            let file = Emb1::decode(&bytes)?;
            let h = file.header();
            out.push_str(&format!(
                "format: EMB1 v{}\nrows: {}\ndim: {}\nlabels: {}\ntriple layout: {}\nprobability table: {}\nsource domain: {}\n",
                h.version,
                h.count,
                h.dim,
                h.has_labels(),
                h.is_triple(),
                h.is_probabilities(),
                h.is_source()
            ));
            if let Some(labels) = &file.labels {
                let mut classes = labels.clone();
                classes.sort_unstable();
                classes.dedup();
                out.push_str(&format!("classes: {classes:?}\n"));
            }
        }
        b"KLDA" => {
            let s = Snapshot::decode(&bytes)?;
            let m = &s.model;
            out.push_str(&format!(
                "format: KLDA v{}\nfeature dim: {}\ninput dim: {}\nsigma: {}\nconvention: {}\nfeature seed: {}\n\
                 weighting: {:?}\nmean mode: {:?}\ncovariance rule: {:?}\nridge: {:?}\nclasses: {:?}\n\
                 samples: {}\ntotal weight: {}\nfinalized: {}\n",
                snapshot::VERSION,
                m.dim(),
                s.input_dim,
                s.rff.sigma,
                s.rff.convention.as_str(),
                s.rff.seed,
                m.config().weighting,
                m.config().mean_mode,
                m.config().covariance_rule,
                m.config().ridge,
                m.class_ids(),
                m.total_count(),
                m.total_weight(),
                m.is_finalized()
            ));
        }
        b"GRID" => {
            let g = golden::decode_grid(&bytes)?;
            out.push_str(&format!(
                "format: GRID v{}\nshape: {}x{}x{}\n",
                golden::VERSION,
                g.channels(),
                g.height(),
                g.width()
            ));
        }
        b"HAAR" => {
            let g = golden::decode_golden(&bytes)?;
            out.push_str(&format!(
                "format: HAAR v{}\ngrid: {}x{}x{}\nband: {}x{}\n",
                golden::VERSION,
                g.grid.channels(),
                g.grid.height(),
                g.grid.width(),
                g.bands.ll.dim().1,
                g.bands.ll.dim().2
            ));
        }
        other => return Err(Error::format(0, format!("unrecognised magic {other:?}"))),
    }
    Ok(out)
}
