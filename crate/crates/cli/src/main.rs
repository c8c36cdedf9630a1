use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ddp_core::corpus::{generate_synthetic_strata, write_wav};
use ddp_core::harness::{run_on, select_epoch_zero, BaselineCache, Dataset, EpochObserver};
use ddp_core::selection::{write_trace_row, Selection};
use ddp_core::{
    report, scoring, selection, DropMode, DropSpec, ExperimentConfig, Manifest, ManifestEntry,
    PolicyKind, ScoreTable, SweepSpec, SyntheticSpec,
};

#[derive(Parser)]
#[command(name = "ddp", version, about = "Dynamic data pruning experiments")]
struct Cli {
    /// Overrides the seed in the input file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Resolve and print what would happen without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Sweep cells to run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic spec to WAV files and a manifest.
    Synth { spec: PathBuf },
    /// Run one experiment.
    Run {
        config: PathBuf,
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        kept: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        time: TimeArgs,
        /// Also write scores.csv and selection.csv traces.
        #[arg(long)]
        trace: bool,
        /// Selection trace rows list ids only up to this many.
        #[arg(long, default_value_t = 64)]
        trace_ids: usize,
    },
    /// Run a policy × ratio × seed grid.
    Sweep {
        sweep: PathBuf,
        #[command(flatten)]
        time: TimeArgs,
    },
    /// Render a run directory or a sweep CSV as tables.
    Report { path: PathBuf },
}

#[derive(Args, Default)]
struct TimeArgs {
    #[arg(long)]
    time_kept: Option<f64>,
    #[arg(long)]
    chunk_len: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    mask_max_s: Option<f64>,
    #[arg(long)]
    masks_per_sec: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Point,
    Chunk,
}

impl TimeArgs {
    fn apply(&self, config: &mut ExperimentConfig) {
        if self.time_kept.is_some() || self.chunk_len.is_some() || self.mode.is_some() {
            let mut drop = config.drop.unwrap_or_else(|| DropSpec::chunk(1.0, ddp_core::timewise::DEFAULT_CHUNK_LEN));
            if let Some(r) = self.time_kept {
                drop.time_kept_ratio = r;
            }
            if let Some(n) = self.chunk_len {
                drop.chunk_len = n;
            }
            if let Some(m) = self.mode {
                drop.mode = match m {
                    ModeArg::Point => DropMode::Point,
                    ModeArg::Chunk => DropMode::Chunk,
                };
            }
            config.drop = Some(drop);
        }
        if self.mask_max_s.is_some() || self.masks_per_sec.is_some() {
            let mut mask = config.mask.unwrap_or_default();
            if let Some(s) = self.mask_max_s {
                mask.max_mask_len_s = s;
            }
            if let Some(m) = self.masks_per_sec {
                mask.masks_per_second = m;
            }
            config.mask = Some(mask);
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

fn write_file(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_synth(cli: &Cli, spec_path: &Path) -> anyhow::Result<()> {
    let mut spec: SyntheticSpec = read_json(spec_path)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let instances = generate_synthetic_strata(&spec)?;
    if cli.dry_run {
        println!("{}", serde_json::to_string_pretty(&spec)?);
        println!("would write {} wav files and manifest.jsonl to {}", instances.len(), cli.out.display());
        return Ok(());
    }
    create_out(&cli.out)?;
    let mut manifest = Manifest::default();
    for (inst, _) in &instances {
        let name = format!("{}.wav", inst.id());
        write_wav(cli.out.join(&name), inst.samples(), inst.sample_rate())?;
        manifest.entries.push(ManifestEntry {
            id: inst.id().to_string(),
            wav: Some(PathBuf::from(name)),
            synthetic: None,
            labels: inst.labels().to_vec(),
            duration_s: inst.duration_s(),
        });
    }
    manifest.write(cli.out.join("manifest.jsonl"))?;
    println!("wrote {} instances to {}", instances.len(), cli.out.display());
    Ok(())
}

struct TraceWriter {
    scores: BufWriter<File>,
    selection: BufWriter<File>,
    policy: PolicyKind,
    elide_above: usize,
}

impl TraceWriter {
    fn create(dir: &Path, policy: PolicyKind, elide_above: usize) -> anyhow::Result<Self> {
        let open = |name: &str, header: &str| -> anyhow::Result<BufWriter<File>> {
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            writeln!(w, "{header}")?;
            Ok(w)
        };
        Ok(Self {
            scores: open("scores.csv", scoring::TRACE_HEADER)?,
            selection: open("selection.csv", selection::TRACE_HEADER)?,
            policy,
            elide_above,
        })
    }

    fn finish(mut self) -> anyhow::Result<()> {
        self.scores.flush()?;
        self.selection.flush()?;
        Ok(())
    }
}

impl EpochObserver for TraceWriter {
    fn on_epoch(&mut self, epoch: usize, sel: &Selection, scores: &ScoreTable) -> ddp_core::Result<()> {
        let io = |e: std::io::Error| ddp_core::Error::Format(format!("trace write: {e}"));
        write_trace_row(&mut self.selection, epoch, self.policy, sel, self.elide_above).map_err(io)?;
        scores.write_trace(&mut self.scores).map_err(io)
    }
}

struct RunArgs<'a> {
    policy: Option<PolicyKind>,
    kept: Option<f64>,
    epochs: Option<usize>,
    time: &'a TimeArgs,
    trace: bool,
    trace_ids: usize,
}

fn cmd_run(cli: &Cli, path: &Path, args: RunArgs<'_>) -> anyhow::Result<()> {
    let mut config: ExperimentConfig = read_json(path)?;
    config.rebase_paths(base_dir(path));
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.selection.seed = seed;
    }
    if let Some(p) = args.policy {
        config.selection.policy = p;
        if p != PolicyKind::Easy2hard {
            config.selection.epsilon = None;
        }
    }
    if let Some(k) = args.kept {
        config.selection.kept_ratio = k;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
        config.selection.epsilon = None;
    }
    args.time.apply(&mut config);
    let config = config.resolved()?;
    let dataset = Dataset::load(&config)?;

    if cli.dry_run {
        println!("{}", serde_json::to_string_pretty(&config)?);
        let sel = select_epoch_zero(&config, &dataset)?;
        println!("epoch 0 keeps {} of {} instances:", sel.ids.len(), dataset.train.len());
        println!("{}", sel.ids.join(" "));
        return Ok(());
    }

    create_out(&cli.out)?;
    let cache = BaselineCache::new();
    let result = if args.trace {
        let mut tracer = TraceWriter::create(&cli.out, config.selection.policy, args.trace_ids)?;
        let r = run_on(&config, &dataset, &cache, &mut tracer)?;
        tracer.finish()?;
        r
    } else {
        run_on(&config, &dataset, &cache, &mut ())?
    };
    write_file(&cli.out.join("epochs.jsonl"), report::epochs_jsonl(&result.epochs)?.as_bytes())?;
    let mut summary = serde_json::to_string_pretty(&result.summary)?;
    summary.push('\n');
    write_file(&cli.out.join("summary.json"), summary.as_bytes())?;
    print!("{}", report::render_summary(&result.summary));
    Ok(())
}

fn cmd_sweep(cli: &Cli, path: &Path, time: &TimeArgs) -> anyhow::Result<()> {
    let mut spec: SweepSpec = read_json(path)?;
    spec.base.rebase_paths(base_dir(path));
    if let Some(seed) = cli.seed {
        spec.seeds = vec![seed];
    }
    time.apply(&mut spec.base);
    if let Some(r) = time.time_kept {
        spec.time_kept = vec![r];
    }
    let cells = spec.cells()?;
    let base = spec.cell_config(&cells[0])?;
    if cli.dry_run {
        println!("{}", serde_json::to_string_pretty(&spec)?);
        println!("{} cells:", cells.len());
        for c in &cells {
            println!("  {} instance_kept={} time_kept={} seed={}", c.policy, c.instance_kept, c.time_kept, c.seed);
        }
        return Ok(());
    }
    let dataset = Dataset::load(&base)?;
    let rows = spec.run(&dataset, cli.parallel.max(1))?;
    create_out(&cli.out)?;
    write_file(&cli.out.join("sweep.csv"), report::sweep_csv(&rows).as_bytes())?;
    print!("{}", report::render_aggregate(&report::aggregate(&rows)));
    Ok(())
}

fn cmd_report(path: &Path) -> anyhow::Result<()> {
    if path.is_dir() {
        let epochs = path.join("epochs.jsonl");
        let text = fs::read_to_string(&epochs).with_context(|| format!("reading {}", epochs.display()))?;
        print!("{}", report::render_epochs(&report::parse_epochs_jsonl(&text)?));
        let summary = path.join("summary.json");
        if summary.exists() {
            let s: ddp_core::RunSummary = read_json(&summary)?;
            print!("{}", report::render_summary(&s));
        }
    } else if path.extension().is_some_and(|e| e == "csv") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let rows = report::parse_sweep_csv(&text)?;
        print!("{}", report::render_aggregate(&report::aggregate(&rows)));
    } else {
        bail!("{} is neither a run directory nor a sweep CSV", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth { spec } => cmd_synth(&cli, spec),
        Command::Run {
            config,
            policy,
            kept,
            epochs,
            time,
            trace,
            trace_ids,
        } => cmd_run(
            &cli,
            config,
            RunArgs {
                policy: *policy,
                kept: *kept,
                epochs: *epochs,
                time,
                trace: *trace,
                trace_ids: *trace_ids,
            },
        ),
        Command::Sweep { sweep, time } => cmd_sweep(&cli, sweep, time),
        Command::Report { path } => cmd_report(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
