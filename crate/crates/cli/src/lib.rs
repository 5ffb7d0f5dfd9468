//! Command-line harness: training, benchmark suites, the width stress test,
//! domain reports, parameter tables and fixed-point export.

pub mod alloc;
pub mod presets;
pub mod record;
pub mod stress;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sprecher::block::ResidualKind;
use sprecher::domains::BoundsConfig;
use sprecher::network::{
    baseline_param_count, sprecher_minimal_count, Architecture, Baseline, NetConfig,
    SprecherNetwork,
};
use sprecher::quantize::{fold, quantize_model, FoldedModel, Model, Scalar};
use sprecher::tasks::{gen_task, TaskSpec};
use sprecher::train::{evaluate, gradcheck, loss, DomainSchedule, LossKind, TrainConfig};

use crate::presets::{Outcome, Recipe};
use crate::record::{write_records, RunRecord};

/// Hidden widths of the parameter-scaling table.
pub const TABLE1_WIDTHS: [usize; 6] = [512, 1024, 2048, 4096, 8192, 16384];

#[derive(Debug, Parser)]
#[command(
    name = "sprecher",
    version,
    about = "Train, benchmark and export Sprecher networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network on a task and save it.
    Train(TrainArgs),
    /// Report train and test loss of a saved model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a preset suite and write run records.
    Bench(BenchArgs),
    /// Double the width until one training step exceeds the memory budget.
    Stress {
        #[arg(long, default_value_t = 512)]
        start: usize,
        #[arg(long, default_value_t = 16384)]
        max_width: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 64)]
        d_in: usize,
        /// Allocation budget per step in MiB.
        #[arg(long, default_value_t = 64)]
        budget_mib: usize,
    },
    /// Print propagated spline domains of a saved or freshly built network.
    Domains {
        #[arg(long, conflicts_with = "arch")]
        model: Option<PathBuf>,
        #[arg(long, required_unless_present = "model")]
        arch: Option<String>,
        /// Network options as TOML.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
    },
    /// Parameter counts against dense baselines.
    Params {
        /// `d_in:[h1,...]:d_out`; defaults to the width sweep at 64 inputs.
        #[arg(long)]
        dims: Option<String>,
        /// Spline coefficients per edge for the edge-spline baseline.
        #[arg(long = "G", default_value_t = 5)]
        g: usize,
    },
    /// Write the folded piecewise-linear tables of a model as CSV.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a float model to Q16.16.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on CSV rows of inputs.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences on random nets.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        nets: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    #[arg(long)]
    task: String,
    #[arg(long)]
    arch: String,
    /// Network options as TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Minibatch size, 0 for full batch.
    #[arg(long, default_value_t = 0)]
    batch: usize,
    #[arg(long)]
    clip: Option<f64>,
    /// `every`, `never` or `first:<fraction>`.
    #[arg(long, default_value = "every")]
    domains: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Table2,
    #[value(name = "toy2d-ablation")]
    Toy2dAblation,
    #[value(name = "mixing-plateau")]
    MixingPlateau,
    Barebones,
    Capacity,
}

#[derive(Debug, clap::Args)]
struct BenchArgs {
    suite: Suite,
    /// Seeds per configuration (default depends on the suite).
    #[arg(long)]
    seeds: Option<u64>,
    /// Overrides every recipe's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Only these rows of the residual table.
    #[arg(long, value_delimiter = ',')]
    rows: Option<Vec<usize>>,
    /// Hidden width for the capacity suite.
    #[arg(long, default_value_t = 2048)]
    width: usize,
    /// Run records CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 2 on usage errors, 1 otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    run_with(argv, &mut stdout.lock())
}

/// Like [`run`], writing normal output to `out`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Train(args) => train(args, out),
        Command::Eval { model, task, seed } => eval(&model, &task, seed, out),
        Command::Bench(args) => bench(args, out),
        Command::Stress {
            start,
            max_width,
            depth,
            batch,
            d_in,
            budget_mib,
        } => {
            if !alloc::installed() {
                writeln!(
                    out,
                    "note: counting allocator not installed, peak memory unmeasured"
                )?;
            }
            writeln!(out, "width,params,peak_bytes,status,seconds")?;
            let budget = budget_mib << 20;
            let mut failed = None;
            stress::stress_loop(start, max_width, depth, batch, d_in, budget, |r| {
                let peak = r.peak_bytes.map_or("-".to_string(), |b| b.to_string());
                let status = match r.status {
                    stress::StressStatus::Ok => "ok",
                    stress::StressStatus::OverBudget => "oom",
                };
                if let Err(e) = writeln!(
                    out,
                    "{},{},{peak},{status},{:.3}",
                    r.width, r.params, r.seconds
                ) {
                    failed = Some(e);
                }
            })?;
            failed.map_or(Ok(()), |e| Err(e.into()))
        }
        Command::Domains {
            model,
            arch,
            config,
            seed,
            margin,
        } => {
            let net = match (model, arch) {
                (Some(path), _) => Model::load(&path)?.into_float()?,
                (None, Some(a)) => {
                    let mut cfg = read_config(config.as_deref())?;
                    cfg.seed = seed;
                    SprecherNetwork::build(&Architecture::parse(&a)?, &cfg, 0.0)?
                }
                (None, None) => bail!("need --model or --arch"),
            };
            let report = net.domain_report(&BoundsConfig {
                margin,
                ..BoundsConfig::default()
            });
            write!(out, "{report}")?;
            Ok(())
        }
        Command::Params { dims, g } => params(dims.as_deref(), g, out),
        Command::Export { model, out: path } => {
            let mut w =
                File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            match Model::load(&model)? {
                Model::Float(net) => write_tables(&fold(&net)?, &mut w)?,
                Model::Quantized(q) => write_tables(&q, &mut w)?,
            }
            writeln!(out, "wrote {}", path.display())?;
            Ok(())
        }
        Command::Quantize { model, out: path } => {
            let net = Model::load(&model)?.into_float()?;
            let q = quantize_model(&net)?;
            Model::Quantized(q).save(&path)?;
            writeln!(out, "wrote {}", path.display())?;
            Ok(())
        }
        Command::Infer {
            model,
            input,
            output,
        } => {
            let x = read_matrix(&input)?;
            let y = match Model::load(&model)? {
                Model::Float(net) => net.forward(&x, Default::default())?,
                Model::Quantized(q) => q.forward_batch(&x),
            };
            match output {
                Some(p) => write_matrix(&y, &mut File::create(&p)?)?,
                None => write_matrix(&y, out)?,
            }
            Ok(())
        }
        Command::Gradcheck { seed, nets, tol } => {
            let worst = gradcheck_random(seed, nets)?;
            writeln!(out, "max relative error {worst:.3e} over {nets} nets")?;
            if worst > tol {
                bail!("gradient check failed: {worst:.3e} > {tol:e}");
            }
            Ok(())
        }
    }
}

fn read_config(path: Option<&Path>) -> Result<NetConfig> {
    match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(NetConfig::from_toml_str(&text)?)
        }
        None => Ok(NetConfig::default()),
    }
}

fn parse_schedule(text: &str) -> Result<DomainSchedule> {
    Ok(match text {
        "every" => DomainSchedule::EveryEpoch,
        "never" => DomainSchedule::Never,
        other => match other.strip_prefix("first:") {
            Some(f) => DomainSchedule::FirstFraction(f.parse().context("domain fraction")?),
            None => bail!("unknown domain schedule `{other}`"),
        },
    })
}

fn train(args: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut net_cfg = read_config(args.config.as_deref())?;
    net_cfg.seed = args.seed;
    let recipe = Recipe {
        label: format!("train/{}", args.task),
        task: TaskSpec::preset(&args.task)?.with_seed(args.seed),
        arch: Architecture::parse(&args.arch)?,
        train: TrainConfig {
            lr: args.lr,
            epochs: args.epochs,
            batch_size: args.batch,
            clip_norm: args.clip,
            domain_schedule: parse_schedule(&args.domains)?,
            bounds: BoundsConfig {
                margin: net_cfg.margin,
                ..BoundsConfig::default()
            },
            seed: args.seed,
            eval_every: 100,
            ..TrainConfig::default()
        },
        net: net_cfg,
    };
    let Outcome {
        net,
        history,
        record,
    } = presets::run_recipe(&recipe)?;
    Model::Float(net).save(&args.out)?;
    if let Some(p) = &args.history {
        history.write_csv(File::create(p)?)?;
    }
    writeln!(
        out,
        "{}: params {} best train {:.4e} test {:.4e} ({:.1}s) -> {}",
        record.label,
        record.params,
        record.best_metric,
        record.final_metric,
        record.wall_s,
        args.out.display()
    )?;
    Ok(())
}

fn eval(path: &Path, task: &str, seed: u64, out: &mut dyn Write) -> Result<()> {
    let (train, test) = gen_task(&TaskSpec::preset(task)?.with_seed(seed))?;
    match Model::load(path)? {
        Model::Float(net) => {
            let a = evaluate(&net, &train, LossKind::Mse)?;
            let b = evaluate(&net, &test, LossKind::Mse)?;
            writeln!(out, "float64 train mse {a:.6e} test mse {b:.6e}")?;
        }
        Model::Quantized(q) => {
            let a = loss(LossKind::Mse, &q.forward_batch(&train.x), &train.y)?;
            let b = loss(LossKind::Mse, &q.forward_batch(&test.x), &test.y)?;
            writeln!(out, "q16_16 train mse {a:.6e} test mse {b:.6e}")?;
        }
    }
    Ok(())
}

fn bench(args: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let seeds = |default: u64| 0..args.seeds.unwrap_or(default);
    let mut recipes: Vec<Recipe> = Vec::new();
    match args.suite {
        Suite::Table2 => {
            let rows = args
                .rows
                .clone()
                .unwrap_or_else(|| (0..presets::TABLE2_ROWS.len()).collect());
            for row in rows {
                if row >= presets::TABLE2_ROWS.len() {
                    bail!("table row {row} out of range");
                }
                for kind in [ResidualKind::Linear, ResidualKind::Cyclic] {
                    for s in seeds(3) {
                        recipes.push(presets::table2(row, kind).with_seed(s));
                    }
                }
            }
        }
        Suite::Toy2dAblation => {
            for step in 0..presets::ADDON_STEPS.len() {
                for s in seeds(10) {
                    recipes.push(presets::toy2d_addon(step).with_seed(s));
                }
            }
        }
        Suite::MixingPlateau => {
            for mixing in [false, true] {
                for s in seeds(3) {
                    recipes.push(
                        presets::mixing_plateau(mixing, presets::PLATEAU_EPOCHS).with_seed(s),
                    );
                }
            }
        }
        Suite::Barebones => {
            for name in presets::BAREBONES {
                for s in seeds(20) {
                    recipes.push(presets::barebones(name)?.with_seed(s));
                }
            }
        }
        Suite::Capacity => {
            for s in seeds(1) {
                recipes.push(presets::capacity(args.width).with_seed(s));
            }
        }
    }
    let mut records: Vec<RunRecord> = Vec::with_capacity(recipes.len());
    for recipe in recipes {
        let recipe = match args.epochs {
            Some(e) => recipe.with_epochs(e),
            None => recipe,
        };
        let o = presets::run_recipe(&recipe)?;
        eprintln!(
            "{} seed {}: best {:.4e} final {:.4e} ({:.1}s)",
            o.record.label,
            o.record.seed,
            o.record.best_metric,
            o.record.final_metric,
            o.record.wall_s
        );
        records.push(o.record);
    }
    match &args.out {
        Some(p) => write_records(File::create(p)?, &records)?,
        None => write_records(out, &records)?,
    }
    Ok(())
}

/// Rows of the parameter table: `(label, mlp, kan, gs-kan, sprecher)`.
pub fn params_rows(dims: Option<&str>, g: usize) -> Result<Vec<(String, [usize; 4])>> {
    let archs = match dims {
        Some(d) => vec![Architecture::parse(d)?],
        None => TABLE1_WIDTHS
            .iter()
            .map(|&w| Architecture::new(64, vec![w; 3], 1))
            .collect::<sprecher::Result<_>>()?,
    };
    Ok(archs
        .into_iter()
        .map(|a| {
            let c = |k| baseline_param_count(k, a.d_in, &a.hidden, a.d_out, g);
            let counts = [
                c(Baseline::Mlp),
                c(Baseline::Kan),
                c(Baseline::GsKan),
                sprecher_minimal_count(&a.clone().force_output_block()),
            ];
            (a.to_string(), counts)
        })
        .collect())
}

fn params(dims: Option<&str>, g: usize, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "{:<28} {:>12} {:>14} {:>12} {:>10}",
        "architecture", "MLP", "KAN", "GS-KAN", "SN"
    )?;
    for (label, [mlp, kan, gs, sn]) in params_rows(dims, g)? {
        writeln!(out, "{label:<28} {mlp:>12} {kan:>14} {gs:>12} {sn:>10}")?;
    }
    Ok(())
}

fn write_tables<S: Scalar>(model: &FoldedModel<S>, w: &mut dyn Write) -> Result<()> {
    writeln!(w, "block,map,index,x,y")?;
    for (l, b) in model.blocks.iter().enumerate() {
        for (name, pwl) in [("phi", &b.phi), ("outer", &b.outer)] {
            let (lo, step) = (pwl.lo.to_f64(), pwl.step.to_f64());
            for (k, y) in pwl.y.iter().enumerate() {
                writeln!(w, "{l},{name},{k},{},{}", lo + k as f64 * step, y.to_f64())?;
            }
        }
    }
    Ok(())
}

fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("line {}", i + 1))?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        bail!("ragged input rows");
    }
    Ok(Array2::from_shape_vec((rows.len(), cols), rows.concat())?)
}

fn write_matrix(y: &Array2<f64>, w: &mut dyn Write) -> Result<()> {
    for row in y.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Worst relative gradient error over `nets` random small networks.
pub fn gradcheck_random(seed: u64, nets: usize) -> Result<f64> {
    use sprecher::block::{QGridStyle, Topology};
    use sprecher::network::BnPlacement;
    use sprecher::train::Targets;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..nets {
        let d_in = rng.random_range(1..4);
        let hidden: Vec<usize> = (0..rng.random_range(1..3))
            .map(|_| rng.random_range(2..5))
            .collect();
        let d_out = rng.random_range(1..3);
        let arch = Architecture::new(d_in, hidden, d_out)?;
        let cfg = NetConfig {
            phi_knots: rng.random_range(4..9),
            outer_knots: rng.random_range(4..9),
            codomain: rng.random_bool(0.5),
            mixing: [Topology::None, Topology::Cyclic, Topology::Bidirectional][k % 3],
            residual: [
                ResidualKind::None,
                ResidualKind::Cyclic,
                ResidualKind::Linear,
            ][(k / 3) % 3],
            bn: if k % 4 == 3 {
                BnPlacement::After
            } else {
                BnPlacement::None
            },
            q_grid: if rng.random_bool(0.5) {
                QGridStyle::Index
            } else {
                QGridStyle::Symmetric
            },
            head: sprecher::network::HeadInit::Unit,
            seed: seed.wrapping_add(k as u64),
            ..NetConfig::default()
        };
        let net = SprecherNetwork::build(&arch, &cfg, 0.0)?;
        let n = 6;
        let x = Array2::from_shape_fn((n, d_in), |_| rng.random::<f64>());
        let y = Array2::from_shape_fn((n, d_out), |_| rng.random::<f64>());
        let entries = gradcheck(
            &net,
            &x,
            &Targets::Values(y),
            LossKind::Mse,
            1e-6,
            usize::MAX,
            k as u64,
        )?;
        worst = entries.iter().map(|e| e.rel_error).fold(worst, f64::max);
    }
    Ok(worst)
}
