//! Pinned training recipes behind the `bench` suites.

use std::time::Instant;

use anyhow::{Context, Result};
use sprecher::block::{QGridStyle, ResidualKind, Topology};
use sprecher::network::{
    Architecture, BnPlacement, HeadInit, NetConfig, Nonlinearity, OutputMode, SprecherNetwork,
};
use sprecher::tasks::{gen_task, TaskSpec};
use sprecher::train::{
    evaluate, train_loop, DomainSchedule, History, LossKind, LrSchedule, TrainConfig,
};

use crate::record::RunRecord;

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone)]
pub struct Recipe {
    pub label: String,
    pub task: TaskSpec,
    pub arch: Architecture,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Recipe {
    /// Reseeds network init, minibatch order and the task data.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.net.seed = seed;
        self.train.seed = seed;
        self.task = self.task.with_seed(seed);
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.train.epochs = epochs;
        self
    }
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub net: SprecherNetwork,
    pub history: History,
    pub record: RunRecord,
}

/// Generates the data, builds the network, trains it and scores it.
///
/// `best_metric` is the smallest evaluation-mode training loss seen when
/// the recipe evaluates periodically, else the best epoch loss.
/// `final_metric` is the test loss of the final weights.
pub fn run_recipe(recipe: &Recipe) -> Result<Outcome> {
    let start = Instant::now();
    let (train, test) =
        gen_task(&recipe.task).with_context(|| format!("generating {}", recipe.task.name))?;
    let mut net = SprecherNetwork::build(&recipe.arch, &recipe.net, train.y.mean())?;
    let history = train_loop(&mut net, &train, &recipe.train)
        .with_context(|| format!("training {}", recipe.label))?;
    let best = history
        .best_eval()
        .or_else(|| history.best_loss())
        .unwrap_or(f64::NAN);
    let final_metric = evaluate(&net, &test, recipe.train.loss)?;
    let record = RunRecord::new(
        recipe,
        net.n_params(),
        final_metric,
        best,
        start.elapsed().as_secs_f64(),
    );
    Ok(Outcome {
        net,
        history,
        record,
    })
}

fn arch(text: &str) -> Architecture {
    Architecture::parse(text).expect("preset architecture parses")
}

/// Settings shared by the Toy-2D recipes: symmetric q-grid, normalization
/// after blocks, outer codomain, domains tracked every epoch, cosine decay
/// from 3e-3 and full-batch steps.
fn toy_net(residual: ResidualKind) -> NetConfig {
    NetConfig {
        phi_knots: 30,
        outer_knots: 30,
        codomain: true,
        mixing: Topology::Cyclic,
        residual,
        bn: BnPlacement::After,
        q_grid: QGridStyle::Symmetric,
        head: HeadInit::Regression,
        ..NetConfig::default()
    }
}

fn toy_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        lr_schedule: LrSchedule::Cosine { final_lr: 1e-4 },
        epochs,
        batch_size: 0,
        domain_schedule: DomainSchedule::EveryEpoch,
        eval_every: 100,
        ..TrainConfig::default()
    }
}

/// Rows of the residual comparison table as `(task, architecture, epochs)`.
pub const TABLE2_ROWS: [(&str, &str, usize); 7] = [
    ("toy2d-complex", "2->[10,10,10]->1", 10_000),
    ("toy2d-complex", "2->[10,11,12,13,14,15,16,17]->1", 50_000),
    (
        "toy2d-complex",
        "2->[10,11,10,11,10,11,10,11,10,11,10,11,10,11,10,11]->1",
        50_000,
    ),
    ("toy2d-vector", "2->[50,50,50]->2", 10_000),
    ("toy2d-vector", "2->[10,11,12,13,14,15,16,17]->2", 5_000),
    ("toy4to5", "4->[30,40]->5", 10_000),
    (
        "toy4to5",
        "4->[10,11,10,11,10,11,10,11,10,11,10,11,10,11,10,11]->5",
        10_000,
    ),
];

/// One residual-comparison run; `row` indexes [`TABLE2_ROWS`].
pub fn table2(row: usize, residual: ResidualKind) -> Recipe {
    let (task, a, epochs) = TABLE2_ROWS[row];
    let kind = match residual {
        ResidualKind::Linear => "linear",
        ResidualKind::Cyclic => "cyclic",
        ResidualKind::None => "none",
    };
    Recipe {
        label: format!("table2/{row}/{kind}"),
        task: TaskSpec::preset(task).expect("preset task"),
        arch: arch(a),
        net: toy_net(residual),
        train: toy_train(epochs),
    }
}

/// The headline row: `2->[10,10,10]->1` with cyclic residuals.
pub fn table2_headline() -> Recipe {
    table2(0, ResidualKind::Cyclic)
}

/// The headline settings on Toy-2D, `exp(sin(πx) + y²)`, with
/// `2->[10,10,10]->1`; the model behind the fixed-point check.
pub fn toy2d(epochs: usize) -> Recipe {
    Recipe {
        label: "toy2d".to_string(),
        task: TaskSpec::preset("toy2d").expect("preset task"),
        arch: arch("2->[10,10,10]->1"),
        net: toy_net(ResidualKind::Cyclic),
        train: toy_train(epochs),
    }
}

/// Epochs of the [`toy2d`] recipe used by the fixed-point check.
pub const TOY2D_EPOCHS: usize = 4_000;

/// Settings of the Toy-2D-Vector add-on ablation, cumulative in this order.
pub const ADDON_STEPS: [&str; 5] = [
    "base",
    "cyclic-residuals",
    "bidirectional-mixing",
    "domain-tracking",
    "resampling",
];

/// Toy-2D-Vector on `2->[20,20]->2` with the first `step + 1` entries of
/// [`ADDON_STEPS`] enabled.
pub fn toy2d_addon(step: usize) -> Recipe {
    let step = step.min(ADDON_STEPS.len() - 1);
    let net = NetConfig {
        residual: if step >= 1 {
            ResidualKind::Cyclic
        } else {
            ResidualKind::None
        },
        mixing: if step >= 2 {
            Topology::Bidirectional
        } else {
            Topology::None
        },
        head: HeadInit::Regression,
        ..NetConfig::default()
    };
    let train = TrainConfig {
        epochs: 5_000,
        domain_schedule: if step >= 3 {
            DomainSchedule::EveryEpoch
        } else {
            DomainSchedule::Never
        },
        resample_outer: step >= 4,
        ..TrainConfig::default()
    };
    Recipe {
        label: format!("toy2d-ablation/{}", ADDON_STEPS[step]),
        task: TaskSpec::preset("toy2d-vector").expect("preset task"),
        arch: arch("2->[20,20]->2"),
        net,
        train,
    }
}

/// Default budget of the plateau suite.
pub const PLATEAU_EPOCHS: usize = 5_000;

/// The wide single-block plateau experiment: `2->[120]->1` on
/// Toy-2D-Complex with cyclic residuals, with or without cyclic mixing.
pub fn mixing_plateau(mixing: bool, epochs: usize) -> Recipe {
    let net = NetConfig {
        mixing: if mixing {
            Topology::Cyclic
        } else {
            Topology::None
        },
        bn: BnPlacement::None,
        ..toy_net(ResidualKind::Cyclic)
    };
    Recipe {
        label: format!("mixing-plateau/{}", if mixing { "cyclic" } else { "none" }),
        task: TaskSpec::preset("toy2d-complex").expect("preset task"),
        arch: arch("2->[120]->1"),
        net,
        train: toy_train(epochs),
    }
}

/// Capacity-64 regression on `64->[w,w,w]->1` with an explicit output block
/// and one-parameter nonlinearities.
pub fn capacity(width: usize) -> Recipe {
    let net = NetConfig {
        nonlinearity: Nonlinearity::Prelu,
        q_grid: QGridStyle::Symmetric,
        head: HeadInit::None,
        output_block: true,
        ..NetConfig::default()
    };
    let train = TrainConfig {
        lr: 1e-3,
        epochs: 400,
        batch_size: 32,
        ..TrainConfig::default()
    };
    Recipe {
        label: format!("capacity/{width}"),
        task: TaskSpec::preset("capacity64").expect("preset task"),
        arch: Architecture::with_mode(64, vec![width; 3], 1, OutputMode::OutputBlock)
            .expect("valid"),
        net,
        train,
    }
}

/// Benchmark names of the barebones suite.
pub const BAREBONES: [&str; 8] = [
    "softstair-wavepacket",
    "inputshift-bump",
    "shared-warped-ridge",
    "shared-warp-chirp",
    "motif-chirp",
    "oscillatory-headshift",
    "pwl-vs-pchip",
    "quantile-harmonics",
];

/// Barebones setting: PWL splines, no residuals, mixing, normalization or
/// codomain, domains updated over the first 10% of 4000 epochs.
pub fn barebones(name: &str) -> Result<Recipe> {
    let task = TaskSpec::preset(name)?;
    let (mut lr, mut schedule, mut clip, mut wd) = (1e-3, LrSchedule::Constant, None, 0.0);
    match name {
        "inputshift-bump" | "shared-warp-chirp" | "oscillatory-headshift" => clip = Some(1.0),
        "shared-warped-ridge" => {
            lr = 2e-3;
            schedule = LrSchedule::Cosine { final_lr: 0.0 };
            clip = Some(10.0);
            wd = 1e-6;
        }
        _ => {}
    }
    let hidden = if task.output_dim > 1 {
        "[32,32]"
    } else {
        "[16,16]"
    };
    let arch = arch(&format!(
        "{}->{hidden}->{}",
        task.input_dim, task.output_dim
    ));
    let net = NetConfig {
        phi_knots: 60,
        outer_knots: 60,
        head: HeadInit::Regression,
        ..NetConfig::default()
    };
    let train = TrainConfig {
        lr,
        lr_schedule: schedule,
        clip_norm: clip,
        weight_decay: wd,
        epochs: 4_000,
        domain_schedule: DomainSchedule::FirstFraction(0.10),
        loss: LossKind::Mse,
        ..TrainConfig::default()
    };
    Ok(Recipe {
        label: format!("barebones/{name}"),
        task,
        arch,
        net,
        train,
    })
}
