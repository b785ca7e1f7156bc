//! `plume`: data generation, training, inference and comparison for
//! instantaneous radiological release source-term estimation.

mod commands;
mod config;
mod fail;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plume_core::transport::Scenario;

use commands::{Ctx, Mode, ModelKind};
use config::RunConfig;
use fail::{Failure, Stage};

#[derive(Parser)]
#[command(name = "plume", version, about = "Source-term estimation for instantaneous radiological releases")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Start from the full-size defaults: 400k rows, 1001-point grid, full epoch counts.
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a training dataset.
    GenData {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grid_points: Option<usize>,
        /// Also write `<stem>.train.csv`, `<stem>.val.csv` and `<stem>.test.csv`.
        #[arg(long)]
        split: bool,
    },
    /// Simulate one measurement of a release.
    Simulate {
        /// Release as `x,y,m` (default: the configured reference release).
        #[arg(long, value_parser = parse_triple)]
        scenario: Option<[f64; 3]>,
        /// Winds as `u,v`.
        #[arg(long, value_parser = parse_pair)]
        wind: Option<(f64, f64)>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a regression, classification or BNN model.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
        /// Validation set, scored every epoch.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model on a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Include per-row errors.
        #[arg(long)]
        per_row: bool,
        /// Weight-resampled repetitions for a BNN.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Run a trained model on a measurement file.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long, value_enum, default_value = "combined")]
        mode: Mode,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_parser = parse_pair)]
        wind: Option<(f64, f64)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the release posterior with DRAM.
    Dram {
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long, value_parser = parse_pair)]
        wind: Option<(f64, f64)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare DRAM and BNN posteriors.
    Compare {
        #[arg(long)]
        dram: PathBuf,
        #[arg(long)]
        bnn: PathBuf,
        #[arg(long)]
        bnn_epistemic: Option<PathBuf>,
        #[arg(long)]
        classification: Option<PathBuf>,
        #[arg(long, value_parser = parse_triple)]
        truth: Option<[f64; 3]>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for plot-ready density CSVs.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Every method on the reference release, plus the comparison report.
    ReproduceReference {
        /// Directory holding regression.json, classification.json and bnn.json.
        #[arg(long)]
        models: PathBuf,
        /// Generate data and train any missing model first.
        #[arg(long)]
        train: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Data generation, training, evaluation and inference with a manifest.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    parse_floats::<3>(s)
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    parse_floats::<2>(s).map(|[a, b]| (a, b))
}

fn base_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p, g.paper_scale)?,
        None if g.paper_scale => RunConfig::paper_scale(),
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(Stage::Config, e.to_string()))?;
    }
    let mut cfg = base_config(&cli.global)?;
    let set_grid = |cfg: &mut RunConfig, n: Option<usize>| {
        if let Some(n) = n {
            cfg.setup.grid = cfg.setup.grid.with_points(n);
        }
    };
    match cli.command {
        Command::GenData { count, out, grid_points, split } => {
            set_grid(&mut cfg, grid_points);
            cfg.validate()?;
            let ctx = Ctx::new(cfg);
            let n = count.unwrap_or(ctx.cfg.data.count);
            for p in commands::gen_data(&ctx, n, &out, split)? {
                println!("{}", p.display());
            }
        }
        Command::Simulate { scenario, wind, grid_points, out } => {
            set_grid(&mut cfg, grid_points);
            let mut s: Scenario = cfg.inference.scenario;
            if let Some([x, y, m]) = scenario {
                (s.x_c, s.y_c, s.m_c) = (x, y, m);
            }
            if let Some((u, v)) = wind {
                (s.u, s.v) = (u, v);
            }
            cfg.validate()?;
            let ctx = Ctx::new(cfg);
            let m = commands::simulate(&ctx, &s, &out)?;
            println!("{}", m.counts.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
        }
        Command::Train { model, data, val, epochs, batch, lr, out } => {
            macro_rules! apply {
                ($t:expr) => {{
                    if let Some(e) = epochs {
                        $t.epochs = e;
                    }
                    if let Some(b) = batch {
                        $t.batch_size = b;
                    }
                    if let Some(l) = lr {
                        $t.learning_rate = l;
                    }
                }};
            }
            match model {
                ModelKind::Regression => apply!(cfg.regression),
                ModelKind::Classification => apply!(cfg.classification),
                ModelKind::Bnn => apply!(cfg.bnn),
            }
            cfg.validate()?;
            commands::train(&Ctx::new(cfg), model, &data, val.as_deref(), &out)?;
            println!("{}", out.display());
        }
        Command::Evaluate { model, data, report, per_row, repeats } => {
            let r = commands::evaluate(&Ctx::new(cfg), &model, &data, &report, per_row, repeats)?;
            match r.metrics.mass_mae {
                Some(m) => println!("mean location error {:.3} m, mass MAE {:.4} g", r.metrics.mean_location_error, m),
                None => println!("mean location error {:.3} m", r.metrics.mean_location_error),
            }
        }
        Command::Infer { model, measurements, mode, samples, wind, out } => {
            if let Some(n) = samples {
                cfg.inference.samples = n;
            }
            cfg.validate()?;
            let ctx = Ctx::new(cfg);
            let n = ctx.cfg.inference.samples;
            commands::infer(&ctx, &model, &measurements, mode, n, wind, &out)?;
            println!("{}", out.display());
        }
        Command::Dram { measurements, iterations, burn_in, grid_points, wind, out } => {
            set_grid(&mut cfg, grid_points);
            if let Some(i) = iterations {
                cfg.dram.iterations = i;
            }
            if let Some(b) = burn_in {
                cfg.dram.burn_in = b;
            }
            cfg.validate()?;
            let d = commands::run_dram(&Ctx::new(cfg), &measurements, wind, &out)?;
            print_params("dram", &d.summary.params);
        }
        Command::Compare { dram, bnn, bnn_epistemic, classification, truth, burn_in, out, plots } => {
            let ctx = Ctx::new(cfg);
            let r = commands::compare(
                &ctx,
                &commands::CompareInputs {
                    dram: &dram,
                    bnn: &bnn,
                    bnn_epistemic: bnn_epistemic.as_deref(),
                    classification: classification.as_deref(),
                    truth,
                    burn_in,
                    out: &out,
                    plots: plots.as_deref(),
                },
            )?;
            for s in &r.report.sources {
                print_params(&s.source, &s.params);
            }
        }
        Command::ReproduceReference { models, train, out } => {
            cfg.validate()?;
            let r = commands::reproduce_reference(&Ctx::new(cfg), &models, train, &out)?;
            println!("truth          {:>9.2} {:>9.2} {:>7.3}", r.truth.x_c, r.truth.y_c, r.truth.m_c);
            println!("regression     {:>9.2} {:>9.2} {:>7.3}", r.regression[0], r.regression[1], r.regression[2]);
            println!("classification {:>9.2} {:>9.2}", r.classification.expected_x_c, r.classification.expected_y_c);
            for s in &r.comparison.report.sources {
                print_params(&s.source, &s.params);
            }
            println!("{}", out.join("reference.json").display());
        }
        Command::Pipeline { out } => {
            cfg.validate()?;
            let m = commands::pipeline(&Ctx::new(cfg), &out)?;
            for f in &m.files {
                println!("{}  {}", f.sha256, f.path);
            }
        }
    }
    Ok(())
}

fn print_params(source: &str, p: &[plume_core::analysis::ParamStats; 3]) {
    let cell = |q: &plume_core::analysis::ParamStats| {
        let mark = match q.contains_truth {
            Some(true) => " *",
            Some(false) => "  ",
            None => "",
        };
        format!("{:.3} [{:.3}, {:.3}]{mark}", q.mean, q.lo, q.hi)
    };
    println!("{source:<14} {}  {}  {}", cell(&p[0]), cell(&p[1]), cell(&p[2]));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.stage.exit_code() as u8)
        }
    }
}
