use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use dbf::confidence::Exponent;
use dbf::evaluation::ApMode;
use dbf::pipeline::{
    cmd_build_model, cmd_eval, cmd_fuse, cmd_report, cmd_synth, cmd_tune_n, BuildOptions,
    DetectorSource, ExponentChoice, FuseOptions, Method, Report, RunConfig, Thresholds,
};
use dbf::Result;

#[derive(Parser)]
#[command(
    name = "dbf",
    version,
    about = "Belief-based fusion of object detectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-category AP and mAP of each detector.
    Eval(Common),
    /// Build confidence models and baselines from a validation split.
    BuildModel {
        #[command(flatten)]
        common: Common,
        /// Exponent: a positive number, `inf`, or `auto` to tune it.
        #[arg(long, default_value = "2")]
        n: ExponentChoice,
        /// Exponents tried by `--n auto`.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,inf")]
        grid: Vec<Exponent>,
    },
    /// Choose the exponent per category by cross-validation.
    TuneN {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,inf")]
        grid: Vec<Exponent>,
    },
    /// Fuse detector outputs with saved models.
    Fuse {
        #[command(flatten)]
        common: Common,
        /// Directory written by `build-model`.
        #[arg(long)]
        models: PathBuf,
        /// One or more of dbf, platt, ws, bayes, dst.
        #[arg(long, value_delimiter = ',', default_value = "dbf")]
        method: Vec<Method>,
        /// Operating recall for `dst`.
        #[arg(long, default_value_t = 0.5)]
        operating_recall: f64,
    },
    /// Generate a synthetic world from a JSON config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a saved JSON report as text.
    Report { path: PathBuf },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    gt: PathBuf,
    /// Detector dumps as `<id>=<path>`; repeatable.
    #[arg(long = "dets", required = true, num_args = 1..)]
    dets: Vec<DetectorSource>,
    /// Restrict to these categories.
    #[arg(long, value_delimiter = ',')]
    categories: Option<Vec<String>>,
    #[arg(long, default_value = "all")]
    ap_mode: ApMode,
    #[arg(long, default_value_t = 0.5)]
    match_iou: f64,
    #[arg(long, default_value_t = 0.3)]
    cluster_iou: f64,
    #[arg(long, default_value_t = 0.3)]
    nms_iou: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(self) -> RunConfig {
        RunConfig {
            gt: self.gt,
            detectors: self.dets,
            categories: self.categories,
            ap_mode: self.ap_mode,
            thresholds: Thresholds {
                match_iou: self.match_iou,
                cluster_iou: self.cluster_iou,
                nms_iou: self.nms_iou,
            },
            seed: self.seed,
            out: self.out,
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    let report: Report = match cmd {
        Command::Eval(c) => cmd_eval(&c.config())?,
        Command::BuildModel { common, n, grid } => cmd_build_model(
            &common.config(),
            &BuildOptions {
                n,
                grid,
                ..Default::default()
            },
        )?,
        Command::TuneN { common, grid } => cmd_tune_n(&common.config(), &grid)?,
        Command::Fuse {
            common,
            models,
            method,
            operating_recall,
        } => cmd_fuse(
            &common.config(),
            &FuseOptions {
                models,
                methods: method,
                operating_recall,
            },
        )?,
        Command::Synth { config, out, seed } => return cmd_synth(&config, &out, seed),
        Command::Report { path } => {
            print!("{}", cmd_report(&path)?);
            return Ok(());
        }
    };
    print!("{}", report.to_text());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
