use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regionbow_cli::{commands, Config, Result};

#[derive(Parser)]
#[command(
    name = "regionbow",
    version,
    about = "Region-level scene annotation with concept-based bags of visual words"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Detect keypoints and cache descriptors, one file per image.
    Extract,
    /// Build visual vocabularies from the descriptor cache.
    Vocab,
    /// Run one experiment cell and write confusion.csv, metrics.csv and run.json.
    Run,
    /// Generate a labeled synthetic dataset.
    Synth,
    /// Write keypoint and concept distribution tables.
    Analyze,
}

#[derive(Args)]
struct Opts {
    /// key = value settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    images: Option<String>,
    #[arg(long, global = true)]
    labels: Option<String>,
    #[arg(long, global = true)]
    categories: Option<String>,
    #[arg(long, global = true)]
    workspace: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Experiment set: 1 KNN, 2 SVM, 3 KNN halves, 4 SVM halves.
    #[arg(long, global = true)]
    set: Option<String>,
    /// Feature combination, e.g. IBOW+ColHist+Wav.
    #[arg(long, global = true)]
    features: Option<String>,
    /// Vocabulary kinds, comma separated, or `all`.
    #[arg(long, global = true)]
    kind: Option<String>,
    /// Words per vocabulary block.
    #[arg(long, global = true)]
    k: Option<String>,
    /// Rebuild outputs even when up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Build vocabularies from each fold's training regions only.
    #[arg(long, global = true)]
    strict_folds: bool,
    /// Output directory of `synth`.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Any other setting, as key=value.
    #[arg(long = "set-option", short = 'o', global = true, value_name = "KEY=VALUE")]
    extra: Vec<String>,
}

impl Opts {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let named = [
            ("images", &self.images),
            ("labels", &self.labels),
            ("categories", &self.categories),
            ("workspace", &self.workspace),
            ("seed", &self.seed),
            ("set", &self.set),
            ("features", &self.features),
            ("kind", &self.kind),
            ("k", &self.k),
            ("out", &self.out),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                out.push((k.to_string(), v.clone()));
            }
        }
        if self.force {
            out.push(("force".into(), "true".into()));
        }
        if self.strict_folds {
            out.push(("strict-folds".into(), "true".into()));
        }
        for e in &self.extra {
            let (k, v) = e.split_once('=').unwrap_or((e, ""));
            out.push((k.to_string(), v.to_string()));
        }
        out
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = Config::load(cli.opts.config.as_deref(), &cli.opts.overrides())?;
    match cli.command {
        Command::Extract => commands::extract(&cfg).map(drop),
        Command::Vocab => {
            for v in commands::vocab(&cfg)? {
                println!("{}\t{}\t{}", v.kind, v.words, v.path.display());
            }
            Ok(())
        }
        Command::Run => {
            let r = commands::run(&cfg)?;
            println!(
                "overall {:.2}%\tmacro {:.2}%\t{}",
                r.result.metrics.overall,
                r.result.metrics.macro_average,
                r.dir.display()
            );
            Ok(())
        }
        Command::Synth => {
            let s = commands::synth(&cfg)?;
            println!("{}", s.config.display());
            Ok(())
        }
        Command::Analyze => commands::analyze(&cfg).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
