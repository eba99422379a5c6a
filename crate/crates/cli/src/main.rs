use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vggfer::corpus::LoadPolicy;
use vggfer::evalkit::Scheme;
use vggfer::TapPoint;
use vggfer_cli::*;

#[derive(Parser)]
#[command(name = "vggfer", version, about = "Expression recognition from frozen VGG19 features, PCA and a linear SVM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the network over a corpus and fill the feature cache.
    Extract(RunArgs),
    /// Evaluate every (layer, n_pca) cell under the configured schemes.
    Evaluate(RunArgs),
    /// Apply two-step parameter selection to a report and store the result in it.
    Select {
        report: PathBuf,
    },
    /// Extract, evaluate, select and train the final model.
    Pipeline(RunArgs),
    /// Classify images with the output of `pipeline`.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Write a procedurally generated 7-class corpus.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        per_class: usize,
        /// HEIGHTxWIDTH
        #[arg(long, default_value = "256x256", value_parser = parse_size)]
        size: (usize, usize),
    },
    /// Write a seeded random weight bundle.
    GenWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ArchArg::Micro)]
        arch: ArchArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cross-check kernels, PCA and the SVM solver against reference implementations.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also trace a forward pass of this bundle against the layer table.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Vgg19,
    Micro,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    taps: Option<Vec<TapPoint>>,
    #[arg(long, value_delimiter = ',')]
    n_pca: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "C")]
    c: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    pca_per_fold: Option<bool>,
    #[arg(long, value_parser = parse_cv_base)]
    cv_base: Option<CvBase>,
    /// Skip unreadable images instead of aborting.
    #[arg(long)]
    skip_bad_images: bool,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("expected HEIGHTxWIDTH")?;
    let h = h.parse().map_err(|_| format!("bad height `{h}`"))?;
    let w = w.parse().map_err(|_| format!("bad width `{w}`"))?;
    Ok((h, w))
}

fn parse_cv_base(s: &str) -> Result<CvBase, String> {
    match s {
        "full_corpus" => Ok(CvBase::FullCorpus),
        "train_split" => Ok(CvBase::TrainSplit),
        _ => Err("expected full_corpus or train_split".into()),
    }
}

impl RunArgs {
    fn into_config(self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(cfg.corpus_root, self.corpus.map(Some));
        set!(cfg.weights_path, self.weights.map(Some));
        set!(cfg.cache_dir, self.cache_dir.map(Some));
        set!(cfg.output_dir, self.output_dir.map(Some));
        set!(cfg.taps, self.taps);
        set!(cfg.n_pca_grid, self.n_pca);
        set!(cfg.schemes, self.schemes);
        set!(cfg.seed, self.seed);
        set!(cfg.svm.c, self.c);
        set!(cfg.svm.tol, self.tol);
        set!(cfg.svm.max_epochs, self.max_epochs);
        set!(cfg.pca_per_fold, self.pca_per_fold);
        set!(cfg.cv_base, self.cv_base);
        if self.skip_bad_images {
            cfg.load_policy = LoadPolicy::Skip;
        }
        cfg.validated()
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Extract(args) => {
            for line in cmd_extract(&args.into_config()?)? {
                println!("{line}");
            }
        }
        Command::Evaluate(args) => {
            let cfg = args.into_config()?;
            let report = cmd_evaluate(&cfg)?;
            let out = cfg.output_dir();
            print!("{}", vggfer::report::summary_csv(&report.results));
            println!("wrote {}", out.join(REPORT_FILE).display());
        }
        Command::Select { report } => {
            let sel = cmd_select(&report)?;
            for line in describe_selection(&sel) {
                println!("{line}");
            }
        }
        Command::Pipeline(args) => {
            let outcome = cmd_pipeline(&args.into_config()?)?;
            if let Some(sel) = &outcome.report.selection {
                for line in describe_selection(sel) {
                    println!("{line}");
                }
            }
            println!("wrote {}", outcome.output_dir.join(MANIFEST_FILE).display());
        }
        Command::Predict { model, weights, images } => {
            for (path, label) in cmd_predict(&model, &weights, &images)? {
                println!("{}\t{label}", path.display());
            }
        }
        Command::GenSynthetic {
            out,
            seed,
            per_class,
            size,
        } => {
            let corpus = cmd_gen_synthetic(&out, seed, per_class, size)?;
            println!("wrote {} images to {}", corpus.len(), out.display());
        }
        Command::GenWeights { out, arch, seed } => {
            let arch = match arch {
                ArchArg::Vgg19 => Arch::Vgg19,
                ArchArg::Micro => Arch::Micro,
            };
            let w = cmd_gen_weights(&out, arch, seed)?;
            println!("wrote {} parameters to {} ({})", w.total_params(), out.display(), w.content_hash());
        }
        Command::Verify { seed, weights } => {
            let (checks, notes) = cmd_verify(seed, weights.as_deref().map(Path::new))?;
            for c in checks {
                println!("{c}");
            }
            for n in notes {
                println!("{n}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
