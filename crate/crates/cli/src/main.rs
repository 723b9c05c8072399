use clap::{Args, Parser, Subcommand, ValueEnum};
use patchsim::config::WeatherConfig;
use patchsim::defense::MaskParams;
use patchsim::patcher::PatchMethod;
use patchsim::run::{
    self, AblationParams, AnnotateOptions, AnnotationFormat, GenerateOptions, MaskEvalParams, PatchOptions,
    RunError, TextureSource, OUT_ROOT_ENV,
};
use patchsim::scene::PlaceholderId;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "patchsim", version, about = "Synthetic scenario generation, annotation, patching and defense evaluation")]
struct Cli {
    /// Scenario YAML file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and render every frame of a scenario.
    Generate(GenerateArgs),
    /// Export kwcoco or MOTS annotations for a run.
    Annotate(AnnotateArgs),
    /// Insert a patch into a run with one of three methods.
    Patch(PatchArgs),
    /// Run a defense experiment and print a JSON report.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Parse and validate a scenario without running it.
    ValidateConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeatherPreset {
    Sunny,
    Rainy,
    Foggy,
}

impl WeatherPreset {
    fn config(self) -> WeatherConfig {
        match self {
            WeatherPreset::Sunny => WeatherConfig::sunny(),
            WeatherPreset::Rainy => WeatherConfig::rainy(),
            WeatherPreset::Foggy => WeatherConfig::foggy(),
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, alias = "max_frames")]
    max_frames: Option<u32>,
    /// Output directory. Defaults to the config's output_dir under $PATCHSIM_OUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides every sensor's width.
    #[arg(long, requires = "height")]
    width: Option<u32>,
    #[arg(long, requires = "width")]
    height: Option<u32>,
    /// Replaces the config's weather block.
    #[arg(long, value_enum)]
    weather: Option<WeatherPreset>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Kwcoco,
    Mots,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "kwcoco")]
    format: Format,
    /// Instances with fewer pixels are dropped.
    #[arg(long, default_value_t = patchsim::annotator::DEFAULT_MIN_PIXELS)]
    min_pixels: u64,
    /// Include stuff classes (ground, walls, buildings).
    #[arg(long)]
    all_classes: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Digital,
    Corrected,
    Rendered,
}

#[derive(Args)]
struct PatchArgs {
    /// Base run. Without it, a base run is generated from --config into <out>/base.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Method,
    /// Patch PNG, or a directory of frame_NNNNNN.png images.
    #[arg(long)]
    patch: PathBuf,
    #[arg(long, default_value_t = 0)]
    placeholder: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Background-ablation removal rate of the patch region per run.
    Ablation {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 31)]
        window: usize,
        #[arg(long, default_value_t = patchsim::defense::DEFAULT_TOLERANCE)]
        tolerance: u8,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Precision and recall of the three heuristic masks per run.
    Masks {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Unpatched run per --run, in the same order, for color statistics.
        #[arg(long = "benign", required = true)]
        benign: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        stride: u64,
        #[arg(long, default_value_t = 31)]
        stats_frames: usize,
        #[arg(long, default_value_t = patchsim::defense::DEFAULT_RARE_FRACTION)]
        rare_fraction: f64,
        #[arg(long, default_value_t = patchsim::defense::DEFAULT_HF_THRESHOLD)]
        hf_threshold: f64,
        #[arg(long, default_value_t = patchsim::defense::DEFAULT_S_MIN)]
        s_min: f64,
        #[arg(long, default_value_t = patchsim::defense::DEFAULT_V_MIN)]
        v_min: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn require_config(cli: &Cli) -> Result<&Path, RunError> {
    cli.config
        .as_deref()
        .ok_or_else(|| RunError::Usage("--config is required for this command".into()))
}

fn load(path: &Path) -> Result<patchsim::config::ScenarioConfig, RunError> {
    let (cfg, warnings) = run::load_config(path)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn emit(report: &serde_json::Value, output: Option<&Path>) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    match output {
        Some(p) => std::fs::write(p, text).map_err(|source| RunError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    match &cli.command {
        Command::ValidateConfig => {
            let v = run::validate_config(require_config(cli)?)?;
            for w in &v.warnings {
                eprintln!("warning: {w}");
            }
            if !v.is_ok() {
                return Err(RunError::Invalid(v.diagnostics));
            }
            println!("ok");
            Ok(())
        }
        Command::Generate(a) => {
            let path = require_config(cli)?;
            let cfg = load(path)?;
            let out = run::resolve_output_dir(
                a.out.as_deref(),
                &cfg.sim.output_dir,
                std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from),
            );
            let opts = GenerateOptions {
                seed: a.seed,
                max_frames: a.max_frames,
                image_size: a.width.zip(a.height),
                weather: a.weather.map(WeatherPreset::config),
                base_dir: path.parent().map(Path::to_path_buf),
                textures: Vec::new(),
            };
            let m = run::generate(&cfg, &out, &opts)?;
            println!(
                "wrote {} files for {} frames x {} sensors to {}",
                m.files.len(),
                m.num_frames,
                m.sensors.len(),
                out.display()
            );
            Ok(())
        }
        Command::Annotate(a) => {
            let opts = AnnotateOptions {
                format: match a.format {
                    Format::Kwcoco => AnnotationFormat::Kwcoco,
                    Format::Mots => AnnotationFormat::Mots,
                },
                min_pixels: a.min_pixels,
                all_classes: a.all_classes,
            };
            let paths = run::annotate(&a.run, &opts)?;
            println!("wrote {} annotation files", paths.len());
            Ok(())
        }
        Command::Patch(a) => {
            let method = match a.method {
                Method::Digital => PatchMethod::Digital,
                Method::Corrected => PatchMethod::Corrected,
                Method::Rendered => PatchMethod::Rendered,
            };
            let base = match &a.run {
                Some(r) => r.clone(),
                None => {
                    let path = require_config(cli)
                        .map_err(|_| RunError::Usage("patch needs --run or --config".into()))?;
                    let cfg = load(path)?;
                    let base = a.out.join("base");
                    let opts = GenerateOptions {
                        base_dir: path.parent().map(Path::to_path_buf),
                        ..Default::default()
                    };
                    run::generate(&cfg, &base, &opts)?;
                    base
                }
            };
            let opts = PatchOptions {
                method,
                texture: TextureSource::load(&a.patch)?,
                placeholder: PlaceholderId(a.placeholder),
            };
            let m = run::patch_run(&base, &a.out, &opts)?;
            let r = m.patch.as_ref().expect("patched manifest");
            println!(
                "patched {} frames ({} without a visible placeholder, {} uncorrected) into {}",
                r.frames_patched,
                r.frames_not_visible,
                r.frames_uncorrected,
                a.out.display()
            );
            Ok(())
        }
        Command::Eval(EvalCommand::Ablation {
            runs,
            window,
            tolerance,
            output,
        }) => {
            let params = AblationParams {
                window: *window,
                tolerance: *tolerance,
            };
            emit(&run::eval_ablation(runs, &params)?, output.as_deref())
        }
        Command::Eval(EvalCommand::Masks {
            runs,
            benign,
            stride,
            stats_frames,
            rare_fraction,
            hf_threshold,
            s_min,
            v_min,
            output,
        }) => {
            if runs.len() != benign.len() {
                return Err(RunError::Usage(format!(
                    "{} --run but {} --benign directories",
                    runs.len(),
                    benign.len()
                )));
            }
            let params = MaskEvalParams {
                masks: MaskParams {
                    rare_fraction: *rare_fraction,
                    hf_threshold: *hf_threshold,
                    s_min: *s_min,
                    v_min: *v_min,
                },
                stats_frames: *stats_frames,
                stride: *stride,
            };
            let pairs: Vec<(PathBuf, PathBuf)> = runs.iter().cloned().zip(benign.iter().cloned()).collect();
            emit(&run::eval_masks(&pairs, &params)?, output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
