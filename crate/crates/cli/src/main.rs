use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use matrixt::classifier::{loocv, ClassifierModel, Evaluation, Family, Priors, TrainOptions};
use matrixt::datamodel::{format_f64, read_matstack, write_matstack};
use matrixt::distributions::{sample_mxvn, sample_mxvt};
use matrixt::ecme::{mxvt_fit, EcmeConfig, NuMode};
use matrixt::experiments::{run, ExperimentKind, ExperimentSpec};
use matrixt::mxvn_fit::{mxvn_fit, FitConfig, FitResult};
use matrixt::satimage::{class_counts, parse_class_list, parse_satimage, Orientation, CODEBOOK};
use matrixt::{MeanStructure, MxvnParams, MxvtParams, RngSeed, ScatterStructure, StructureSpec};

// stdout writes that surface a closed pipe as an error instead of panicking
macro_rules! out {
    ($($arg:tt)*) => {
        std::io::Write::write_fmt(&mut std::io::stdout(), format_args!($($arg)*))?
    };
}

macro_rules! outln {
    ($($arg:tt)*) => {
        std::io::Write::write_fmt(&mut std::io::stdout(), format_args!("{}\n", format_args!($($arg)*)))?
    };
}

const EXIT_ERROR: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "matrixt", version, about = "Matrix-variate normal and t estimation and classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a matrix normal or matrix t model to a matrix stack.
    Fit(FitArgs),
    /// Train, apply and assess discriminant classifiers.
    #[command(subcommand)]
    Classify(ClassifyCommand),
    /// Draw a matrix stack from a matrix normal or t distribution.
    Simulate(SimulateArgs),
    /// Run a simulation study and write its CSV tables.
    Experiment(ExperimentArgs),
    /// Convert the Statlog Landsat files into matrix stacks.
    IngestSatimage(IngestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Normal,
    T,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "normal")]
    family: FamilyArg,
    /// `estimate` or a fixed value (t family only).
    #[arg(long, default_value = "estimate")]
    nu: String,
    /// free | const | col-const | row-const
    #[arg(long, default_value = "free")]
    mean: MeanStructure,
    /// free | ar1 | cs
    #[arg(long, default_value = "free")]
    row_cov: ScatterStructure,
    /// free | ar1 | cs
    #[arg(long, default_value = "free")]
    col_cov: ScatterStructure,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
}

impl ModelArgs {
    fn structure(&self) -> StructureSpec {
        StructureSpec { mean: self.mean, row_scatter: self.row_cov, col_scatter: self.col_cov }
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig { tolerance: self.tol, max_iter: self.max_iter, structure: self.structure(), param_tolerance: None }
    }

    fn nu_mode(&self) -> Result<NuMode> {
        if self.nu == "estimate" {
            return Ok(NuMode::Estimate);
        }
        let v: f64 = self.nu.parse().with_context(|| format!("--nu expects 'estimate' or a number, got '{}'", self.nu))?;
        Ok(NuMode::Fixed(v))
    }

    fn family(&self) -> Result<Family> {
        Ok(match (self.family, self.nu_mode()?) {
            (FamilyArg::Normal, _) => Family::Normal,
            (FamilyArg::T, NuMode::Fixed(nu)) => Family::TFixed { nu },
            (FamilyArg::T, NuMode::Estimate) => Family::TEstimate,
        })
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Accepted for uniformity; fitting draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
    /// Model document; printed to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
enum FitDocument {
    Normal(FitResult<MxvnParams>),
    T(FitResult<MxvtParams>),
}

#[derive(Subcommand)]
enum ClassifyCommand {
    /// Fit one model per group and write the classifier.
    Train(TrainArgs),
    /// Score observations with a trained classifier (CSV).
    Predict(PredictArgs),
    /// Error rate and confusion matrix on labeled data.
    Eval(EvalArgs),
    /// Leave-one-out error of the training procedure.
    Loocv(LoocvArgs),
}

#[derive(Args)]
struct TrainOpts {
    #[command(flatten)]
    model: ModelArgs,
    /// equal | empirical | comma-separated weights in sorted-label order
    #[arg(long, default_value = "empirical")]
    priors: String,
    /// Share the scatter matrices (and ν) across groups.
    #[arg(long)]
    pooled: bool,
}

impl TrainOpts {
    fn options(&self) -> Result<TrainOptions> {
        let priors = match self.priors.as_str() {
            "equal" => Priors::Equal,
            "empirical" => Priors::Empirical,
            list => Priors::Given(
                list.split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .with_context(|| format!("--priors expects equal, empirical or a number list, got '{list}'"))?,
            ),
        };
        Ok(TrainOptions {
            family: self.model.family()?,
            structure: self.model.structure(),
            priors,
            pooled: self.pooled,
            fit: self.model.fit_config(),
            ..TrainOptions::default()
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled matrix stack.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct LoocvArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "normal")]
    family: FamilyArg,
    /// Degrees of freedom (t family).
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// JSON with `mean`, `sigma`, `omega` (and `nu`); zero mean and identity
    /// scatter otherwise.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    name: ExperimentKind,
    /// JSON experiment spec; defaults for `--name` otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the CSV tables (overrides the spec).
    #[arg(long)]
    outdir: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Statlog class codes or names.
    #[arg(long, default_value = "grey-soil,damp-grey-soil,vegetation-stubble")]
    classes: String,
    /// 4x9 (pixels as columns) or 9x4.
    #[arg(long, default_value = "4x9")]
    orientation: Orientation,
    #[arg(long)]
    outdir: PathBuf,
}

fn write_or_print(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            out!("{body}");
            Ok(())
        }
    }
}

fn status(converged: bool) -> u8 {
    if converged {
        0
    } else {
        EXIT_NOT_CONVERGED
    }
}

fn cmd_fit(a: &FitArgs) -> Result<u8> {
    let data = read_matstack(&a.input)?;
    let config = a.model.fit_config();
    let (doc, converged) = match a.model.family {
        FamilyArg::Normal => {
            if a.model.nu != "estimate" {
                bail!("--nu applies to the t family only");
            }
            let r = mxvn_fit(&data, &config)?;
            let c = r.converged;
            (FitDocument::Normal(r), c)
        }
        FamilyArg::T => {
            let cfg = EcmeConfig { fit: config, nu_mode: a.model.nu_mode()?, ..EcmeConfig::default() };
            let r = mxvt_fit(&data, &cfg)?;
            let c = r.converged;
            (FitDocument::T(r), c)
        }
    };
    if !converged {
        eprintln!("warning: fit did not converge");
    }
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_or_print(a.output.as_deref(), &text)?;
    Ok(status(converged))
}

fn print_evaluation(title: &str, e: &Evaluation) -> Result<()> {
    outln!("{title}: {} errors out of {}, error rate {:.6}", e.errors, e.n, e.error_rate);
    let mut head = String::from("true\\pred");
    for l in &e.labels {
        let _ = write!(head, "\t{l}");
    }
    outln!("{head}");
    for (l, row) in e.labels.iter().zip(&e.confusion) {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        outln!("{l}\t{}", cells.join("\t"));
    }
    Ok(())
}

fn cmd_classify(c: &ClassifyCommand) -> Result<u8> {
    match c {
        ClassifyCommand::Train(a) => {
            let data = read_matstack(&a.input)?;
            let model = ClassifierModel::train(&data, &a.opts.options()?)?;
            model.save(&a.output)?;
            outln!(
                "groups {:?}, train loglik {:.6}, parameters {}, BIC {:.6}",
                model.labels, model.train_loglik, model.param_count, model.bic
            );
            if !model.converged {
                eprintln!("warning: at least one group fit did not converge");
            }
            Ok(status(model.converged))
        }
        ClassifyCommand::Predict(a) => {
            let model = ClassifierModel::load(&a.model)?;
            let data = read_matstack(&a.input)?;
            let preds = model.predict_all(&data)?;
            let two = model.labels.len() == 2;
            let mut out = String::from("index,label");
            for l in &model.labels {
                let _ = write!(out, ",score_{l}");
            }
            if two {
                out.push_str(",log_odds");
            }
            out.push('\n');
            for (i, pr) in preds.iter().enumerate() {
                let _ = write!(out, "{i},{}", pr.label);
                for s in &pr.scores {
                    let _ = write!(out, ",{}", format_f64(*s));
                }
                if let Some(lo) = pr.log_odds {
                    let _ = write!(out, ",{}", format_f64(lo));
                }
                out.push('\n');
            }
            write_or_print(a.output.as_deref(), &out)?;
            Ok(0)
        }
        ClassifyCommand::Eval(a) => {
            let model = ClassifierModel::load(&a.model)?;
            let data = read_matstack(&a.input)?;
            print_evaluation("test", &model.evaluate(&data)?)?;
            Ok(0)
        }
        ClassifyCommand::Loocv(a) => {
            let data = read_matstack(&a.input)?;
            print_evaluation("leave-one-out", &loocv(&data, &a.opts.options()?)?)?;
            Ok(0)
        }
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<u8> {
    let seed = RngSeed::new(a.seed);
    let text = a.params.as_ref().map(|p| fs::read_to_string(p).with_context(|| format!("reading {}", p.display())));
    let text = text.transpose()?;
    let dims = |pp: usize, qq: usize| -> Result<()> {
        if a.p.is_some_and(|v| v != pp) || a.q.is_some_and(|v| v != qq) {
            bail!("--p/--q disagree with the parameter file ({pp}x{qq})");
        }
        Ok(())
    };
    let size = || -> Result<(usize, usize)> {
        match (a.p, a.q) {
            (Some(p), Some(q)) => Ok((p, q)),
            _ => bail!("--p and --q are required without --params"),
        }
    };
    let stack = match a.family {
        FamilyArg::Normal => {
            if a.nu.is_some() {
                bail!("--nu applies to the t family only");
            }
            let params = match &text {
                Some(t) => serde_json::from_str::<MxvnParams>(t).context("parsing parameter file")?,
                None => {
                    let (p, q) = size()?;
                    MxvnParams::standard(p, q)
                }
            };
            let params = MxvnParams::new(params.mean, params.sigma, params.omega)?;
            dims(params.p(), params.q())?;
            sample_mxvn(&params, a.n, seed)?
        }
        FamilyArg::T => {
            let params = match &text {
                Some(t) => {
                    let mut v: serde_json::Value = serde_json::from_str(t).context("parsing parameter file")?;
                    if let (Some(nu), Some(obj)) = (a.nu, v.as_object_mut()) {
                        obj.insert("nu".into(), nu.into());
                    }
                    serde_json::from_value::<MxvtParams>(v).context("parameter file needs nu, mean, sigma, omega")?
                }
                None => {
                    let (p, q) = size()?;
                    let nu = a.nu.context("--nu is required for the t family")?;
                    MxvtParams::standard(nu, p, q)
                }
            };
            let params = MxvtParams::new(params.nu, params.mean, params.sigma, params.omega)?;
            dims(params.p(), params.q())?;
            sample_mxvt(&params, a.n, seed)?
        }
    };
    write_matstack(&stack, &a.output)?;
    Ok(0)
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<u8> {
    let mut spec = match &a.spec {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default_for(a.name),
    };
    if spec.name != a.name {
        bail!("spec file describes '{}' but --name is '{}'", spec.name, a.name);
    }
    if let Some(r) = a.replicates {
        spec.replicates = r;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(d) = &a.outdir {
        spec.output = Some(d.clone());
    }
    spec.validate()?;
    let out = run(&spec)?;
    out!("{}", out.report);
    match &spec.output {
        Some(dir) => {
            for p in out.write(dir)? {
                outln!("wrote {}", p.display());
            }
        }
        None => out!("{}", out.summary_csv),
    }
    Ok(0)
}

fn cmd_ingest(a: &IngestArgs) -> Result<u8> {
    let classes = parse_class_list(&a.classes)?;
    let (train, test) = parse_satimage(&a.train, &a.test, &classes, a.orientation)?;
    fs::create_dir_all(&a.outdir).with_context(|| format!("creating {}", a.outdir.display()))?;
    for (name, stack) in [("train.csv", &train), ("test.csv", &test)] {
        let path = a.outdir.join(name);
        write_matstack(stack, &path)?;
        let counts = class_counts(stack);
        outln!("{}: {} observations, per class {:?}", path.display(), stack.n(), counts);
    }
    for (k, code) in classes.iter().enumerate() {
        let name = CODEBOOK.iter().find(|(c, _)| c == code).map_or("?", |(_, n)| n);
        outln!("label {k} = Statlog class {code} ({name})");
    }
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Classify(c) => cmd_classify(c),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::IngestSatimage(a) => cmd_ingest(a),
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their sources
            let mut msg = String::new();
            for cause in e.chain() {
                let s = cause.to_string();
                if !msg.contains(&s) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&s);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
