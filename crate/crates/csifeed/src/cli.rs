//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use csifeed_core::channel::generate_samples;
use csifeed_core::ista::{ista_solve, IstaConfig};
use csifeed_core::linalg::Matrix;
use csifeed_core::lora::{param_count, CompressionRatio, LoraConfig, LoraParams};
use csifeed_core::quant::{QuantConfig, QuantMode};
use csifeed_core::rng::{domain, stream};
use csifeed_core::train::{add_awgn, evaluate, nmse, reconstruct_all, run_to_completion, to_db, EpochRecord, Trainer};
use csifeed_core::transform::{from_angular_delay, CsiVector};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{load_config, RunConfig};
use crate::dataset::{self, Dataset, DatasetWriter};
use crate::error::{CliError, CliResult};
use crate::manifest::{sidecar, RunManifest, Table};

/// Seed of the evaluation-time noise stream.
pub const EVAL_NOISE_SEED: u64 = 0;
/// Seed of the random sensing matrix used by `ista-baseline`.
pub const SENSING_SEED: u64 = 0;

const GEN_CHUNK: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "csifeed", version, about = "CSI feedback with unrolled optimization: data, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Domain {
    /// Truncated angular-delay vectors, as stored.
    Angular,
    /// Spatial-frequency matrices after zero padding and inverse DFT.
    Spatial,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a dataset from a scenario configuration.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint's parameters.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// NMSE of a checkpoint, or of a reconstruction dataset, on a test set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        snr_db: Option<f64>,
        #[arg(long, value_enum, default_value_t = Domain::Angular)]
        domain: Domain,
    },
    /// Classical ISTA on a random Gaussian encoder.
    IstaBaseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cr: String,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        iters: usize,
    },
    /// Quantizer sweep: float pre-training, then fine-tuning per bit width and mode.
    QuantEval {
        #[arg(long)]
        model_config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [4u8, 8])]
        bits: Vec<u8>,
        #[arg(long, value_delimiter = ',', default_values_t = ["qat".to_string(), "lsq".to_string(), "lszq".to_string()])]
        modes: Vec<String>,
    },
    /// Print checkpoint dimensions and parameter counts.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let mut ctx = Context { out, err, args: recorded };
    match dispatch(cli.command, &mut ctx) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(ctx.err, "error: {e}");
            e.exit_code()
        }
    }
}

struct Context<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    args: Vec<String>,
}

impl Context<'_> {
    fn say(&mut self, text: &str) {
        let _ = writeln!(self.out, "{text}");
    }

    /// Writes the CSV mirror and the manifest, warning when a manifest left
    /// by an earlier run recorded different inputs.
    fn finish(&mut self, mut manifest: RunManifest, base: &Path, table: &Table) -> CliResult<()> {
        let csv = sidecar(base, ".csv");
        table.save(&csv)?;
        manifest.output("csv", &csv)?;
        let path = sidecar(base, ".manifest.json");
        if let Ok(previous) = RunManifest::load(&path) {
            for old in &previous.inputs {
                let now = manifest.inputs.iter().find(|a| a.role == old.role && a.path == old.path);
                if now.is_some_and(|a| a.sha256 != old.sha256) {
                    let _ = writeln!(
                        self.err,
                        "note: {} ({}) changed since the run recorded in {}",
                        old.role,
                        old.path.display(),
                        path.display()
                    );
                }
            }
        }
        manifest.save(&path)
    }
}

fn dispatch(command: Command, ctx: &mut Context<'_>) -> CliResult<()> {
    match command {
        Command::GenData { config, count, out } => gen_data(ctx, &config, count, &out),
        Command::Train { config, data, out, resume } => train(ctx, &config, &data, &out, resume.as_deref()),
        Command::Eval { model, data, snr_db, domain } => eval(ctx, &model, &data, snr_db, domain),
        Command::IstaBaseline { data, cr, alpha, theta, iters } => ista_baseline(ctx, &data, &cr, alpha, theta, iters),
        Command::QuantEval { model_config, data, bits, modes } => quant_eval(ctx, &model_config, &data, &bits, &modes),
        Command::Inspect { model } => inspect(ctx, &model),
    }
}

fn gen_data(ctx: &mut Context<'_>, config: &Path, count: u64, out: &Path) -> CliResult<()> {
    let cfg = load_config(config)?;
    if count == 0 {
        return Err(csifeed_core::Error::InvalidCount.into());
    }
    let sc = &cfg.scenario;
    let file = File::create(out).map_err(|e| CliError::io(out, e))?;
    let mut writer = DatasetWriter::new(BufWriter::new(file), sc.num_tx_antennas, sc.num_delay_rows, count)
        .map_err(|e| CliError::io(out, e))?;
    let mut start = 0u64;
    while start < count {
        let n = (count - start).min(GEN_CHUNK as u64) as usize;
        for x in generate_samples(sc, start, n)? {
            writer.push(x.as_slice()).map_err(|e| CliError::io(out, e))?;
        }
        start += n as u64;
    }
    writer.finish().map_err(|e| CliError::io(out, e))?;

    let mut manifest = RunManifest::new("gen-data", &ctx.args);
    manifest.seed = Some(sc.rng_seed);
    manifest.config = cfg.snapshot();
    manifest.input("config", config)?;
    manifest.output("dataset", out)?;
    let ds = &manifest.outputs[0];
    let mut table = Table::new(&["count", "nt", "nc", "bytes", "sha256"]);
    table.push(vec![
        count.to_string(),
        sc.num_tx_antennas.to_string(),
        sc.num_delay_rows.to_string(),
        ds.bytes.to_string(),
        ds.sha256.clone(),
    ]);
    ctx.say(&format!("wrote {count} samples ({} bytes) to {}", ds.bytes, out.display()));
    ctx.say(&format!("sha256 {}", ds.sha256));
    ctx.finish(manifest, out, &table)
}

fn check_dims(data: &Dataset, lora: &LoraConfig, origin: &Path) -> CliResult<()> {
    if data.nt != lora.nt || data.nc != lora.nc {
        return Err(CliError::data(
            origin,
            format!("dataset is {}x{} but the model expects {}x{}", data.nt, data.nc, lora.nt, lora.nc),
        ));
    }
    Ok(())
}

fn same_shape(a: &LoraConfig, b: &LoraConfig) -> bool {
    (a.nt, a.nc, a.measurements, a.blocks, a.hidden_width) == (b.nt, b.nc, b.measurements, b.blocks, b.hidden_width)
}

pub fn history_table(history: &[EpochRecord]) -> Table {
    let mut t = Table::new(&["epoch", "loss", "nmse", "nmse_db", "seconds"]);
    for r in history {
        t.push(vec![
            r.epoch.to_string(),
            r.loss.to_string(),
            r.nmse.to_string(),
            r.nmse_db.to_string(),
            format!("{:.6}", r.seconds),
        ]);
    }
    t
}

fn monotonic_clock() -> impl FnMut() -> f64 {
    let start = Instant::now();
    move || start.elapsed().as_secs_f64()
}

fn train(ctx: &mut Context<'_>, config: &Path, data_path: &Path, out: &Path, resume: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(config)?;
    let data = Dataset::load(data_path)?;
    check_dims(&data, &cfg.lora, data_path)?;
    let mut manifest = RunManifest::new("train", &ctx.args);
    manifest.seed = Some(cfg.train.seed);
    manifest.config = cfg.snapshot();
    manifest.input("config", config)?;
    manifest.input("data", data_path)?;
    let mut trainer = match resume {
        None => Trainer::new(&data.samples, cfg.lora.clone(), cfg.train.clone())?,
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if !same_shape(&ck.lora, &cfg.lora) {
                return Err(CliError::data(path, "checkpoint shape does not match the configuration"));
            }
            manifest.input("resume", path)?;
            let ready = cfg.train.quant.is_some() && ck.quant == cfg.train.quant;
            Trainer::with_params(&data.samples, cfg.lora.clone(), cfg.train.clone(), ck.params, ready)?
        }
    };
    let history = run_to_completion(&mut trainer, &mut monotonic_clock())?;
    let params = trainer.into_params();
    Checkpoint::new(cfg.lora.clone(), cfg.train.quant, params)?.save(out)?;
    manifest.output("checkpoint", out)?;
    if let Some(last) = history.last() {
        ctx.say(&format!(
            "trained {} epochs: loss {:.6e}, nmse {:.6e} ({:.2} dB), {:.1} s",
            history.len(),
            last.loss,
            last.nmse,
            last.nmse_db,
            history.iter().map(|r| r.seconds).sum::<f64>()
        ));
    }
    ctx.say(&format!("checkpoint written to {}", out.display()));
    ctx.finish(manifest, out, &history_table(&history))
}

fn read_magic(path: &Path) -> CliResult<[u8; 4]> {
    let mut file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|_| CliError::data(path, "file too short to identify"))?;
    Ok(magic)
}

/// Each row as the real and imaginary parts of its spatial-frequency matrix,
/// with as many subcarriers as retained delay rows.
pub fn to_spatial(x: &Matrix, nt: usize, nc: usize) -> CliResult<Matrix> {
    let mut rows = Vec::with_capacity(x.rows());
    for row in x.row_iter() {
        let h = from_angular_delay(&CsiVector::new(nt, nc, row.to_vec())?, nc)?;
        let mut flat: Vec<f64> = h.entries().iter().map(|c| c.re).collect();
        flat.extend(h.entries().iter().map(|c| c.im));
        rows.push(flat);
    }
    Ok(Matrix::from_rows(&rows)?)
}

fn eval(ctx: &mut Context<'_>, model: &Path, data_path: &Path, snr_db: Option<f64>, domain: Domain) -> CliResult<()> {
    if snr_db.is_some_and(|s| !s.is_finite()) {
        return Err(CliError::Usage("--snr-db must be finite".into()));
    }
    let data = Dataset::load(data_path)?;
    let mut manifest = RunManifest::new("eval", &ctx.args);
    manifest.input("model", model)?;
    manifest.input("data", data_path)?;
    let magic = read_magic(model)?;
    let recon = if magic == dataset::MAGIC {
        if snr_db.is_some() {
            return Err(CliError::Usage("--snr-db needs a checkpoint, not a reconstruction dataset".into()));
        }
        let rec = Dataset::load(model)?;
        if (rec.nt, rec.nc, rec.count()) != (data.nt, data.nc, data.count()) {
            return Err(CliError::data(model, "reconstructions do not match the test set in shape or count"));
        }
        rec.samples
    } else if magic == checkpoint::MAGIC {
        let ck = Checkpoint::load(model)?;
        check_dims(&data, &ck.lora, data_path)?;
        manifest.seed = snr_db.map(|_| EVAL_NOISE_SEED);
        let inputs = add_awgn(&data.samples, snr_db, &mut stream(EVAL_NOISE_SEED, domain::EVAL_NOISE, 0))?;
        reconstruct_all(&ck.params, &ck.lora, ck.quant.as_ref(), &inputs)?
    } else {
        return Err(CliError::data(model, "neither a LORA checkpoint nor a CSID dataset"));
    };
    let (truth, recon) = match domain {
        Domain::Angular => (data.samples.clone(), recon),
        Domain::Spatial => (to_spatial(&data.samples, data.nt, data.nc)?, to_spatial(&recon, data.nt, data.nc)?),
    };
    let value = nmse(&truth, &recon)?;
    let domain_name = match domain {
        Domain::Angular => "angular",
        Domain::Spatial => "spatial",
    };
    let snr = snr_db.map_or("none".to_string(), |s| s.to_string());
    let mut table = Table::new(&["model", "data", "samples", "domain", "snr_db", "nmse", "nmse_db"]);
    table.push(vec![
        model.display().to_string(),
        data_path.display().to_string(),
        data.count().to_string(),
        domain_name.to_string(),
        snr.clone(),
        value.to_string(),
        to_db(value).to_string(),
    ]);
    ctx.say("model | data | samples | domain | snr_db | nmse | nmse_db");
    ctx.say(&format!(
        "{} | {} | {} | {domain_name} | {snr} | {value:.6e} | {:.2}",
        model.display(),
        data_path.display(),
        data.count(),
        to_db(value)
    ));
    let data_name = data_path.file_name().unwrap_or_default().to_string_lossy();
    ctx.finish(manifest, &sidecar(model, &format!(".eval-{data_name}")), &table)
}

fn ista_baseline(ctx: &mut Context<'_>, data_path: &Path, cr: &str, alpha: f64, theta: f64, iters: usize) -> CliResult<()> {
    let data = Dataset::load(data_path)?;
    let ratio = CompressionRatio::parse(cr)?;
    let lora = LoraConfig::new(data.nt, data.nc, ratio, 1, 1)?;
    let (m, n) = (lora.measurements, lora.signal_len());
    let cfg = IstaConfig::new(alpha, theta, iters);
    cfg.validate()?;
    let a = Matrix::gaussian(m, n, 1.0 / m as f64, &mut stream(SENSING_SEED, domain::SENSING, 0));
    let mut recon = Vec::with_capacity(data.count() * n);
    let mut steps = 0usize;
    for x in data.samples.row_iter() {
        let v = a.matvec(x)?;
        let sol = ista_solve(&a, &v, &cfg)?;
        steps += sol.iterations();
        recon.extend(sol.x);
    }
    let recon = Matrix::from_vec(data.count(), n, recon)?;
    let value = nmse(&data.samples, &recon)?;
    let mean_iters = steps as f64 / data.count() as f64;
    let mut manifest = RunManifest::new("ista-baseline", &ctx.args);
    manifest.seed = Some(SENSING_SEED);
    manifest.input("data", data_path)?;
    let mut table = Table::new(&["cr", "measurements", "alpha", "theta", "iters", "mean_iterations", "nmse", "nmse_db"]);
    table.push(vec![
        ratio.to_string(),
        m.to_string(),
        alpha.to_string(),
        theta.to_string(),
        iters.to_string(),
        mean_iters.to_string(),
        value.to_string(),
        to_db(value).to_string(),
    ]);
    ctx.say(&format!(
        "ista cr {ratio} (M = {m}): nmse {value:.6e} ({:.2} dB), {mean_iters:.1} iterations on average",
        to_db(value)
    ));
    ctx.finish(manifest, &sidecar(data_path, ".ista"), &table)
}

/// One fine-tuned quantizer setting.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantResult {
    pub quant: QuantConfig,
    pub nmse: f64,
    pub scale: f64,
    pub zero_point: f64,
}

/// Pre-trains a float model on `train`, then fine-tunes a copy for every
/// `(bits, mode)` with the quantizer in the loop and scores it on `test`.
/// Returns the float test NMSE and one result per setting.
pub fn quant_sweep(
    cfg: &RunConfig,
    train: &Matrix,
    test: &Matrix,
    settings: &[QuantConfig],
) -> CliResult<(f64, Vec<QuantResult>)> {
    let float_cfg = csifeed_core::train::TrainConfig {
        quant: None,
        freeze_network: false,
        ..cfg.train.clone()
    };
    let mut trainer = Trainer::new(train, cfg.lora.clone(), float_cfg.clone())?;
    run_to_completion(&mut trainer, &mut || 0.0)?;
    let float: LoraParams = trainer.into_params();
    let float_nmse = evaluate(&float, &cfg.lora, None, test, test)?.nmse;
    let mut results = Vec::new();
    for &q in settings {
        let tune = csifeed_core::train::TrainConfig {
            epochs: cfg.quant_epochs,
            batch_size: cfg.quant_batch_size,
            quant: Some(q),
            ..float_cfg.clone()
        };
        let mut trainer = Trainer::with_params(train, cfg.lora.clone(), tune, float.clone(), false)?;
        run_to_completion(&mut trainer, &mut || 0.0)?;
        let p = trainer.into_params();
        results.push(QuantResult {
            quant: q,
            nmse: evaluate(&p, &cfg.lora, Some(&q), test, test)?.nmse,
            scale: p.quant.scale,
            zero_point: p.quant.zero_point,
        });
    }
    Ok((float_nmse, results))
}

fn quant_eval(ctx: &mut Context<'_>, config: &Path, data_path: &Path, bits: &[u8], modes: &[String]) -> CliResult<()> {
    let cfg = load_config(config)?;
    let data = Dataset::load(data_path)?;
    check_dims(&data, &cfg.lora, data_path)?;
    let modes: Vec<QuantMode> = modes
        .iter()
        .map(|m| QuantMode::parse(m).ok_or_else(|| CliError::Usage(format!("unknown quantizer mode `{m}`"))))
        .collect::<CliResult<_>>()?;
    let mut settings = Vec::new();
    for &b in bits {
        for &mode in &modes {
            settings.push(QuantConfig::new(b, mode)?);
        }
    }
    if data.count() < 2 {
        return Err(CliError::data(data_path, "need at least two samples to hold one out"));
    }
    let holdout = ((data.count() as f64 * cfg.holdout_fraction).round() as usize).clamp(1, data.count() - 1);
    let split = data.count() - holdout;
    let (train_set, test_set) = (data.slice(0..split), data.slice(split..data.count()));
    let (float_nmse, results) = quant_sweep(&cfg, &train_set.samples, &test_set.samples, &settings)?;

    let mut manifest = RunManifest::new("quant-eval", &ctx.args);
    manifest.seed = Some(cfg.train.seed);
    manifest.config = cfg.snapshot();
    manifest.input("config", config)?;
    manifest.input("data", data_path)?;
    let mut table = Table::new(&["bits", "mode", "nmse", "nmse_db", "scale", "zero_point"]);
    table.push(vec!["32".into(), "float".into(), float_nmse.to_string(), to_db(float_nmse).to_string(), String::new(), String::new()]);
    ctx.say(&format!("train {split} / test {holdout} samples; float nmse {float_nmse:.6e} ({:.2} dB)", to_db(float_nmse)));
    ctx.say("bits | mode | nmse | nmse_db | scale | zero_point");
    for r in &results {
        table.push(vec![
            r.quant.bits().to_string(),
            r.quant.mode.name().to_string(),
            r.nmse.to_string(),
            to_db(r.nmse).to_string(),
            r.scale.to_string(),
            r.zero_point.to_string(),
        ]);
        ctx.say(&format!(
            "{} | {} | {:.6e} | {:.2} | {:.6} | {:.6}",
            r.quant.bits(),
            r.quant.mode.name(),
            r.nmse,
            to_db(r.nmse),
            r.scale,
            r.zero_point
        ));
    }
    ctx.finish(manifest, &sidecar(data_path, ".quant-eval"), &table)
}

/// `1048576` as `1,048,576`.
pub fn group_digits(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn inspect(ctx: &mut Context<'_>, model: &Path) -> CliResult<()> {
    let ck = Checkpoint::load(model)?;
    let c = &ck.lora;
    let count = param_count(c);
    let quant = ck
        .quant
        .map_or("none".to_string(), |q| format!("{} {}-bit", q.mode.name(), q.bits()));
    let lines = [
        ("nt", c.nt.to_string()),
        ("nc", c.nc.to_string()),
        ("signal_len", c.signal_len().to_string()),
        ("measurements", c.measurements.to_string()),
        ("cr", c.cr.to_string()),
        ("blocks", c.blocks.to_string()),
        ("hidden_width", c.hidden_width.to_string()),
        ("quantizer", quant),
        ("encoder_params", group_digits(count.encoder)),
        ("decoder_params", group_digits(count.decoder_total)),
        ("trainable_params", group_digits(count.trainable)),
    ];
    let mut table = Table::new(&["field", "value"]);
    for (k, v) in &lines {
        ctx.say(&format!("{k}: {v}"));
        table.push(vec![k.to_string(), v.replace(',', "")]);
    }
    let mut manifest = RunManifest::new("inspect", &ctx.args);
    manifest.input("model", model)?;
    ctx.finish(manifest, &sidecar(model, ".inspect"), &table)
}
