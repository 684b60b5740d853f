//! `gmx`: encode, decode and inspect latents with a grouped-mixer entropy model.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use groupedmixer::codec::{
    decode_latents, encode_latents, progressive_decode, read_tensor, tensor_from_bytes, write_tensor, Bitstream,
    STREAM_MAGIC, TENSOR_MAGIC,
};
use groupedmixer::complexity::{measure, report_analytic};
use groupedmixer::grouping::partition;
use groupedmixer::model::ModelWeights;
use groupedmixer::numerics::Tensor;
use groupedmixer::rng::SplitMix64;
use groupedmixer::{selftest, weights_io, Error};

use config::{describe, Pairs};

const EXIT_USAGE: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_VERIFY: u8 = 4;

/// Error reported as a single `code: message` line.
#[derive(Debug)]
pub struct Failure {
    code: &'static str,
    message: String,
    exit: u8,
}

impl Failure {
    pub fn usage(message: String) -> Self {
        Self {
            code: "usage",
            message,
            exit: EXIT_USAGE,
        }
    }

    fn verification(message: String) -> Self {
        Self {
            code: "verification",
            message,
            exit: EXIT_VERIFY,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let exit = match e {
            Error::Config(_) | Error::Shape(_) | Error::Index(_) => EXIT_USAGE,
            _ => EXIT_FORMAT,
        };
        Self {
            code: e.code(),
            message: e.to_string(),
            exit,
        }
    }
}

type Outcome = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "gmx", version, about = "Grouped-mixer latent codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// GMXW weight file.
    #[arg(long)]
    weights: PathBuf,
    /// Inline model config (`key=val`, repeated or comma separated). The
    /// weight file wins on conflict.
    #[arg(long, num_args = 1..)]
    config: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a GMXT latent tensor into a GMXB bitstream.
    Encode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Print a per-group rate report.
        #[arg(long)]
        report: bool,
        /// Also write the reconstruction the decoder will produce.
        #[arg(long)]
        yhat: Option<PathBuf>,
    },
    /// Decode a GMXB bitstream into a GMXT tensor.
    Decode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Decode the first `groups` groups and sample the rest from the model.
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        groups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the header of a GMXT, GMXB or GMXW file.
    Inspect {
        #[arg(long)]
        input: PathBuf,
    },
    /// Attention cost report. Keys `groups`, `h`, `w`, `head_dim` select the
    /// analytic case; with `--measure` or `--weights` a forward pass is counted
    /// on an `h×w`-per-group latent.
    Bench {
        #[arg(long, num_args = 1..)]
        config: Vec<String>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        measure: bool,
        /// Seed for random weights when measuring without `--weights`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in consistency checks.
    Selftest,
    /// Write seeded random weights for an inline config.
    Init {
        #[arg(long, num_args = 1..)]
        config: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a seeded Gaussian latent tensor.
    Synth {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4.0)]
        scale: f64,
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_model(m: &ModelArgs) -> Result<ModelWeights, Failure> {
    let inline = Pairs::parse(&m.config, &[])?;
    let w = weights_io::load(&m.weights)?;
    inline.reconcile(&w.config)?;
    Ok(w)
}

fn encode(model: &ModelArgs, input: &Path, output: &Path, report: bool, yhat: Option<&Path>) -> Outcome {
    let w = load_model(model)?;
    let y = read_tensor(input)?;
    let e = encode_latents(&y, &w)?;
    e.bitstream.write(output)?;
    if let Some(p) = yhat {
        write_tensor(p, &e.y_hat)?;
    }
    let bits = e.bitstream.payload_bits();
    println!("bits={bits}");
    println!("z_bytes={}", e.bitstream.z.len());
    println!("y_bytes={}", e.bitstream.y.len());
    println!("bits_per_element={:.6}", bits as f64 / y.len() as f64);
    if report {
        let positions = (y.shape()[0] * y.shape()[1]) as f64;
        println!("estimated_z_bits={:.3}", e.z_bits);
        println!("estimated_y_bits={:.3}", e.y_bits);
        println!("estimated_bits_per_position={:.6}", (e.z_bits + e.y_bits) / positions);
        for (g, pair) in e.y_prefix.windows(2).enumerate() {
            println!("group_{g}_bytes={}", pair[1] - pair[0]);
        }
    }
    Ok(())
}

fn decode(model: &ModelArgs, input: &Path, output: &Path) -> Outcome {
    let w = load_model(model)?;
    let bs = Bitstream::read(input)?;
    write_tensor(output, &decode_latents(&bs, &w)?)?;
    Ok(())
}

fn sample(model: &ModelArgs, input: &Path, groups: usize, seed: u64, output: &Path) -> Outcome {
    let w = load_model(model)?;
    let bs = Bitstream::read(input)?;
    write_tensor(output, &progressive_decode(&bs, groups, seed, &w)?)?;
    Ok(())
}

fn inspect(input: &Path) -> Outcome {
    let bytes = std::fs::read(input).map_err(Error::from)?;
    let magic: [u8; 4] = bytes
        .get(..4)
        .and_then(|m| m.try_into().ok())
        .ok_or(Error::Truncated("file shorter than its magic"))?;
    if magic == TENSOR_MAGIC {
        let t = tensor_from_bytes(&bytes)?;
        let (min, max) = t
            .data()
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        println!("format=GMXT");
        println!("shape={}x{}x{}", t.shape()[0], t.shape()[1], t.shape()[2]);
        println!("min={min}");
        println!("max={max}");
    } else if magic == STREAM_MAGIC {
        let bs = Bitstream::from_bytes(&bytes)?;
        println!("format=GMXB");
        println!("config_hash={:#018x}", bs.config_hash);
        println!("shape={}x{}x{}", bs.height, bs.width, bs.channels);
        println!("scheme={}", bs.scheme);
        println!("flags={}", bs.flags);
        println!("z_bytes={}", bs.z.len());
        println!("y_bytes={}", bs.y.len());
    } else if magic == weights_io::MAGIC {
        let w = weights_io::from_bytes(&bytes)?;
        println!("format=GMXW");
        println!("version={}", weights_io::VERSION);
        println!("config_hash={:#018x}", weights_io::config_hash(&w.config));
        println!("tensors={}", w.tensor_count());
        println!("{}", describe(&w.config));
    } else {
        return Err(Failure::from(Error::Format(format!("unrecognised magic {magic:?}"))));
    }
    Ok(())
}

fn bench(config: &[String], weights: Option<&Path>, measure_flag: bool, seed: u64) -> Outcome {
    let p = Pairs::parse(config, &["groups", "h", "w", "head_dim"])?;
    if weights.is_none() && !measure_flag {
        let need = |k: &str| p.usize(k)?.ok_or_else(|| Failure::usage(format!("bench needs {k}=<n>")));
        let (g, h, w) = (need("groups")?, need("h")?, need("w")?);
        let d = p.usize("head_dim")?.unwrap_or(32);
        let r = report_analytic(g, h, w, d);
        print!("{}", r.table());
        println!("{}", r.key_values());
        return Ok(());
    }
    let w = match weights {
        Some(path) => {
            let w = weights_io::load(path)?;
            p.reconcile(&w.config)?;
            w
        }
        None => ModelWeights::init_random(&p.model_config()?, seed)?,
    };
    let cfg = &w.config;
    if let Some(g) = p.usize("groups")? {
        if g != cfg.groups() {
            eprintln!("warning: groups={g} ignored; the model has {} groups", cfg.groups());
        }
    }
    if p.usize("head_dim")?.is_some_and(|d| d != cfg.head_dim()) {
        eprintln!("warning: head_dim ignored; the model has head_dim={}", cfg.head_dim());
    }
    let h = p.usize("h")?.unwrap_or(8);
    let ww = p.usize("w")?.unwrap_or(8);
    let y = Tensor::zeros(&[h * cfg.scheme.kh(), ww * cfg.scheme.kw(), cfg.latent_channels]);
    let r = measure(&partition(&y, &cfg.scheme)?, &w)?;
    print!("{}", r.table());
    println!("{}", r.key_values());
    Ok(())
}

fn run_selftest() -> Outcome {
    let checks = selftest::run_all();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::verification(format!("failed checks: {}", failed.join(", "))))
    }
}

fn init(config: &[String], seed: u64, output: &Path) -> Outcome {
    let cfg = Pairs::parse(config, &[])?.model_config()?;
    let w = weights_io::init_random(&cfg, seed)?;
    weights_io::save(&w, output)?;
    println!("config_hash={:#018x}", weights_io::config_hash(&cfg));
    println!("tensors={}", w.tensor_count());
    Ok(())
}

fn synth(h: usize, w: usize, c: usize, seed: u64, scale: f64, output: &Path) -> Outcome {
    if h == 0 || w == 0 || c == 0 {
        return Err(Failure::usage("dimensions must be positive".into()));
    }
    let mut g = SplitMix64::new(seed);
    let y = Tensor::from_fn(&[h, w, c], |_| (g.next_normal() * scale) as f32);
    write_tensor(output, &y)?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Encode {
            model,
            input,
            output,
            report,
            yhat,
        } => encode(model, input, output, *report, yhat.as_deref()),
        Command::Decode { model, input, output } => decode(model, input, output),
        Command::Sample {
            model,
            input,
            groups,
            seed,
            output,
        } => sample(model, input, *groups, *seed, output),
        Command::Inspect { input } => inspect(input),
        Command::Bench {
            config,
            weights,
            measure,
            seed,
        } => bench(config, weights.as_deref(), *measure, *seed),
        Command::Selftest => run_selftest(),
        Command::Init { config, seed, output } => init(config, *seed, output),
        Command::Synth {
            height,
            width,
            channels,
            seed,
            scale,
            output,
        } => synth(*height, *width, *channels, *seed, *scale, output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}: {}", f.code, f.message);
            ExitCode::from(f.exit)
        }
    }
}
