use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bprel::dump::dump_nodes;
use bprel::inspect::{self, Kind};
use bprel::scenario::{builtin, BUILTIN_NAMES};
use bprel::{log as evlog, run, summarize, Metrics, Result, Scenario, SimError};
use bprel_core::EndpointId;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "bprel",
    version,
    about = "Compressed reporting and custody signalling for BPv7: simulator and codec tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in scenario.
    Run(RunArgs),
    /// Decode hex (or a file) as a protocol artifact and print its fields.
    Decode(DecodeArgs),
    /// Encode a structured-text description and print it as hex.
    Encode {
        #[arg(value_enum)]
        kind: KindArg,
        /// Description, e.g. `seq=9 id=0 types=delivery` for a creb.
        #[arg(required = true, num_args = 1.., allow_hyphen_values = true)]
        text: Vec<String>,
    },
    /// Compute metrics from an existing events.log.
    Report {
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Print a built-in scenario as a scenario file.
    Scenario {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(BUILTIN_NAMES))]
        name: String,
    },
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(group = "source")]
    scenario: Option<PathBuf>,
    #[arg(long, group = "source", value_parser = clap::builder::PossibleValuesParser::new(BUILTIN_NAMES))]
    builtin: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory for events.log, metrics.txt and nodes.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("input").required(true))]
struct DecodeArgs {
    #[arg(value_enum)]
    kind: KindArg,
    #[arg(group = "input")]
    hex: Option<String>,
    /// Read the artifact from a file holding hex text or raw bytes.
    #[arg(long, group = "input")]
    file: Option<PathBuf>,
    /// Administrative endpoint used to fill omitted block sources.
    #[arg(long)]
    receiver: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Eid,
    Bundle,
    Creb,
    Cteb,
    Crs,
    Ccs,
}

impl From<KindArg> for Kind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Eid => Kind::Eid,
            KindArg::Bundle => Kind::Bundle,
            KindArg::Creb => Kind::Creb,
            KindArg::Cteb => Kind::Cteb,
            KindArg::Crs => Kind::Crs,
            KindArg::Ccs => Kind::Ccs,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Kv,
}

fn render(m: &Metrics, format: Format) -> String {
    match format {
        Format::Text => m.to_text(),
        Format::Kv => m.to_kv(),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| SimError::io(path, e))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let scenario = match (&args.scenario, &args.builtin) {
        (Some(path), _) => Scenario::load(path)?,
        (None, Some(name)) => builtin(name).expect("value parser limits names"),
        (None, None) => unreachable!("clap requires a scenario source"),
    };
    let result = run(&scenario, args.seed)?;
    let metrics = summarize(&result.log);
    fs::create_dir_all(&args.out).map_err(|e| SimError::io(&args.out, e))?;
    write(&args.out.join("events.log"), &evlog::render(&result.log))?;
    let text = render(&metrics, args.format);
    write(&args.out.join("metrics.txt"), &text)?;
    let nodes = dump_nodes(result.nodes.iter().map(|(n, node)| (n.as_str(), node)));
    write(&args.out.join("nodes.txt"), &nodes)?;
    print!("{text}");
    Ok(())
}

fn read_artifact(args: &DecodeArgs) -> Result<Vec<u8>> {
    let parse_hex = |s: &str| {
        let clean: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        hex::decode(clean)
    };
    match (&args.hex, &args.file) {
        (Some(h), _) => parse_hex(h).map_err(|e| SimError::Input(format!("hex: {e}"))),
        (None, Some(path)) => {
            let raw = fs::read(path).map_err(|e| SimError::io(path, e))?;
            Ok(std::str::from_utf8(&raw)
                .ok()
                .and_then(|s| parse_hex(s).ok())
                .unwrap_or(raw))
        }
        (None, None) => unreachable!("clap requires an input"),
    }
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let bytes = read_artifact(&args)?;
    let receiver = args
        .receiver
        .as_deref()
        .map(str::parse::<EndpointId>)
        .transpose()?;
    print!("{}", inspect::decode(args.kind.into(), &bytes, receiver)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BP7_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Encode { kind, text } => {
            inspect::encode(kind.into(), &text.join(" ")).map(|b| println!("{}", hex::encode(b)))
        }
        Command::Report { log, format } => fs::read_to_string(&log)
            .map_err(|e| SimError::io(&log, e))
            .and_then(|t| evlog::parse(&t))
            .map(|records| print!("{}", render(&summarize(&records), format))),
        Command::Scenario { name } => {
            print!(
                "{}",
                builtin(&name).expect("value parser limits names").to_toml()
            );
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
