use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use colorcap::config::{OutputFormat, RunConfig, SchemeKind, SweepMode};
use colorcap::config::{DEFAULT_COLOR_BITS, DEFAULT_HEAP_SIZE, DEFAULT_QUARANTINE_FRACTION, DEFAULT_QUARANTINE_MIN_BYTES, DEFAULT_THRESHOLD};
use colorcap::harness::report;
use colorcap::harness::{gen_corpus, parse_trace, run_corpus, run_ops, run_trace, summarize, GenSpec, Metrics, Trace};

#[derive(Parser)]
#[command(name = "colorcap", version, about = "Run allocation traces under temporal-safety schemes")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trace or generator under one scheme and print its metrics.
    Run {
        #[arg(long, default_value = "picasso")]
        scheme: SchemeKind,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        opts: Opts,
    },
    /// Feed the same trace to several schemes; one CSV row per scheme.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "picasso,cornucopia,cornucopia-rof,versioning,none")]
        schemes: Vec<SchemeKind>,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        opts: Opts,
    },
    /// Run the bad/good corpus; exit 0 iff picasso detects every bad case
    /// and faults on no good one.
    Corpus {
        #[arg(long, value_delimiter = ',', default_value = "picasso,cornucopia,cornucopia-rof,versioning,none")]
        schemes: Vec<SchemeKind>,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Input {
    /// Trace file, or `-` for stdin.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Generator, e.g. `churn:n=1000,live=10,seed=1`.
    #[arg(long)]
    gen: Option<GenSpec>,
}

#[derive(Args)]
struct Opts {
    #[arg(long, default_value_t = DEFAULT_COLOR_BITS)]
    color_bits: u32,
    /// Revoke when fewer than this fraction of colors remain.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Quarantine limit as a fraction of allocated bytes.
    #[arg(long, default_value_t = DEFAULT_QUARANTINE_FRACTION)]
    quarantine: f64,
    #[arg(long, default_value_t = DEFAULT_QUARANTINE_MIN_BYTES)]
    quarantine_min_bytes: u64,
    #[arg(long, default_value_t = DEFAULT_HEAP_SIZE)]
    heap_size: u64,
    #[arg(long)]
    no_pvt_buffer: bool,
    /// Versioning: let versions wrap instead of sweeping exhausted blocks.
    #[arg(long)]
    no_version_fallback: bool,
    /// `sync` or `windowed:N`.
    #[arg(long, default_value = "sync")]
    sweep: SweepMode,
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    format: Option<OutputFormat>,
    /// Also write the report into this directory.
    #[arg(long, env = "COLORCAP_OUT_DIR")]
    out_dir: Option<PathBuf>,
}

impl Opts {
    fn config(&self, scheme: SchemeKind, default_format: OutputFormat) -> RunConfig {
        RunConfig {
            scheme,
            color_bits: self.color_bits,
            threshold_fraction: self.threshold,
            quarantine_fraction: self.quarantine,
            quarantine_min_bytes: self.quarantine_min_bytes,
            heap_size: self.heap_size,
            pvt_buffer: !self.no_pvt_buffer,
            sweep: self.sweep,
            seed: self.seed.unwrap_or(0),
            version_fallback: !self.no_version_fallback,
            format: self.format.unwrap_or(default_format),
        }
    }
}

enum Source {
    Trace(Trace),
    Gen(GenSpec),
}

fn load(input: &Input, seed: Option<u64>) -> Result<Source, String> {
    if let Some(spec) = &input.gen {
        let spec = match seed {
            Some(s) => spec.clone().with_seed(s),
            None => spec.clone(),
        };
        return Ok(Source::Gen(spec));
    }
    let path = input.trace.as_ref().expect("clap enforces one input");
    let text = if path == Path::new("-") {
        std::io::read_to_string(std::io::stdin()).map_err(|e| format!("stdin: {e}"))?
    } else {
        fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?
    };
    parse_trace(&text).map(Source::Trace).map_err(|e| format!("{}: {e}", path.display()))
}

fn execute(src: &Source, cfg: &RunConfig) -> Result<Metrics, String> {
    match src {
        Source::Trace(t) => run_trace(t, cfg).map(|r| r.metrics),
        Source::Gen(g) => run_ops(g.ops(), cfg),
    }
    .map_err(|e| e.to_string())
}

fn render_metrics(rows: &[Metrics], format: OutputFormat) -> String {
    match format {
        OutputFormat::Json if rows.len() == 1 => {
            serde_json::to_string_pretty(&report::metrics_json(&rows[0])).unwrap() + "\n"
        }
        OutputFormat::Json => {
            let v: Vec<_> = rows.iter().map(report::metrics_json).collect();
            serde_json::to_string_pretty(&v).unwrap() + "\n"
        }
        OutputFormat::Csv => {
            let mut buf = Vec::new();
            report::write_metrics_csv(rows, &mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        }
        OutputFormat::Human => rows.iter().map(report::metrics_human).collect::<Vec<_>>().join("\n"),
    }
}

fn extension(format: OutputFormat) -> &'static str {
    match format {
        OutputFormat::Json => "json",
        OutputFormat::Csv => "csv",
        OutputFormat::Human => "txt",
    }
}

fn emit(text: &str, out_dir: Option<&Path>, name: &str) -> Result<(), String> {
    print!("{text}");
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

fn run(cmd: Command) -> Result<u8, String> {
    match cmd {
        Command::Run { scheme, input, opts } => {
            let cfg = opts.config(scheme, OutputFormat::Json);
            cfg.validate().map_err(|e| e.to_string())?;
            let src = load(&input, opts.seed)?;
            let m = execute(&src, &cfg)?;
            let name = format!("run.{}", extension(cfg.format));
            emit(&render_metrics(std::slice::from_ref(&m), cfg.format), opts.out_dir.as_deref(), &name)?;
            Ok(u8::from(m.expectation_mismatches > 0))
        }
        Command::Compare { schemes, input, opts } => {
            let src = load(&input, opts.seed)?;
            let mut sorted = schemes.clone();
            sorted.sort();
            sorted.dedup();
            let mut rows = Vec::new();
            let mut format = OutputFormat::Csv;
            for scheme in sorted {
                let cfg = opts.config(scheme, OutputFormat::Csv);
                cfg.validate().map_err(|e| e.to_string())?;
                format = cfg.format;
                rows.push(execute(&src, &cfg)?);
            }
            let name = format!("compare.{}", extension(format));
            emit(&render_metrics(&rows, format), opts.out_dir.as_deref(), &name)?;
            Ok(0)
        }
        Command::Corpus { schemes, opts } => {
            let base = opts.config(SchemeKind::Picasso, OutputFormat::Human);
            base.validate().map_err(|e| e.to_string())?;
            let mut schemes = schemes;
            schemes.sort();
            schemes.dedup();
            if !schemes.contains(&SchemeKind::Picasso) {
                schemes.insert(0, SchemeKind::Picasso);
            }
            let results = run_corpus(&gen_corpus(), &schemes, &base).map_err(|e| e.to_string())?;
            let summaries: Vec<_> = schemes.iter().map(|&s| summarize(&results, s)).collect();
            let text = match base.format {
                OutputFormat::Human => report::corpus_summary_human(&summaries),
                OutputFormat::Json => serde_json::to_string_pretty(&report::corpus_summary_json(&summaries)).unwrap() + "\n",
                OutputFormat::Csv => {
                    let mut buf = Vec::new();
                    report::write_corpus_csv(&results, &mut buf).unwrap();
                    String::from_utf8(buf).unwrap()
                }
            };
            emit(&text, opts.out_dir.as_deref(), &format!("corpus.{}", extension(base.format)))?;
            if let Some(dir) = opts.out_dir.as_deref() {
                let mut buf = Vec::new();
                report::write_corpus_csv(&results, &mut buf).unwrap();
                fs::write(dir.join("corpus_matrix.csv"), buf).map_err(|e| e.to_string())?;
            }
            let p = summaries.iter().find(|s| s.scheme == SchemeKind::Picasso).unwrap();
            Ok(u8::from(!(p.all_detected() && p.false_positives == 0)))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("colorcap: {msg}");
            ExitCode::from(2)
        }
    }
}
