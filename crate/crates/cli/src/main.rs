use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use dtw_align::bench::{self, BenchComparison, BenchOptions, BenchResult, Method, Workload};
use dtw_align::eval::{self, LabeledAlignment, ReferenceAlignment};
use dtw_align::io::{self, AlignmentRecord, EmbeddingRecord, ValidFlags};
use dtw_align::mixup::{self, MixupConfig, MixupMode};
use dtw_align::ot::{self, SinkhornConfig};
use dtw_align::EmbeddingSequence;

#[derive(Parser)]
#[command(name = "dtw-align", version, about = "Monotonic frame-to-token alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align every frame sequence to the token sequence with the same id.
    Align(AlignArgs),
    /// Score predicted alignments against references.
    Eval(EvalArgs),
    /// Time DTW and the Sinkhorn baseline on the same data.
    Bench(BenchArgs),
    /// Build mixed speech/text sequences along alignments.
    Mixup(MixupArgs),
    /// Write a synthetic dataset with known alignments.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlignMethod {
    Dtw,
    Ot,
}

#[derive(clap::Args)]
struct SinkhornArgs {
    /// Entropic regularization.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Stop once the L1 marginal violation falls below this.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

impl SinkhornArgs {
    fn config(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

#[derive(clap::Args)]
struct AlignArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long, value_enum, default_value = "dtw")]
    method: AlignMethod,
    #[command(flatten)]
    sinkhorn: SinkhornArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMethod {
    Dtw,
    Ot,
    Both,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// Frame embeddings to benchmark on; requires --tokens.
    #[arg(long, conflicts_with = "synthetic", requires = "tokens")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    tokens: Option<PathBuf>,
    /// Use the generated standard workload (the default without --data).
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "both")]
    method: BenchMethod,
    #[command(flatten)]
    sinkhorn: SinkhornArgs,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Spread pairs over all cores instead of timing a single thread.
    #[arg(long)]
    parallel: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMixupMode {
    Discrete,
    Interpolation,
}

impl From<CliMixupMode> for MixupMode {
    fn from(m: CliMixupMode) -> Self {
        match m {
            CliMixupMode::Discrete => MixupMode::Discrete,
            CliMixupMode::Interpolation => MixupMode::Interpolation,
        }
    }
}

#[derive(clap::Args)]
struct MixupArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long)]
    alignment: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    p_star: f64,
    #[arg(long, value_enum, default_value = "discrete")]
    mode: CliMixupMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of utterances; utterance i is generated from seed + i.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Draw tokens around a shared centre so that they are hard to tell apart.
    /// The value is the spread; pairwise token cosine is 1 - spread^2.
    #[arg(long)]
    clustered: Option<f64>,
    #[arg(long)]
    out_frames: PathBuf,
    #[arg(long)]
    out_tokens: PathBuf,
    #[arg(long)]
    out_ref: PathBuf,
}

/// Successful runs either handled every item or recorded some per-item failures.
enum Outcome {
    Complete,
    Partial,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Align(args) => cmd_align(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Mixup(args) => cmd_mixup(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    io::read_embeddings_file(path).with_context(|| format!("reading {}", path.display()))
}

fn read_alignments(path: &Path) -> Result<Vec<AlignmentRecord>> {
    io::read_alignments_file(path).with_context(|| format!("reading {}", path.display()))
}

fn index_by_id<'a, T>(items: &'a [T], id: impl Fn(&T) -> &str, path: &Path) -> Result<HashMap<&'a str, &'a T>> {
    let mut map = HashMap::with_capacity(items.len());
    for item in items {
        if map.insert(id(item), item).is_some() {
            bail!("duplicate id {:?} in {}", id(item), path.display());
        }
    }
    Ok(map)
}

/// Pairs every frame record with the token record of the same id, in frame order.
fn pair_by_id<'a>(
    frames: &'a [EmbeddingRecord],
    tokens: &'a [EmbeddingRecord],
    frames_path: &Path,
    tokens_path: &Path,
) -> Result<Vec<(&'a EmbeddingRecord, &'a EmbeddingRecord)>> {
    let frame_ids = index_by_id(frames, |r| &r.id, frames_path)?;
    let by_id = index_by_id(tokens, |r| &r.id, tokens_path)?;
    let pairs = frames
        .iter()
        .map(|f| match by_id.get(f.id.as_str()) {
            Some(e) => Ok((f, *e)),
            None => bail!("id {:?} has no entry in {}", f.id, tokens_path.display()),
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(extra) = tokens.iter().find(|e| !frame_ids.contains_key(e.id.as_str())) {
        bail!("id {:?} has no entry in {}", extra.id, frames_path.display());
    }
    Ok(pairs)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn align_one(
    id: &str,
    frames: &EmbeddingSequence,
    tokens: &EmbeddingSequence,
    method: AlignMethod,
    sinkhorn: &SinkhornConfig,
) -> AlignmentRecord {
    let (name, result) = match method {
        AlignMethod::Dtw => (
            "dtw",
            dtw_align::align(frames, tokens).map(|p| {
                let score = p.score();
                (p.into_assignment(), score)
            }),
        ),
        AlignMethod::Ot => (
            "ot",
            ot::ot_align(frames, tokens, sinkhorn).map(|o| (o.alignment.assignment, o.score)),
        ),
    };
    let (alignment, score, valid, error) = match result {
        Ok((alignment, score)) => {
            let valid = ValidFlags::from(&eval::validate_path(&alignment, tokens.len()));
            (alignment, Some(score), valid, None)
        }
        Err(e) => (
            Vec::new(),
            None,
            ValidFlags {
                monotonic: false,
                surjective: false,
            },
            Some(e.to_string()),
        ),
    };
    AlignmentRecord {
        id: id.to_owned(),
        n_frames: frames.len(),
        n_tokens: tokens.len(),
        alignment,
        score,
        method: name.into(),
        valid,
        error,
        word_tokens: None,
    }
}

fn cmd_align(args: AlignArgs) -> Result<Outcome> {
    let frames = read_embeddings(&args.frames)?;
    let tokens = read_embeddings(&args.tokens)?;
    let pairs = pair_by_id(&frames, &tokens, &args.frames, &args.tokens)?;
    let sinkhorn = args.sinkhorn.config();

    let records: Vec<AlignmentRecord> = pairs
        .par_iter()
        .map(|(f, e)| align_one(&f.id, &f.sequence, &e.sequence, args.method, &sinkhorn))
        .collect();

    let mut out = create(&args.out)?;
    io::write_alignments(&mut out, &records)?;
    out.flush()?;

    let failed: Vec<_> = records.iter().filter(|r| r.error.is_some()).collect();
    for r in &failed {
        eprintln!("{}: {}", r.id, r.error.as_deref().unwrap_or_default());
    }
    let invalid = records
        .iter()
        .filter(|r| r.error.is_none() && !(r.valid.monotonic && r.valid.surjective))
        .count();
    eprintln!(
        "aligned {} of {} utterances ({} structurally invalid)",
        records.len() - failed.len(),
        records.len(),
        invalid
    );
    Ok(if failed.is_empty() {
        Outcome::Complete
    } else {
        Outcome::Partial
    })
}

fn cmd_eval(args: EvalArgs) -> Result<Outcome> {
    let predicted: Vec<LabeledAlignment> = read_alignments(&args.pred)?
        .into_iter()
        .map(|r| LabeledAlignment {
            id: r.id,
            assignment: r.alignment,
        })
        .collect();
    let reference: Vec<ReferenceAlignment> = read_alignments(&args.reference)?
        .into_iter()
        .map(|r| ReferenceAlignment {
            id: r.id,
            assignment: r.alignment,
            word_tokens: r.word_tokens,
        })
        .collect();
    let report = eval::accuracy(&predicted, &reference);

    let mut out = create(&args.out)?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;

    for s in &report.skipped {
        eprintln!("skipped {}: {}", s.id, s.reason);
    }
    for id in &report.unmatched_predictions {
        eprintln!("no reference for {id}");
    }
    println!("micro frame accuracy: {:.2}%", 100.0 * report.micro_frame_accuracy);
    println!(
        "macro utterance accuracy: {:.2}%",
        100.0 * report.macro_utterance_accuracy
    );
    Ok(if report.skipped.is_empty() {
        Outcome::Complete
    } else {
        Outcome::Partial
    })
}

fn cmd_bench(args: BenchArgs) -> Result<Outcome> {
    let dataset: Vec<bench::Pair> = match (&args.data, &args.tokens) {
        (Some(data), Some(tokens_path)) => {
            let frames = read_embeddings(data)?;
            let tokens = read_embeddings(tokens_path)?;
            pair_by_id(&frames, &tokens, data, tokens_path)?
                .into_iter()
                .map(|(f, e)| (f.sequence.clone(), e.sequence.clone()))
                .collect()
        }
        _ => {
            let std = Workload::STANDARD;
            Workload {
                n_frames: args.n.unwrap_or(std.n_frames),
                n_tokens: args.m.unwrap_or(std.n_tokens),
                dim: args.dim.unwrap_or(std.dim),
                pairs: args.pairs.unwrap_or(std.pairs),
                noise: args.noise.unwrap_or(std.noise),
                seed: args.seed.unwrap_or(std.seed),
            }
            .generate()
            .context("generating synthetic workload")?
        }
    };
    let options = BenchOptions {
        warmup: args.warmup,
        repeats: args.repeats,
        parallel: args.parallel,
    };
    let run = |method| bench::run_bench(&dataset, method, options).map(|r| r.result);
    let ot_method = Method::Ot(args.sinkhorn.config());

    match args.method {
        BenchMethod::Both => {
            let comparison = BenchComparison::new(run(Method::Dtw)?, run(ot_method)?);
            if args.json {
                println!("{}", serde_json::to_string_pretty(&comparison)?);
            } else {
                print!("{}", bench::format_table(&[&comparison.dtw, &comparison.ot]));
                println!("speedup (total): {:.2}x", comparison.speedup);
                println!("speedup (median pass): {:.2}x", comparison.median_speedup);
            }
        }
        single => {
            let method = if matches!(single, BenchMethod::Dtw) {
                Method::Dtw
            } else {
                ot_method
            };
            let result: BenchResult = run(method)?;
            if args.json {
                println!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                print!("{}", bench::format_table(&[&result]));
            }
        }
    }
    Ok(Outcome::Complete)
}

fn cmd_mixup(args: MixupArgs) -> Result<Outcome> {
    let config = MixupConfig::new(args.p_star, args.mode.into(), args.seed)?;
    let frames = read_embeddings(&args.frames)?;
    let tokens = read_embeddings(&args.tokens)?;
    let pairs = pair_by_id(&frames, &tokens, &args.frames, &args.tokens)?;
    let alignments = read_alignments(&args.alignment)?;
    let by_id = index_by_id(&alignments, |r| &r.id, &args.alignment)?;

    let results: Vec<Result<EmbeddingRecord>> = pairs
        .par_iter()
        .enumerate()
        .map(|(stream, (f, e))| {
            let record = by_id
                .get(f.id.as_str())
                .with_context(|| format!("id {:?} has no entry in {}", f.id, args.alignment.display()))?;
            if let Some(err) = &record.error {
                bail!("{}: alignment failed: {err}", f.id);
            }
            let mixed = mixup::mixup(&f.sequence, &e.sequence, &record.alignment, &config, stream as u64)
                .with_context(|| f.id.clone())?;
            Ok(EmbeddingRecord::new(f.id.clone(), mixed))
        })
        .collect();

    let mut written = Vec::with_capacity(results.len());
    let mut failed = 0;
    for r in results {
        match r {
            Ok(record) => written.push(record),
            Err(e) => {
                eprintln!("{e:#}");
                failed += 1;
            }
        }
    }
    let mut out = create(&args.out)?;
    io::write_embeddings(&mut out, &written)?;
    out.flush()?;
    Ok(if failed == 0 {
        Outcome::Complete
    } else {
        Outcome::Partial
    })
}

fn cmd_synth(args: SynthArgs) -> Result<Outcome> {
    let mut frames = Vec::with_capacity(args.count);
    let mut tokens = Vec::with_capacity(args.count);
    let mut refs = Vec::with_capacity(args.count);
    let width = args.count.saturating_sub(1).to_string().len().max(4);
    for i in 0..args.count {
        let seed = args.seed.wrapping_add(i as u64);
        let pair = match args.clustered {
            Some(spread) => eval::synth_clustered(args.n, args.m, args.dim, args.noise, spread, seed),
            None => eval::synth_planted(args.n, args.m, args.dim, args.noise, seed),
        }?;
        let id = format!("utt{i:0width$}");
        refs.push(AlignmentRecord {
            id: id.clone(),
            n_frames: args.n,
            n_tokens: args.m,
            valid: ValidFlags::from(&eval::validate_path(&pair.planted, args.m)),
            alignment: pair.planted,
            score: None,
            method: "planted".into(),
            error: None,
            word_tokens: None,
        });
        frames.push(EmbeddingRecord::new(id.clone(), pair.frames));
        tokens.push(EmbeddingRecord::new(id, pair.tokens));
    }
    io::write_embeddings_file(&args.out_frames, &frames)
        .with_context(|| format!("writing {}", args.out_frames.display()))?;
    io::write_embeddings_file(&args.out_tokens, &tokens)
        .with_context(|| format!("writing {}", args.out_tokens.display()))?;
    io::write_alignments_file(&args.out_ref, &refs).with_context(|| format!("writing {}", args.out_ref.display()))?;
    Ok(Outcome::Complete)
}
