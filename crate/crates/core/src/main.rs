use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use scoutrn::data::{
    generate_corpus, load_corpus, load_model, save_corpus, save_model, Corpus, SyntheticCorpusSpec,
    Utterance,
};
use scoutrn::decoding::{
    decode_offline, decode_with_segmentation, scout_then_decode, DecodeConfig, DecodeOutcome,
};
use scoutrn::encoder::{RnConfig, RnModel};
use scoutrn::error::{Error, Result};
use scoutrn::lm::{BigramLm, LanguageModel, UniformLm};
use scoutrn::metrics::{
    boundary_edit_distance, frame_latency, segment_length_stats, word_error_rate, word_latency,
    BoundaryEval,
};
use scoutrn::scout::{labels_from_alignment, ScoutConfig, ScoutModel};
use scoutrn::training::{train_rn, train_scout, BoundaryMode, TrainConfig};
use scoutrn::transformer::{subsampled_len, Segmentation, StackConfig, SUBSAMPLE_RATE};

/// Streaming speech recognition with a boundary scout and a CTC/attention
/// recognizer, end to end on a synthetic corpus.
#[derive(Parser)]
#[command(name = "scoutrn", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus with exact word alignments.
    GenData(GenDataArgs),
    /// Train the boundary scout on alignment labels.
    TrainScout(TrainScoutArgs),
    /// Train the recognition network (offline pretrain + streaming fine-tune).
    TrainRn(TrainRnArgs),
    /// Decode a corpus split and report WER plus latency metrics.
    Decode(DecodeArgs),
    /// Dump per-frame scout boundary probabilities.
    ScoutProbs(ScoutProbsArgs),
    /// Edit-distance evaluation of predicted vs reference boundaries.
    EvalBoundaries(EvalBoundariesArgs),
    /// Word- and frame-level latency from boundary files.
    EvalLatency(EvalLatencyArgs),
    /// Word error rate between hypothesis and reference text files.
    EvalWer(EvalWerArgs),
    /// Decode at several scout thresholds and tabulate WER vs latency.
    SweepSigma(SweepSigmaArgs),
}

fn default_data_dir() -> PathBuf {
    std::env::var_os("SCOUTRN_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory (defaults to $SCOUTRN_DATA_DIR or ./data).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    num_train: usize,
    #[arg(long, default_value_t = 50)]
    num_test: usize,
    #[arg(long, default_value_t = 12)]
    vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    feat_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    /// Template length range in 10 ms frames.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [24, 40])]
    template_frames: Vec<usize>,
    /// Silence length range between words.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [0, 8])]
    silence_frames: Vec<usize>,
    /// Words per utterance.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [3, 6])]
    utterance_words: Vec<usize>,
}

#[derive(Args)]
struct ModelDims {
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    ff_width: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
}

#[derive(Args)]
struct TrainScoutArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "scout.tc")]
    out: PathBuf,
    /// Training history as line-delimited JSON.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[command(flatten)]
    dims: ModelDims,
    #[arg(long, default_value_t = 1.0)]
    pos_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BoundaryModeArg {
    Golden,
    Sampled,
    Thresholded,
}

#[derive(Args)]
struct TrainRnArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "rn.tc")]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    /// Resume from an existing recognition-network checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Scout checkpoint (needed for sampled/thresholded boundaries).
    #[arg(long)]
    scout: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BoundaryModeArg::Golden)]
    boundaries: BoundaryModeArg,
    /// Threshold for --boundaries thresholded.
    #[arg(long, default_value_t = 0.5)]
    boundary_sigma: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    pretrain_epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    gamma: f64,
    #[arg(long, default_value_t = 5)]
    checkpoint_average: usize,
    #[arg(long, default_value_t = 4)]
    encoder_layers: usize,
    #[arg(long, default_value_t = 2)]
    decoder_layers: usize,
    #[command(flatten)]
    dims: ModelDims,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecodeMode {
    Streaming,
    Offline,
    GoldenBoundaries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LmKind {
    Uniform,
    Bigram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Args)]
struct DecodeFlags {
    /// Beam width K.
    #[arg(short = 'K', long, default_value_t = 10)]
    beam: usize,
    /// Scout boundary threshold.
    #[arg(long, default_value_t = 0.9)]
    sigma: f64,
    /// CTC pruning threshold.
    #[arg(long, default_value_t = 0.0005)]
    sigma0: f64,
    /// CTC weight in the joint score.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Language-model weight.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Length bonus.
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    /// Maximum segment length in downsampled frames before a forced boundary.
    #[arg(long, default_value_t = 50)]
    max_segment: usize,
    #[arg(long, value_enum, default_value_t = LmKind::Bigram)]
    lm: LmKind,
}

impl DecodeFlags {
    fn config(&self) -> DecodeConfig {
        DecodeConfig {
            beam: self.beam,
            sigma: self.sigma,
            sigma0: self.sigma0,
            lambda: self.lambda,
            lm_weight: self.alpha,
            length_bonus: self.beta,
            max_segment: self.max_segment,
        }
    }

    fn echo(&self) -> String {
        format!(
            "config: K={} sigma={} sigma0={} lambda={} alpha={} beta={} max_segment={} lm={:?}",
            self.beam,
            self.sigma,
            self.sigma0,
            self.lambda,
            self.alpha,
            self.beta,
            self.max_segment,
            self.lm
        )
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "rn.tc")]
    rn: PathBuf,
    #[arg(long)]
    scout: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DecodeMode::Streaming)]
    mode: DecodeMode,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Report JSON path.
    #[arg(long, default_value = "decode_report.json")]
    out: PathBuf,
    #[command(flatten)]
    flags: DecodeFlags,
}

#[derive(Args)]
struct ScoutProbsArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "scout.tc")]
    scout: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    #[arg(long, default_value = "scout_probs.json")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalBoundariesArgs {
    /// JSON file: [7, 12, ...] or {"boundaries": [...]}.
    #[arg(long)]
    predicted: PathBuf,
    #[arg(long)]
    reference: PathBuf,
}

#[derive(Args)]
struct EvalLatencyArgs {
    #[arg(long)]
    predicted: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Report JSON path (optional).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalWerArgs {
    /// Hypothesis text, one utterance per line.
    #[arg(long)]
    hyp: PathBuf,
    /// Reference text, one utterance per line.
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Args)]
struct SweepSigmaArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "rn.tc")]
    rn: PathBuf,
    #[arg(long, default_value = "scout.tc")]
    scout: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.7, 0.9])]
    sigmas: Vec<f64>,
    #[arg(long, default_value = "sweep_sigma.json")]
    out: PathBuf,
    #[command(flatten)]
    flags: DecodeFlags,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap treats --help/--version as non-error output.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData(args) => cmd_gen_data(args),
        Cmd::TrainScout(args) => cmd_train_scout(args),
        Cmd::TrainRn(args) => cmd_train_rn(args),
        Cmd::Decode(args) => cmd_decode(args),
        Cmd::ScoutProbs(args) => cmd_scout_probs(args),
        Cmd::EvalBoundaries(args) => cmd_eval_boundaries(args),
        Cmd::EvalLatency(args) => cmd_eval_latency(args),
        Cmd::EvalWer(args) => cmd_eval_wer(args),
        Cmd::SweepSigma(args) => cmd_sweep_sigma(args),
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let spec = SyntheticCorpusSpec {
        vocab_size: args.vocab_size,
        template_frames: (args.template_frames[0], args.template_frames[1]),
        feat_dim: args.feat_dim,
        noise_std: args.noise_std,
        silence_frames: (args.silence_frames[0], args.silence_frames[1]),
        utterance_words: (args.utterance_words[0], args.utterance_words[1]),
        num_train: args.num_train,
        num_test: args.num_test,
        seed: args.seed,
    };
    let dir = args.out.unwrap_or_else(default_data_dir);
    let corpus = generate_corpus(&spec)?;
    save_corpus(&dir, &corpus)?;
    println!(
        "wrote {} train / {} test utterances (vocab {}) to {}",
        corpus.train.len(),
        corpus.test.len(),
        corpus.vocab.len(),
        dir.display()
    );
    Ok(())
}

fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for r in records {
        f.write_all(&serde_json::to_vec(r)?)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

fn write_json_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&serde_json::to_vec_pretty(value)?)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn load_scout_model(path: &Path) -> Result<ScoutModel> {
    let (params, config) = load_model(path, "scout")?;
    let cfg: ScoutConfig = serde_json::from_value(config)?;
    Ok(ScoutModel { cfg, params })
}

fn load_rn_model(path: &Path) -> Result<RnModel> {
    let (params, config) = load_model(path, "rn")?;
    let cfg: RnConfig = serde_json::from_value(config)?;
    Ok(RnModel { cfg, params })
}

fn cmd_train_scout(args: TrainScoutArgs) -> Result<()> {
    let data = args.data.unwrap_or_else(default_data_dir);
    let corpus = load_corpus(&data)?;
    let cfg = ScoutConfig {
        feat_dim: corpus.spec.feat_dim,
        stack: StackConfig {
            layers: args.layers,
            d: args.dims.width,
            d_ff: args.dims.ff_width,
            heads: args.dims.heads,
        },
    };
    let mut model = ScoutModel::init(cfg.clone(), args.seed)?;
    let config = TrainConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        seed: args.seed,
        pos_weight: args.pos_weight,
        ..TrainConfig::default()
    };
    let history = train_scout(&mut model, &corpus.train, &corpus.test, &config)?;
    for h in &history {
        eprintln!(
            "epoch {:>3}: loss {:.5}  heldout P {:.3} R {:.3} F1 {:.3}",
            h.epoch, h.loss, h.precision, h.recall, h.f1
        );
    }
    save_model(&args.out, &model.params, "scout", serde_json::to_value(&cfg)?)?;
    if let Some(path) = args.history {
        write_jsonl(&path, &history)?;
    }
    let last = history.last().ok_or_else(|| Error::invalid("no epochs trained"))?;
    println!(
        "scout saved to {} (final heldout F1 {:.3})",
        args.out.display(),
        last.f1
    );
    Ok(())
}

fn cmd_train_rn(args: TrainRnArgs) -> Result<()> {
    let data = args.data.unwrap_or_else(default_data_dir);
    let corpus = load_corpus(&data)?;
    let mut model = match &args.init {
        Some(path) => load_rn_model(path)?,
        None => RnModel::init(
            RnConfig {
                feat_dim: corpus.spec.feat_dim,
                vocab: corpus.vocab.len(),
                encoder: StackConfig {
                    layers: args.encoder_layers,
                    d: args.dims.width,
                    d_ff: args.dims.ff_width,
                    heads: args.dims.heads,
                },
                decoder: StackConfig {
                    layers: args.decoder_layers,
                    d: args.dims.width,
                    d_ff: args.dims.ff_width,
                    heads: args.dims.heads,
                },
            },
            args.seed,
        )?,
    };
    let scout = args.scout.as_deref().map(load_scout_model).transpose()?;
    let boundary_mode = match args.boundaries {
        BoundaryModeArg::Golden => BoundaryMode::Golden,
        BoundaryModeArg::Sampled => BoundaryMode::Sampled,
        BoundaryModeArg::Thresholded => BoundaryMode::Thresholded { sigma: args.boundary_sigma },
    };
    let config = TrainConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        pretrain_epochs: args.pretrain_epochs,
        seed: args.seed,
        gamma: args.gamma,
        boundary_mode,
        checkpoint_average: args.checkpoint_average,
        pos_weight: 1.0,
    };
    let history = train_rn(&mut model, &corpus.train, scout.as_ref(), &config)?;
    for h in &history {
        eprintln!("{} epoch {:>3}: loss {:.5}", h.phase, h.epoch, h.loss);
    }
    save_model(&args.out, &model.params, "rn", serde_json::to_value(&model.cfg)?)?;
    if let Some(path) = args.history {
        write_jsonl(&path, &history)?;
    }
    println!("recognition network saved to {}", args.out.display());
    Ok(())
}

fn golden_boundaries(u: &Utterance) -> Result<Vec<usize>> {
    let t_prime = subsampled_len(u.features.rows());
    let labels = labels_from_alignment(&u.alignment, SUBSAMPLE_RATE, t_prime)?;
    Ok(labels
        .values()
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i + 1))
        .collect())
}

#[derive(serde::Serialize)]
struct UtteranceReport {
    id: String,
    reference: Vec<String>,
    hypothesis: Vec<String>,
    segmentation: Vec<usize>,
    golden_boundaries: Vec<usize>,
    joint_score: f64,
    empty_beam_events: usize,
}

#[derive(serde::Serialize)]
struct DecodeSummary {
    utterances: usize,
    wer: f64,
    substitutions: usize,
    deletions: usize,
    insertions: usize,
    reference_words: usize,
    boundary_sub_rate: f64,
    boundary_del_rate: f64,
    boundary_ins_rate: f64,
    mean_frame_latency_ms: f64,
    mean_word_latency_ms: f64,
    mean_segment_ms: f64,
    median_segment_ms: f64,
    segment_histogram_edges_ms: Vec<f64>,
    segment_histogram_counts: Vec<usize>,
}

struct SplitDecode {
    reports: Vec<UtteranceReport>,
    summary: DecodeSummary,
    /// Per-utterance encode+decode wall time, informational only.
    timings: Vec<f64>,
}

fn build_lm(kind: LmKind, corpus: &Corpus) -> Result<Box<dyn LanguageModel>> {
    Ok(match kind {
        LmKind::Uniform => Box::new(UniformLm),
        LmKind::Bigram => {
            let sequences: Vec<Vec<usize>> = corpus.train.iter().map(|u| u.tokens.clone()).collect();
            Box::new(BigramLm::train(&sequences, corpus.vocab.len())?)
        }
    })
}

fn decode_split(
    corpus: &Corpus,
    split: Split,
    mode: DecodeMode,
    rn: &RnModel,
    scout: Option<&ScoutModel>,
    lm: &dyn LanguageModel,
    config: &DecodeConfig,
) -> Result<SplitDecode> {
    let utterances = match split {
        Split::Train => &corpus.train,
        Split::Test => &corpus.test,
    };
    let mut reports = Vec::with_capacity(utterances.len());
    let mut timings = Vec::with_capacity(utterances.len());
    let mut edits = (0usize, 0usize, 0usize);
    let mut ref_words = 0usize;
    let mut bed = (0usize, 0usize, 0usize, 0usize);
    let mut frame_ms = Vec::new();
    let mut word_ms = Vec::new();
    let mut segmentations = Vec::new();

    for u in utterances {
        let outcome: DecodeOutcome = match mode {
            DecodeMode::Streaming => {
                let scout = scout.ok_or_else(|| {
                    Error::invalid("streaming decode needs --scout with a trained model")
                })?;
                scout_then_decode(&u.features, scout, rn, lm, config)?
            }
            DecodeMode::Offline => decode_offline(&u.features, rn, lm, config)?,
            DecodeMode::GoldenBoundaries => {
                let t_prime = subsampled_len(u.features.rows());
                let golden = golden_boundaries(u)?;
                let seg = if golden.is_empty() {
                    Segmentation::single(t_prime)?
                } else {
                    Segmentation::new(golden)?.with_final(t_prime)?
                };
                decode_with_segmentation(&u.features, rn, lm, &seg, config)?
            }
        };
        let hypothesis = corpus.words_of(&outcome.tokens);
        let wer = word_error_rate(&hypothesis, &u.words);
        edits.0 += wer.substitutions;
        edits.1 += wer.deletions;
        edits.2 += wer.insertions;
        ref_words += wer.reference_count;

        let golden = golden_boundaries(u)?;
        let eval = boundary_edit_distance(&outcome.segmentation, &golden)?;
        bed.0 += eval.substitutions;
        bed.1 += eval.deletions;
        bed.2 += eval.insertions;
        bed.3 += eval.reference_count;
        if !golden.is_empty() {
            let report = word_latency(&outcome.segmentation, &golden, &eval)?;
            word_ms.extend(report.per_word_ms);
        }
        let seg = Segmentation::new(outcome.segmentation.clone())?;
        frame_ms.extend(frame_latency(&seg).per_frame_ms);
        segmentations.push(seg);
        timings.push(outcome.segments.iter().map(|s| s.wall_seconds).sum::<f64>());

        reports.push(UtteranceReport {
            id: u.id.clone(),
            reference: u.words.clone(),
            hypothesis,
            segmentation: outcome.segmentation.clone(),
            golden_boundaries: golden,
            joint_score: outcome.joint_score,
            empty_beam_events: outcome.empty_beam_events,
        });
    }

    let seg_stats = segment_length_stats(&segmentations)?;
    let total_edits = edits.0 + edits.1 + edits.2;
    let summary = DecodeSummary {
        utterances: reports.len(),
        wer: if ref_words == 0 { 0.0 } else { total_edits as f64 / ref_words as f64 },
        substitutions: edits.0,
        deletions: edits.1,
        insertions: edits.2,
        reference_words: ref_words,
        boundary_sub_rate: bed.0 as f64 / bed.3.max(1) as f64,
        boundary_del_rate: bed.1 as f64 / bed.3.max(1) as f64,
        boundary_ins_rate: bed.2 as f64 / bed.3.max(1) as f64,
        mean_frame_latency_ms: frame_ms.iter().sum::<f64>() / frame_ms.len().max(1) as f64,
        mean_word_latency_ms: word_ms.iter().sum::<f64>() / word_ms.len().max(1) as f64,
        mean_segment_ms: seg_stats.mean_ms,
        median_segment_ms: seg_stats.median_ms,
        segment_histogram_edges_ms: seg_stats.histogram_edges_ms,
        segment_histogram_counts: seg_stats.histogram_counts,
    };
    Ok(SplitDecode { reports, summary, timings })
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    println!("{}", args.flags.echo());
    let data = args.data.unwrap_or_else(default_data_dir);
    let corpus = load_corpus(&data)?;
    let rn = load_rn_model(&args.rn)?;
    let scout = args.scout.as_deref().map(load_scout_model).transpose()?;
    let lm = build_lm(args.flags.lm, &corpus)?;
    let config = args.flags.config();
    config.validate()?;
    let result = decode_split(&corpus, args.split, args.mode, &rn, scout.as_ref(), lm.as_ref(), &config)?;

    #[derive(serde::Serialize)]
    struct Report<'a> {
        mode: String,
        config: &'a DecodeConfig,
        summary: &'a DecodeSummary,
        utterances: &'a [UtteranceReport],
    }
    write_json_pretty(
        &args.out,
        &Report {
            mode: format!("{:?}", args.mode),
            config: &config,
            summary: &result.summary,
            utterances: &result.reports,
        },
    )?;

    // Side files so eval-wer can rescore the same decode.
    let hyp_path = args.out.with_extension("hyp.txt");
    let ref_path = args.out.with_extension("ref.txt");
    let mut hyp = fs::File::create(&hyp_path)?;
    let mut rf = fs::File::create(&ref_path)?;
    for r in &result.reports {
        writeln!(hyp, "{}", r.hypothesis.join(" "))?;
        writeln!(rf, "{}", r.reference.join(" "))?;
    }

    // Informational timing log (wall clock, excluded from report artifacts).
    let mut wall = 0.0;
    let mut segments = 0usize;
    for (t, r) in result.timings.iter().zip(&result.reports) {
        eprintln!(
            "timing: {} encoded+decoded in {:.1} ms ({} segments)",
            r.id,
            t * 1e3,
            r.segmentation.len()
        );
        wall += t;
        segments += r.segmentation.len();
    }
    eprintln!("timing: total {wall:.2} s over {segments} segments (informational only)");

    let s = &result.summary;
    println!(
        "decoded {} utterances: WER {:.2}% (sub {} del {} ins {} / {} words)",
        s.utterances,
        100.0 * s.wer,
        s.substitutions,
        s.deletions,
        s.insertions,
        s.reference_words
    );
    println!(
        "latency: frame mean {:.1} ms, word mean {:.1} ms; segments mean {:.0} ms median {:.0} ms",
        s.mean_frame_latency_ms, s.mean_word_latency_ms, s.mean_segment_ms, s.median_segment_ms
    );
    println!("report written to {}", args.out.display());
    Ok(())
}

fn cmd_scout_probs(args: ScoutProbsArgs) -> Result<()> {
    let data = args.data.unwrap_or_else(default_data_dir);
    let corpus = load_corpus(&data)?;
    let model = load_scout_model(&args.scout)?;
    let utterances = match args.split {
        Split::Train => &corpus.train,
        Split::Test => &corpus.test,
    };
    #[derive(serde::Serialize)]
    struct Probs {
        id: String,
        probs: Vec<f64>,
        golden_boundaries: Vec<usize>,
    }
    let mut out = Vec::with_capacity(utterances.len());
    for u in utterances {
        let probs = model.forward(&u.features)?;
        out.push(Probs {
            id: u.id.clone(),
            probs: probs.values().to_vec(),
            golden_boundaries: golden_boundaries(u)?,
        });
    }
    write_json_pretty(&args.out, &out)?;
    println!("wrote scout probabilities for {} utterances to {}", out.len(), args.out.display());
    Ok(())
}

fn read_boundary_file(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    let arr = value
        .as_array()
        .or_else(|| value.get("boundaries").and_then(|b| b.as_array()))
        .ok_or_else(|| Error::data(format!("{}: expected a JSON array of positions", path.display())))?;
    arr.iter()
        .map(|v| {
            v.as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| Error::data(format!("{}: non-integer boundary", path.display())))
        })
        .collect()
}

fn cmd_eval_boundaries(args: EvalBoundariesArgs) -> Result<()> {
    let predicted = read_boundary_file(&args.predicted)?;
    let reference = read_boundary_file(&args.reference)?;
    let eval = boundary_edit_distance(&predicted, &reference)?;
    println!("sub={} del={} ins={}", eval.substitutions, eval.deletions, eval.insertions);
    println!(
        "rates: sub {:.3} del {:.3} ins {:.3} (over {} reference boundaries)",
        eval.sub_rate, eval.del_rate, eval.ins_rate, eval.reference_count
    );
    Ok(())
}

fn cmd_eval_latency(args: EvalLatencyArgs) -> Result<()> {
    let predicted = read_boundary_file(&args.predicted)?;
    let reference = read_boundary_file(&args.reference)?;
    let eval: BoundaryEval = boundary_edit_distance(&predicted, &reference)?;
    let words = word_latency(&predicted, &reference, &eval)?;
    let frames = if predicted.is_empty() {
        None
    } else {
        Some(frame_latency(&Segmentation::new(predicted.clone())?))
    };
    println!("word latency (ms):");
    for entry in &words.entries {
        let r = entry.reference.map_or("--".to_string(), |v| v.to_string());
        let p = entry.predicted.map_or("--".to_string(), |v| v.to_string());
        let l = entry.latency_ms.map_or("--".to_string(), |v| format!("{v:.0}"));
        println!("  ref {r:>4}  pred {p:>4}  latency {l:>5}");
    }
    println!("mean word latency: {:.1} ms", words.mean_ms);
    if let Some(f) = &frames {
        println!("mean frame latency: {:.1} ms over {} frames", f.mean_ms, f.per_frame_ms.len());
    }
    if let Some(out) = args.out {
        #[derive(serde::Serialize)]
        struct Report {
            word: scoutrn::metrics::WordLatencyReport,
            frame: Option<scoutrn::metrics::FrameLatencyReport>,
        }
        write_json_pretty(&out, &Report { word: words, frame: frames })?;
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

fn cmd_eval_wer(args: EvalWerArgs) -> Result<()> {
    let hyp = read_lines(&args.hyp)?;
    let reference = read_lines(&args.reference)?;
    if hyp.len() != reference.len() {
        return Err(Error::data(format!(
            "line count mismatch: {} hypothesis vs {} reference",
            hyp.len(),
            reference.len()
        )));
    }
    let (mut sub, mut del, mut ins, mut total) = (0usize, 0usize, 0usize, 0usize);
    for (h, r) in hyp.iter().zip(&reference) {
        let report = word_error_rate(h, r);
        sub += report.substitutions;
        del += report.deletions;
        ins += report.insertions;
        total += report.reference_count;
    }
    let wer = if total == 0 { 0.0 } else { (sub + del + ins) as f64 / total as f64 };
    println!(
        "WER {:.2}% (sub {sub} del {del} ins {ins} / {total} words, {} utterances)",
        100.0 * wer,
        hyp.len()
    );
    Ok(())
}

fn cmd_sweep_sigma(args: SweepSigmaArgs) -> Result<()> {
    let data = args.data.unwrap_or_else(default_data_dir);
    let corpus = load_corpus(&data)?;
    let rn = load_rn_model(&args.rn)?;
    let scout = load_scout_model(&args.scout)?;
    let lm = build_lm(args.flags.lm, &corpus)?;

    #[derive(serde::Serialize)]
    struct Row {
        sigma: f64,
        wer: f64,
        boundary_sub_rate: f64,
        boundary_del_rate: f64,
        boundary_ins_rate: f64,
        mean_frame_latency_ms: f64,
        mean_word_latency_ms: f64,
    }
    let mut rows = Vec::with_capacity(args.sigmas.len());
    println!("{}", args.flags.echo());
    println!(
        "{:>6} | {:>7} | {:>5} {:>5} {:>5} | {:>10} {:>10}",
        "sigma", "WER%", "sub", "del", "ins", "frame(ms)", "word(ms)"
    );
    for &sigma in &args.sigmas {
        let mut config = args.flags.config();
        config.sigma = sigma;
        config.validate()?;
        let result = decode_split(
            &corpus,
            args.split,
            DecodeMode::Streaming,
            &rn,
            Some(&scout),
            lm.as_ref(),
            &config,
        )?;
        let s = &result.summary;
        println!(
            "{:>6.2} | {:>7.2} | {:>5.3} {:>5.3} {:>5.3} | {:>10.1} {:>10.1}",
            sigma,
            100.0 * s.wer,
            s.boundary_sub_rate,
            s.boundary_del_rate,
            s.boundary_ins_rate,
            s.mean_frame_latency_ms,
            s.mean_word_latency_ms
        );
        rows.push(Row {
            sigma,
            wer: s.wer,
            boundary_sub_rate: s.boundary_sub_rate,
            boundary_del_rate: s.boundary_del_rate,
            boundary_ins_rate: s.boundary_ins_rate,
            mean_frame_latency_ms: s.mean_frame_latency_ms,
            mean_word_latency_ms: s.mean_word_latency_ms,
        });
    }
    write_json_pretty(&args.out, &rows)?;
    println!("sweep written to {}", args.out.display());
    Ok(())
}
