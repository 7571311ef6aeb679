//! The `dstl` command line.
//!
//! Every subcommand starts from built-in defaults, then applies, in order,
//! the `--config` file, `--set key=value` assignments, dotted flags such as
//! `--plan.train_main.lr 1e-3`, and finally its own named flags. The
//! resolved configuration is echoed to stderr. Relative paths are resolved
//! against `--work-dir`.

use crate::corpus::{generate_corpus, load_manifest, write_manifest, CorpusSpec, SourceTag, Utterance, Vocab};
use crate::decode::{train_ngram, NGramLM, WerAccumulator};
use crate::distill::{extract_teacher_posteriors, generate_selflabels, read_posterior, segment_corpus, write_posterior, SegmentConfig};
use crate::nn::{average_checkpoints, Checkpoint, EncoderConfig, ModelBundle, ModelConfig, ModelKind};
use crate::trainer::experiments::{run_iterative_experiment, run_table_experiment, IterativeSetup, TableSetup};
use crate::trainer::{
    decode_utterance, run_three_phase_observed, supervised_examples, Config, DecodeConfig, Example,
    ExperimentReport, PhasePlan, TrainingSet, WerRow,
};
use crate::weaksup::{filter_metadata, group_videos, FilterStats};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dstl", version, about = "Self-labeling and weak-supervision ASR training on synthetic data")]
pub struct Cli {
    /// Root for all relative paths.
    #[arg(long, global = true, default_value = ".")]
    pub work_dir: PathBuf,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Configuration override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus manifest and a character LM.
    GenData(GenDataArgs),
    /// Three-phase training.
    Train(TrainArgs),
    /// Segment unlabeled audio and label it with a teacher.
    Label(LabelArgs),
    /// Filter metadata-bearing segments into weak-supervision pairs.
    FilterWs(FilterWsArgs),
    /// Decode a manifest to `{utt_id, hyp_text, score}` records.
    Decode(DecodeArgs),
    /// Score hypotheses against references.
    Score(ScoreArgs),
    /// Average the last checkpoints in a directory.
    AvgCkpt(AvgCkptArgs),
    /// Run a full experiment and write its reports.
    RunExperiment(RunExperimentArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub num_utts: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub metadata_noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// ctc, encdec or frame.
    #[arg(long)]
    pub kind: Option<String>,
    /// Supervised manifest.
    #[arg(long)]
    pub train: Option<String>,
    /// Self-labeled manifest (transcripts are teacher hypotheses).
    #[arg(long)]
    pub selflabel: Option<String>,
    /// Weak manifest (metadata is the target).
    #[arg(long)]
    pub weak: Option<String>,
    /// Manifest whose posteriors live in a sibling `posteriors/` directory.
    #[arg(long)]
    pub distill: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Final checkpoint path.
    #[arg(long)]
    pub out: Option<String>,
    /// Directory receiving every train-main checkpoint.
    #[arg(long)]
    pub ckpt_dir: Option<String>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub teacher: Option<String>,
    /// frame-topk or sequence-top1.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub max_seconds: Option<f64>,
    /// Unlabeled manifest.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub lm: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct FilterWsArgs {
    /// Segments carrying metadata and parent ids.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub baseline_hyps: Option<String>,
    #[arg(long)]
    pub min_chars: Option<usize>,
    #[arg(long)]
    pub max_chars: Option<usize>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub lm: Option<String>,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long = "ref")]
    pub reference: Option<String>,
    #[arg(long)]
    pub hyp: Option<String>,
    /// Set name in the output; defaults to the reference file stem.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct AvgCkptArgs {
    /// Directory of `.ckpt` files.
    pub dir: Option<String>,
    #[arg(long)]
    pub last: Option<usize>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunExperimentArgs {
    /// table or iterative.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenDataSettings {
    corpus: CorpusSpec,
    seed: u64,
    lm_order: usize,
    out_dir: String,
}

impl Default for GenDataSettings {
    fn default() -> Self {
        GenDataSettings {
            corpus: CorpusSpec::default(),
            seed: 0,
            lm_order: 5,
            out_dir: "data".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainSettings {
    kind: ModelKind,
    encoder: EncoderConfig,
    embed_dim: usize,
    dec_hidden: usize,
    letters: usize,
    plan: PhasePlan,
    seed: u64,
    train: String,
    selflabel: Option<String>,
    weak: Option<String>,
    distill: Option<String>,
    out: String,
    ckpt_dir: Option<String>,
    report_dir: String,
}

impl TrainSettings {
    fn defaults(kind: ModelKind) -> Self {
        TrainSettings {
            kind,
            encoder: EncoderConfig::default(),
            embed_dim: 16,
            dec_hidden: 32,
            letters: CorpusSpec::default().vocab_size,
            plan: PhasePlan::default_for(kind),
            seed: 0,
            train: "data/manifest.jsonl".into(),
            selflabel: None,
            weak: None,
            distill: None,
            out: "model.ckpt".into(),
            ckpt_dir: None,
            report_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelSettings {
    teacher: String,
    mode: String,
    top_k: usize,
    segment: SegmentConfig,
    /// Cut recordings at teacher-detected pauses before labeling.
    segment_input: bool,
    input: String,
    lm: Option<String>,
    decode: DecodeConfig,
    min_score: Option<f64>,
    out: String,
}

impl Default for LabelSettings {
    fn default() -> Self {
        LabelSettings {
            teacher: "model.ckpt".into(),
            mode: "sequence-top1".into(),
            top_k: 3,
            segment: SegmentConfig::default(),
            segment_input: true,
            input: "unlabeled/manifest.jsonl".into(),
            lm: None,
            decode: DecodeConfig::default(),
            min_score: None,
            out: "labels".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FilterWsSettings {
    input: String,
    baseline_hyps: String,
    min_chars: usize,
    max_chars: usize,
    letters: usize,
    out: String,
}

impl Default for FilterWsSettings {
    fn default() -> Self {
        FilterWsSettings {
            input: "labels/manifest.jsonl".into(),
            baseline_hyps: "labels/manifest.jsonl".into(),
            min_chars: 50,
            max_chars: 700,
            letters: CorpusSpec::default().vocab_size,
            out: "weak/manifest.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DecodeSettings {
    model: String,
    input: String,
    lm: Option<String>,
    decode: DecodeConfig,
    out: Option<String>,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings {
            model: "model.ckpt".into(),
            input: "data/manifest.jsonl".into(),
            lm: None,
            decode: DecodeConfig::default(),
            out: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ScoreSettings {
    reference: String,
    hyp: String,
    name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AvgCkptSettings {
    dir: String,
    last: usize,
    out: String,
}

impl Default for AvgCkptSettings {
    fn default() -> Self {
        AvgCkptSettings {
            dir: "checkpoints".into(),
            last: 20,
            out: "averaged.ckpt".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunExperimentSettings {
    name: String,
    seed: u64,
    out: String,
    table: TableSetup,
    iterative: IterativeSetup,
}

impl Default for RunExperimentSettings {
    fn default() -> Self {
        RunExperimentSettings {
            name: "table".into(),
            seed: 1,
            out: "reports".into(),
            table: TableSetup::default(),
            iterative: IterativeSetup::default(),
        }
    }
}

/// Failure of a CLI invocation, carrying its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(Error),
    Runtime(Error),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Config(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Config(e) | Failure::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

/// Pull `--dotted.key value` and `--dotted.key=value` out of `args`.
fn split_dotted(args: Vec<OsString>) -> (Vec<OsString>, Vec<String>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let dotted = a
            .to_str()
            .and_then(|s| s.strip_prefix("--"))
            .filter(|s| s.split('=').next().is_some_and(|k| k.contains('.')))
            .map(str::to_string);
        match dotted {
            Some(s) if s.contains('=') => overrides.push(s),
            Some(k) => match it.next().and_then(|v| v.into_string().ok()) {
                Some(v) => overrides.push(format!("{k}={v}")),
                None => overrides.push(k),
            },
            None => rest.push(a),
        }
    }
    (rest, overrides)
}

struct Ctx {
    work_dir: PathBuf,
    config: Config,
}

impl Ctx {
    fn path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.work_dir.join(p)
        }
    }

    fn flag<T: ToString>(&mut self, key: &str, v: &Option<T>) {
        if let Some(v) = v {
            self.config.set(key, v.to_string());
        }
    }

    fn resolve<T: Serialize + DeserializeOwned>(&self, base: &T) -> std::result::Result<T, Failure> {
        let out = self.config.overlay(base).map_err(Failure::Config)?;
        let echo = Config::from_serialize(&out).map_err(Failure::Config)?.echo();
        let mut err = std::io::stderr().lock();
        for line in echo.lines() {
            let _ = writeln!(err, "# {line}");
        }
        Ok(out)
    }
}

/// Run the CLI on `args` (including the program name) and return the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    match dispatch(args.into_iter().map(Into::into).collect()) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{f}");
            f.code()
        }
    }
}

fn dispatch(args: Vec<OsString>) -> std::result::Result<(), Failure> {
    let (args, dotted) = split_dotted(args);
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(Failure::Usage(e.render().to_string()));
        }
    };
    let mut config = match &cli.config {
        Some(p) => Config::load(cli.work_dir.join(p)).map_err(Failure::Config)?,
        None => Config::new(),
    };
    for a in dotted.iter().chain(&cli.set) {
        config.apply_override(a).map_err(Failure::Config)?;
    }
    let mut ctx = Ctx {
        work_dir: cli.work_dir.clone(),
        config,
    };
    match &cli.command {
        Command::GenData(a) => gen_data(&mut ctx, a),
        Command::Train(a) => train(&mut ctx, a),
        Command::Label(a) => label(&mut ctx, a),
        Command::FilterWs(a) => filter_ws(&mut ctx, a),
        Command::Decode(a) => decode(&mut ctx, a),
        Command::Score(a) => score(&mut ctx, a),
        Command::AvgCkpt(a) => avg_ckpt(&mut ctx, a),
        Command::RunExperiment(a) => run_experiment(&mut ctx, a),
    }
}

fn runtime<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| Error::io(d, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn load_lm(ctx: &Ctx, path: &Option<String>) -> Result<Option<NGramLM>> {
    path.as_deref().map(|p| NGramLM::load(ctx.path(p))).transpose()
}

fn gen_data(ctx: &mut Ctx, a: &GenDataArgs) -> std::result::Result<(), Failure> {
    ctx.flag("corpus.num_utts", &a.num_utts);
    ctx.flag("corpus.vocab_size", &a.vocab_size);
    ctx.flag("corpus.noise_sigma", &a.noise_sigma);
    ctx.flag("corpus.metadata_noise", &a.metadata_noise);
    ctx.flag("seed", &a.seed);
    ctx.flag("out_dir", &a.out_dir);
    let s: GenDataSettings = ctx.resolve(&GenDataSettings::default())?;
    runtime((|| {
        let corpus = generate_corpus(&s.corpus, s.seed)?;
        let dir = ctx.path(&s.out_dir);
        write_manifest(dir.join("manifest.jsonl"), &corpus.utterances)?;
        let texts: Vec<Vec<u32>> = corpus
            .utterances
            .iter()
            .filter_map(|u| u.transcript.as_ref().map(|t| corpus.world.vocab.encode(t)))
            .collect();
        train_ngram(&texts, s.lm_order)?.save(dir.join("lm.json"))?;
        println!("wrote {} utterances to {}", corpus.utterances.len(), dir.display());
        Ok(())
    })())
}

fn token_examples(utts: &[Utterance], vocab: &Vocab, text: impl Fn(&Utterance) -> Option<&String>) -> Vec<Example> {
    utts.iter()
        .filter_map(|u| {
            let t = text(u)?;
            Some(Example::tokens(u.utt_id(), u.features.frames.clone(), vocab.encode(t)))
        })
        .collect()
}

fn posterior_path(manifest: &Path, utt_id: &str) -> PathBuf {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    dir.join("posteriors").join(format!("{utt_id}.post"))
}

fn train(ctx: &mut Ctx, a: &TrainArgs) -> std::result::Result<(), Failure> {
    ctx.flag("kind", &a.kind);
    ctx.flag("train", &a.train);
    ctx.flag("selflabel", &a.selflabel);
    ctx.flag("weak", &a.weak);
    ctx.flag("distill", &a.distill);
    ctx.flag("seed", &a.seed);
    ctx.flag("out", &a.out);
    ctx.flag("ckpt_dir", &a.ckpt_dir);
    let kind = ModelKind::parse(ctx.config.get_str("kind").unwrap_or("ctc")).map_err(Failure::Config)?;
    ctx.config.set("kind", kind_key(kind));
    let s: TrainSettings = ctx.resolve(&TrainSettings::defaults(kind))?;
    runtime((|| {
        let vocab = Vocab::letters(s.letters)?;
        let mut cfg = ModelConfig::new(s.kind, s.encoder.clone(), vocab.size());
        cfg.embed_dim = s.embed_dim;
        cfg.dec_hidden = s.dec_hidden;
        let mut data = TrainingSet::new();
        data.insert(
            SourceTag::Supervised,
            supervised_examples(&load_manifest(ctx.path(&s.train))?, &cfg, &vocab)?,
        );
        if let Some(p) = &s.selflabel {
            let utts = load_manifest(ctx.path(p))?;
            data.insert(SourceTag::SelfLabel, token_examples(&utts, &vocab, |u| u.transcript.as_ref()));
        }
        if let Some(p) = &s.weak {
            let utts = load_manifest(ctx.path(p))?;
            data.insert(SourceTag::Weak, token_examples(&utts, &vocab, |u| u.metadata.as_ref()));
        }
        if let Some(p) = &s.distill {
            let path = ctx.path(p);
            let mut ex = Vec::new();
            for u in load_manifest(&path)? {
                let post = read_posterior(&posterior_path(&path, u.utt_id()), u.utt_id())?;
                ex.push(Example::posterior(u.features.frames, post));
            }
            data.insert(SourceTag::Distill, ex);
        }
        let model = ModelBundle::init(cfg, s.seed)?;
        let ckpt_dir = s.ckpt_dir.as_deref().map(|d| ctx.path(d));
        if let Some(d) = &ckpt_dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let mut save_err = None;
        let out = run_three_phase_observed(model, &s.plan, &data, s.seed, |ck| {
            if let (Some(d), None) = (&ckpt_dir, &save_err) {
                if let Err(e) = ck.save(d.join(format!("step{:08}.ckpt", ck.step))) {
                    save_err = Some(e);
                }
            }
        })?;
        if let Some(e) = save_err {
            return Err(e);
        }
        let path = ctx.path(&s.out);
        create_parent(&path)?;
        out.checkpoint.save(&path)?;
        let mut report = ExperimentReport::new("train", s.seed, Config::from_serialize(&s)?.entries().clone());
        report.curves.insert(s.kind.name().to_string(), out.curves.clone());
        report.metrics.insert("num_params".into(), out.model.num_params() as f64);
        report.save(ctx.path(&s.report_dir))?;
        println!("wrote {} ({} parameters, {} steps)", path.display(), out.model.num_params(), out.checkpoint.step);
        Ok(())
    })())
}

/// Serialized name of a model kind.
fn kind_key(k: ModelKind) -> &'static str {
    match k {
        ModelKind::Ctc => "ctc",
        ModelKind::EncDec => "enc-dec",
        ModelKind::FrameClassifier => "frame-classifier",
    }
}

fn label(ctx: &mut Ctx, a: &LabelArgs) -> std::result::Result<(), Failure> {
    ctx.flag("teacher", &a.teacher);
    ctx.flag("mode", &a.mode);
    ctx.flag("top_k", &a.top_k);
    ctx.flag("segment.max_seconds", &a.max_seconds);
    ctx.flag("input", &a.input);
    ctx.flag("lm", &a.lm);
    ctx.flag("out", &a.out);
    let s: LabelSettings = ctx.resolve(&LabelSettings::default())?;
    if s.mode != "frame-topk" && s.mode != "sequence-top1" {
        return Err(Failure::Config(Error::Config(format!(
            "mode must be frame-topk or sequence-top1, got {:?}",
            s.mode
        ))));
    }
    runtime((|| {
        let teacher = ModelBundle::from_checkpoint(&Checkpoint::load(ctx.path(&s.teacher))?)?;
        let input = load_manifest(ctx.path(&s.input))?;
        let segments = if s.segment_input {
            let (segs, stats) = segment_corpus(&input, &teacher, &s.segment);
            eprintln!("segmentation: {}", serde_json::to_string(&stats).unwrap_or_default());
            segs
        } else {
            input
        };
        let out = ctx.path(&s.out);
        let manifest = out.join("manifest.jsonl");
        if s.mode == "frame-topk" {
            let (mut mass, mut frames) = (0.0, 0usize);
            for seg in &segments {
                let (post, cov) = extract_teacher_posteriors(seg, &teacher, s.top_k)?;
                let p = posterior_path(&manifest, seg.utt_id());
                create_parent(&p)?;
                write_posterior(&p, &post)?;
                mass += cov * post.num_frames() as f64;
                frames += post.num_frames();
            }
            write_manifest(&manifest, &segments)?;
            let coverage = if frames == 0 { 1.0 } else { mass / frames as f64 };
            println!("segments,frames,coverage");
            println!("{},{frames},{coverage:.6}", segments.len());
        } else {
            let lm = load_lm(ctx, &s.lm)?;
            let (labeled, stats) = generate_selflabels(&segments, &teacher, lm.as_ref(), &s.decode, s.min_score)?;
            write_manifest(&manifest, &labeled)?;
            println!("segments,labeled,dropped_empty,dropped_score,failed");
            println!(
                "{},{},{},{},{}",
                segments.len(),
                stats.labeled,
                stats.dropped_empty,
                stats.dropped_score,
                stats.failed
            );
        }
        Ok(())
    })())
}

/// `utt_id -> text` from JSONL records, taking the first present field.
fn read_texts(path: &Path, fields: &[&str]) -> Result<BTreeMap<String, Option<String>>> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let id = v
            .get("utt_id")
            .and_then(|x| x.as_str())
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "record lacks utt_id".into(),
            })?
            .to_string();
        let text = fields.iter().find_map(|f| v.get(*f).and_then(|x| x.as_str())).map(str::to_string);
        out.insert(id, text);
    }
    Ok(out)
}

fn filter_ws(ctx: &mut Ctx, a: &FilterWsArgs) -> std::result::Result<(), Failure> {
    ctx.flag("input", &a.input);
    ctx.flag("baseline_hyps", &a.baseline_hyps);
    ctx.flag("min_chars", &a.min_chars);
    ctx.flag("max_chars", &a.max_chars);
    ctx.flag("out", &a.out);
    let s: FilterWsSettings = ctx.resolve(&FilterWsSettings::default())?;
    runtime((|| {
        let vocab = Vocab::letters(s.letters)?;
        let segments: Vec<Utterance> = load_manifest(ctx.path(&s.input))?
            .into_iter()
            .filter(|u| u.metadata.is_some())
            .collect();
        let hyps = read_texts(&ctx.path(&s.baseline_hyps), &["hyp_text", "transcript"])?;
        let texts: Vec<String> = segments
            .iter()
            .map(|u| hyps.get(u.utt_id()).cloned().flatten().unwrap_or_default())
            .collect();
        let videos = group_videos(&segments, &texts)?;
        let (pairs, stats) = filter_metadata(&videos, &vocab, s.min_chars, s.max_chars)?;
        let kept: Vec<Utterance> = pairs.into_iter().map(|p| p.segment).collect();
        write_manifest(ctx.path(&s.out), &kept)?;
        println!("{}", FilterStats::CSV_HEADER);
        println!("{}", stats.csv_row());
        Ok(())
    })())
}

#[derive(Serialize)]
struct DecodeRecord<'a> {
    utt_id: &'a str,
    hyp_text: String,
    score: f64,
}

fn decode(ctx: &mut Ctx, a: &DecodeArgs) -> std::result::Result<(), Failure> {
    ctx.flag("model", &a.model);
    ctx.flag("input", &a.input);
    ctx.flag("lm", &a.lm);
    ctx.flag("out", &a.out);
    let s: DecodeSettings = ctx.resolve(&DecodeSettings::default())?;
    runtime((|| {
        let model = ModelBundle::<f32>::from_checkpoint(&Checkpoint::load(ctx.path(&s.model))?)?;
        let vocab = Vocab::with_size(model.config.vocab_size)?;
        let lm = load_lm(ctx, &s.lm)?;
        let mut body = String::new();
        for u in load_manifest(ctx.path(&s.input))? {
            let h = decode_utterance(&model, &u.features.frames, lm.as_ref(), &s.decode)?;
            let rec = DecodeRecord {
                utt_id: u.utt_id(),
                hyp_text: vocab.decode(&h.tokens).split_whitespace().collect::<Vec<_>>().join(" "),
                score: h.score,
            };
            body.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Input(e.to_string()))?);
            body.push('\n');
        }
        match &s.out {
            Some(p) => write_text(&ctx.path(p), &body),
            None => {
                print!("{body}");
                Ok(())
            }
        }
    })())
}

fn score(ctx: &mut Ctx, a: &ScoreArgs) -> std::result::Result<(), Failure> {
    ctx.flag("reference", &a.reference);
    ctx.flag("hyp", &a.hyp);
    ctx.flag("name", &a.name);
    let s: ScoreSettings = ctx.resolve(&ScoreSettings::default())?;
    if s.reference.is_empty() || s.hyp.is_empty() {
        return Err(Failure::Usage("error: score needs --ref and --hyp".into()));
    }
    runtime((|| {
        let ref_path = ctx.path(&s.reference);
        let refs = read_texts(&ref_path, &["transcript", "hyp_text"])?;
        let hyps = read_texts(&ctx.path(&s.hyp), &["hyp_text", "transcript"])?;
        let mut acc = WerAccumulator::default();
        let mut excluded = 0;
        for (id, r) in &refs {
            match r.as_deref().filter(|r| r.split_whitespace().next().is_some()) {
                Some(r) => acc.add(r, hyps.get(id).cloned().flatten().as_deref().unwrap_or("")),
                None => excluded += 1,
            }
        }
        let name = s.name.clone().unwrap_or_else(|| {
            ref_path
                .file_stem()
                .map(|x| x.to_string_lossy().into_owned())
                .unwrap_or_else(|| "test".into())
        });
        let row = WerRow::from_accumulator(&name, &acc, excluded);
        println!("{}", WerRow::CSV_HEADER);
        println!("{}", row.csv_row());
        Ok(())
    })())
}

fn avg_ckpt(ctx: &mut Ctx, a: &AvgCkptArgs) -> std::result::Result<(), Failure> {
    ctx.flag("dir", &a.dir);
    ctx.flag("last", &a.last);
    ctx.flag("out", &a.out);
    let s: AvgCkptSettings = ctx.resolve(&AvgCkptSettings::default())?;
    runtime((|| {
        let dir = ctx.path(&s.dir);
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
            .collect();
        paths.sort();
        let mut cks = paths.iter().map(Checkpoint::load).collect::<Result<Vec<_>>>()?;
        cks.sort_by_key(|c| c.step);
        let avg = average_checkpoints(&cks, s.last)?;
        let out = ctx.path(&s.out);
        create_parent(&out)?;
        avg.save(&out)?;
        println!("averaged {} of {} checkpoints into {}", s.last.min(cks.len()), cks.len(), out.display());
        Ok(())
    })())
}

fn run_experiment(ctx: &mut Ctx, a: &RunExperimentArgs) -> std::result::Result<(), Failure> {
    ctx.flag("name", &a.name);
    ctx.flag("seed", &a.seed);
    ctx.flag("out", &a.out);
    let s: RunExperimentSettings = ctx.resolve(&RunExperimentSettings::default())?;
    let out = ctx.path(&s.out);
    match s.name.as_str() {
        "table" => runtime((|| {
            let r = run_table_experiment(&s.table, s.seed)?;
            let dir = out.join(format!("table-seed{}", s.seed));
            for sys in &r.systems {
                sys.save(&dir)?;
            }
            let mut csv = format!("system,{}\n", WerRow::CSV_HEADER);
            for sys in &r.systems {
                for w in &sys.wer {
                    csv.push_str(&format!("{},{}\n", sys.name, w.csv_row()));
                }
            }
            write_text(&dir.join("summary.csv"), &csv)?;
            write_text(&dir.join("summary.txt"), &r.summary())?;
            print!("{}", r.summary());
            Ok(())
        })()),
        "iterative" => runtime((|| {
            let (rounds, report) = run_iterative_experiment(&s.iterative, s.seed)?;
            let dir = out.join(format!("iterative-seed{}", s.seed));
            report.save(&dir)?;
            let mut csv = format!("round,num_params,coverage,{}\n", WerRow::CSV_HEADER);
            for r in &rounds {
                for w in &r.wer {
                    let cov = r.coverage.map(|c| format!("{c:.6}")).unwrap_or_default();
                    csv.push_str(&format!("{},{},{cov},{}\n", r.round, r.num_params, w.csv_row()));
                }
            }
            write_text(&dir.join("rounds.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        })()),
        other => Err(Failure::Config(Error::Config(format!(
            "unknown experiment {other:?}; expected table or iterative"
        )))),
    }
}
