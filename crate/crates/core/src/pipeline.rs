//! End-to-end commands: train, generate, evaluate, ablate and gradcheck.
//!
//! Each command reads a [`RunConfig`]. Artifacts live in one directory that
//! `cmd_train` replaces atomically, so a failed run never leaves a partial set.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    build_rtqe_dataset, build_sentiment_dataset, encode_pair, eval_classifier,
    split_strategy_dataset, train_pair_classifier, ClassifierEval, ClassifierParams,
    PairClassifier, StrategyBank,
};
use crate::config::{ModelKind, RunConfig, Setting};
use crate::corpus::{load_corpus, Corpus};
use crate::decode::{decode, Generation};
use crate::error::{Error, Result, ResultExt};
use crate::hash::derive_seed;
use crate::metrics::{
    bleu, perplexity, rouge_l, rouge_n, sentiment_delta, BleuConfig, SentimentLexicon,
};
use crate::models::{
    ConditionalModel, FluencyLM, NGramConditionalModel, TabularPolicy, TokenDistribution,
};
use crate::rerank::{generate_candidates, rerank, write_trace, FactorMask, RerankResult, Scorer};
use crate::text::{ReframeInstance, StrategySet, TokenSeq, Vocab};
use crate::train::{
    combined_step, compare_gradient, train_policy, RewardContext, RewardWeights, TrainReport,
};

const MANIFEST: &str = "MANIFEST";
const MANIFEST_HEADER: &str = "reframe-artifacts v1";

/// The generator behind either model family.
#[derive(Debug, Clone)]
pub enum GenModel {
    Policy(TabularPolicy),
    Ngram(NGramConditionalModel),
}

impl ConditionalModel for GenModel {
    fn vocab_size(&self) -> usize {
        match self {
            GenModel::Policy(p) => p.vocab_size(),
            GenModel::Ngram(m) => m.vocab_size(),
        }
    }

    fn next_distribution(
        &self,
        source: &TokenSeq,
        strategies: Option<&StrategySet>,
        prefix: &TokenSeq,
    ) -> TokenDistribution {
        match self {
            GenModel::Policy(p) => p.next_distribution(source, strategies, prefix),
            GenModel::Ngram(m) => m.next_distribution(source, strategies, prefix),
        }
    }
}

/// Everything `generate` and `evaluate` need.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub vocab: Vocab,
    pub model: GenModel,
    pub lm: FluencyLM,
    pub sentiment: PairClassifier,
    pub rtqe: PairClassifier,
    pub bank: StrategyBank,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingArtifact(path.to_path_buf()))
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

fn finish(path: &Path, w: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut f = create(path)?;
    w(&mut f)
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

impl Artifacts {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let kind = match &self.model {
            GenModel::Policy(_) => "policy",
            GenModel::Ngram(_) => "ngram",
        };
        finish(&dir.join(MANIFEST), |w| {
            writeln!(w, "{MANIFEST_HEADER}\nmodel {kind}")
        })?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        match &self.model {
            GenModel::Policy(p) => finish(&dir.join("policy.bin"), |w| p.write_to(w))?,
            GenModel::Ngram(m) => finish(&dir.join("ngram.txt"), |w| m.write_to(w))?,
        }
        finish(&dir.join("lm.txt"), |w| self.lm.write_to(w))?;
        self.sentiment.save(&dir.join("sentiment.clf"))?;
        self.rtqe.save(&dir.join("rtqe.clf"))?;
        self.bank.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let mut manifest = String::new();
        for line in open(&manifest_path)?.lines() {
            manifest.push_str(&line.map_err(|e| Error::io(&manifest_path, e))?);
            manifest.push('\n');
        }
        let mut lines = manifest.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::format("manifest", "unrecognized header"));
        }
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        let model = match lines.next() {
            Some("model policy") => {
                GenModel::Policy(TabularPolicy::read_from(open(&dir.join("policy.bin"))?)?)
            }
            Some("model ngram") => GenModel::Ngram(NGramConditionalModel::read_from(open(
                &dir.join("ngram.txt"),
            )?)?),
            other => {
                return Err(Error::format(
                    "manifest",
                    format!("bad model line {other:?}"),
                ))
            }
        };
        let lm = FluencyLM::read_from(open(&dir.join("lm.txt"))?)?;
        if model.vocab_size() != vocab.len() || lm.vocab_size() != vocab.len() {
            return Err(Error::format(
                "artifacts",
                "model and vocabulary sizes disagree",
            ));
        }
        Ok(Artifacts {
            vocab,
            model,
            lm,
            sentiment: PairClassifier::load(&dir.join("sentiment.clf"))?,
            rtqe: PairClassifier::load(&dir.join("rtqe.clf"))?,
            bank: StrategyBank::load(dir)?,
        })
    }
}

/// Held-out quality of one auxiliary classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRow {
    pub name: String,
    pub eval: ClassifierEval,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub artifacts: Artifacts,
    /// Absent for the n-gram model, which is fit by counting.
    pub report: Option<TrainReport>,
    pub classifiers: Vec<ClassifierRow>,
    pub dir: PathBuf,
}

pub fn load_training_corpus(cfg: &RunConfig) -> Result<Corpus> {
    Corpus::load(
        &cfg.corpus.dir,
        cfg.corpus.format,
        &cfg.corpus.columns,
        cfg.corpus.min_count,
    )
}

/// Reads one split and tokenizes it with `vocab`.
pub fn load_split(cfg: &RunConfig, split: &str, vocab: &Vocab) -> Result<Vec<ReframeInstance>> {
    let path = cfg
        .corpus
        .dir
        .join(format!("{split}.{}", cfg.corpus.format.extension()));
    load_corpus(&path, cfg.corpus.format, &cfg.corpus.columns)?
        .iter()
        .map(|r| r.tokenize(vocab))
        .collect()
}

pub fn train_sentiment(
    train: &[ReframeInstance],
    params: &ClassifierParams,
) -> Result<PairClassifier> {
    train_pair_classifier(
        &build_sentiment_dataset(train),
        &ClassifierParams {
            seed: derive_seed(params.seed, &[0x5e]),
            ..*params
        },
    )
}

/// Trains a fresh policy with the configured objective.
pub fn train_generator(
    cfg: &RunConfig,
    train: &[ReframeInstance],
    vocab: &Vocab,
    sentiment: &PairClassifier,
    weights: RewardWeights,
) -> Result<(TabularPolicy, TrainReport)> {
    let mut policy = TabularPolicy::for_generation(cfg.model.buckets, vocab.len());
    let tc = crate::train::TrainConfig {
        weights,
        ..cfg.train.clone()
    };
    let report = train_policy(&mut policy, train, vocab, sentiment, &tc)?;
    Ok((policy, report))
}

fn evaluate_classifiers(
    art: &Artifacts,
    dev: &[ReframeInstance],
    seed: u64,
) -> Result<Vec<ClassifierRow>> {
    let mut rows = Vec::new();
    if dev.is_empty() {
        return Ok(rows);
    }
    let mut push = |name: String, clf: &PairClassifier, data: Vec<_>| -> Result<()> {
        let eval = eval_classifier(clf, &data, clf.threshold())?;
        rows.push(ClassifierRow { name, eval });
        Ok(())
    };
    push(
        "sentiment".into(),
        &art.sentiment,
        build_sentiment_dataset(dev),
    )?;
    if dev.len() >= 2 {
        push(
            "rtqe".into(),
            &art.rtqe,
            build_rtqe_dataset(dev, derive_seed(seed, &[0xde]))?,
        )?;
    }
    for s in crate::text::Strategy::ALL {
        push(
            format!("strategy:{}", s.slug()),
            art.bank.get(s),
            split_strategy_dataset(dev, s),
        )?;
    }
    Ok(rows)
}

/// Fits every model from the corpus without touching the filesystem.
pub fn fit_all(cfg: &RunConfig, corpus: &Corpus) -> Result<(Artifacts, Option<TrainReport>)> {
    cfg.validate().component("config")?;
    let train = &corpus.train;
    let vocab = corpus.vocab.clone();
    let sentiment = train_sentiment(train, &cfg.classifier).component("sentiment-classifier")?;
    let rtqe = train_pair_classifier(
        &build_rtqe_dataset(train, derive_seed(cfg.classifier.seed, &[0x47]))?,
        &ClassifierParams {
            seed: derive_seed(cfg.classifier.seed, &[0x48]),
            ..cfg.classifier
        },
    )
    .component("rtqe-scorer")?;
    let bank = StrategyBank::train(train, &cfg.classifier).component("strategy-bank")?;
    let lm_corpus: Vec<TokenSeq> = train
        .iter()
        .flat_map(|i| [i.source.clone(), i.reference.clone()])
        .collect();
    let lm = FluencyLM::fit(&lm_corpus, vocab.len(), cfg.lm.order, cfg.lm.delta)
        .component("fluency-lm")?;
    let (model, report) = match cfg.model.kind {
        ModelKind::Policy => {
            let (p, r) = train_generator(cfg, train, &vocab, &sentiment, cfg.train.weights)
                .component("reinforce-train")?;
            (GenModel::Policy(p), Some(r))
        }
        ModelKind::Ngram => (
            GenModel::Ngram(
                NGramConditionalModel::fit(train, vocab.len(), cfg.model.order, cfg.model.delta)
                    .component("ngram-model")?,
            ),
            None,
        ),
    };
    Ok((
        Artifacts {
            vocab,
            model,
            lm,
            sentiment,
            rtqe,
            bank,
        },
        report,
    ))
}

fn write_classifier_eval(rows: &[ClassifierRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "classifier\tprecision\trecall\tf1\taccuracy\ttp\tfp\tfn\ttn"
    )?;
    for r in rows {
        let e = &r.eval;
        writeln!(
            w,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}",
            r.name, e.precision, e.recall, e.f1, e.accuracy, e.tp, e.fp, e.fn_, e.tn
        )?;
    }
    Ok(())
}

/// Trains every model and replaces the artifact directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let corpus = load_training_corpus(cfg).component("corpus")?;
    let (artifacts, report) = fit_all(cfg, &corpus)?;
    let classifiers = evaluate_classifiers(&artifacts, &corpus.dev, cfg.classifier.seed)
        .component("classifier-eval")?;

    let target = cfg.run.artifacts.clone();
    let name = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifacts".into());
    let parent = target.parent().map(Path::to_path_buf).unwrap_or_default();
    if !parent.as_os_str().is_empty() {
        std::fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    }
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    let staged = (|| -> Result<()> {
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        artifacts.save(&tmp)?;
        if let Some(r) = &report {
            finish(&tmp.join("train_trace.tsv"), |w| r.write_tsv(w))?;
        }
        finish(&tmp.join("classifier_eval.tsv"), |w| {
            write_classifier_eval(&classifiers, w)
        })?;
        let toml = cfg.to_toml()?;
        finish(&tmp.join("config.toml"), |w| w.write_all(toml.as_bytes()))?;
        if target.exists() {
            std::fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
        }
        std::fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))
    })();
    if let Err(e) = staged {
        let _ = std::fs::remove_dir_all(&tmp);
        return Err(e.in_component("artifacts"));
    }
    Ok(TrainSummary {
        artifacts,
        report,
        classifiers,
        dir: target,
    })
}

/// How a single reframe is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub setting: Setting,
    pub rerank: bool,
    pub mask: FactorMask,
}

impl GenerateOptions {
    pub fn from_config(cfg: &RunConfig, setting: Setting) -> Self {
        GenerateOptions {
            setting,
            rerank: cfg.rerank.enabled,
            mask: cfg.rerank.factors,
        }
    }
}

/// One reframe plus its score under the full three-factor objective.
#[derive(Debug, Clone)]
pub struct Reframed {
    pub result: RerankResult,
    pub objective: f64,
}

fn scorer<'a>(cfg: &RunConfig, art: &'a Artifacts, mask: FactorMask) -> Scorer<'a> {
    Scorer {
        bleu: cfg.rerank.bleu,
        normalized_fluency: cfg.rerank.normalized_fluency,
        mask,
        ..Scorer::new(&art.vocab, Some(&art.bank), &art.lm)
    }
}

/// Generates, scores and selects a reframe for one source.
pub fn reframe_one<M: ConditionalModel + ?Sized>(
    cfg: &RunConfig,
    art: &Artifacts,
    model: &M,
    source_text: &str,
    strategies: Option<&StrategySet>,
    opts: GenerateOptions,
) -> Result<Reframed> {
    let source = art
        .vocab
        .tokenize(source_text)
        .truncated(crate::text::MAX_SEQ_LEN);
    let cond = match opts.setting {
        Setting::Controlled => Some(strategies.ok_or(Error::EmptyStrategySet)?),
        Setting::Unconstrained => None,
    };
    let generations: Vec<Generation> = if opts.rerank {
        generate_candidates(model, &source, cond, &cfg.candidates)?
    } else {
        vec![decode(model, &source, cond, &cfg.decode)?]
    };
    let candidates =
        scorer(cfg, art, opts.mask).score_all(generations, &source, source_text, cond)?;
    let result = rerank(candidates)?;
    let objective = scorer(cfg, art, FactorMask::default())
        .score(
            0,
            result.winner.generation.clone(),
            &source,
            source_text,
            cond,
        )?
        .final_score;
    Ok(Reframed { result, objective })
}

/// One line of the outputs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRow {
    pub id: String,
    pub source: String,
    pub gold: String,
    pub output: String,
    pub strategy: Option<f64>,
    pub similarity: f64,
    pub fluency: f64,
    pub final_score: f64,
    pub method: String,
}

const OUTPUT_HEADER: &str =
    "id\tsource\tgold\toutput\tstrategy\tsimilarity\tfluency\tfinal\tmethod";

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub fn write_outputs(rows: &[OutputRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{OUTPUT_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            clean(&r.id),
            clean(&r.source),
            clean(&r.gold),
            clean(&r.output),
            r.strategy.map_or_else(|| "-".into(), |v| v.to_string()),
            r.similarity,
            r.fluency,
            r.final_score,
            r.method
        )?;
    }
    Ok(())
}

pub fn read_outputs(path: &Path) -> Result<Vec<OutputRow>> {
    let bad = |line: usize, message: String| Error::Row {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut rows = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line != OUTPUT_HEADER {
                return Err(bad(1, "unexpected header".into()));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 9 {
            return Err(bad(i + 1, format!("expected 9 fields, found {}", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| bad(i + 1, format!("{s:?}: {e}")))
        };
        rows.push(OutputRow {
            id: f[0].into(),
            source: f[1].into(),
            gold: f[2].into(),
            output: f[3].into(),
            strategy: if f[4] == "-" { None } else { Some(num(f[4])?) },
            similarity: num(f[5])?,
            fluency: num(f[6])?,
            final_score: num(f[7])?,
            method: f[8].into(),
        });
    }
    Ok(rows)
}

fn row_from(id: String, inst: &ReframeInstance, r: &RerankResult) -> OutputRow {
    let w = &r.winner;
    OutputRow {
        id,
        source: inst.raw_source.clone(),
        gold: inst.raw_reference.clone(),
        output: w.text.clone(),
        strategy: w.strategy_score,
        similarity: w.similarity_score,
        fluency: w.fluency,
        final_score: w.final_score,
        method: w.generation.method_tag.clone(),
    }
}

/// Reframes every instance in parallel; the output keeps input order.
pub fn generate_all<M: ConditionalModel + ?Sized>(
    cfg: &RunConfig,
    art: &Artifacts,
    model: &M,
    test: &[ReframeInstance],
    opts: GenerateOptions,
) -> Result<Vec<(OutputRow, Reframed)>> {
    test.par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let r = reframe_one(
                cfg,
                art,
                model,
                &inst.raw_source,
                Some(&inst.strategies),
                opts,
            )?;
            Ok((row_from(i.to_string(), inst, &r.result), r))
        })
        .collect()
}

/// Path of the per-candidate trace written next to an outputs file.
pub fn trace_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".trace.tsv");
    out.with_file_name(name)
}

/// Reframes the test split and writes the outputs file and its trace.
pub fn cmd_generate(cfg: &RunConfig, setting: Setting, out: &Path) -> Result<Vec<OutputRow>> {
    let art = Artifacts::load(&cfg.run.artifacts).component("artifacts")?;
    let test = load_split(cfg, "test", &art.vocab).component("corpus")?;
    let results = generate_all(
        cfg,
        &art,
        &art.model,
        &test,
        GenerateOptions::from_config(cfg, setting),
    )
    .component("rerank")?;
    let rows: Vec<OutputRow> = results.iter().map(|(r, _)| r.clone()).collect();
    finish(out, |w| write_outputs(&rows, w))?;
    let tp = trace_path(out);
    finish(&tp, |w| {
        for (i, (row, r)) in results.iter().enumerate() {
            write_trace(&row.id, &r.result, &mut *w, i == 0)?;
        }
        Ok(())
    })?;
    Ok(rows)
}

/// Reframes one free-text input with saved artifacts.
pub fn generate_single(
    cfg: &RunConfig,
    setting: Setting,
    text: &str,
    strategies: Option<&StrategySet>,
) -> Result<Reframed> {
    let art = Artifacts::load(&cfg.run.artifacts)?;
    reframe_one(
        cfg,
        &art,
        &art.model,
        text,
        strategies,
        GenerateOptions::from_config(cfg, setting),
    )
}

/// Corpus-level averages. BERTScore has no offline equivalent and is left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bleu: f64,
    pub bertscore: Option<f64>,
    pub sentiment_delta: f64,
    pub rtqe: f64,
    pub perplexity: f64,
    pub bleu_config: BleuConfig,
    pub lm_order: usize,
}

impl EvalReport {
    pub fn header() -> String {
        format!(
            "{:<14} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8} {:>7} {:>9}",
            "", "R-1", "R-2", "R-L", "BLEU", "BScore", "dTB", "RTQE", "PPL"
        )
    }

    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{:<14} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7} {:>8.4} {:>7.4} {:>9.3}",
            label,
            self.rouge1,
            self.rouge2,
            self.rouge_l,
            self.bleu,
            self.bertscore
                .map_or_else(|| "n/a".into(), |b| format!("{b:.4}")),
            self.sentiment_delta,
            self.rtqe,
            self.perplexity
        )
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format("report", e.to_string()))
    }

    fn mean(reports: &[EvalReport]) -> EvalReport {
        let k = reports.len() as f64;
        let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        EvalReport {
            n: reports[0].n,
            rouge1: avg(|r| r.rouge1),
            rouge2: avg(|r| r.rouge2),
            rouge_l: avg(|r| r.rouge_l),
            bleu: avg(|r| r.bleu),
            bertscore: None,
            sentiment_delta: avg(|r| r.sentiment_delta),
            rtqe: avg(|r| r.rtqe),
            perplexity: avg(|r| r.perplexity),
            bleu_config: reports[0].bleu_config,
            lm_order: reports[0].lm_order,
        }
    }
}

/// Scores outputs against gold references.
///
/// Overlap metrics use a vocabulary built from every text involved, so no
/// word is collapsed to the unknown token; perplexity uses the model's own.
pub fn evaluate_outputs(
    rows: &[OutputRow],
    art: &Artifacts,
    lexicon: &SentimentLexicon,
    bleu_cfg: &BleuConfig,
) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let texts: Vec<&str> = rows
        .iter()
        .flat_map(|r| [r.source.as_str(), r.gold.as_str(), r.output.as_str()])
        .collect();
    let ev = Vocab::build(&texts, 1)?;
    let per_row: Vec<[f64; 7]> = rows
        .par_iter()
        .map(|r| -> Result<[f64; 7]> {
            let (src, gold, out) = (
                ev.tokenize(&r.source),
                ev.tokenize(&r.gold),
                ev.tokenize(&r.output),
            );
            let ppl = perplexity(&art.lm, &art.vocab.tokenize(&r.output).with_eos())?;
            Ok([
                rouge_n(&out, &gold, 1).f1,
                rouge_n(&out, &gold, 2).f1,
                rouge_l(&out, &gold).f1,
                bleu(&out, &gold, bleu_cfg)?,
                sentiment_delta(lexicon, &ev, &src, &out),
                art.rtqe.score(&encode_pair(&r.source, &r.output))?,
                ppl,
            ])
        })
        .collect::<Result<_>>()?;
    let n = per_row.len() as f64;
    let col = |k: usize| per_row.iter().map(|v| v[k]).sum::<f64>() / n;
    Ok(EvalReport {
        n: rows.len(),
        rouge1: col(0),
        rouge2: col(1),
        rouge_l: col(2),
        bleu: col(3),
        bertscore: None,
        sentiment_delta: col(4),
        rtqe: col(5),
        perplexity: col(6),
        bleu_config: *bleu_cfg,
        lm_order: art.lm.order(),
    })
}

/// Evaluates an outputs file against the test split; row counts must match.
pub fn cmd_evaluate(cfg: &RunConfig, outputs: &Path) -> Result<EvalReport> {
    let art = Artifacts::load(&cfg.run.artifacts).component("artifacts")?;
    let rows = read_outputs(outputs).component("outputs")?;
    let test = load_split(cfg, "test", &art.vocab).component("corpus")?;
    if rows.len() != test.len() {
        return Err(Error::Misaligned {
            outputs: rows.len(),
            expected: test.len(),
        }
        .in_component("evaluate"));
    }
    let lexicon = SentimentLexicon::load(&cfg.run.lexicon).component("lexicon")?;
    evaluate_outputs(&rows, &art, &lexicon, &cfg.rerank.bleu).component("metrics")
}

/// One configuration of the ablation table, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub metrics: EvalReport,
    /// Mean full three-factor objective of the selected outputs.
    pub objective: f64,
    /// Mean BLEU of the selected outputs against their sources.
    pub source_bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub setting: Setting,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    /// Rows that do not apply to the configured model.
    pub skipped: Vec<String>,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{} {:>10} {:>10}\n",
            EvalReport::header(),
            "objective",
            "src-BLEU"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{} {:>10.3e} {:>10.3e}\n",
                r.metrics.table_row(&r.name),
                r.objective,
                r.source_bleu
            ));
        }
        for k in &self.skipped {
            s.push_str(&format!("{k:<14} skipped\n"));
        }
        s
    }

    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Retrains without each loss term and reranks without each factor.
pub fn cmd_ablate(cfg: &RunConfig, setting: Setting) -> Result<AblationReport> {
    let base = Artifacts::load(&cfg.run.artifacts).component("artifacts")?;
    let corpus = load_training_corpus(cfg).component("corpus")?;
    if corpus.vocab != base.vocab {
        return Err(Error::format(
            "artifacts",
            "vocabulary does not match the corpus; rerun train",
        ));
    }
    let test = &corpus.test;
    if test.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let lexicon = SentimentLexicon::load(&cfg.run.lexicon)?;
    let full_opts = GenerateOptions {
        setting,
        rerank: true,
        mask: FactorMask::default(),
    };
    let masked = |strategy, similarity, fluency| GenerateOptions {
        mask: FactorMask {
            strategy,
            similarity,
            fluency,
        },
        ..full_opts
    };
    let mut names: Vec<&str> = vec!["full"];
    let mut skipped = Vec::new();
    let is_policy = matches!(base.model, GenModel::Policy(_));
    if is_policy {
        names.extend(["no-cls", "no-cont"]);
    } else {
        skipped.extend(["no-cls".to_string(), "no-cont".to_string()]);
    }
    names.extend(["no-rerank", "w/o strategy", "w/o similarity", "w/o fluency"]);
    let mut per_name: Vec<Vec<(EvalReport, f64, f64)>> = vec![Vec::new(); names.len()];

    for &seed in &cfg.run.seeds {
        let mut c = cfg.clone();
        c.set_seed(seed);
        let w = c.train.weights;
        let retrain = |weights: RewardWeights| -> Result<GenModel> {
            if !is_policy {
                return Ok(base.model.clone());
            }
            Ok(GenModel::Policy(
                train_generator(&c, &corpus.train, &base.vocab, &base.sentiment, weights)?.0,
            ))
        };
        let full = retrain(w)?;
        for (k, name) in names.iter().enumerate() {
            let (model, opts) = match *name {
                "full" => (None, full_opts),
                "no-cls" => (Some(retrain(RewardWeights { alpha: 0.0, ..w })?), full_opts),
                "no-cont" => (Some(retrain(RewardWeights { beta: 0.0, ..w })?), full_opts),
                "no-rerank" => (
                    None,
                    GenerateOptions {
                        rerank: false,
                        ..full_opts
                    },
                ),
                "w/o strategy" => (None, masked(false, true, true)),
                "w/o similarity" => (None, masked(true, false, true)),
                _ => (None, masked(true, true, false)),
            };
            let model = model.as_ref().unwrap_or(&full);
            let results = generate_all(&c, &base, model, test, opts)?;
            let rows: Vec<OutputRow> = results.iter().map(|(r, _)| r.clone()).collect();
            let metrics = evaluate_outputs(&rows, &base, &lexicon, &c.rerank.bleu)?;
            let n = results.len() as f64;
            let objective = results.iter().map(|(_, r)| r.objective).sum::<f64>() / n;
            let src_bleu = results.iter().map(|(r, _)| r.similarity).sum::<f64>() / n;
            per_name[k].push((metrics, objective, src_bleu));
        }
    }
    let rows = names
        .iter()
        .zip(per_name)
        .map(|(name, runs)| {
            let k = runs.len() as f64;
            let reports: Vec<EvalReport> = runs.iter().map(|r| r.0.clone()).collect();
            AblationRow {
                name: name.to_string(),
                metrics: EvalReport::mean(&reports),
                objective: runs.iter().map(|r| r.1).sum::<f64>() / k,
                source_bleu: runs.iter().map(|r| r.2).sum::<f64>() / k,
            }
        })
        .collect();
    Ok(AblationReport {
        setting,
        seeds: cfg.run.seeds.clone(),
        rows,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_instance: usize,
}

/// Compares the combined-step gradient with finite differences on the
/// first `limit` training instances, at the saved policy.
pub fn cmd_gradcheck(cfg: &RunConfig, limit: usize, epsilon: f64) -> Result<GradcheckReport> {
    let art = Artifacts::load(&cfg.run.artifacts).component("artifacts")?;
    let policy = match &art.model {
        GenModel::Policy(p) => p.clone(),
        GenModel::Ngram(_) => {
            TabularPolicy::random(cfg.model.buckets, art.vocab.len(), 0.5, cfg.run.seed)
        }
    };
    let train = load_split(cfg, "train", &art.vocab)?;
    let ctx = RewardContext {
        vocab: &art.vocab,
        sentiment: &art.sentiment,
        bleu: cfg.train.bleu,
        max_len: cfg.train.max_len,
    };
    let mut report = GradcheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst_instance: 0,
    };
    for (i, inst) in train.iter().take(limit).enumerate() {
        let out = combined_step(
            &policy,
            inst,
            Some(&inst.strategies),
            &ctx,
            &cfg.train.weights,
            derive_seed(cfg.run.seed, &[i as u64]),
            cfg.train.samples_per_instance,
        )?;
        let err = compare_gradient(&policy, &out.surrogate, &out.grad, epsilon);
        if err > report.max_relative_error || report.checked == 0 {
            report.max_relative_error = err;
            report.worst_instance = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_round_trip() {
        let rows = vec![
            OutputRow {
                id: "0".into(),
                source: "a\tb".into(),
                gold: "c".into(),
                output: "d".into(),
                strategy: Some(0.25),
                similarity: 0.5,
                fluency: 0.125,
                final_score: 0.015625,
                method: "greedy".into(),
            },
            OutputRow {
                id: "1".into(),
                source: "e".into(),
                gold: "f".into(),
                output: "".into(),
                strategy: None,
                similarity: 0.0,
                fluency: 1e-6,
                final_score: 1e-12,
                method: "beam4".into(),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.tsv");
        write_outputs(&rows, File::create(&p).unwrap()).unwrap();
        let back = read_outputs(&p).unwrap();
        assert_eq!(back[0].source, "a b");
        assert_eq!(back[1], rows[1]);
        assert_eq!(back[0].strategy, Some(0.25));
    }

    #[test]
    fn trace_path_appends() {
        assert_eq!(
            trace_path(Path::new("x/out.tsv")),
            PathBuf::from("x/out.tsv.trace.tsv")
        );
    }

    #[test]
    fn missing_artifacts_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Artifacts::load(dir.path()),
            Err(Error::MissingArtifact(_))
        ));
        let tagged = Error::EmptyCorpus.in_component("corpus");
        assert_eq!(tagged.to_string(), "[corpus] corpus is empty");
    }
}
