use std::collections::HashMap;
use std::path::{Path, PathBuf};

use aoa_core::corpus::{parse, parse_generic, stats, to_generic_line, ClozeSample, DatasetStats, Vocabulary};
use aoa_core::model::{ensemble_predict_many, Checkpoint, Prediction, Reader, Trainer, TrainingLog};
use aoa_core::ngram::{cluster_exchange, Clustering, KnModel};
use aoa_core::rerank::{
    feature_ratio, mira_tune, read_nbest, refill, rerank_accuracy, write_nbest, FeatureWeights, LanguageModels, NBestEntry,
};
use aoa_core::synthetic;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fsutil::{open, open_artifact, read_json, write_atomic, write_json};
use crate::report::{build_report, write_bins_csv, EvalReport};
use crate::{CliError, RunConfig};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];
const PREDICT_CHUNK: usize = 64;

pub mod files {
    pub const VOCAB: &str = "vocab.json";
    pub const STATS: &str = "stats.json";
    pub const GLOBAL_LM: &str = "global.lm";
    pub const GLOBAL_ARPA: &str = "global.arpa";
    pub const CLASSES: &str = "classes.json";
    pub const CLASS_LM: &str = "class.lm";
    pub const WEIGHTS: &str = "weights.json";

    pub fn split(split: &str) -> String {
        format!("{split}.jsonl")
    }

    pub fn checkpoint(member: Option<usize>) -> String {
        member.map_or("model.ckpt".into(), |i| format!("model-{i}.ckpt"))
    }

    pub fn training_log(member: Option<usize>) -> String {
        member.map_or("training_log.json".into(), |i| format!("training_log-{i}.json"))
    }

    pub fn nbest(split: &str) -> String {
        format!("nbest_{split}.tsv")
    }

    pub fn features(split: &str) -> String {
        format!("nbest_{split}.features.tsv")
    }
}

fn check_split(split: &str) -> Result<(), CliError> {
    if SPLITS.contains(&split) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("unknown split {split:?}; expected one of {SPLITS:?}")))
    }
}

pub fn load_split(cfg: &RunConfig, split: &str) -> Result<Vec<ClozeSample>, CliError> {
    check_split(split)?;
    Ok(parse_generic(open_artifact(&cfg.out(&files::split(split)), "prepare")?, split)?)
}

fn document_sentences(samples: &[ClozeSample]) -> Vec<Vec<String>> {
    samples.iter().flat_map(|s| s.sentences.iter().cloned()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub stats: DatasetStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub vocabulary: usize,
    pub splits: Vec<SplitStats>,
}

/// Parses the configured splits, builds the vocabulary on the training
/// split and stores normalised copies of every split.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareSummary, CliError> {
    let paths = [&cfg.data.train, &cfg.data.valid, &cfg.data.test];
    if cfg.data.train.is_none() {
        return Err(CliError::Usage("data.train is not set".into()));
    }
    let mut parsed = Vec::new();
    for (split, path) in SPLITS.iter().zip(paths) {
        let Some(path) = path else { continue };
        let samples = parse(open(path)?, cfg.data.format, split)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        info!("{split}: {} samples from {}", samples.len(), path.display());
        parsed.push((*split, samples));
    }
    let vocab = Vocabulary::build(&parsed[0].1, cfg.data.min_count);
    write_json(&cfg.out(files::VOCAB), &vocab)?;
    let mut splits = Vec::new();
    for (split, samples) in &parsed {
        write_atomic(&cfg.out(&files::split(split)), |w| {
            for s in samples {
                writeln!(w, "{}", to_generic_line(s))?;
            }
            Ok(())
        })?;
        splits.push(SplitStats { split: (*split).to_owned(), stats: stats(samples) });
    }
    let summary = PrepareSummary { vocabulary: vocab.len(), splits };
    write_json(&cfg.out(files::STATS), &summary)?;
    Ok(summary)
}

/// Trains one model, or `ensemble_size` models with seeds `seed + i`.
pub fn cmd_train(cfg: &RunConfig, ensemble: bool) -> Result<Vec<TrainingLog>, CliError> {
    let train = load_split(cfg, "train")?;
    let valid = if cfg.out(&files::split("valid")).exists() {
        load_split(cfg, "valid")?
    } else {
        warn!("no validation split; keeping the final epoch");
        Vec::new()
    };
    let vocab: Vocabulary = read_json(&cfg.out(files::VOCAB), "prepare")?;
    let members: Vec<Option<usize>> = if ensemble { (0..cfg.ensemble_size).map(Some).collect() } else { vec![None] };
    let mut logs = Vec::new();
    for member in members {
        let mut config = cfg.model.clone();
        config.seed = cfg.seed.wrapping_add(member.unwrap_or(0) as u64);
        let mut trainer = Trainer::new(config.clone(), vocab.clone())?;
        let (best, log) = trainer.fit(&train, &valid)?;
        let ckpt = Checkpoint { config, vocab: vocab.clone(), params: best.params, adam: None, epoch: log.best_epoch.unwrap_or(0) };
        write_atomic(&cfg.out(&files::checkpoint(member)), |w| Ok(ckpt.write_to(w)?))?;
        write_json(&cfg.out(&files::training_log(member)), &log)?;
        logs.push(log);
    }
    Ok(logs)
}

/// Which checkpoints a decoding command uses.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Models {
    #[default]
    Single,
    Ensemble,
    Paths(Vec<PathBuf>),
}

impl Models {
    fn paths(&self, cfg: &RunConfig) -> Vec<PathBuf> {
        match self {
            Models::Single => vec![cfg.out(&files::checkpoint(None))],
            Models::Ensemble => (0..cfg.ensemble_size).map(|i| cfg.out(&files::checkpoint(Some(i)))).collect(),
            Models::Paths(p) => p.clone(),
        }
    }

    pub fn load(&self, cfg: &RunConfig) -> Result<Vec<Reader>, CliError> {
        self.paths(cfg)
            .iter()
            .map(|p| {
                let ckpt = Checkpoint::read_from(open_artifact(p, "train")?)
                    .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                Ok(ckpt.reader())
            })
            .collect()
    }
}

struct Decoded<'a> {
    samples: Vec<&'a ClozeSample>,
    predictions: Vec<Prediction>,
    dropped: usize,
}

fn decode<'a>(readers: &[Reader], samples: &'a [ClozeSample]) -> Result<Decoded<'a>, CliError> {
    let usable: Vec<&ClozeSample> = samples.iter().filter(|s| s.document_len() > 0).collect();
    let dropped = samples.len() - usable.len();
    if dropped > 0 {
        warn!("{dropped} samples with empty documents skipped");
    }
    let chunks: Vec<Vec<ClozeSample>> = usable.chunks(PREDICT_CHUNK).map(|c| c.iter().map(|s| (*s).clone()).collect()).collect();
    let predicted: Vec<Vec<Prediction>> = chunks
        .par_iter()
        .map(|chunk| if readers.len() == 1 { readers[0].predict_many(chunk, false) } else { ensemble_predict_many(readers, chunk) })
        .collect::<Result<_, _>>()?;
    Ok(Decoded { samples: usable, predictions: predicted.into_iter().flatten().collect(), dropped })
}

/// Accuracy overall and per document-length and answer-frequency-rank bin.
pub fn cmd_eval(cfg: &RunConfig, split: &str, models: &Models) -> Result<EvalReport, CliError> {
    let samples = load_split(cfg, split)?;
    let readers = models.load(cfg)?;
    let decoded = decode(&readers, &samples)?;
    let report = build_report(split, readers.len(), &decoded.samples, &decoded.predictions, decoded.dropped);
    write_json(&cfg.out(&format!("eval_{split}.json")), &report)?;
    write_atomic(&cfg.out(&format!("eval_{split}_length.csv")), |w| write_bins_csv(&report.length_bins, w))?;
    write_atomic(&cfg.out(&format!("eval_{split}_rank.csv")), |w| write_bins_csv(&report.rank_bins, w))?;
    Ok(report)
}

/// Writes the reader's `n_best` candidates per sample, refilled into the
/// query. Only the reader feature is set.
pub fn cmd_nbest(cfg: &RunConfig, split: &str, models: &Models) -> Result<Vec<Vec<NBestEntry>>, CliError> {
    let samples = load_split(cfg, split)?;
    let readers = models.load(cfg)?;
    let decoded = decode(&readers, &samples)?;
    let mut lists = Vec::with_capacity(decoded.samples.len());
    for (s, p) in decoded.samples.iter().zip(&decoded.predictions) {
        let list = p
            .n_best(cfg.rerank.n_best)
            .iter()
            .map(|(c, prob)| {
                Ok(NBestEntry {
                    sample_id: s.sample_id.clone(),
                    candidate: c.clone(),
                    sentence: refill(&s.query_tokens, c)?,
                    features: [prob.max(aoa_core::model::LOG_EPS).ln(), 0.0, 0.0, 0.0],
                    is_gold: *c == s.answer,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        lists.push(list);
    }
    write_atomic(&cfg.out(&files::nbest(split)), |w| Ok(write_nbest(&lists, w)?))?;
    Ok(lists)
}

/// Global n-gram model over the training documents, one sentence per line.
pub fn cmd_train_lm(cfg: &RunConfig, arpa: bool) -> Result<KnModel, CliError> {
    let train = load_split(cfg, "train")?;
    let lm = KnModel::train(&document_sentences(&train), cfg.lm.order)?;
    write_atomic(&cfg.out(files::GLOBAL_LM), |w| Ok(lm.write_to(w)?))?;
    if arpa {
        write_atomic(&cfg.out(files::GLOBAL_ARPA), |w| Ok(lm.write_arpa(w)?))?;
    }
    Ok(lm)
}

/// Word classes over the training documents and the class n-gram model.
pub fn cmd_cluster(cfg: &RunConfig) -> Result<Clustering, CliError> {
    let train = load_split(cfg, "train")?;
    let sentences = document_sentences(&train);
    let clustering = cluster_exchange(&sentences, cfg.lm.classes, cfg.lm.cluster_iters)?;
    let classed: Vec<Vec<String>> = sentences.iter().map(|s| clustering.map.to_class_tokens(s)).collect();
    let lm = KnModel::train(&classed, cfg.lm.order)?;
    write_json(&cfg.out(files::CLASSES), &clustering)?;
    write_atomic(&cfg.out(files::CLASS_LM), |w| Ok(lm.write_to(w)?))?;
    Ok(clustering)
}

fn read_lm(path: &Path, producer: &str) -> Result<KnModel, CliError> {
    KnModel::read_from(open_artifact(path, producer)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn load_language_models(cfg: &RunConfig) -> Result<LanguageModels, CliError> {
    let clustering: Clustering = read_json(&cfg.out(files::CLASSES), "cluster")?;
    Ok(LanguageModels {
        global: read_lm(&cfg.out(files::GLOBAL_LM), "train-lm")?,
        class_lm: read_lm(&cfg.out(files::CLASS_LM), "cluster")?,
        class_map: clustering.map,
        local_order: cfg.lm.order,
        normalize: cfg.lm.normalize,
    })
}

/// Reads a split's n-best lists and fills in the LM features.
fn featurized(cfg: &RunConfig, split: &str) -> Result<Vec<Vec<NBestEntry>>, CliError> {
    let samples = load_split(cfg, split)?;
    let mut lists = read_nbest(open_artifact(&cfg.out(&files::nbest(split)), "nbest")?)?;
    let lms = load_language_models(cfg)?;
    let by_id: HashMap<&str, &ClozeSample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    lists.par_iter_mut().try_for_each(|list| {
        let id = list[0].sample_id.clone();
        let sample = by_id.get(id.as_str()).ok_or_else(|| CliError::Data(format!("n-best list for unknown sample {id}")))?;
        lms.featurize(list, sample).map_err(CliError::from)
    })?;
    write_atomic(&cfg.out(&files::features(split)), |w| Ok(write_nbest(&lists, w)?))?;
    Ok(lists)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub weights: FeatureWeights,
    pub normalized: FeatureWeights,
    pub eta: Option<f64>,
    pub updates: usize,
    pub lists: usize,
    pub skipped_no_gold: usize,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
}

/// Tunes feature weights with k-best MIRA on a split's n-best lists.
pub fn cmd_tune(cfg: &RunConfig, split: &str) -> Result<TuneReport, CliError> {
    let lists = featurized(cfg, split)?;
    let result = mira_tune(&lists, &cfg.rerank.mira)?;
    let report = TuneReport {
        weights: result.weights,
        normalized: result.weights.l1_normalized(),
        eta: feature_ratio(&result.weights).ok(),
        updates: result.updates,
        lists: lists.len(),
        skipped_no_gold: result.skipped_no_gold,
        accuracy_before: rerank_accuracy(&lists, &FeatureWeights::default()),
        accuracy_after: rerank_accuracy(&lists, &result.weights),
    };
    write_json(&cfg.out(files::WEIGHTS), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankReport {
    pub split: String,
    pub lists: usize,
    pub accuracy: f64,
    pub reader_accuracy: f64,
    pub weights: FeatureWeights,
    pub normalized: FeatureWeights,
    pub eta: Option<f64>,
}

/// Re-ranks a split's n-best lists with tuned (or given) weights.
pub fn cmd_rerank(cfg: &RunConfig, split: &str, weights: Option<FeatureWeights>) -> Result<RerankReport, CliError> {
    let weights = match weights {
        Some(w) => w,
        None => read_json::<TuneReport>(&cfg.out(files::WEIGHTS), "tune")?.weights,
    };
    let lists = featurized(cfg, split)?;
    let report = RerankReport {
        split: split.to_owned(),
        lists: lists.len(),
        accuracy: rerank_accuracy(&lists, &weights),
        reader_accuracy: rerank_accuracy(&lists, &FeatureWeights::default()),
        weights,
        normalized: weights.l1_normalized(),
        eta: feature_ratio(&weights).ok(),
    };
    write_json(&cfg.out(&format!("rerank_{split}.json")), &report)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthTask {
    Copy,
    Distractor,
    Sentence,
}

/// Writes a generated corpus in the generic format.
pub fn cmd_synth(task: SynthTask, samples: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let data = match task {
        SynthTask::Copy => synthetic::copy_task(samples, seed),
        SynthTask::Distractor => synthetic::distractor_task(samples, seed),
        SynthTask::Sentence => synthetic::sentence_task(samples, seed),
    };
    write_atomic(out, |w| {
        for s in &data {
            writeln!(w, "{}", to_generic_line(s))?;
        }
        Ok(())
    })
}
