use std::io::BufRead;

use serde::Deserialize;

use super::sample::{tokenize, ClozeSample, BLANK};
use super::CorpusError;

const CONTEXT_LINES: usize = 20;

/// Parses CBTest plain-text blocks.
///
/// Each block is 20 numbered context lines followed by line 21, which holds
/// `query \t answer \t \t cand1|cand2|...`. Blocks are separated by blank
/// lines. `prefix` becomes part of every sample id (`prefix:index`).
pub fn parse_cbt(reader: impl BufRead, prefix: &str) -> Result<Vec<ClozeSample>, CorpusError> {
    let mut samples = Vec::new();
    let mut block: Vec<String> = Vec::new();
    let flush = |block: &mut Vec<String>, samples: &mut Vec<ClozeSample>| -> Result<(), CorpusError> {
        if block.is_empty() {
            return Ok(());
        }
        let index = samples.len();
        let sample = parse_block(block, index, prefix).map_err(|reason| CorpusError::Parse { block: index, reason })?;
        samples.push(sample);
        block.clear();
        Ok(())
    };
    for line in reader.lines() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            flush(&mut block, &mut samples)?;
        } else {
            block.push(line.to_owned());
        }
    }
    flush(&mut block, &mut samples)?;
    Ok(samples)
}

fn split_number(line: &str) -> Option<(usize, &str)> {
    let line = line.trim_start();
    let (num, rest) = line.split_once(' ').unwrap_or((line, ""));
    num.parse().ok().map(|n| (n, rest))
}

fn parse_block(lines: &[String], index: usize, prefix: &str) -> Result<ClozeSample, String> {
    if lines.len() != CONTEXT_LINES + 1 {
        return Err(format!("truncated block: expected {} lines, found {}", CONTEXT_LINES + 1, lines.len()));
    }
    let mut sentences = Vec::with_capacity(CONTEXT_LINES);
    for (i, line) in lines[..CONTEXT_LINES].iter().enumerate() {
        match split_number(line) {
            Some((n, rest)) if n == i + 1 => sentences.push(tokenize(rest)),
            _ => return Err(format!("line {} is not numbered {}", i + 1, i + 1)),
        }
    }
    let (n, rest) = split_number(&lines[CONTEXT_LINES]).ok_or("query line is not numbered")?;
    if n != CONTEXT_LINES + 1 {
        return Err(format!("query line numbered {n}, expected {}", CONTEXT_LINES + 1));
    }
    let fields: Vec<&str> = rest.split('\t').collect();
    if fields.len() < 2 {
        return Err("query line lacks the tab-separated answer".into());
    }
    let query_tokens = tokenize(fields[0]);
    if !query_tokens.iter().any(|t| t == BLANK) {
        return Err(format!("query has no {BLANK} marker"));
    }
    let answer = fields[1].trim().to_owned();
    let candidates: Vec<String> = fields[2..]
        .iter()
        .rev()
        .find(|f| !f.trim().is_empty())
        .map(|f| f.split('|').map(|c| c.trim().to_owned()).filter(|c| !c.is_empty()).collect())
        .unwrap_or_default();
    if candidates.is_empty() {
        return Err("query line has no candidate list".into());
    }
    let sample = ClozeSample { sample_id: format!("{prefix}:{index}"), sentences, query_tokens, answer, candidates };
    sample.validate()?;
    Ok(sample)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenericRecord {
    document: String,
    query: String,
    answer: String,
    #[serde(default)]
    candidates: Vec<String>,
    #[serde(default)]
    id: Option<String>,
}

/// Parses one JSON object per line: `document`, `query` (containing the
/// literal `XXXXX`), `answer`, `candidates`, optional `id`. Newlines inside
/// `document` delimit sentences. Blank lines are skipped.
pub fn parse_generic(reader: impl BufRead, prefix: &str) -> Result<Vec<ClozeSample>, CorpusError> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let record: GenericRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Record { line: line_no, reason: e.to_string() })?;
        let sentences: Vec<Vec<String>> = record.document.lines().map(tokenize).filter(|s| !s.is_empty()).collect();
        let sample = ClozeSample {
            sample_id: record.id.unwrap_or_else(|| format!("{prefix}:{}", samples.len())),
            sentences,
            query_tokens: tokenize(&record.query),
            answer: record.answer.trim().to_owned(),
            candidates: record.candidates,
        };
        sample.validate().map_err(|reason| CorpusError::Record { line: line_no, reason })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Inverse of [`parse_generic`] for one sample.
pub fn to_generic_line(sample: &ClozeSample) -> String {
    let document = sample.sentences.iter().map(|s| s.join(" ")).collect::<Vec<_>>().join("\n");
    serde_json::json!({
        "id": sample.sample_id,
        "document": document,
        "query": sample.query_tokens.join(" "),
        "answer": sample.answer,
        "candidates": sample.candidates,
    })
    .to_string()
}
