//! N-best lists as tab-separated text: sample id, candidate, the four
//! features, gold flag (0/1) and the refilled sentence. Lines starting with
//! `#` are comments. Consecutive lines with the same sample id form a list.

use std::io::{BufRead, Write};

use super::{NBestEntry, RerankError, FEATURE_NAMES};

pub fn write_nbest(lists: &[Vec<NBestEntry>], mut w: impl Write) -> Result<(), RerankError> {
    writeln!(w, "#sample_id\tcandidate\t{}\tgold\tsentence", FEATURE_NAMES.join("\t"))?;
    for e in lists.iter().flatten() {
        let f = e.features;
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.sample_id,
            e.candidate,
            f[0],
            f[1],
            f[2],
            f[3],
            u8::from(e.is_gold),
            e.sentence.join(" ")
        )?;
    }
    Ok(())
}

pub fn read_nbest(r: impl BufRead) -> Result<Vec<Vec<NBestEntry>>, RerankError> {
    let mut lists: Vec<Vec<NBestEntry>> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let bad = |reason: String| RerankError::Format { line: i + 1, reason };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 8 {
            return Err(bad(format!("expected 8 tab-separated fields, found {}", cols.len())));
        }
        let mut features = [0.0; 4];
        for (k, f) in features.iter_mut().enumerate() {
            *f = cols[2 + k].parse().map_err(|_| bad(format!("bad {} value {:?}", FEATURE_NAMES[k], cols[2 + k])))?;
        }
        let is_gold = match cols[6] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("gold flag must be 0 or 1, got {other:?}"))),
        };
        let entry = NBestEntry {
            sample_id: cols[0].to_owned(),
            candidate: cols[1].to_owned(),
            features,
            is_gold,
            sentence: cols[7].split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect(),
        };
        match lists.last_mut() {
            Some(list) if list[0].sample_id == entry.sample_id => list.push(entry),
            _ => lists.push(vec![entry]),
        }
    }
    Ok(lists)
}
