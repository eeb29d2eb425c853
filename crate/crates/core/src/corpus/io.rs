//! Corpus persistence: newline-delimited JSON with one header record,
//! followed by `{"k", "n", "tokens"}` records. Topics go to a JSON sidecar
//! with dense row-major matrices.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, GeneratorKind, SequenceRecord, TopicHmm};
use crate::error::{LabError, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(rename = "K")]
    num_topics: usize,
    #[serde(rename = "N")]
    per_topic: usize,
    #[serde(rename = "T")]
    seq_len: usize,
    #[serde(rename = "V")]
    vocab: usize,
    seed: u64,
    generator: GeneratorKind,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: Header,
}

#[derive(Serialize, Deserialize)]
struct TopicsFile {
    topics: Vec<TopicHmm>,
}

pub fn write_corpus_jsonl(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = HeaderLine {
        header: Header {
            num_topics: corpus.num_topics,
            per_topic: corpus.per_topic,
            seq_len: corpus.seq_len,
            vocab: corpus.vocab,
            seed: corpus.seed,
            generator: corpus.kind,
        },
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for r in &corpus.records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus_jsonl(path: &Path) -> Result<Corpus> {
    let fmt = |msg: String| LabError::Format { path: path.to_path_buf(), msg };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines.next().ok_or_else(|| fmt("empty corpus file".into()))??;
    let HeaderLine { header } = serde_json::from_str(&first).map_err(|e| fmt(format!("bad header: {e}")))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SequenceRecord = serde_json::from_str(&line).map_err(|e| fmt(format!("record {}: {e}", i + 1)))?;
        records.push(r);
    }
    records.sort_by_key(|r| (r.topic, r.index));
    let corpus = Corpus {
        kind: header.generator,
        num_topics: header.num_topics,
        per_topic: header.per_topic,
        seq_len: header.seq_len,
        vocab: header.vocab,
        seed: header.seed,
        records,
    };
    corpus.validate().map_err(|e| fmt(e.to_string()))?;
    Ok(corpus)
}

pub fn write_topics(path: &Path, topics: &[TopicHmm]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer(file, &TopicsFile { topics: topics.to_vec() })?;
    Ok(())
}

pub fn read_topics(path: &Path) -> Result<Vec<TopicHmm>> {
    let file: TopicsFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    for t in &file.topics {
        t.validate()
            .map_err(|e| LabError::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    }
    Ok(file.topics)
}
