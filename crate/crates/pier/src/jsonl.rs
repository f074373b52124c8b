//! JSON-lines persistence for sentence records and the PIE lexicon, plus the
//! corpus directory layout (manifest + lexicon + splits).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use pier_core::corpus::{
    Corpus, CorpusManifest, PieLexiconEntry, Sense, SentenceRecord, Split, VocabLayout,
    SCHEMA_VERSION,
};
use serde::{Deserialize, Serialize};

use crate::FormatError;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordDto {
    sentence_id: u64,
    tokens: Vec<u32>,
    pie_id: u32,
    /// Half-open [start, end).
    span: [usize; 2],
    sense: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconDto {
    pie_id: u32,
    surface: Vec<u32>,
    gloss: Vec<u32>,
    group_id: usize,
    idiomaticity_ratio: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDto {
    schema_version: u32,
    seed: u64,
    n_pies: usize,
    n_groups: usize,
    vocab_size: usize,
    n_train: usize,
    n_test: usize,
    idiomatic_fraction_target: f64,
    idiomatic_fraction_achieved: f64,
}

/// Writes one record per line.
pub fn save_records(records: &[SentenceRecord], path: &Path) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let dto = RecordDto {
            sentence_id: r.sentence_id,
            tokens: r.tokens.clone(),
            pie_id: r.pie_id,
            span: [r.span.0, r.span.1],
            sense: r.sense.as_str().to_string(),
        };
        serde_json::to_writer(&mut out, &dto).map_err(|e| FormatError::json(path, 0, e))?;
        out.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    }
    out.flush().map_err(|e| FormatError::io(path, e))
}

/// Reads records back, tagging them with the given split. Malformed lines
/// fail with their line number; nothing is returned partially.
pub fn load_records(path: &Path, split: Split) -> Result<Vec<SentenceRecord>, FormatError> {
    let file = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let dto: RecordDto =
            serde_json::from_str(&line).map_err(|e| FormatError::json(path, i + 1, e))?;
        let sense = Sense::parse(&dto.sense).ok_or_else(|| FormatError::Field {
            path: path.display().to_string(),
            line: i + 1,
            message: format!("unknown sense '{}'", dto.sense),
        })?;
        if dto.span[0] >= dto.span[1] || dto.span[1] > dto.tokens.len() {
            return Err(FormatError::Field {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("span {:?} out of bounds", dto.span),
            });
        }
        records.push(SentenceRecord {
            sentence_id: dto.sentence_id,
            tokens: dto.tokens,
            pie_id: dto.pie_id,
            span: (dto.span[0], dto.span[1]),
            sense,
            split,
        });
    }
    Ok(records)
}

pub fn save_lexicon(lexicon: &[PieLexiconEntry], path: &Path) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for e in lexicon {
        let dto = LexiconDto {
            pie_id: e.pie_id,
            surface: e.surface.clone(),
            gloss: e.definition_gloss.clone(),
            group_id: e.group_id,
            idiomaticity_ratio: e.idiomaticity_ratio,
        };
        serde_json::to_writer(&mut out, &dto).map_err(|er| FormatError::json(path, 0, er))?;
        out.write_all(b"\n").map_err(|e2| FormatError::io(path, e2))?;
    }
    out.flush().map_err(|e| FormatError::io(path, e))
}

pub fn load_lexicon(path: &Path) -> Result<Vec<PieLexiconEntry>, FormatError> {
    let file = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lexicon = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let dto: LexiconDto =
            serde_json::from_str(&line).map_err(|e| FormatError::json(path, i + 1, e))?;
        lexicon.push(PieLexiconEntry {
            pie_id: dto.pie_id,
            surface: dto.surface,
            definition_gloss: dto.gloss,
            group_id: dto.group_id,
            idiomaticity_ratio: dto.idiomaticity_ratio,
        });
    }
    Ok(lexicon)
}

pub fn save_manifest(manifest: &CorpusManifest, path: &Path) -> Result<(), FormatError> {
    let dto = ManifestDto {
        schema_version: manifest.schema_version,
        seed: manifest.seed,
        n_pies: manifest.n_pies,
        n_groups: manifest.n_groups,
        vocab_size: manifest.vocab_size,
        n_train: manifest.n_train,
        n_test: manifest.n_test,
        idiomatic_fraction_target: manifest.idiomatic_fraction_target,
        idiomatic_fraction_achieved: manifest.idiomatic_fraction_achieved,
    };
    let text = serde_json::to_string_pretty(&dto).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| FormatError::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let dto: ManifestDto =
        serde_json::from_str(&text).map_err(|e| FormatError::json(path, 1, e))?;
    if dto.schema_version != SCHEMA_VERSION {
        return Err(FormatError::Version {
            path: path.display().to_string(),
            found: dto.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(CorpusManifest {
        schema_version: dto.schema_version,
        seed: dto.seed,
        n_pies: dto.n_pies,
        n_groups: dto.n_groups,
        vocab_size: dto.vocab_size,
        n_train: dto.n_train,
        n_test: dto.n_test,
        idiomatic_fraction_target: dto.idiomatic_fraction_target,
        idiomatic_fraction_achieved: dto.idiomatic_fraction_achieved,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LEXICON_FILE: &str = "lexicon.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

/// Writes the full corpus directory.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    save_manifest(&corpus.manifest, &dir.join(MANIFEST_FILE))?;
    save_lexicon(&corpus.lexicon, &dir.join(LEXICON_FILE))?;
    save_records(&corpus.train, &dir.join(TRAIN_FILE))?;
    save_records(&corpus.test, &dir.join(TEST_FILE))?;
    Ok(())
}

/// Loads and cross-checks a corpus directory against its manifest.
pub fn load_corpus(dir: &Path) -> Result<Corpus, FormatError> {
    let manifest = load_manifest(&dir.join(MANIFEST_FILE))?;
    let lexicon = load_lexicon(&dir.join(LEXICON_FILE))?;
    let train = load_records(&dir.join(TRAIN_FILE), Split::Train)?;
    let test = load_records(&dir.join(TEST_FILE), Split::Test)?;
    let complain = |message: String| {
        Err(FormatError::Field {
            path: dir.display().to_string(),
            line: 0,
            message,
        })
    };
    if lexicon.len() != manifest.n_pies {
        return complain(format!(
            "manifest says {} PIEs, lexicon has {}",
            manifest.n_pies,
            lexicon.len()
        ));
    }
    if train.len() != manifest.n_train || test.len() != manifest.n_test {
        return complain(format!(
            "manifest says {}/{} records, files carry {}/{}",
            manifest.n_train,
            manifest.n_test,
            train.len(),
            test.len()
        ));
    }
    let layout = VocabLayout::new(manifest.n_groups);
    if layout.vocab_size() != manifest.vocab_size {
        return complain(format!(
            "manifest vocab {} does not match layout vocab {}",
            manifest.vocab_size,
            layout.vocab_size()
        ));
    }
    Ok(Corpus {
        lexicon,
        layout,
        train,
        test,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pier_core::corpus::CorpusParams;

    fn sample() -> Corpus {
        Corpus::generate(&CorpusParams {
            seed: 5,
            n_pies: 12,
            n_groups: 4,
            n_train: 300,
            n_test: 80,
            idiomatic_fraction: 0.7,
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_identity() {
        let corpus = sample();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.train, corpus.train);
        assert_eq!(loaded.test, corpus.test);
        assert_eq!(loaded.lexicon, corpus.lexicon);
        assert_eq!(loaded.manifest, corpus.manifest);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let corpus = sample();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_corpus(&corpus, d1.path()).unwrap();
        save_corpus(&corpus, d2.path()).unwrap();
        for f in [MANIFEST_FILE, LEXICON_FILE, TRAIN_FILE, TEST_FILE] {
            let a = fs::read(d1.path().join(f)).unwrap();
            let b = fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "file {f} differs between saves");
        }
    }

    #[test]
    fn truncated_line_is_a_parse_error_with_line_number() {
        let corpus = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        save_records(&corpus.train[..5], &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 20);
        fs::write(&path, bytes).unwrap();
        match load_records(&path, Split::Train) {
            Err(FormatError::Json { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_loads_as_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let records = load_records(&path, Split::Train).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn unknown_fields_and_bad_spans_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        fs::write(
            &path,
            "{\"sentence_id\":0,\"tokens\":[1,2,3],\"pie_id\":0,\"span\":[0,2],\"sense\":\"idiomatic\",\"extra\":1}\n",
        )
        .unwrap();
        assert!(load_records(&path, Split::Train).is_err());
        fs::write(
            &path,
            "{\"sentence_id\":0,\"tokens\":[1,2,3],\"pie_id\":0,\"span\":[2,7],\"sense\":\"idiomatic\"}\n",
        )
        .unwrap();
        assert!(load_records(&path, Split::Train).is_err());
    }

    #[test]
    fn manifest_version_mismatch_is_loud() {
        let corpus = sample();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 9");
        fs::write(&mpath, text).unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(FormatError::Version { .. })
        ));
    }
}
