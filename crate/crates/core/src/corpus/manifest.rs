//! Newline-delimited JSON manifests. Each record names a feature file (the
//! checkpoint tensor container holding one tensor `feats`) relative to the
//! manifest's directory.

use super::{FeatureSequence, Utterance};
use crate::nn::{Checkpoint, Matrix, ParamStore, Phase, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub utt_id: String,
    pub feats: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<String>,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Vec<(usize, usize)>>,
}

pub fn write_features(path: &Path, f: &FeatureSequence) -> Result<()> {
    let mut p = ParamStore::new();
    p.insert("feats", Tensor::from_matrix(&f.frames)?)?;
    Checkpoint::new(p, 0, Phase::BurnIn).save(path)
}

pub fn read_features(path: &Path, utt_id: &str) -> Result<FeatureSequence> {
    let ck = Checkpoint::load(path)?;
    let t = ck
        .params
        .get("feats")
        .map_err(|_| Error::Input(format!("{}: no feats tensor", path.display())))?;
    let frames: Matrix<f32> = t.to_matrix()?;
    FeatureSequence::new(utt_id, frames)
}

fn feats_name(utt_id: &str) -> String {
    let safe: String = utt_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("feats/{safe}.feats")
}

/// Write feature files under `<dir>/feats/` and the manifest at `path`.
pub fn write_manifest(path: impl AsRef<Path>, utts: &[Utterance]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(dir.join("feats")).map_err(|e| Error::io(&dir, e))?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for u in utts {
        let rel = feats_name(u.utt_id());
        write_features(&dir.join(&rel), &u.features)?;
        let rec = ManifestRecord {
            utt_id: u.utt_id().to_string(),
            feats: rel,
            transcript: u.transcript.clone(),
            metadata: u.metadata.clone(),
            duration_s: u.duration_s,
            parent_id: u.parent_id.clone(),
            alignment: u.alignment.clone(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Input(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse manifest records without loading features.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Load a manifest and every feature file it references.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    read_records(path)?
        .into_iter()
        .map(|rec| {
            let features = read_features(&dir.join(&rec.feats), &rec.utt_id)?;
            Ok(Utterance {
                features,
                transcript: rec.transcript,
                metadata: rec.metadata,
                duration_s: rec.duration_s,
                parent_id: rec.parent_id,
                alignment: rec.alignment,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};

    #[test]
    fn empty_file_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip_generated_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let spec = CorpusSpec {
            num_utts: 6,
            metadata_noise: 0.3,
            ..Default::default()
        };
        let mut utts = generate_corpus(&spec, 4).unwrap().utterances;
        utts[1].transcript = None;
        utts[2].metadata = None;
        utts[3].parent_id = Some("video1".into());
        write_manifest(&p, &utts).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), utts);
    }

    #[test]
    fn both_fields_populated() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            num_utts: 1,
            ..Default::default()
        };
        let u = generate_corpus(&spec, 1).unwrap().utterances;
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &u).unwrap();
        let back = load_manifest(&p).unwrap();
        assert!(back[0].transcript.is_some() && back[0].metadata.is_some());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(
            &p,
            "{\"utt_id\":\"a\",\"feats\":\"x\",\"duration_s\":1.0}\nnot json\n",
        )
        .unwrap();
        match read_records(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        // first line parses but its feature file is missing
        std::fs::write(&p, "{\"utt_id\":\"a\",\"feats\":\"x\",\"duration_s\":1.0}\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Io { .. })));
    }
}
