//! Exchange-directory protocol for scorers running out of process.
//!
//! The batch is written as `<id>.png` plus `manifest.csv` (`id,kind`). The
//! command receives the directory path as its last argument and must write
//! `scores.csv` (`id,score`) with exactly one score in [0, 1] per manifest id.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use image::RgbImage;

use super::{ModelSet, Scorer, VerifyError};
use crate::detector::ComponentKind;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SCORES_FILE: &str = "scores.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalScorer {
    /// Program followed by its leading arguments.
    pub command: Vec<String>,
    pub threshold: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VerifyError + '_ {
    move |e| VerifyError::Io(path.display().to_string(), e)
}

fn protocol(message: impl Into<String>) -> VerifyError {
    VerifyError::ExternalProtocol(message.into())
}

impl ExternalScorer {
    pub fn new(command: Vec<String>, threshold: f64) -> Result<Self, VerifyError> {
        if command.is_empty() {
            return Err(protocol("empty scorer command"));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(VerifyError::InvalidThreshold(threshold));
        }
        Ok(Self { command, threshold })
    }

    /// Splits a command line on whitespace; quoting is not supported.
    pub fn from_command_line(line: &str, threshold: f64) -> Result<Self, VerifyError> {
        Self::new(line.split_whitespace().map(String::from).collect(), threshold)
    }

    fn run(&self, dir: &Path) -> Result<(), VerifyError> {
        let output = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg(dir)
            .output()
            .map_err(io_err(Path::new(&self.command[0])))?;
        if !output.status.success() {
            return Err(VerifyError::ExternalFailed {
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
            });
        }
        Ok(())
    }
}

fn crop_id(i: usize) -> String {
    format!("c{i:06}")
}

fn write_exchange(dir: &Path, batch: &[(ComponentKind, &RgbImage)]) -> Result<Vec<String>, VerifyError> {
    let manifest = dir.join(MANIFEST_FILE);
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| protocol(e.to_string()))?;
    writer.write_record(["id", "kind"]).map_err(|e| protocol(e.to_string()))?;
    let mut ids = Vec::with_capacity(batch.len());
    for (i, (kind, crop)) in batch.iter().enumerate() {
        let id = crop_id(i);
        let path = dir.join(format!("{id}.png"));
        crop.save(&path)
            .map_err(|e| VerifyError::MalformedImage(format!("{}: {e}", path.display())))?;
        writer
            .write_record([id.as_str(), kind.as_str()])
            .map_err(|e| protocol(e.to_string()))?;
        ids.push(id);
    }
    writer.flush().map_err(io_err(&manifest))?;
    Ok(ids)
}

fn read_scores(dir: &Path, ids: &[String]) -> Result<Vec<f64>, VerifyError> {
    let path = dir.join(SCORES_FILE);
    if !path.exists() {
        return Err(protocol(format!("scorer did not write {SCORES_FILE}")));
    }
    let mut reader = csv::Reader::from_path(&path).map_err(|e| protocol(e.to_string()))?;
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| protocol(format!("{SCORES_FILE}: {e}")))?;
        let (Some(id), Some(raw)) = (record.get(0), record.get(1)) else {
            return Err(protocol(format!("{SCORES_FILE}: short row")));
        };
        let score: f64 = raw
            .trim()
            .parse()
            .map_err(|_| protocol(format!("{SCORES_FILE}: unparseable score `{raw}` for {id}")))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(protocol(format!("score {score} for {id} is outside [0, 1]")));
        }
        if scores.insert(id.trim().to_string(), score).is_some() {
            return Err(protocol(format!("duplicate score for {id}")));
        }
    }
    if scores.len() != ids.len() {
        return Err(protocol(format!(
            "expected {} scores, scorer returned {}",
            ids.len(),
            scores.len()
        )));
    }
    ids.iter()
        .map(|id| {
            scores
                .get(id)
                .copied()
                .ok_or_else(|| protocol(format!("no score for {id}")))
        })
        .collect()
}

impl Scorer for ExternalScorer {
    fn threshold(&self, _kind: ComponentKind) -> Option<f64> {
        Some(self.threshold)
    }

    fn score_batch(&self, batch: &[(ComponentKind, &RgbImage)]) -> Result<Vec<f64>, VerifyError> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let dir = tempfile::tempdir().map_err(io_err(Path::new("temporary directory")))?;
        let ids = write_exchange(dir.path(), batch)?;
        self.run(dir.path())?;
        read_scores(dir.path(), &ids)
    }
}

/// Reads `manifest.csv` from an exchange directory.
pub fn read_manifest(dir: &Path) -> Result<Vec<(String, ComponentKind)>, VerifyError> {
    let path = dir.join(MANIFEST_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| protocol(format!("{}: {e}", path.display())))?;
    reader
        .records()
        .map(|record| {
            let record = record.map_err(|e| protocol(format!("{MANIFEST_FILE}: {e}")))?;
            let id = record.get(0).ok_or_else(|| protocol("manifest row without id"))?;
            let kind = record
                .get(1)
                .ok_or_else(|| protocol("manifest row without kind"))?
                .parse()
                .map_err(|e| protocol(format!("{MANIFEST_FILE}: {e}")))?;
            Ok((id.to_string(), kind))
        })
        .collect()
}

/// Scorer side of the protocol for the reference models: scores every crop
/// listed in the manifest and writes `scores.csv`.
pub fn serve_exchange(dir: &Path, models: &ModelSet) -> Result<usize, VerifyError> {
    let entries = read_manifest(dir)?;
    let mut crops = Vec::with_capacity(entries.len());
    for (id, kind) in &entries {
        let path = dir.join(format!("{id}.png"));
        let img = image::open(&path)
            .map_err(|e| VerifyError::MalformedImage(format!("{}: {e}", path.display())))?
            .to_rgb8();
        crops.push((*kind, img));
    }
    let batch: Vec<(ComponentKind, &RgbImage)> = crops.iter().map(|(k, img)| (*k, img)).collect();
    let scores = models.score_batch(&batch)?;
    let path = dir.join(SCORES_FILE);
    let mut writer = csv::Writer::from_path(&path).map_err(|e| protocol(e.to_string()))?;
    writer.write_record(["id", "score"]).map_err(|e| protocol(e.to_string()))?;
    for ((id, _), score) in entries.iter().zip(&scores) {
        writer
            .write_record([id.clone(), score.to_string()])
            .map_err(|e| protocol(e.to_string()))?;
    }
    writer.flush().map_err(io_err(&path))?;
    Ok(scores.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn stub(body: &str) -> (tempfile::TempDir, ExternalScorer) {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("scorer.sh");
        fs::write(&script, body).unwrap();
        let scorer = ExternalScorer::new(vec!["sh".into(), script.display().to_string()], 0.5).unwrap();
        (dir, scorer)
    }

    const CONSTANT: &str = r#"d="$1"; { echo id,score; tail -n +2 "$d/manifest.csv" | cut -d, -f1 | sed 's/$/,SCORE/'; } > "$d/scores.csv""#;

    fn batch_of(n: usize) -> Vec<RgbImage> {
        (0..n).map(|i| RgbImage::new(3 + i as u32, 4)).collect()
    }

    #[test]
    fn constant_stub_scores_every_crop() {
        let (_d, scorer) = stub(&CONSTANT.replace("SCORE", "1.0"));
        let imgs = batch_of(3);
        let batch: Vec<_> = imgs.iter().map(|i| (ComponentKind::AppBar, i)).collect();
        assert_eq!(scorer.score_batch(&batch).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn nonzero_exit_is_a_hard_error() {
        let (_d, scorer) = stub("echo broken >&2; exit 3");
        let imgs = batch_of(1);
        let batch: Vec<_> = imgs.iter().map(|i| (ComponentKind::AppBar, i)).collect();
        match scorer.score_batch(&batch) {
            Err(VerifyError::ExternalFailed { stderr, .. }) => assert_eq!(stderr, "broken"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_a_hard_error() {
        let (_d, scorer) = stub(r#"printf 'id,score\nc000000,0.5\n' > "$1/scores.csv""#);
        let imgs = batch_of(2);
        let batch: Vec<_> = imgs.iter().map(|i| (ComponentKind::AppBar, i)).collect();
        assert!(matches!(scorer.score_batch(&batch), Err(VerifyError::ExternalProtocol(_))));
    }

    #[test]
    fn out_of_range_score_is_rejected() {
        let (_d, scorer) = stub(&CONSTANT.replace("SCORE", "1.5"));
        let imgs = batch_of(1);
        let batch: Vec<_> = imgs.iter().map(|i| (ComponentKind::AppBar, i)).collect();
        assert!(matches!(scorer.score_batch(&batch), Err(VerifyError::ExternalProtocol(_))));
    }

    #[test]
    fn missing_scores_file_is_rejected() {
        let (_d, scorer) = stub("true");
        let imgs = batch_of(1);
        let batch: Vec<_> = imgs.iter().map(|i| (ComponentKind::AppBar, i)).collect();
        assert!(matches!(scorer.score_batch(&batch), Err(VerifyError::ExternalProtocol(_))));
    }

    #[test]
    fn manifest_lists_ids_and_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = batch_of(2);
        let batch = vec![(ComponentKind::SnackBar, &imgs[0]), (ComponentKind::TabLayout, &imgs[1])];
        write_exchange(dir.path(), &batch).unwrap();
        assert_eq!(
            read_manifest(dir.path()).unwrap(),
            vec![
                ("c000000".to_string(), ComponentKind::SnackBar),
                ("c000001".to_string(), ComponentKind::TabLayout)
            ]
        );
        assert!(dir.path().join("c000001.png").exists());
    }
}
