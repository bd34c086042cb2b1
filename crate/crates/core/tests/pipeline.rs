use std::fs;
use std::path::Path;
use std::process::Command;

use patternscope::pipeline::{Pipeline, PipelineConfig, PipelineError, Stage, StageOutcome};

fn copy_tree(src: &Path, dst: &Path) {
    fs::create_dir_all(dst).unwrap();
    for entry in fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let target = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            if entry.file_name() != "out" {
                copy_tree(&entry.path(), &target);
            }
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn smoke(dir: &Path) -> Pipeline {
    copy_tree(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/smoke"), dir);
    Pipeline::new(PipelineConfig::load(&dir.join("pipeline.toml")).unwrap()).unwrap()
}

fn outcomes(p: &Pipeline, force: bool) -> Vec<StageOutcome> {
    p.run_all(force).unwrap().into_iter().map(|(_, o)| o).collect()
}

#[test]
fn stage_without_upstream_is_a_missing_dependency() {
    let dir = tempfile::tempdir().unwrap();
    let p = smoke(dir.path());
    let err = p.run_stage(Stage::Detect, false).unwrap_err();
    assert!(
        matches!(err, PipelineError::MissingDependency { stage: Stage::Detect, needs: Stage::Ingest }),
        "{err:?}"
    );
    assert_eq!(err.exit_code(), 3);
    assert!(!p.stage_dir(Stage::Detect).exists());
}

#[test]
fn unchanged_rerun_skips_and_changes_propagate() {
    let dir = tempfile::tempdir().unwrap();
    let p = smoke(dir.path());
    assert!(outcomes(&p, false).iter().all(|o| *o == StageOutcome::Ran));
    let manifest = p.out_dir().join("manifest.json");
    let before = fs::read(&manifest).unwrap();

    assert!(outcomes(&p, false).iter().all(|o| *o == StageOutcome::Skipped));
    assert_eq!(fs::read(&manifest).unwrap(), before);

    // forced runs reproduce the same outputs
    assert!(outcomes(&p, true).iter().all(|o| *o == StageOutcome::Ran));
    assert_eq!(fs::read(&manifest).unwrap(), before);

    // a tampered output reruns its stage; identical outputs leave the rest cached
    fs::remove_file(p.stage_dir(Stage::Heatmap).join("summary.csv")).unwrap();
    let ran: Vec<Stage> = p
        .run_all(false)
        .unwrap()
        .into_iter()
        .filter(|(_, o)| *o == StageOutcome::Ran)
        .map(|(s, _)| s)
        .collect();
    assert_eq!(ran, vec![Stage::Heatmap]);

    // new metadata changes ingest and everything downstream of it
    let meta = dir.path().join("metadata.csv");
    let text = fs::read_to_string(&meta).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    fs::write(&meta, lines.join("\n") + "\n").unwrap();
    let after = p.run_all(false).unwrap();
    assert_eq!(after[0], (Stage::Ingest, StageOutcome::Ran));
    assert!(after.contains(&(Stage::Analyze, StageOutcome::Ran)));
}

#[test]
fn report_lists_its_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = smoke(dir.path());
    p.run_all(false).unwrap();
    let report = p.stage_dir(Stage::Report);
    let listed = fs::read_to_string(report.join("files.csv")).unwrap();
    let files: Vec<&str> = listed.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert!(files.iter().any(|f| f.ends_with(".svg")));
    assert!(files.iter().any(|f| f.starts_with("heatmap_") && f.ends_with(".png")));
    for f in files {
        assert!(report.join(f).is_file(), "{f} listed but missing");
    }
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_patternscope");
    let dir = tempfile::tempdir().unwrap();

    let missing = Command::new(bin)
        .args(["ingest", "--config"])
        .arg(dir.path().join("absent.toml"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));

    smoke(dir.path());
    let config = dir.path().join("pipeline.toml");
    let early = Command::new(bin).arg("verify").arg("--config").arg(&config).output().unwrap();
    assert_eq!(early.status.code(), Some(3));

    let ok = Command::new(bin).arg("ingest").arg("--config").arg(&config).output().unwrap();
    assert!(ok.status.success());
    assert_eq!(String::from_utf8_lossy(&ok.stdout).trim(), "ingest: done");
    let again = Command::new(bin).arg("ingest").arg("--config").arg(&config).output().unwrap();
    assert_eq!(String::from_utf8_lossy(&again.stdout).trim(), "ingest: unchanged");
}
