use std::path::Path;
use std::process::{Command, Output};

fn dsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsr"))
        .current_dir(dir)
        .args(["--profile", "smoke", "--seed", "7", "--corpus", "corpus", "--work", "work"])
        .args(args)
        .output()
        .expect("spawn dsr")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dsr(dir, args);
    assert!(
        out.status.success(),
        "dsr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&dsr(dir.path(), &["no-such-command"])), 2);
    assert_eq!(code(&dsr(dir.path(), &["eval", "--mode", "XX"])), 2);
    assert_eq!(code(&dsr(dir.path(), &["adapt-asa"])), 2);
    let help = Command::new(env!("CARGO_BIN_EXE_dsr")).arg("--help").output().unwrap();
    assert_eq!(code(&help), 0);
    let text = String::from_utf8(help.stdout).unwrap();
    for sub in [
        "gen-corpus", "features", "train-se", "finetune-se", "train-prosody", "train-spk", "train-gen", "adapt-asa",
        "reconstruct", "eval",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // no corpus yet
    let out = dsr(dir.path(), &["features"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    // bad run file
    std::fs::write(dir.path().join("run.toml"), "profile = \"desk\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&dsr(dir.path(), &["--config", "run.toml", "features"])), 1);
}

#[test]
fn smoke_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let s = ok(dir, &["gen-corpus", "--healthy", "4", "--dysarthric", "1", "--utterances", "8", "--reference-utterances", "8"]);
    assert!(s.contains("48 utterances"), "{s}");
    ok(dir, &["features"]);
    assert!(dir.join("work/stats/stats_feat120.txt").exists());

    // adaptation needs a trained baseline
    let early = dsr(dir, &["adapt-asa", "--speaker", "d00"]);
    assert_eq!(code(&early), 1);

    for stage in ["train-se", "finetune-se", "train-prosody", "train-spk"] {
        ok(dir, &[stage]);
    }
    let s = ok(dir, &["train-gen"]);
    assert!(s.contains("d00"), "{s}");
    assert!(dir.join("work/sv_d00.ckpt").exists());

    // resuming a finished stage is a no-op that still succeeds
    ok(dir, &["train-prosody", "--resume"]);

    assert_eq!(code(&dsr(dir, &["adapt-asa", "--speaker", "h00"])), 1);
    ok(dir, &["adapt-asa", "--speaker", "d00", "--grl"]);
    assert!(dir.join("work/asa_d00.ckpt").exists());

    let manifest = std::fs::read_to_string(dir.join("corpus/manifest.jsonl")).unwrap();
    let id = manifest
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|v| v["speaker"] == "d00" && v["split"] == "test")
        .map(|v| v["id"].as_str().unwrap().to_string())
        .expect("a d00 test utterance");
    ok(
        dir,
        &["reconstruct", "--system", "work/asa_d00.ckpt", "--utterance", &id, "--mode", "GG", "--out", "out.wav", "--mel-out", "out.tsv"],
    );
    let wav = hound::WavReader::open(dir.join("out.wav")).unwrap();
    assert_eq!(wav.spec().sample_rate, 16_000);
    assert!(wav.len() > 0);
    let mel = std::fs::read_to_string(dir.join("out.tsv")).unwrap();
    assert_eq!(mel.lines().next().unwrap().split('\t').count(), 80);

    let wav_in = format!("corpus/wav/{id}.wav");
    let align_in = format!("corpus/align/{id}.tsv");
    ok(dir, &["reconstruct", "--system", "work/sv_d00.ckpt", "--wav", &wav_in, "--alignment", &align_in, "--mode", "GP", "--out", "gp.wav"]);
    assert!(dir.join("gp.wav").exists());
    let no_align = dsr(dir, &["reconstruct", "--system", "work/sv_d00.ckpt", "--wav", &wav_in, "--mode", "GG", "--out", "gg.wav"]);
    assert_eq!(code(&no_align), 1);

    let table = ok(dir, &["eval", "--mode", "GG", "--out", "eval.jsonl"]);
    for system in ["raw", "SV-DSR", "ASA-DSR"] {
        assert!(table.contains(system), "{table}");
    }
    let rows = std::fs::read_to_string(dir.join("eval.jsonl")).unwrap();
    assert!(rows.lines().count() >= 3);
}
