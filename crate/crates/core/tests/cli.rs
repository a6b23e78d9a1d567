use std::path::Path;
use std::process::{Command, Output};

use legonn::harness::report::CSV_HEADER;
use legonn::harness::{ModelKind, RunConfig};
use legonn::tasks::TaskKind;

fn legonn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_legonn")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn quick(task: TaskKind, kind: ModelKind, seed: u64) -> RunConfig {
    let mut c = RunConfig::default_for(task, kind, seed);
    c.data.train_examples = 48;
    c.data.valid_examples = 0;
    c.data.test_examples = 6;
    c.train.steps = 10;
    c.train.warmup_steps = 2;
    c.train.valid_every = 0;
    c
}

fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> String {
    let p = dir.join(name);
    std::fs::write(&p, cfg.to_toml().unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn train(dir: &Path, name: &str, cfg: &RunConfig) -> String {
    let config = write_config(dir, &format!("{name}.toml"), cfg);
    let out = dir.join(name).to_string_lossy().into_owned();
    let o = legonn(&["train", "--config", &config, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn sums(dir: &Path) -> Vec<Vec<u8>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "bundle"))
        .collect();
    files.sort();
    files.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn report_on_empty_directory_is_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = tmp.path().join("out");
    let o = legonn(&["report", "--out", out.to_str().unwrap(), empty.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv, CSV_HEADER.join(",") + "\n");
    assert!(std::fs::read_to_string(out.join("report.svg")).unwrap().contains("<svg"));
}

#[test]
fn bad_config_exits_2_naming_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick(TaskKind::MtA, ModelKind::Baseline, 1);
    let text = cfg.to_toml().unwrap().replace("warmup_steps", "warmup_stepz");
    let p = tmp.path().join("bad.toml");
    std::fs::write(&p, text).unwrap();
    let o = legonn(&["train", "--config", p.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("warmup_stepz") && msg.contains("line"), "{msg}");

    let o = legonn(&["train", "--out", "x"]);
    assert_eq!(code(&o), 2);
    let o = legonn(&["train", "--config", "c.toml", "--out", "x", "--seed", "nope"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn diverging_run_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = quick(TaskKind::MtA, ModelKind::LegoWemb, 1);
    cfg.train.peak_lr = 1e300;
    cfg.train.warmup_steps = 1;
    let config = write_config(tmp.path(), "hot.toml", &cfg);
    let o = legonn(&["train", "--config", &config, "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn train_eval_stress_transfer_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let a = train(d, "a", &quick(TaskKind::MtA, ModelKind::LegoWemb, 1));
    let b = train(d, "b", &quick(TaskKind::MtA, ModelKind::LegoWemb, 2));
    let enc_b = train(d, "enc_b", &quick(TaskKind::MtB, ModelKind::EncoderOnly, 1));
    train(d, "asr", &quick(TaskKind::AsrMain, ModelKind::PhonemeEncoder, 1));
    assert!(Path::new(&a).join("manifest.json").is_file());
    assert_eq!(sums(Path::new(&a)).len(), 2);

    // --seed overrides the file and changes the result
    let cfg = write_config(d, "a.toml", &quick(TaskKind::MtA, ModelKind::LegoWemb, 1));
    let a2 = d.join("a2");
    let o = legonn(&["train", "--config", &cfg, "--seed", "2", "--out", a2.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(sums(&a2), sums(Path::new(&b)));

    let eval = d.join("eval.toml");
    std::fs::write(&eval, "[eval]\nrun = \"a\"\ntask = \"mt_A\"\nexamples = 5\n").unwrap();
    let o = legonn(&["eval", "--config", eval.to_str().unwrap(), "--out", d.join("ev").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("greedy"));

    // a phoneme encoder cannot feed a word decoder
    let bad = d.join("bad_eval.toml");
    std::fs::write(
        &bad,
        "[eval]\nbundles = [\"asr/0_ctc_encoder.bundle\", \"a/1_ar_decoder.bundle\"]\ntask = \"asr_main\"\nexamples = 2\n",
    )
    .unwrap();
    let o = legonn(&["eval", "--config", bad.to_str().unwrap(), "--out", d.join("ev2").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let before: Vec<_> = [&a, &b].iter().map(|p| sums(Path::new(p))).collect();
    let stress = d.join("stress.toml");
    std::fs::write(
        &stress,
        "[stress]\nkind = \"seed_swap\"\ntask = \"mt_A\"\nruns = [\"a\", \"b\"]\ntest_examples = 4\n",
    )
    .unwrap();
    let st = d.join("st");
    let o = legonn(&["stress", "--config", stress.to_str().unwrap(), "--out", st.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let after: Vec<_> = [&a, &b].iter().map(|p| sums(Path::new(p))).collect();
    assert_eq!(before, after);
    let csv = std::fs::read_to_string(st.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);

    let transfer = d.join("transfer.toml");
    std::fs::write(
        &transfer,
        "[transfer]\nname = \"x\"\ndecoder = \"a\"\nencoder = [\"enc_b\"]\nencoder_task = \"mt_B\"\ntest_examples = 4\n",
    )
    .unwrap();
    let tr = d.join("tr");
    let o = legonn(&["transfer", "--config", transfer.to_str().unwrap(), "--out", tr.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let mismatch = d.join("mismatch.toml");
    std::fs::write(
        &mismatch,
        "[transfer]\ndecoder = \"a\"\nencoder = [\"asr\"]\nencoder_task = \"asr_main\"\ntest_examples = 2\n",
    )
    .unwrap();
    let o = legonn(&["transfer", "--config", mismatch.to_str().unwrap(), "--out", d.join("mm").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let rep = d.join("rep");
    let o = legonn(&["report", "--out", rep.to_str().unwrap(), &a, &b, &enc_b]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(rep.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);

    // running the same stress twice gives byte-identical reports
    let st2 = d.join("st2");
    let o = legonn(&["stress", "--config", stress.to_str().unwrap(), "--out", st2.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for f in ["report.csv", "report.svg", "report.json"] {
        assert_eq!(std::fs::read(st.join(f)).unwrap(), std::fs::read(st2.join(f)).unwrap());
    }
}
