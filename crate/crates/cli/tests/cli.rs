#![allow(clippy::type_complexity)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use cfodds::manifest::sha256_file;
use cfodds::{execute, CliError, Command, ExperimentConfig, Invocation, Layout, Manifest};
use cfodds_core::metrics::{MetricsReport, BASELINE_LABEL, REPORT_JSON, SUMMARY_CSV};
use serde_json::{json, Value};

fn tiny() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.json");
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// The bundled tiny config shrunk further so each pipeline run takes well
/// under a second.
fn small() -> Value {
    let mut c = tiny();
    c["dataset"]["synthetic"]["n"] = json!(400);
    c["cevae"]["training"]["epochs"] = json!(3);
    c["fair"]["epochs"] = json!(3);
    c["fair"]["lambda_clp_grid"] = json!([0.0, 1.0]);
    c["fair"]["learning_rate_grid"] = json!([0.01]);
    c["baseline"]["iterations"] = json!(2);
    c["baseline"]["epochs"] = json!(3);
    c
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn invoke(command: Command, config: &Path, out: &Path) -> cfodds::Result<Manifest> {
    execute(&Invocation {
        command,
        config: config.to_path_buf(),
        out: Some(out.to_path_buf()),
        seed: None,
    })
}

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_cfodds"))
}

#[test]
fn unknown_keys_are_named_and_nothing_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, fn(&mut Value)); 3] = [
        ("colour", |c| c["colour"] = json!(1)),
        ("fair.lambda_clpp", |c| c["fair"]["lambda_clpp"] = json!(1)),
        ("dataset.synthetic.nn", |c| {
            c["dataset"]["synthetic"]["nn"] = json!(1)
        }),
    ];
    for (key, edit) in cases {
        let mut c = tiny();
        edit(&mut c);
        let config = write_config(dir.path(), "bad.json", &c);
        let out = dir.path().join("out");
        match invoke(Command::Run, &config, &out) {
            Err(CliError::ConfigParse {
                key: Some(k),
                message,
                ..
            }) => {
                assert_eq!(k, key);
                assert!(message.contains(&format!("`{key}`")), "{message}");
            }
            other => panic!("expected a parse error for {key}, got {other:?}"),
        }
        assert!(!out.exists(), "{key}: output directory was created");

        let run = bin()
            .args(["generate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert_eq!(run.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&run.stderr).contains(key));
        assert!(!out.exists());
    }
}

#[test]
fn unsupported_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny();
    c["schema_version"] = json!(7);
    let config = write_config(dir.path(), "c.json", &c);
    let err = invoke(Command::Generate, &config, &dir.path().join("out")).unwrap_err();
    assert!(err.to_string().contains("schema_version 7"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_values_are_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let edits: [fn(&mut Value); 4] = [
        |c| c["split"]["fractions"] = json!([0.5, 0.3, 0.3]),
        |c| c["utility"]["alpha_0"] = json!(0.0),
        |c| c["fair"]["lambda_clp_grid"] = json!([]),
        |c| c["report"]["group_labels"] = json!(["only one"]),
    ];
    for edit in edits {
        let mut c = tiny();
        edit(&mut c);
        let config = write_config(dir.path(), "c.json", &c);
        let err = invoke(Command::Run, &config, &dir.path().join("out")).unwrap_err();
        assert!(matches!(err, CliError::InvalidConfig(_)), "{err:?}");
        assert_eq!(err.exit_code(), 2);
        assert!(!dir.path().join("out").exists());
    }
}

#[test]
fn output_directory_comes_from_flag_or_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &small());
    let err = execute(&Invocation {
        command: Command::Generate,
        config: config.clone(),
        out: None,
        seed: None,
    })
    .unwrap_err();
    assert!(err.to_string().contains("--out"), "{err}");

    let mut c = small();
    c["output_dir"] = json!("relative_out");
    let config = write_config(dir.path(), "c.json", &c);
    execute(&Invocation {
        command: Command::Generate,
        config,
        out: None,
        seed: None,
    })
    .unwrap();
    assert!(dir.path().join("relative_out/data/dataset.jsonl").exists());
}

#[test]
fn missing_upstream_artifacts_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &small());
    let out = dir.path().join("out");
    let layout = Layout::new(&out);

    let err = invoke(Command::Split, &config, &out).unwrap_err();
    assert!(
        err.to_string()
            .contains(&layout.dataset().display().to_string()),
        "{err}"
    );

    invoke(Command::Generate, &config, &out).unwrap();
    invoke(Command::Split, &config, &out).unwrap();
    let err = invoke(Command::TrainFair, &config, &out).unwrap_err();
    match &err {
        CliError::Stage { stage, source } => {
            assert_eq!(*stage, "train-fair");
            match source.as_ref() {
                CliError::MissingArtifact { path, stage } => {
                    assert_eq!(path, &layout.vae());
                    assert_eq!(*stage, "train-vae");
                }
                other => panic!("expected a missing artifact, got {other:?}"),
            }
        }
        other => panic!("expected a stage failure, got {other:?}"),
    }
    assert!(err.to_string().contains("vae/cevae.json"), "{err}");

    // the failure lands in the manifest next to the completed stages
    let manifest: Manifest = serde_json::from_slice(&fs::read(layout.manifest()).unwrap()).unwrap();
    let failure = manifest.failure.expect("failure recorded");
    assert_eq!(failure.stage, "train-fair");
    assert!(failure.message.contains("cevae.json"));
    assert!(manifest.artifacts.iter().any(|a| a.stage == "split"));

    let run = bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("missing artifact"));
}

#[test]
fn pipeline_manifest_covers_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &small());
    let out = dir.path().join("out");
    let manifest = invoke(Command::Run, &config, &out).unwrap();
    assert!(manifest.failure.is_none());

    let mut on_disk = Vec::new();
    let mut stack = vec![out.clone()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                on_disk.push(
                    p.strip_prefix(&out)
                        .unwrap()
                        .to_string_lossy()
                        .replace('\\', "/"),
                );
            }
        }
    }
    on_disk.sort();
    let mut listed: Vec<String> = manifest.artifacts.iter().map(|a| a.path.clone()).collect();
    listed.sort();
    assert_eq!(listed, on_disk);

    for a in &manifest.artifacts {
        let (bytes, sha) = sha256_file(&out.join(&a.path)).unwrap();
        assert_eq!(
            (bytes, sha.as_str()),
            (a.bytes, a.sha256.as_str()),
            "{}",
            a.path
        );
    }
    let written: Manifest =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(written.artifacts, manifest.artifacts);
    assert_eq!(written.seed, 20240601);

    let ledger = fs::read_to_string(out.join("fair/candidates.csv")).unwrap();
    let header = ledger.lines().next().unwrap();
    assert!(header.starts_with(
        "lambda_clp,lambda_cf,cf_gradients,learning_rate,val_clp,val_ce,checkpoint_path"
    ));
    assert_eq!(ledger.lines().count(), 3);

    let summary = fs::read_to_string(out.join("report/test").join(SUMMARY_CSV)).unwrap();
    assert_eq!(summary.lines().count(), 4, "{summary}");
    assert!(summary.lines().nth(1).unwrap().starts_with(BASELINE_LABEL));
}

#[test]
fn single_lambda_ledger_reports_baseline_and_one_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c["fair"]["lambda_clp_grid"] = json!([0.5]);
    let config = write_config(dir.path(), "c.json", &c);
    let out = dir.path().join("out");
    invoke(Command::Run, &config, &out).unwrap();
    let report: MetricsReport =
        serde_json::from_slice(&fs::read(out.join("report/validation").join(REPORT_JSON)).unwrap())
            .unwrap();
    let lambdas: Vec<Option<f64>> = report.models.iter().map(|m| m.lambda_clp).collect();
    assert_eq!(lambdas, vec![None, Some(0.5)]);
    assert_eq!(report.models[0].label, BASELINE_LABEL);
    assert!(report.models[0].clp.is_none());
    assert!(report.models[1].clp.is_some());
}

#[test]
fn rerunning_evaluate_and_report_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &small());
    let out = dir.path().join("out");
    let first = invoke(Command::Run, &config, &out).unwrap();
    let second = invoke(Command::Evaluate, &config, &out).unwrap();
    let third = invoke(Command::Report, &config, &out).unwrap();
    assert_eq!(first.artifacts, second.artifacts);
    assert_eq!(first.artifacts, third.artifacts);
}

#[test]
fn seed_override_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &small());
    let run = |seed: Option<u64>, name: &str| {
        let out = dir.path().join(name);
        execute(&Invocation {
            command: Command::Generate,
            config: config.clone(),
            out: Some(out.clone()),
            seed,
        })
        .unwrap();
        fs::read(out.join("data/dataset.jsonl")).unwrap()
    };
    let base = run(None, "a");
    assert_eq!(base, run(Some(20240601), "b"));
    assert_ne!(base, run(Some(7), "c"));
}

#[test]
fn file_datasets_are_imported() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &small());
    let source = dir.path().join("source");
    invoke(Command::Generate, &config, &source).unwrap();

    let mut c = small();
    c["dataset"] = json!({ "file": {
        "dataset": "source/data/dataset.jsonl",
        "ground_truth": "source/data/ground_truth.jsonl"
    }});
    let config = write_config(dir.path(), "file.json", &c);
    let parsed = ExperimentConfig::load(&config).unwrap();
    assert!(matches!(
        parsed.dataset,
        cfodds::config::DatasetSource::File(_)
    ));
    let out = dir.path().join("imported");
    invoke(Command::Run, &config, &out).unwrap();
    assert_eq!(
        fs::read(out.join("data/dataset.jsonl")).unwrap(),
        fs::read(source.join("data/dataset.jsonl")).unwrap()
    );
    assert!(out.join("report/test/ground_truth_shift.json").exists());

    c["dataset"]["file"]["dataset"] = json!("nowhere.jsonl");
    let config = write_config(dir.path(), "file.json", &c);
    let err = invoke(Command::Generate, &config, &dir.path().join("x")).unwrap_err();
    assert!(err.to_string().contains("nowhere.jsonl"), "{err}");
}

#[test]
fn thread_cap_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &small());
    let run = |threads: &str, out: &str| {
        bin()
            .env(cfodds::THREADS_ENV, threads)
            .args(["generate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join(out))
            .output()
            .unwrap()
    };
    let ok = run("2", "ok");
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(String::from_utf8_lossy(&ok.stdout).contains("wrote"));
    for bad in ["0", "many"] {
        let r = run(bad, "bad");
        assert_eq!(r.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&r.stderr).contains(cfodds::THREADS_ENV));
    }
}
