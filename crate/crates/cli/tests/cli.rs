use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use attn_edit::attention::{AttentionWeights, LatentTokens};
use attn_edit::io::{write_container, DirectionsFile, Dtype, LatentFile, LayerSpec};
use attn_edit::sampling::{gaussian_weights, stream_rng, whitened_tokens};
use attn_edit::Matrix;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_attn-edit"))
}

fn run(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for (flag, path) in paths {
        cmd.arg(flag).arg(path);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_exit(o: &Output, code: i32) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
}

fn container(dir: &Path, layers: &[(&str, AttentionWeights)]) -> PathBuf {
    let path = dir.join("model.json");
    let specs: Vec<LayerSpec> = layers
        .iter()
        .map(|(id, w)| LayerSpec {
            layer_id: id,
            weights: w,
            dtype: Dtype::F64,
        })
        .collect();
    write_container(&path, &specs).unwrap();
    path
}

fn diag_weights() -> AttentionWeights {
    let z = Matrix::zeros(2, 2);
    AttentionWeights::new(Matrix::from_diag(&[3.0, 1.0]), z.clone(), z).unwrap()
}

fn latents(dir: &Path, name: &str, samples: Vec<LatentTokens>) -> PathBuf {
    let path = dir.join(name);
    LatentFile::new(samples, 1000, Dtype::F64).unwrap().write(&path).unwrap();
    path
}

fn gaussian_latents(dir: &Path, n_samples: usize, n: usize, d: usize, timesteps: &[u32]) -> PathBuf {
    let mut rng = stream_rng(3, 0);
    let samples = (0..n_samples)
        .map(|i| LatentTokens::at_timestep(whitened_tokens(&mut rng, n, d).z, timesteps[i % timesteps.len()]))
        .collect();
    latents(dir, "z.aelt", samples)
}

fn extract(dir: &Path, weights: &Path, layer: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(format!("{layer}.dirs.json"));
    let mut args = vec!["extract", "--layer", layer];
    args.extend_from_slice(extra);
    let o = run(&args, &[("--weights", weights), ("--out", &out)]);
    assert_exit(&o, 0);
    out
}

#[test]
fn extract_identity_fixture_flags_degenerate_directions() {
    let tmp = tempfile::tempdir().unwrap();
    let weights = container(tmp.path(), &[("enc", AttentionWeights::identity(4))]);
    let out = extract(tmp.path(), &weights, "enc", &["--top-k", "2"]);
    let file = DirectionsFile::read(&out).unwrap();
    assert_eq!(file.directions.len(), 2);
    for d in &file.directions {
        assert_eq!(d.eigenvalue, 3.0);
        assert!(d.degenerate_cluster);
    }
}

#[test]
fn extract_diagonal_fixture_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let weights = container(tmp.path(), &[("enc", diag_weights())]);
    let out = extract(tmp.path(), &weights, "enc", &["--top-k", "1"]);
    let first = fs::read(&out).unwrap();
    let file = DirectionsFile::read(&out).unwrap();
    assert_eq!(file.directions[0].eigenvalue, 9.0);
    assert_eq!(file.directions[0].vector, vec![1.0, 0.0]);
    assert_eq!(file.variant.to_string(), "final");

    extract(tmp.path(), &weights, "enc", &["--top-k", "1"]);
    assert_eq!(fs::read(&out).unwrap(), first);
}

#[test]
fn extract_errors_have_codes_and_single_line_prefixes() {
    let tmp = tempfile::tempdir().unwrap();
    let weights = container(tmp.path(), &[("enc", diag_weights()), ("dec", diag_weights())]);
    let out = tmp.path().join("x.json");

    let o = run(&["extract", "--layer", "mid"], &[("--weights", &weights), ("--out", &out)]);
    assert_exit(&o, 2);
    let msg = stderr(&o);
    assert!(msg.starts_with("error[usage]:") && msg.contains("enc") && msg.contains("dec"), "{msg}");
    assert_eq!(msg.trim_end().lines().count(), 1);

    let o = run(&["extract", "--layer", "enc", "--top-k", "3"], &[("--weights", &weights), ("--out", &out)]);
    assert_exit(&o, 2);

    fs::write(tmp.path().join("weights.bin"), [0u8; 8]).unwrap();
    let o = run(&["extract", "--layer", "enc"], &[("--weights", &weights), ("--out", &out)]);
    assert_exit(&o, 3);
    assert!(stderr(&o).starts_with("error[format]:"));

    let o = run(&["extract", "--layer", "enc", "--variant", "other"], &[("--weights", &weights), ("--out", &out)]);
    assert_exit(&o, 2);
}

#[test]
fn validate_reports_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let weights = container(tmp.path(), &[("enc", gaussian_weights(&mut stream_rng(7, 0), 16))]);
    let o = run(
        &["validate", "--layer", "enc", "--seed", "7", "--samples", "64", "--directions", "40", "--json"],
        &[("--weights", &weights)],
    );
    // Exit 0 or 4 depending on the verdicts; either way the report is complete.
    assert!(matches!(o.status.code(), Some(0) | Some(4)), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["jacobian", "first_order", "sensitivity", "cross_term", "dominance"] {
        assert!(report[key]["passed"].is_boolean(), "missing {key}");
    }
    assert_eq!(report["config"]["seed"], 7);
    let all_pass = ["jacobian", "first_order", "sensitivity", "cross_term", "dominance"]
        .iter()
        .all(|k| report[*k]["passed"] == true);
    assert_eq!(o.status.code() == Some(0), all_pass);
}

#[test]
fn validate_rejects_zero_alpha_and_unknown_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let weights = container(tmp.path(), &[("enc", diag_weights())]);
    let o = run(&["validate", "--layer", "enc", "--alpha", "0"], &[("--weights", &weights)]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("alpha > 0"));
    let o = run(&["validate", "--layer", "nope"], &[("--weights", &weights)]);
    assert_exit(&o, 2);
}

#[test]
fn whiten_report_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let weights = container(tmp.path(), &[("enc", gaussian_weights(&mut stream_rng(1, 0), 16))]);
    let z = gaussian_latents(tmp.path(), 1024, 32, 16, &[600]);
    let o = run(&["whiten-report", "--layer", "enc", "--json"], &[("--weights", &weights), ("--latents", &z)]);
    assert_exit(&o, 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["dev_zz"].as_f64().unwrap() <= 0.1);
    for key in ["dev_vv", "dev_ss", "cross_term_ratio"] {
        assert!(report[key].as_f64().unwrap() >= 0.0);
    }

    let zeros = (0..4).map(|_| LatentTokens::at_timestep(Matrix::zeros(8, 16), 0)).collect();
    let zero_file = latents(tmp.path(), "zeros.aelt", zeros);
    let o = run(&["whiten-report", "--layer", "enc", "--json"], &[("--weights", &weights), ("--latents", &zero_file)]);
    assert_exit(&o, 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["dev_zz"].as_f64().unwrap(), 1.0);

    let wrong = gaussian_latents(tmp.path(), 4, 8, 5, &[0]);
    let o = run(&["whiten-report", "--layer", "enc"], &[("--weights", &weights), ("--latents", &wrong)]);
    assert_exit(&o, 2);
    assert!(stderr(&o).starts_with("error[usage]:"));
}

fn edit_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let weights = container(dir, &[("enc", gaussian_weights(&mut stream_rng(5, 0), 6))]);
    let dirs = extract(dir, &weights, "enc", &["--top-k", "3"]);
    let z = gaussian_latents(dir, 2, 4, 6, &[600, 100]);
    (z, dirs)
}

#[test]
fn edit_gates_by_timestep_and_writes_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let (z, dirs) = edit_fixture(tmp.path());
    let out = tmp.path().join("e.aelt");
    let o = run(&["edit", "--alpha", "0.2", "--rank", "1"], &[("--latents", &z), ("--directions", &dirs), ("--out", &out)]);
    assert_exit(&o, 0);
    let input = LatentFile::read(&z).unwrap();
    let edited = LatentFile::read(&out).unwrap();
    assert_eq!(edited.header, input.header);
    assert_ne!(edited.samples[0], input.samples[0]);
    assert_eq!(edited.samples[1], input.samples[1]);
    let d = DirectionsFile::read(&dirs).unwrap().direction(1).unwrap();
    let delta = edited.samples[0].z.sub(&input.samples[0].z).unwrap();
    for row in delta.row_iter() {
        for (x, v) in row.iter().zip(&d.vector) {
            assert!((x - 0.2 * v).abs() <= 1e-15);
        }
    }

    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("e.aelt.json")).unwrap()).unwrap();
    assert_eq!(sidecar["layer_id"], "enc");
    assert_eq!(sidecar["rank"], 1);
    assert_eq!(sidecar["alpha"], 0.2);
    assert_eq!(sidecar["n_edited"], 1);

    let o = run(&["edit", "--alpha", "0"], &[("--latents", &z), ("--directions", &dirs), ("--out", &out)]);
    assert_exit(&o, 0);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&z).unwrap());
}

#[test]
fn edit_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (z, dirs) = edit_fixture(tmp.path());
    let out = tmp.path().join("e.aelt");
    let o = run(&["edit", "--alpha", "0.2", "--rank", "3"], &[("--latents", &z), ("--directions", &dirs), ("--out", &out)]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("rank 3"));

    let o = run(&["edit", "--rank", "0"], &[("--latents", &z), ("--directions", &dirs), ("--out", &out)]);
    assert_exit(&o, 2);

    let o = run(
        &["edit", "--alpha", "0.2", "--t-low", "0.9", "--t-high", "0.8"],
        &[("--latents", &z), ("--directions", &dirs), ("--out", &out)],
    );
    assert_exit(&o, 2);

    fs::write(&z, b"AELT").unwrap();
    let o = run(&["edit", "--alpha", "0.2"], &[("--latents", &z), ("--directions", &dirs), ("--out", &out)]);
    assert_exit(&o, 3);
}

#[test]
fn edit_sweep_writes_affine_series() {
    let tmp = tempfile::tempdir().unwrap();
    // Dyadic tokens and direction keep every sum exact.
    let weights = container(tmp.path(), &[("enc", AttentionWeights::identity(4))]);
    let dirs = tmp.path().join("d.json");
    let mut file = DirectionsFile::read(extract(tmp.path(), &weights, "enc", &["--top-k", "1"])).unwrap();
    file.directions[0].vector = vec![0.5; 4];
    file.write(&dirs).unwrap();
    let data = (0..16).map(|i| f64::from(i) / 4.0 - 2.0).collect();
    let z = latents(tmp.path(), "z.aelt", vec![LatentTokens::at_timestep(Matrix::new(4, 4, data).unwrap(), 700)]);

    let out = tmp.path().join("sweep.aelt");
    let o = run(&["edit", "--sweep-points", "5"], &[("--latents", &z), ("--directions", &dirs), ("--out", &out)]);
    assert_exit(&o, 0);
    let series: Vec<Matrix> = (0..5)
        .map(|i| LatentFile::read(tmp.path().join(format!("sweep.{i:02}.aelt"))).unwrap().samples[0].z.clone())
        .collect();
    let alphas: Vec<f64> = (0..5)
        .map(|i| {
            let text = fs::read_to_string(tmp.path().join(format!("sweep.{i:02}.aelt.json"))).unwrap();
            serde_json::from_str::<serde_json::Value>(&text).unwrap()["alpha"].as_f64().unwrap()
        })
        .collect();
    assert_eq!(alphas, vec![-0.4, -0.2, 0.0, 0.2, 0.4]);
    assert_eq!(series[2], LatentFile::read(&z).unwrap().samples[0].z);
    assert_eq!(series[0].add(&series[4]).unwrap().scale(0.5), series[2]);
    assert_eq!(series[1].add(&series[3]).unwrap().scale(0.5), series[2]);
}

#[test]
fn sweep_series_table() {
    let tmp = tempfile::tempdir().unwrap();
    let weights = container(tmp.path(), &[("enc", gaussian_weights(&mut stream_rng(2, 0), 8))]);
    let dirs = extract(tmp.path(), &weights, "enc", &[]);
    let z = gaussian_latents(tmp.path(), 1, 32, 8, &[650]);
    let out = tmp.path().join("s.csv");
    let o = run(
        &["sweep-series", "--points", "3", "--rank", "2"],
        &[("--latents", &z), ("--directions", &dirs), ("--out", &out)],
    );
    assert_exit(&o, 0);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("alpha,delta_norm,predicted_sensitivity"));
    let lambda = DirectionsFile::read(&dirs).unwrap().directions[2].eigenvalue;
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    let expect_norm = 0.4 * 32f64.sqrt();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1], vec![0.0, 0.0, 0.0]);
    for r in [&rows[0], &rows[2]] {
        assert_eq!(r[0].abs(), 0.4);
        assert!((r[1] - expect_norm).abs() <= 1e-12 * expect_norm, "{}", r[1]);
        assert_eq!(r[2], 0.4 * 0.4 * lambda);
    }

    let o = run(&["sweep-series", "--points", "9"], &[("--latents", &z), ("--directions", &dirs), ("--out", &out)]);
    assert_exit(&o, 0);
    let rows: Vec<Vec<f64>> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    for pair in rows[4..].windows(2) {
        assert!(pair[1][1] > pair[0][1]);
    }

    let o = run(&["sweep-series", "--sample", "5"], &[("--latents", &z), ("--directions", &dirs), ("--out", &out)]);
    assert_exit(&o, 2);
}

#[test]
fn synth_fixtures_feed_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m.json");
    let z = tmp.path().join("z.aelt");
    assert_exit(&run(&["synth", "weights", "--d", "8", "--layer", "enc"], &[("--out", &m)]), 0);
    assert_exit(
        &run(&["synth", "latents", "--samples", "10", "--tokens", "4", "--d", "8"], &[("--out", &z)]),
        0,
    );
    let file = LatentFile::read(&z).unwrap();
    let steps: Vec<u32> = file.samples.iter().map(|s| s.timestep.unwrap()).collect();
    assert_eq!(steps, vec![50, 150, 250, 350, 450, 550, 650, 750, 850, 950]);
    let dirs = extract(tmp.path(), &m, "enc", &[]);
    let out = tmp.path().join("e.aelt");
    assert_exit(&run(&["edit", "--alpha", "0.1"], &[("--latents", &z), ("--directions", &dirs), ("--out", &out)]), 0);
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("e.aelt.json")).unwrap()).unwrap();
    assert_eq!(sidecar["n_edited"], 3);
}
