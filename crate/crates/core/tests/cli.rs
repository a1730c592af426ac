use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"arm = "mixed"
episodes = 2
episode_length = 30
switch_period = 10
learner_steps_per_env_step = 0.1
mode = "deterministic"
output_dir = "unused"

[env]
render_size = 16

[network]
actor_embedding = 4
actor_layers = [8]
critic_embedding = 4
critic_layers = [8]
conv_channels = [2, 2]

[replay]
snippet_length = 5
batch_size = 4
"#;

fn sacx(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sacx"))
        .args(args)
        .env("SACX_OUTPUT_DIR", out_dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn config_error_names_file_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "arm = \"mixed\"\nepisodes = 2\n\n[replay]\nbatch_size = -3\n",
    )
    .unwrap();
    let out = sacx(&["train", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("bad.toml:5:"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn train_eval_and_render_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out_dir = dir.path().join("out");

    let out = sacx(&["train", cfg.to_str().unwrap(), "--seed", "7"], &out_dir);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let curve = std::fs::read_to_string(out_dir.join("curve_seed7.csv")).unwrap();
    assert!(
        curve.starts_with("episode,task,eval_return,catch,first_catch_step,learner_steps,seed\n")
    );
    let ckpt = out_dir.join("checkpoint_seed7.ckpt");
    assert!(ckpt.exists());

    let out = sacx(
        &["eval", ckpt.to_str().unwrap(), "5P", "--episodes", "2"],
        &out_dir,
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let rows: Vec<_> = text(&out.stdout).lines().map(str::to_owned).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0,9,"), "{rows:?}");

    let out = sacx(&["eval", ckpt.to_str().unwrap(), "3X"], &out_dir);
    assert!(!out.status.success());

    let out = sacx(
        &["render-dump", ckpt.to_str().unwrap(), "--steps", "5"],
        &out_dir,
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let frames = out_dir.join("frames_5F");
    for i in 0..=5 {
        let bytes = std::fs::read(frames.join(format!("frame_{i:04}.pgm"))).unwrap();
        assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
    }
}
