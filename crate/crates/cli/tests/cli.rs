use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 5
out_dir = "out"

[dataset]
dir = "data"
image_size = 32
count_per_class = 10
train_family = { kind = "grid", period = 8, amplitude = 0.05 }
test_families = [{ kind = "upsample", factor = 2 }, { kind = "peaks", count = 4, amplitude = 0.1, seed = 1 }]

[train]
epochs = 1
batch_size = 8
pipeline = { augmentations = [{ kind = "frequency", ratio = 0.15 }] }

[prune]
prune_ratio = 0.5
finetune_epochs = 1

[sweep]
seeds = [0, 1]
"#;

fn fdmask(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdmask"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fdmask(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), config).unwrap();
    dir
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn run_all(dir: &Path) {
    let c = ["--config", "exp.toml"];
    ok(dir, &[&c[..], &["gen-data"]].concat());
    ok(dir, &[&c[..], &["train"]].concat());
    ok(dir, &[&c[..], &["eval"]].concat());
    ok(dir, &[&c[..], &["prune"]].concat());
    ok(dir, &[&c[..], &["finetune"]].concat());
    ok(dir, &[&c[..], &["spectrum"]].concat());
    ok(dir, &[&c[..], &["augment", "--input", "data/test/grid-p8/fake_0000.ppm", "--output", "out/aug.ppm"]].concat());
    ok(dir, &[&c[..], &["sweep", "--axis", "band", "--values", "low,all", "--jobs", "2"]].concat());
}

#[test]
fn reruns_are_byte_identical() {
    let a = setup(CONFIG);
    run_all(a.path());
    let first = snapshot(a.path());
    run_all(a.path());
    assert_eq!(first, snapshot(a.path()));
    let b = setup(CONFIG);
    run_all(b.path());
    assert_eq!(first, snapshot(b.path()));
    for name in ["out/eval.tsv", "out/prune_plan.tsv", "out/sweep_band.tsv", "data/index.tsv"] {
        assert!(first.contains_key(name), "{name} missing");
    }
}

#[test]
fn outputs_carry_the_config_hash() {
    let dir = setup(CONFIG);
    ok(dir.path(), &["--config", "exp.toml", "gen-data"]);
    let index = fs::read_to_string(dir.path().join("data/index.tsv")).unwrap();
    let first = index.lines().next().unwrap();
    assert!(first.starts_with("# fdmask "), "{first}");
    let hash = first.split("config=").nth(1).unwrap();
    assert_eq!(hash.len(), 64);
    // a seed override changes the hash
    ok(dir.path(), &["--config", "exp.toml", "--seed", "6", "gen-data"]);
    let index = fs::read_to_string(dir.path().join("data/index.tsv")).unwrap();
    assert!(!index.lines().next().unwrap().ends_with(hash));
}

#[test]
fn augment_reports_ceiling_counts() {
    let config = CONFIG
        .replace("image_size = 32", "image_size = 64")
        .replace(
            "pipeline = { augmentations",
            "pipeline = { flip_prob = 0.0, blur_prob = 0.0, jpeg_prob = 0.0, augmentations",
        );
    let dir = setup(&config);
    ok(dir.path(), &["--config", "exp.toml", "gen-data"]);
    let stdout = ok(
        dir.path(),
        &["--config", "exp.toml", "augment", "--input", "data/train/grid-p8/real_0000.ppm", "--output", "aug.png"],
    );
    // ceil(0.15 * 4096) = 615 bins per channel
    assert!(stdout.contains("mask\tuniverse=4096\tselected=615\tzeroed=615,615,615"), "{stdout}");
    assert!(dir.path().join("aug.png").exists());
}

#[test]
fn malformed_config_names_the_field() {
    let dir = setup(&CONFIG.replace("epochs = 1", "epochz = 1"));
    let out = fdmask(dir.path(), &["--config", "exp.toml", "train"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error\tconfig\t"), "{err}");
    assert!(err.contains("epochz"), "{err}");

    let dir = setup(&CONFIG.replace("seed = 5", ""));
    let err = String::from_utf8(fdmask(dir.path(), &["--config", "exp.toml", "train"]).stderr).unwrap();
    assert!(err.starts_with("error\tconfig\t") && err.contains("seed"), "{err}");
}

#[test]
fn usage_and_missing_inputs_fail_cleanly() {
    let dir = setup(CONFIG);
    let out = fdmask(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error\tusage\t"));

    let out = fdmask(dir.path(), &["--config", "exp.toml", "sweep", "--axis", "colour"]);
    assert_eq!(out.status.code(), Some(2));

    let out = fdmask(dir.path(), &["--config", "exp.toml", "train"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gen-data"), "{err}");
    assert_eq!(err.lines().count(), 1);

    let out = fdmask(dir.path(), &["--config", "exp.toml", "prune", "--ratio", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn prune_ratio_override_shrinks_more() {
    let dir = setup(CONFIG);
    ok(dir.path(), &["--config", "exp.toml", "gen-data"]);
    ok(dir.path(), &["--config", "exp.toml", "train"]);
    let half = ok(dir.path(), &["--config", "exp.toml", "prune"]);
    let most = ok(dir.path(), &["--config", "exp.toml", "prune", "--ratio", "0.8"]);
    let after = |s: &str| -> usize { s.lines().next().unwrap().split('\t').nth(2).unwrap().parse().unwrap() };
    assert_eq!(after(&half), 15_401);
    assert!(after(&most) < after(&half));
}
