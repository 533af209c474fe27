use std::path::Path;
use std::process::{Command, Output};

fn voxpart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxpart")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = voxpart(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const CFG: &str = "[net]
arch = shallow_u_stack(1)
channels = 3
convs_per_block = 1
kernel = 3
input_res = 16

[train]
batch_size = 4
phase1_train_acc = 0
phase1_val_acc = 0
schedule = 1:1,2:1
";

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = root.join("run.cfg");
    std::fs::write(&cfg, CFG).unwrap();
    let data = root.join("data");
    ok(&["gen", "--family", "chair", "--pos", "4", "--neg", "4", "--res", "16", "--seed", "7", "--split", "0.5,0.25,0.25", "--out", s(&data)]);
    assert!(data.join("manifest.txt").exists() && data.join("run.txt").exists());

    let describe = ok(&["describe", "--config", s(&cfg)]);
    assert!(describe.contains("param_count = "));

    let ckpt = root.join("ckpt");
    ok(&["--threads", "1", "train", "--mode", "weak", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt)]);
    let ckpt2 = root.join("ckpt2");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt2)]);
    for f in ["checkpoint.txt", "tensors.bin"] {
        assert_eq!(std::fs::read(ckpt.join(f)).unwrap(), std::fs::read(ckpt2.join(f)).unwrap(), "{f}");
    }

    let maps = root.join("maps");
    ok(&["infer", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&maps)]);
    let pr = root.join("eval/pr.csv");
    let metrics = ok(&["eval", "--config", s(&cfg), "--pred", s(&maps), "--gt", s(&data), "--out", s(&pr)]);
    assert!(metrics.contains("auc = "));
    let csv = std::fs::read_to_string(&pr).unwrap();
    assert!(csv.starts_with("threshold,precision,recall\n") && csv.contains("# auc="));
    assert_eq!(csv.lines().count(), 103);
    assert!(root.join("eval/pr.metrics.txt").exists() && root.join("eval/pr.csv.run.txt").exists());
    ok(&["eval", "--pred", s(&maps), "--gt", s(&data), "--gate", s(&maps.join("scores.txt")), "--out", s(&root.join("gated.csv"))]);

    let grid = data.join("shapes/chair_p0000.binvox");
    let post = root.join("post");
    ok(&["postprocess", "--map", s(&maps.join("chair_p0000.seg")), "--grid", s(&grid), "--symmetrize", "--threshold", "0.5", "--tag", "armrest", "--out", s(&post)]);
    assert!(post.join("chair_p0000.armrest.binvox").exists() && post.join("plane.txt").exists());

    // Untrained maps may have no salient voxels above 0.9; lower the bar.
    let low = ["--set", "eval.salient_threshold=0.0"];
    let mut search = vec!["search", "--query", "chair_p0000", "--tag", "armrest", "--k", "3", "--pred", s(&maps), "--data", s(&data)];
    search.extend(low);
    let ranked = ok(&search);
    assert!(ranked.starts_with("1 chair_p0000 0\n"), "{ranked}");
    assert_eq!(ranked.lines().count(), 3);

    let dist = root.join("dist.csv");
    let mut embed = vec!["embed", "--tag", "armrest", "--pred", s(&maps), "--data", s(&data), "--out", s(&dist)];
    embed.extend(low);
    ok(&embed);
    assert_eq!(std::fs::read_to_string(&dist).unwrap().lines().count(), 9);
    assert!(root.join("dist.csv.excluded").exists());

    let ply = root.join("t.ply");
    let mut thumb = vec!["thumb", "--shape", "chair_p0001", "--tag", "armrest", "--pred", s(&maps), "--data", s(&data), "--out", s(&ply)];
    thumb.extend(low);
    ok(&thumb);
    assert!(std::fs::read_to_string(&ply).unwrap().starts_with("ply\n"));
}

#[test]
fn errors_exit_nonzero_with_category() {
    let out = voxpart(&["train", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = voxpart(&["describe", "--set", "net.chanels=3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));

    let out = voxpart(&["infer", "--ckpt", "/nonexistent", "--data", "/nonexistent", "--out", "/tmp/x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]"));
}

#[test]
fn voxelize_obj() {
    let tmp = tempfile::tempdir().unwrap();
    let obj = tmp.path().join("tri.obj");
    std::fs::write(&obj, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
    let out = tmp.path().join("tri.binvox");
    ok(&["voxelize", "--in", s(&obj), "--out", s(&out), "--res", "8"]);
    assert!(std::fs::read(&out).unwrap().starts_with(b"#binvox 1"));
}
