use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wsdesc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsdesc")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_flag_with_a_default() {
    for sub in ["synth", "train", "extract", "register", "evaluate", "gradcheck"] {
        let out = wsdesc(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        let usage = text.lines().find(|l| l.starts_with("Usage:")).unwrap();
        let required: Vec<&str> = usage.split_whitespace().filter(|t| t.starts_with("--")).collect();
        let lines: Vec<&str> = text.lines().collect();
        let mut flags = 0;
        for (i, line) in lines.iter().enumerate() {
            let t = line.trim_start();
            let Some(flag) = t.split_whitespace().next().filter(|f| f.starts_with("--")) else {
                continue;
            };
            if flag == "--help" || flag == "--version" || required.contains(&flag) {
                continue;
            }
            flags += 1;
            // long help puts the description on the following lines
            let block = lines[i..lines.len().min(i + 3)].join(" ");
            assert!(block.contains("[default:"), "{sub}: no default documented for {flag}");
        }
        assert!(flags >= 4, "{sub}: only {flags} optional flags listed");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(wsdesc(&["--bogus"]).status.code(), Some(1));
    assert_eq!(wsdesc(&["synth"]).status.code(), Some(1));
    assert_eq!(wsdesc(&["gradcheck", "--mode", "sideways"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ck");
    let cloud = dir.path().join("c.xyz");
    fs::write(&cloud, "0 0 0\n1 0 0\n0 1 0\n0 0 1\n").unwrap();
    let out = wsdesc(&["register", "--ckpt", s(&missing), "--src", s(&cloud), "--dst", s(&cloud)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ck"));
    let out = wsdesc(&["synth", "--procedural", "2", "--out", s(dir.path()), "--max-rot", "500"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_reports_every_unreadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = dir.path().join("shapes");
    fs::create_dir(&shapes).unwrap();
    fs::write(shapes.join("a.xyz"), "0 0 0\n1 x 0\n").unwrap();
    fs::write(shapes.join("b.ply"), "not a ply\n").unwrap();
    fs::write(shapes.join("c.xyz"), "0 0 0\n1 0 0\n").unwrap();
    let out = wsdesc(&["synth", "--in", s(&shapes), "--out", s(&dir.path().join("pairs"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("a.xyz") && err.contains("b.ply") && !err.contains("c.xyz"), "{err}");
}

#[test]
fn synth_without_motion_writes_identity_and_crop_size() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("pairs");
    let out = wsdesc(&[
        "synth", "--procedural", "2", "--shape-points", "900", "--out", s(&out_dir), "--count", "3", "--max-rot", "0",
        "--trans", "0", "--crop-k", "768", "--seed", "7",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..3 {
        let pair = wsdesc_core::datagen::read_pair(&out_dir.join(format!("pair_{i:04}"))).unwrap();
        assert_eq!(pair.gt.to_rows(), [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!((pair.source.len(), pair.target.len()), (768, 768));
    }
    let manifest = fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    assert!(manifest.starts_with("pair,overlap,seed\n"));
}

#[test]
fn train_register_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs");
    let ck = dir.path().join("m.ck");
    let log = dir.path().join("log.csv");
    let cfg = dir.path().join("train.cfg");
    fs::write(&cfg, "arch = compact\nh = 8\nn = 8\nkp_per_cloud = 12\nsteps = 50 # overridden below\n").unwrap();
    let ok = |out: Output| {
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(wsdesc(&["synth", "--procedural", "2", "--out", s(&pairs), "--count", "2", "--crop-k", "128"]));
    ok(wsdesc(&[
        "train", "--pairs", s(&pairs), "--config", s(&cfg), "--steps", "2", "--out", s(&ck), "--log", s(&log),
    ]));
    let log_text = fs::read_to_string(&log).unwrap();
    assert!(log_text.starts_with("step,l_pcr,l_o,l_c,support,seconds\n"));
    assert!(log_text.lines().count() <= 3);

    let p0 = pairs.join("pair_0000");
    let corrs = dir.path().join("corrs.txt");
    let text = ok(wsdesc(&[
        "register", "--ckpt", s(&ck), "--src", s(&p0.join("source.ply")), "--dst", s(&p0.join("target.ply")), "--kp",
        "64", "--json", "--dump-corrs", s(&corrs),
    ]));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let rows = v["transform"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.as_array().unwrap().len() == 4));
    assert!(fs::read_to_string(&corrs).unwrap().lines().count() > 3);

    let csv = ok(wsdesc(&["evaluate", "--pairs", s(&pairs), "--ckpt", s(&ck), "--kp", "64", "--tau2", "0.2"]));
    assert!(csv.starts_with("pair,ir,num_corrs,corr_rmse,registration_ok\n"));
    for key in ["# mean_ir,", "# fmr,", "# rr,", "# tau2,0.2"] {
        assert!(csv.contains(key), "{key} missing from\n{csv}");
    }

    let desc_dir = dir.path().join("desc");
    let vox = dir.path().join("vox");
    let kp = dir.path().join("kp.txt");
    fs::write(&kp, "0\n5\n17\n").unwrap();
    ok(wsdesc(&[
        "extract", "--ckpt", s(&ck), "--cloud", s(&p0.join("source.ply")), "--keypoints", s(&kp), "--out-dir",
        s(&desc_dir), "--dump-voxels", s(&vox),
    ]));
    let (idx, desc) = wsdesc_core::descriptor::read_descriptors(&desc_dir.join("source.desc")).unwrap();
    assert_eq!(idx.len(), desc.len());
    assert!(desc.iter().all(|d| d.len() == 8));
    assert_eq!(fs::read_dir(&vox).unwrap().count(), idx.len());
}
