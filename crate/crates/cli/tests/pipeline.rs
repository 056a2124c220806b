use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn vd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vd"))
        .args(args)
        .env_remove("VD_THREADS")
        .output()
        .expect("vd runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vd(args);
    assert!(
        out.status.success(),
        "vd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/toy")
        .join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn toy_pipeline_matches_golden_files() {
    let dir = TempDir::new().unwrap();
    let out = |n: &str| dir.path().join(n);
    ok(&[
        "discretize",
        "--input",
        s(&fixture("raw.fne")),
        "--output",
        s(&out("tern.fnt")),
    ]);
    ok(&[
        "represent",
        "--ternary",
        s(&out("tern.fnt")),
        "--manifest",
        s(&fixture("manifest.tsv")),
        "--output",
        s(&out("reps.fnr")),
    ]);
    ok(&["distmat", "--reps", s(&out("reps.fnr")), "--output", s(&out("vd.vdm"))]);
    ok(&[
        "lexmat",
        "--taxonomy",
        s(&fixture("taxonomy.tsv")),
        "--ids",
        s(&fixture("ids.txt")),
        "--measure",
        "wup",
        "--output",
        s(&out("wup.vdm")),
    ]);
    let report = ok(&["compare", "--a", s(&out("vd.vdm")), "--b", s(&out("wup.vdm"))]);
    fs::write(out("compare.json"), &report.stdout).unwrap();
    for name in ["tern.fnt", "reps.fnr", "vd.vdm", "wup.vdm", "compare.json"] {
        let want = fs::read(fixture(&format!("golden/{name}"))).unwrap();
        assert_eq!(fs::read(out(name)).unwrap(), want, "{name} differs from golden");
    }
}

#[test]
fn downstream_commands_on_toy_fixture() {
    let dir = TempDir::new().unwrap();
    let out = |n: &str| dir.path().join(n);
    let vd_path = fixture("golden/vd.vdm");
    let wup_path = fixture("golden/wup.vdm");
    let cluster = ok(&[
        "cluster",
        "--input",
        s(&vd_path),
        "--k",
        "2",
        "--compare",
        s(&wup_path),
        "--newick",
        s(&out("tree.nwk")),
    ]);
    let json: serde_json::Value = serde_json::from_slice(&cluster.stdout).unwrap();
    assert_eq!(json["merges"].as_array().unwrap().len(), 2);
    assert_eq!(json["labels"].as_array().unwrap().len(), 3);
    assert!(json["comparison"]["adjusted_rand_index"].is_number());
    let newick = fs::read_to_string(out("tree.nwk")).unwrap();
    assert!(newick.trim_end().ends_with(';'));

    ok(&[
        "project",
        "--input",
        s(&vd_path),
        "--method",
        "mds",
        "--output",
        s(&out("mds.csv")),
    ]);
    let csv = fs::read_to_string(out("mds.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# method=mds, diag="));
    assert_eq!(lines[1], "synset_id,x,y");
    assert_eq!(lines.len(), 5);

    ok(&[
        "project",
        "--reps",
        s(&fixture("golden/reps.fnr")),
        "--method",
        "pca",
        "--output",
        s(&out("pca.csv")),
    ]);
    assert!(fs::read_to_string(out("pca.csv"))
        .unwrap()
        .starts_with("# method=pca, diag="));

    let stats = ok(&[
        "stats",
        "--ternary",
        s(&fixture("golden/tern.fnt")),
        "--manifest",
        s(&fixture("manifest.tsv")),
        "--taxonomy",
        s(&fixture("taxonomy.tsv")),
        "--bootstrap",
        "5",
        "--seed",
        "3",
    ]);
    let json: serde_json::Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(json["n_samples"], 12);
    assert_eq!(json["thresholds"]["ft_minus"], -0.25);
    assert_eq!(json["bootstrap"].as_array().unwrap().len(), 3);
    assert_eq!(json["consistency"]["synsets"].as_array().unwrap().len(), 3);

    ok(&[
        "lexmat",
        "--taxonomy",
        s(&fixture("taxonomy.tsv")),
        "--ids",
        s(&fixture("ids.txt")),
        "--measure",
        "lin",
        "--ic",
        s(&fixture("ic.tsv")),
        "--output",
        s(&out("lin.vdm")),
    ]);
}

#[test]
fn exit_codes() {
    assert_eq!(vd(&["--help"]).status.code(), Some(0));
    assert_eq!(vd(&["--version"]).status.code(), Some(0));
    assert_eq!(vd(&["distmat", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(vd(&[]).status.code(), Some(1));

    let dir = TempDir::new().unwrap();
    let target = dir.path().join("out.fnt");
    // wrong magic
    let bad = vd(&[
        "discretize",
        "--input",
        s(&fixture("manifest.tsv")),
        "--output",
        s(&target),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&bad.stderr).is_empty());
    assert!(!target.exists());

    let missing = vd(&[
        "discretize",
        "--input",
        s(&dir.path().join("nope.fne")),
        "--output",
        s(&target),
    ]);
    assert_eq!(missing.status.code(), Some(2));

    let thresholds = vd(&[
        "discretize",
        "--input",
        s(&fixture("raw.fne")),
        "--output",
        s(&target),
        "--ft-minus",
        "0.5",
        "--ft-plus",
        "0.1",
    ]);
    assert_eq!(thresholds.status.code(), Some(1));

    // unknown synset in the id list
    fs::write(dir.path().join("ids.txt"), "n02084071\nn99999999\n").unwrap();
    let unknown = vd(&[
        "lexmat",
        "--taxonomy",
        s(&fixture("taxonomy.tsv")),
        "--ids",
        s(&dir.path().join("ids.txt")),
        "--measure",
        "wup",
        "--output",
        s(&dir.path().join("x.vdm")),
    ]);
    assert_eq!(unknown.status.code(), Some(2));

    // only two synsets in common: correlation is undefined
    fs::write(dir.path().join("two.txt"), "n02084071\nn02121808\n").unwrap();
    ok(&[
        "lexmat",
        "--taxonomy",
        s(&fixture("taxonomy.tsv")),
        "--ids",
        s(&dir.path().join("two.txt")),
        "--measure",
        "path",
        "--output",
        s(&dir.path().join("two.vdm")),
    ]);
    let report = dir.path().join("r.json");
    let compute = vd(&[
        "compare",
        "--a",
        s(&fixture("golden/vd.vdm")),
        "--b",
        s(&dir.path().join("two.vdm")),
        "--output",
        s(&report),
    ]);
    assert_eq!(compute.status.code(), Some(3));
    assert!(!report.exists());
    assert!(compute.stdout.is_empty());
}

#[test]
fn synth_is_deterministic_and_parses() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        ok(&[
            "synth",
            "--seed",
            "7",
            "--samples",
            "100",
            "--features",
            "512",
            "--synsets",
            "10",
            "--out-dir",
            s(d.path()),
        ]);
    }
    for name in [
        "raw.fne",
        "manifest.tsv",
        "layout.tsv",
        "taxonomy.tsv",
        "ic.tsv",
        "ids.txt",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let raw = fs::read(a.path().join("raw.fne")).unwrap();
    assert_eq!(&raw[..7], b"FNERAW1");
    assert_eq!(u32::from_le_bytes(raw[7..11].try_into().unwrap()), 100);
    assert_eq!(u32::from_le_bytes(raw[11..15].try_into().unwrap()), 512);
    let taxonomy = vd_core::lexical::parse_taxonomy(
        fs::File::open(a.path().join("taxonomy.tsv"))
            .map(std::io::BufReader::new)
            .unwrap(),
    );
    assert_eq!(taxonomy.unwrap().len(), 11);
}

#[test]
fn distmat_output_independent_of_threads() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&[
        "synth",
        "--seed",
        "11",
        "--samples",
        "400",
        "--features",
        "700",
        "--synsets",
        "80",
        "--out-dir",
        s(dir.path()),
    ]);
    ok(&["discretize", "--input", s(&p("raw.fne")), "--output", s(&p("t.fnt"))]);
    ok(&[
        "represent",
        "--ternary",
        s(&p("t.fnt")),
        "--manifest",
        s(&p("manifest.tsv")),
        "--output",
        s(&p("r.fnr")),
    ]);
    ok(&[
        "distmat",
        "--reps",
        s(&p("r.fnr")),
        "--output",
        s(&p("one.vdm")),
        "--threads",
        "1",
    ]);
    ok(&[
        "distmat",
        "--reps",
        s(&p("r.fnr")),
        "--output",
        s(&p("four.vdm")),
        "--threads",
        "4",
    ]);
    let env4 = Command::new(env!("CARGO_BIN_EXE_vd"))
        .args(["distmat", "--reps", s(&p("r.fnr")), "--output", s(&p("env.vdm"))])
        .env("VD_THREADS", "4")
        .output()
        .unwrap();
    assert!(env4.status.success());
    assert!(String::from_utf8_lossy(&env4.stderr).contains("threads=4"));
    let one = fs::read(p("one.vdm")).unwrap();
    assert_eq!(one, fs::read(p("four.vdm")).unwrap());
    assert_eq!(one, fs::read(p("env.vdm")).unwrap());
    assert_eq!(
        vd(&[
            "distmat",
            "--reps",
            s(&p("r.fnr")),
            "--output",
            s(&p("z.vdm")),
            "--threads",
            "0"
        ])
        .status
        .code(),
        Some(1)
    );
}
