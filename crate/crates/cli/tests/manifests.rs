use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn manifests() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests")
}

fn schottky(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schottky")).args(args).output().expect("binary runs")
}

fn run_manifest(name: &str, out: &Path, extra: &[&str]) -> Output {
    let (group, cmd) = name.split_once('-').unwrap();
    let path = manifests().join(format!("{name}.toml"));
    let mut args = vec![group, cmd, "--manifest", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    schottky(&args)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn every_bundled_manifest_passes() {
    let mut names: Vec<String> = std::fs::read_dir(manifests())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 16, "{names:?}");
    let tmp = tempfile::tempdir().unwrap();
    for n in &names {
        let out = run_manifest(n, &tmp.path().join(n), &[]);
        assert_eq!(out.status.code(), Some(0), "{n}: {}", String::from_utf8_lossy(&out.stderr));
        let summary = std::fs::read_to_string(tmp.path().join(n).join("run.json")).unwrap();
        assert!(summary.contains("\"pass\": true"), "{n}");
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["schottky-divisor-eq", "waves-psido-check", "cm-simulate"] {
        let (a, b) = (tmp.path().join(format!("{name}-a")), tmp.path().join(format!("{name}-b")));
        assert_eq!(run_manifest(name, &a, &["--threads", "1"]).status.code(), Some(0));
        assert_eq!(run_manifest(name, &b, &["--threads", "3"]).status.code(), Some(0));
        assert_eq!(files(&a), files(&b), "{name}");
    }
}

#[test]
fn seed_flag_overrides_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_manifest("schottky-divisor-eq", &a, &[]);
    run_manifest("schottky-divisor-eq", &b, &["--seed", "12"]);
    let read = |d: &Path| std::fs::read_to_string(d.join("report.json")).unwrap();
    assert_ne!(read(&a), read(&b));
    assert!(std::fs::read_to_string(b.join("run.json")).unwrap().contains("\"seed\": 12"));
}

fn write_manifest(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("m.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    let empty = write_manifest(tmp.path(), "# nothing here\n");
    assert_eq!(schottky(&["schottky", "divisor-eq", "--manifest", empty.to_str().unwrap(), "--out", o]).status.code(), Some(2));

    let unknown = write_manifest(tmp.path(), "steps = 3\ncolour = 1\n[particles]\nx = [[0.0, 0.0]]\np = [[0.0, 0.0]]\n[check]\nobstruction = 1e-12\n");
    let r = schottky(&["waves", "recurse", "--manifest", unknown.to_str().unwrap(), "--out", o]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("colour"));

    let text = std::fs::read_to_string(manifests().join("schottky-divisor-eq.toml")).unwrap().replace("seed = 11", "");
    let unseeded = write_manifest(tmp.path(), &text);
    let r = schottky(&["schottky", "divisor-eq", "--manifest", unseeded.to_str().unwrap(), "--out", o]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("seed"));

    assert_eq!(schottky(&["theta", "eval", "--out", o]).status.code(), Some(2));
    assert_eq!(schottky(&["theta", "integrate"]).status.code(), Some(2));
    assert_eq!(schottky(&["theta", "eval", "--manifest", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn failed_threshold_names_the_criterion() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "steps = 4\noffsets = [[0.0, 0.0], [0.01, 0.0]]\n[particles]\nx = [[-1.0, 0.2], [0.1, -0.3]]\np = [[0.3, -0.1], [-0.2, 0.2]]\n[check]\nobstruction = 1e-12\n";
    let m = write_manifest(tmp.path(), text);
    let out = tmp.path().join("out");
    let r = schottky(&["waves", "recurse", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("criterion `obstruction`"));
    assert!(std::fs::read_to_string(out.join("run.json")).unwrap().contains("\"pass\": false"));
}
