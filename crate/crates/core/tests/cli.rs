use std::path::Path;
use std::process::{Command, Output};

fn ugre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ugre")).args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(ugre(&["--help"]).status.code(), Some(0));
    for sub in ["build-graph", "search-paths", "gen-synthetic", "train", "eval", "gradcheck", "bias-report"] {
        let o = ugre(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(text(&o).contains("Usage"), "{sub}");
    }
    let o = ugre(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("Usage"));
    assert_eq!(ugre(&["train", "--data", "x", "--bogus"]).status.code(), Some(2));
    assert_eq!(ugre(&["train", "--data", "x", "--mode", "fancy"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = ugre(&["eval", "--checkpoint", s(&dir.path().join("none.ckpt")), "--data", s(dir.path()), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("none.ckpt"));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "epochs = 3\nlr_net = fast\n").unwrap();
    let o = ugre(&["train", "--data", s(dir.path()), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("lr_net"), "{}", text(&o));
    std::fs::write(&cfg, "warp_drive = 1\n").unwrap();
    assert!(text(&ugre(&["train", "--data", s(dir.path()), "--config", s(&cfg)])).contains("warp_drive"));
}

#[test]
fn gradcheck_passes() {
    let o = ugre(&["gradcheck", "--per-slot", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = text(&o);
    assert!(out.contains("base:") && out.contains("ranking:") && out.contains("0 failures"), "{out}");
}

#[test]
fn end_to_end_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let o = ugre(&["gen-synthetic", "--seed", "7", "--out", s(&d)]);
    assert!(o.status.success(), "{}", text(&o));
    for f in ["entities.txt", "relations.txt", "triplets.tsv", "train/sentences.tsv", "test/paths.tsv", "kg_edges.tsv", "rules.tsv", "config.txt"] {
        assert!(d.join(f).exists(), "{f}");
    }

    let o = ugre(&["train", "--data", s(&d), "--set", "epochs=1", "--set", "pretrain_epochs=1", "--pretrain", "--mode", "ranking"]);
    assert!(o.status.success(), "{}", text(&o));
    let run = d.join("run");
    for f in ["stage1_textual.ckpt", "stage2_hybrid.ckpt", "stage3_kg.ckpt", "stage4_all.ckpt", "model.ckpt", "loss.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 5);
    assert!(loss.starts_with("epoch,stage,loss\n1,textual,"));

    let ev = dir.path().join("eval");
    let o = ugre(&["eval", "--checkpoint", s(&run.join("model.ckpt")), "--data", s(&d), "--out", s(&ev)]);
    assert!(o.status.success(), "{}", text(&o));
    for f in ["pr_curve.csv", "pr_curve.svg", "metrics.txt", "attention_bias.csv", "attention_weights.csv"] {
        assert!(ev.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(ev.join("metrics.txt")).unwrap();
    assert!(metrics.starts_with("auc\t") && metrics.contains("p@100\t"));

    let br = dir.path().join("bias");
    let o = ugre(&["bias-report", "--checkpoint", s(&run.join("model.ckpt")), "--data", s(&d), "--out", s(&br), "--bucket-width", "5"]);
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(br.join("attention_bias.csv")).unwrap();
    assert!(csv.contains("type,KG,") && csv.contains("length,5-9,"), "{csv}");
}

#[test]
fn build_graph_then_search_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir_all(d.join("train")).unwrap();
    std::fs::create_dir_all(d.join("test")).unwrap();
    std::fs::write(d.join("entities.txt"), "A\taspirin\nB\tpain\nC\tfever\nD\tcold\n").unwrap();
    std::fs::write(d.join("relations.txt"), "NA\ttreats\n".replace('\t', "\n")).unwrap();
    std::fs::write(d.join("triplets.tsv"), "A\ttreats\tB\n").unwrap();
    std::fs::write(d.join("train/sentences.tsv"), "A\tB\t0\t2\taspirin relieves pain\nA\tC\t0\t2\taspirin lowers fever\n").unwrap();
    std::fs::write(d.join("test/sentences.tsv"), "C\tB\t0\t3\tfever brings some pain\n").unwrap();

    let g = d.join("graph");
    let o = ugre(&["build-graph", "--data", s(d), "--out", s(&g)]);
    assert!(o.status.success(), "{}", text(&o));
    let kg = std::fs::read_to_string(g.join("kg_edges.tsv")).unwrap();
    assert_eq!(kg, "A\ttreats\tB\n");
    assert_eq!(std::fs::read_to_string(g.join("text_edges.tsv")).unwrap().lines().count(), 2);

    let o = ugre(&["search-paths", "--data", s(d), "--graph", s(&g), "--max-steps", "2", "--num-walks", "50"]);
    assert!(o.status.success(), "{}", text(&o));
    let paths = std::fs::read_to_string(d.join("test/paths.tsv")).unwrap();
    // C ← A → B: the sentence edge read backwards, then the KG edge.
    assert!(paths.lines().any(|l| l.starts_with("C\tB\tHybrid\t")), "{paths}");
}
