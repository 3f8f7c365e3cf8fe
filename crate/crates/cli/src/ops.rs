//! Command implementations.

use std::fs;
use std::path::Path;

use serde::Serialize;

use mcn_core::checkpoint;
use mcn_core::config::{config_echo, parse_config};
use mcn_core::graph::{load_dataset, save_predictions, Dataset};
use mcn_core::model::{self, ActionMode};
use mcn_core::motifs::{motif_adjacency, node_motif_counts, MotifKind};
use mcn_core::psi::{k_step_matrix, PsiKind};
use mcn_core::training::{
    evaluate, metrics_from_predictions, train, TrainConfig, TrainSetup,
};
use mcn_core::wl::wl_features;
use mcn_core::{McnError, Result};

use crate::manifest::RunManifest;

/// Structural-feature synthesis defaults for datasets without features.tsv.
const WL_ITERATIONS: usize = 3;
const WL_MAX_COLORS: usize = 64;

fn load_and_prepare(dir: &Path, quiet: bool) -> Result<Dataset> {
    let mut data = load_dataset(dir)?;
    if data.features.needs_synthesis() {
        if !quiet {
            eprintln!(
                "no features.tsv; synthesizing structural features ({WL_ITERATIONS} refinement rounds, {WL_MAX_COLORS} colors)"
            );
        }
        data.features = wl_features(&data.graph, WL_ITERATIONS, WL_MAX_COLORS);
    }
    Ok(data)
}

fn apply_env_density_budget(cfg: &mut TrainConfig) -> Result<()> {
    if let Ok(raw) = std::env::var("MCN_DENSITY_BUDGET") {
        let v: f64 = raw.parse().map_err(|_| {
            McnError::InvalidConfig(format!("MCN_DENSITY_BUDGET={raw:?} is not a number"))
        })?;
        if !(v > 0.0) {
            return Err(McnError::InvalidConfig(
                "MCN_DENSITY_BUDGET must be positive".into(),
            ));
        }
        cfg.density_budget = v;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| McnError::io(path, e))
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let (a, b) = spec.split_once("..").ok_or_else(|| {
        McnError::InvalidConfig(format!("bad --seeds {spec:?}; expected A..B"))
    })?;
    let a: u64 = a
        .trim()
        .parse()
        .map_err(|_| McnError::InvalidConfig(format!("bad seed {a:?}")))?;
    let b: u64 = b
        .trim()
        .parse()
        .map_err(|_| McnError::InvalidConfig(format!("bad seed {b:?}")))?;
    if b < a {
        return Err(McnError::InvalidConfig(format!(
            "empty seed range {spec:?}"
        )));
    }
    Ok((a..=b).collect())
}

#[derive(Serialize)]
struct RunReport {
    seed: u64,
    test_accuracy: f64,
    micro_f1: f64,
    best_epoch: usize,
    epochs: usize,
    wall_ms: u128,
}

#[derive(Serialize)]
struct FinalReport {
    config: String,
    runs: Vec<RunReport>,
    mean_test_accuracy: f64,
    sd_test_accuracy: f64,
    mean_micro_f1: f64,
    wall_ms_total: u128,
}

pub fn cmd_train(
    data_dir: &Path,
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    seeds: Option<&str>,
    quiet: bool,
) -> Result<()> {
    let config_text =
        fs::read_to_string(config_path).map_err(|e| McnError::io(config_path, e))?;
    let mut cfg = parse_config(&config_text)?;
    apply_env_density_budget(&mut cfg)?;
    let data = load_and_prepare(data_dir, quiet)?;
    let seed_list: Vec<u64> = match (seed, seeds) {
        (Some(s), _) => vec![s],
        (None, Some(spec)) => parse_seeds(spec)?,
        (None, None) => vec![cfg.seed],
    };
    fs::create_dir_all(out_dir).map_err(|e| McnError::io(out_dir, e))?;

    let single = seed_list.len() == 1;
    let mut runs = Vec::new();
    let mut outputs = Vec::new();
    let mut wall_total = 0u128;
    for &s in &seed_list {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = s;
        let echo = config_echo(&run_cfg);
        let result = train(&data, &run_cfg)?;
        let setup = TrainSetup::prepare(&data, &run_cfg)?;
        let metrics = evaluate(&setup, &result.params, &data.labels, &data.splits.test);

        let (ckpt_name, hist_name) = if single {
            ("checkpoint.mcn".to_string(), "history.jsonl".to_string())
        } else {
            (format!("checkpoint_s{s}.mcn"), format!("history_s{s}.jsonl"))
        };
        checkpoint::save(&out_dir.join(&ckpt_name), &echo, &result.dims, &result.params)?;
        let mut history = String::new();
        for rec in &result.history {
            history.push_str(&rec.to_json_line());
            history.push('\n');
        }
        write_text(&out_dir.join(&hist_name), &history)?;
        outputs.push(ckpt_name);
        outputs.push(hist_name);
        if !quiet {
            eprintln!(
                "seed {s}: {} epochs, best epoch {}, test accuracy {:.4}",
                result.history.len(),
                result.best_epoch,
                metrics.accuracy
            );
        }
        wall_total += result.wall_ms;
        runs.push(RunReport {
            seed: s,
            test_accuracy: metrics.accuracy,
            micro_f1: metrics.micro_f1,
            best_epoch: result.best_epoch,
            epochs: result.history.len(),
            wall_ms: result.wall_ms,
        });
    }

    let accs: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let sd = if accs.len() > 1 {
        (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mean_f1 = runs.iter().map(|r| r.micro_f1).sum::<f64>() / runs.len() as f64;
    let report = FinalReport {
        config: config_echo(&cfg),
        runs,
        mean_test_accuracy: mean,
        sd_test_accuracy: sd,
        mean_micro_f1: mean_f1,
        wall_ms_total: wall_total,
    };
    let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&out_dir.join("report.json"), &report_json)?;
    outputs.push("report.json".to_string());

    let manifest = RunManifest::new(config_echo(&cfg), &data, seed_list, outputs);
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&out_dir.join("manifest.json"), &manifest_json)?;
    if !quiet {
        eprintln!("mean test accuracy {mean:.4} +- {sd:.4} over {} seed(s)", accs.len());
    }
    Ok(())
}

fn split_nodes<'a>(data: &'a Dataset, split: &str) -> Result<&'a [usize]> {
    Ok(match split {
        "train" => &data.splits.train,
        "val" => &data.splits.val,
        "test" => &data.splits.test,
        other => {
            return Err(McnError::InvalidConfig(format!(
                "unknown split {other:?} (expected train, val, or test)"
            )))
        }
    })
}

/// Rebuild the matrix bank and dims for a checkpoint against a dataset.
fn setup_for_checkpoint(
    data: &Dataset,
    ck: &checkpoint::Checkpoint,
) -> Result<(TrainConfig, TrainSetup)> {
    let mut cfg = parse_config(&ck.config_echo)?;
    apply_env_density_budget(&mut cfg)?;
    let setup = TrainSetup::prepare(data, &cfg)?;
    if setup.dims != ck.dims {
        return Err(McnError::Checkpoint(format!(
            "checkpoint dims {:?} do not match dataset/config dims {:?}",
            ck.dims, setup.dims
        )));
    }
    Ok((cfg, setup))
}

pub fn cmd_eval(
    data_dir: &Path,
    checkpoint_path: &Path,
    split: &str,
    out: Option<&Path>,
    quiet: bool,
) -> Result<()> {
    let data = load_and_prepare(data_dir, quiet)?;
    let ck = checkpoint::load(checkpoint_path)?;
    let (_, setup) = setup_for_checkpoint(&data, &ck)?;
    let ctx = setup.ctx();
    let trace = model::forward(&ctx, &ck.params, &setup.x, &ActionMode::Greedy, None);
    let preds = trace.predictions();
    let nodes = split_nodes(&data, split)?;
    let metrics = metrics_from_predictions(&preds, &data.labels, nodes);
    println!(
        "{}",
        serde_json::to_string_pretty(&metrics).expect("metrics serialize")
    );
    if let Some(path) = out {
        save_predictions(path, &preds, &trace.probs)?;
        if !quiet {
            eprintln!("wrote predictions to {}", path.display());
        }
    }
    Ok(())
}

fn export_sparse_tsv(path: &Path, m: &mcn_core::CsrMatrix, upper_only: bool) -> Result<()> {
    let mut out = String::from("i\tj\tcount\n");
    for (i, j, v) in m.iter() {
        if upper_only && j < i {
            continue;
        }
        // Integer-valued matrices print as integers.
        if v.fract() == 0.0 {
            out.push_str(&format!("{i}\t{j}\t{}\n", v as i64));
        } else {
            out.push_str(&format!("{i}\t{j}\t{v}\n"));
        }
    }
    write_text(path, &out)
}

pub fn cmd_motifs(
    data_dir: &Path,
    out_dir: &Path,
    motif_names: &[String],
    psi: Option<&str>,
    k: usize,
    quiet: bool,
) -> Result<()> {
    let data = load_and_prepare(data_dir, true)?;
    let kinds: Vec<MotifKind> = motif_names
        .iter()
        .map(|s| MotifKind::parse(s))
        .collect::<Result<_>>()?;
    let psi_kind = psi.map(PsiKind::parse).transpose()?;
    if k < 1 {
        return Err(McnError::InvalidConfig("--k must be at least 1".into()));
    }
    let mut budget = mcn_core::psi::DEFAULT_DENSITY_BUDGET;
    if let Ok(raw) = std::env::var("MCN_DENSITY_BUDGET") {
        budget = raw.parse().map_err(|_| {
            McnError::InvalidConfig(format!("MCN_DENSITY_BUDGET={raw:?} is not a number"))
        })?;
    }
    fs::create_dir_all(out_dir).map_err(|e| McnError::io(out_dir, e))?;

    for &kind in &kinds {
        let adj = motif_adjacency(&data.graph, kind);
        let path = out_dir.join(format!("a_{}.tsv", kind.name()));
        export_sparse_tsv(&path, &adj.matrix, true)?;
        if !quiet {
            eprintln!("wrote {} ({} stored entries)", path.display(), adj.matrix.nnz());
        }
        if let Some(pk) = psi_kind {
            let m = k_step_matrix(&adj, k, pk, budget)?;
            let path = out_dir.join(format!("psi_{}_{}_k{}.tsv", kind.name(), pk.name(), k));
            export_sparse_tsv(&path, &m.matrix, false)?;
            if !quiet {
                eprintln!("wrote {}", path.display());
            }
        }
    }

    let counts = node_motif_counts(&data.graph, &kinds);
    let mut out = String::from("node");
    for kind in &kinds {
        out.push_str(&format!("\t{}", kind.name()));
    }
    out.push('\n');
    for i in 0..data.graph.n_nodes() {
        out.push_str(&i.to_string());
        for c in 0..kinds.len() {
            out.push_str(&format!("\t{}", counts.counts.get(i, c) as i64));
        }
        out.push('\n');
    }
    write_text(&out_dir.join("c.tsv"), &out)?;
    Ok(())
}

const DOT_COLORS: [&str; 7] = [
    "#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628", "#f781bf",
];

pub fn cmd_export_attention(
    data_dir: &Path,
    checkpoint_path: &Path,
    out_dir: &Path,
    quiet: bool,
) -> Result<()> {
    let data = load_and_prepare(data_dir, quiet)?;
    let ck = checkpoint::load(checkpoint_path)?;
    let (_, setup) = setup_for_checkpoint(&data, &ck)?;
    let ctx = setup.ctx();
    let trace = model::forward(&ctx, &ck.params, &setup.x, &ActionMode::Greedy, None);
    fs::create_dir_all(out_dir).map_err(|e| McnError::io(out_dir, e))?;

    let mut csv = String::from("node,layer,chosen_motif,chosen_k,prob_f_max,prob_fprime_max\n");
    for (l, lt) in trace.layers.iter().enumerate() {
        let sel = &lt.selection;
        for i in 0..data.graph.n_nodes() {
            let motif = setup.bank.motifs[sel.t[i]];
            csv.push_str(&format!(
                "{i},{l},{},{},{:.6},{:.6}\n",
                motif.name(),
                sel.k[i] + 1,
                sel.probs_f.get(i, sel.t[i]),
                sel.probs_fp.get(i, sel.k[i]),
            ));
        }
    }
    write_text(&out_dir.join("attention.csv"), &csv)?;

    let mut dot = String::from("graph attention {\n  node [style=filled, shape=circle];\n");
    let first = &trace.layers[0].selection;
    for i in 0..data.graph.n_nodes() {
        let color = DOT_COLORS[first.t[i] % DOT_COLORS.len()];
        dot.push_str(&format!("  {i} [fillcolor=\"{color}\"];\n"));
    }
    for (u, v) in data.graph.edges() {
        dot.push_str(&format!("  {u} -- {v};\n"));
    }
    dot.push_str("}\n");
    write_text(&out_dir.join("attention.dot"), &dot)?;
    if !quiet {
        eprintln!("wrote attention.csv and attention.dot to {}", out_dir.display());
    }
    Ok(())
}

pub fn cmd_convert_check(data_dir: &Path) -> Result<()> {
    let data = load_dataset(data_dir)?;
    let fp = crate::manifest::fingerprint(&data);
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "n_nodes": data.graph.n_nodes(),
            "n_edges": data.graph.n_edges(),
            "feature_dim": data.features.dim(),
            "features_present": !data.features.needs_synthesis(),
            "n_classes": data.labels.n_classes,
            "labeled_nodes": data.labels.labels.iter().filter(|l| l.is_some()).count(),
            "splits": {
                "train": data.splits.train.len(),
                "val": data.splits.val.len(),
                "test": data.splits.test.len(),
            },
            "fingerprint": fp.hash,
        }))
        .expect("summary serializes")
    );
    Ok(())
}
