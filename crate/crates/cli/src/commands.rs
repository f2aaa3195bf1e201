use std::fs;
use std::io::Write;
use std::path::Path;

use rmnp::dataset::{
    generate_synthetic, inject_camouflage_edges, load_dataset, save_dataset, Dataset, Split, SynthConfig, BOT,
};
use rmnp::fusion::FusionMode;
use rmnp::numerics::rng_from_seed;
use rmnp::pipeline::{
    entropy_report, load_checkpoint, predict_report, save_checkpoint, timing_probe, train_with, Hyperparams,
    MetricSet, RmnpModel,
};
use serde::Serialize;

use crate::{EvalArgs, Failure, PerturbArgs, ReportArgs, SynthArgs, TrainArgs};

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    usage(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Outcome {
    fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| io_failure(path, e))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Outcome {
    w.flush().map_err(|e| io_failure(path, e))
}

fn write_metrics<W: Write>(w: &mut csv::Writer<W>, m: &MetricSet) -> csv::Result<()> {
    w.write_record(MetricSet::CSV_HEADER)?;
    w.write_record(m.values().map(|v| v.to_string()))
}

pub fn synth(a: &SynthArgs) -> Outcome {
    let [m, t, g] = a.sep[..] else {
        return Err(usage(format!("--sep needs 3 comma-separated values, got {}", a.sep.len())));
    };
    let cfg = SynthConfig {
        n_accounts: a.n,
        bot_fraction: a.bot_frac,
        d_text: a.d_text,
        class_separation: [m, t, g],
        edge_homophily: a.homophily,
        mean_degree: a.mean_degree,
        camouflage_fraction: a.camouflage,
        camouflaged_modality: a.camouflage_modality,
        shift: a.shift,
        world_seed: a.world_seed,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let out = generate_synthetic(&cfg)?;
    create_dir(&a.out)?;
    save_dataset(&out.dataset, &a.out)?;

    let side = a.out.join("camouflaged.csv");
    let mut w = csv_writer(&side)?;
    w.write_record(["account"]).map_err(|e| io_failure(&side, e))?;
    for i in &out.camouflaged {
        w.write_record([i.to_string()]).map_err(|e| io_failure(&side, e))?;
    }
    finish(w, &side)?;

    let ds = &out.dataset;
    let bots = ds.labels.iter().filter(|y| **y == Some(BOT)).count();
    let count = |s: Split| ds.indices(s).len();
    println!(
        "accounts {} bots {} edges {} train {} val {} test {} camouflaged {}",
        ds.len(),
        bots,
        ds.graph.num_edges(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        out.camouflaged.len()
    );
    if cfg.class_separation.iter().all(|s| *s == 0.0) {
        println!("zero-signal configuration: features carry no class information");
    }
    Ok(())
}

fn hyperparams(a: &TrainArgs) -> Result<Hyperparams, Failure> {
    let mut h = Hyperparams::default();
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag { h.$field = v; })*
        };
    }
    set!(lambda1 => lambda1, lambda2 => lambda2, tau => tau, epochs => epochs, batch => batch_size,
        lr => learning_rate, weight_decay => weight_decay, z_samples => n_z_samples, d_hidden => d_hidden,
        n_context => n_context, layers => gnn_layers, seed => seed);
    h.sample_logits = !a.mean_logits;
    for name in &a.ablate {
        h.ablations.enable(name)?;
    }
    if let Some(mode) = &a.fusion {
        match mode.parse::<FusionMode>()? {
            FusionMode::GpoeEvidential => {}
            FusionMode::PoeUniform => h.ablations.poe_uniform = true,
            FusionMode::GpoeMlp => h.ablations.mlp_gating = true,
        }
    }
    h.validate()?;
    Ok(h)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    data: String,
    hyperparams: &'a Hyperparams,
    fusion_mode: String,
    seed: u64,
    best_epoch: usize,
}

pub fn train(a: &TrainArgs) -> Outcome {
    let hyper = hyperparams(a)?;
    let ds = load_dataset(&a.data)?;
    create_dir(&a.out)?;
    let log_path = a.out.join("train_log.jsonl");
    let mut log = Vec::new();
    let outcome = train_with(&ds, &hyper, |r| {
        let line = serde_json::to_string(r).expect("epoch record serializes");
        if a.verbose || r.epoch % 10 == 0 || r.epoch == hyper.epochs {
            eprintln!("{line}");
        }
        log.push(line);
    });
    // the partial log is still useful when training aborts
    let mut text = log.join("\n");
    text.push('\n');
    fs::write(&log_path, text).map_err(|e| io_failure(&log_path, e))?;
    let outcome = outcome?;

    save_checkpoint(&outcome.model, &a.out.join("model.ckpt"))?;
    let record = RunRecord {
        command: "train",
        data: a.data.display().to_string(),
        hyperparams: &hyper,
        fusion_mode: hyper.fusion_mode().to_string(),
        seed: hyper.seed,
        best_epoch: outcome.best_epoch,
    };
    let run_path = a.out.join("run.json");
    let json = serde_json::to_string_pretty(&record).expect("run record serializes");
    fs::write(&run_path, json + "\n").map_err(|e| io_failure(&run_path, e))?;

    let test = ds.indices(Split::Test);
    if !test.is_empty() {
        let report = predict_report(&outcome.model, &ds, &test, hyper.seed)?;
        if let Some(m) = report.metrics {
            let path = a.out.join("metrics.csv");
            let mut w = csv_writer(&path)?;
            write_metrics(&mut w, &m).map_err(|e| io_failure(&path, e))?;
            finish(w, &path)?;
            eprintln!("test accuracy {:.4} nll_x100 {:.3} (best epoch {})", m.accuracy, m.nll_x100, outcome.best_epoch);
        }
    }
    Ok(())
}

fn split_accounts(ds: &Dataset, split: &str) -> Result<Vec<usize>, Failure> {
    if split == "all" {
        return Ok((0..ds.len()).collect());
    }
    let s: Split = split.parse().map_err(usage)?;
    Ok(ds.indices(s))
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let model = load_checkpoint(&a.model)?;
    let ds = load_dataset(&a.data)?;
    let accounts = split_accounts(&ds, &a.split)?;
    if accounts.is_empty() {
        return Err(usage(format!("split '{}' has no accounts", a.split)));
    }
    let report = predict_report(&model, &ds, &accounts, a.seed)?;
    let metrics = report
        .metrics
        .ok_or_else(|| usage(format!("split '{}' has no labeled accounts", a.split)))?;

    match &a.out {
        Some(path) => {
            let mut w = csv_writer(path)?;
            write_metrics(&mut w, &metrics).map_err(|e| io_failure(path, e))?;
            finish(w, path)?;
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            write_metrics(&mut w, &metrics).map_err(|e| usage(e.to_string()))?;
            w.flush().map_err(|e| usage(e.to_string()))?;
        }
    }

    if let Some(path) = &a.per_account {
        let mut w = csv_writer(path)?;
        let header = [
            "account", "label", "p_human", "p_bot", "p_bot_metadata", "p_bot_text", "p_bot_graph", "b_metadata",
            "b_text", "b_graph", "eta", "entropy",
        ];
        w.write_record(header).map_err(|e| io_failure(path, e))?;
        for p in &report.accounts {
            let label = p.label.map_or(String::new(), |y| y.to_string());
            let mut row = vec![p.account.to_string(), label, p.probs[0].to_string(), p.probs[1].to_string()];
            row.extend(p.unimodal.iter().map(|u| u[1].to_string()));
            row.extend(p.belief.iter().map(f64::to_string));
            row.push(p.eta.to_string());
            row.push(p.entropy.to_string());
            w.write_record(&row).map_err(|e| io_failure(path, e))?;
        }
        finish(w, path)?;
    }
    Ok(())
}

pub fn perturb(a: &PerturbArgs) -> Outcome {
    let ds = load_dataset(&a.data)?;
    if ds.labels.iter().any(Option::is_none) {
        return Err(usage("edge injection needs a label for every account"));
    }
    let graph = inject_camouflage_edges(&ds.graph, &ds.labels, a.proportion, &mut rng_from_seed(a.seed))?;
    let added = graph.num_edges() - ds.graph.num_edges();
    let out = ds.with_graph(graph)?;
    create_dir(&a.out)?;
    save_dataset(&out, &a.out)?;
    println!("added {added} edges (proportion {})", a.proportion);
    Ok(())
}

pub fn report(a: &ReportArgs) -> Outcome {
    let model: RmnpModel = load_checkpoint(&a.model)?;
    let datasets = a.data.iter().map(|p| load_dataset(p)).collect::<Result<Vec<_>, _>>()?;
    create_dir(&a.out)?;
    let refs: Vec<&Dataset> = datasets.iter().collect();
    let hists = entropy_report(&model, &refs, a.seed)?;

    let summary_path = a.out.join("entropy_summary.csv");
    let mut summary = csv_writer(&summary_path)?;
    summary
        .write_record(["dataset", "path", "accounts", "mean", "std"])
        .map_err(|e| io_failure(&summary_path, e))?;
    for (k, (h, path)) in hists.iter().zip(&a.data).enumerate() {
        let hist_path = a.out.join(format!("entropy_{k}.csv"));
        let mut w = csv_writer(&hist_path)?;
        w.write_record(["bin_left", "bin_right", "count"]).map_err(|e| io_failure(&hist_path, e))?;
        for (l, r, c) in &h.bins {
            w.write_record([l.to_string(), r.to_string(), c.to_string()])
                .map_err(|e| io_failure(&hist_path, e))?;
        }
        finish(w, &hist_path)?;
        let row = [k.to_string(), path.display().to_string(), h.total().to_string(), h.mean.to_string(), h.std.to_string()];
        summary.write_record(row).map_err(|e| io_failure(&summary_path, e))?;
    }
    finish(summary, &summary_path)?;

    let rows = timing_probe(&model, &datasets[0], &a.batch_sizes, a.repetitions)?;
    let timing_path = a.out.join("timing.csv");
    let mut w = csv_writer(&timing_path)?;
    for row in &rows {
        w.serialize(row).map_err(|e| io_failure(&timing_path, e))?;
    }
    finish(w, &timing_path)?;
    for (h, path) in hists.iter().zip(&a.data) {
        println!("{}: mean entropy {:.4} over {} accounts", path.display(), h.mean, h.total());
    }
    Ok(())
}
