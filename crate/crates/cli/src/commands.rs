use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use sdgl::data::{
    format_f64, format_row, load_csv, synth_generate, window_split, write_matrix_csv, Metrics,
    PlantedGraphSpec, SeriesDataset, WindowSet,
};
use sdgl::model::{Evaluation, ModelConfig, Sdgl, TrainingData};
use sdgl::numerics::Tensor;
use serde_json::json;

use crate::args::{EvalArgs, ExportArgs, Format, PredictArgs, SynthArgs, TrainArgs};
use crate::manifest::{RunManifest, SynthRecord};
use crate::UsageError;

pub const CHECKPOINT_FILE: &str = "model.sdgl";
pub const EPOCH_LOG_FILE: &str = "epochs.jsonl";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} file not found: {}", path.display())));
    }
    Ok(())
}

fn load_data(path: &Path) -> Result<SeriesDataset> {
    require_file(path, "data")?;
    Ok(load_csv(path)?)
}

fn load_model(path: &Path) -> Result<Sdgl> {
    require_file(path, "checkpoint")?;
    Ok(Sdgl::load(path)?)
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn check_nodes(model: &Sdgl, ds: &SeriesDataset) -> Result<()> {
    if model.config.nodes != ds.nodes() {
        return Err(usage(format!(
            "checkpoint has {} nodes but the data has {}",
            model.config.nodes,
            ds.nodes()
        )));
    }
    Ok(())
}

/// TOML config, or a JSON run manifest / bare JSON config.
fn load_config(path: &Path) -> Result<ModelConfig> {
    require_file(path, "config")?;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str::<serde_json::Value>(&text)
            .map_err(|e| e.to_string())
            .and_then(|v| {
                let v = v.get("config").cloned().unwrap_or(v);
                serde_json::from_value::<ModelConfig>(v).map_err(|e| e.to_string())
            })
    } else {
        ModelConfig::from_toml(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Defaults, then the config file, then flags.
fn resolve_config(a: &TrainArgs, nodes: usize) -> Result<ModelConfig> {
    let mut c = match &a.config {
        Some(p) => load_config(p)?,
        None => ModelConfig::default(),
    };
    if c.nodes != 0 && c.nodes != nodes {
        return Err(usage(format!(
            "config sets {} nodes but the data has {nodes}",
            c.nodes
        )));
    }
    c.nodes = nodes;
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.lambda {
        c.lambda = v;
    }
    if let Some(v) = a.gamma {
        c.gamma = v;
    }
    if let Some(v) = a.momentum {
        c.momentum = v;
    }
    if let Some(v) = a.heads {
        c.heads = v;
    }
    if let Some(v) = a.layers {
        c.layers = v;
    }
    if let Some(v) = a.horizon {
        c.horizon = v;
    }
    if let Some(v) = a.window {
        c.window = v;
    }
    for name in &a.ablate {
        c.ablation.enable(name)?;
    }
    c.validate()?;
    Ok(c)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), format_f64)
}

fn metrics_line(label: &str, m: &Metrics) -> String {
    format!(
        "{label}: mae {} rmse {} mape {} rse {} corr {}",
        format_f64(m.mae),
        format_f64(m.rmse),
        opt(m.mape),
        opt(m.rse),
        opt(m.corr)
    )
}

pub fn train(a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let ds = load_data(&a.data)?;
    let config = resolve_config(&a, ds.nodes())?;
    let out = &a.common.out_dir;
    create_out_dir(out)?;

    let data = TrainingData::prepare(&ds, &config)?;
    let mut model = Sdgl::new(config.clone())?;
    let log_path = out.join(EPOCH_LOG_FILE);
    let mut log = BufWriter::new(
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    );
    let text = a.common.format == Format::Text;
    let mut write_err = None;
    let report = model.train_with(&data, |e| {
        if text {
            let val = e.val.map_or_else(|| "-".to_owned(), |m| format_f64(m.mae));
            println!(
                "epoch {}: loss {} mae {} val mae {val}",
                e.epoch,
                format_f64(e.train_loss),
                format_f64(e.train_mae)
            );
        }
        let line = serde_json::to_string(e).expect("epoch log serializes");
        if let Err(err) = writeln!(log, "{line}") {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = write_err {
        return Err(err).with_context(|| format!("writing {}", log_path.display()));
    }
    log.flush()?;
    drop(log);

    let ckpt = out.join(CHECKPOINT_FILE);
    model.save(&ckpt)?;
    let mut manifest = RunManifest::new("train");
    manifest.seed = Some(config.seed);
    manifest.config = Some(config);
    manifest.input(&a.data)?;
    manifest.output(&ckpt)?;
    manifest.output(&log_path)?;
    manifest.seconds = started.elapsed().as_secs_f64();
    let mpath = manifest.write(out)?;
    info!("wrote {}", mpath.display());

    if text {
        println!("checkpoint: {}", ckpt.display());
        println!("manifest: {}", mpath.display());
    } else {
        print_json(&json!({
            "epochs": report.epochs,
            "checkpoint": ckpt,
            "manifest": mpath,
        }))?;
    }
    Ok(())
}

fn evaluation_text(e: &Evaluation, split: &str) -> String {
    let mut s = format!("split {split}, {} windows\n", e.windows);
    for (k, m) in e.per_horizon.iter().enumerate() {
        s += &metrics_line(&format!("horizon {}", k + 1), m);
        s.push('\n');
    }
    s += &metrics_line("average", &e.overall);
    s
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let started = Instant::now();
    let model = load_model(&a.checkpoint)?;
    let ds = load_data(&a.data)?;
    check_nodes(&model, &ds)?;
    let scaler = model
        .scaler
        .as_ref()
        .ok_or_else(|| usage("checkpoint has not been trained"))?;
    let c = &model.config;
    let normalized = scaler.transform(ds.values(), 1)?;
    let splits = window_split(&normalized, c.window, c.horizon, c.split)?;
    let windows = match a.split.as_str() {
        "train" => &splits.train,
        "val" => &splits.val,
        _ => &splits.test,
    };
    if windows.is_empty() {
        bail!("split {} has no windows", a.split.as_str());
    }
    let e = model.evaluate(windows)?;

    let out = &a.common.out_dir;
    create_out_dir(out)?;
    let report_path = out.join("eval.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&e)? + "\n")?;
    let mut manifest = RunManifest::new("eval");
    manifest.config = Some(model.config.clone());
    manifest.seed = Some(model.config.seed);
    manifest.input(&a.checkpoint)?;
    manifest.input(&a.data)?;
    manifest.output(&report_path)?;
    manifest.seconds = started.elapsed().as_secs_f64();
    manifest.write(out)?;

    match a.common.format {
        Format::Text => println!("{}", evaluation_text(&e, a.split.as_str())),
        Format::Json => print_json(&json!({ "split": a.split.as_str(), "evaluation": e }))?,
    }
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let started = Instant::now();
    let model = load_model(&a.checkpoint)?;
    let ds = load_data(&a.data)?;
    check_nodes(&model, &ds)?;
    let (n, h) = (model.config.nodes, model.config.window);
    let end = a.at.unwrap_or(ds.len());
    if end < h || end > ds.len() {
        return Err(usage(format!(
            "--at {end} needs {h} rows before it within a series of {} rows",
            ds.len()
        )));
    }
    let mut x = Tensor::zeros(&[n, h]);
    for t in 0..h {
        for i in 0..n {
            x.set(&[i, t], ds.values().get(&[end - h + t, i]));
        }
    }
    let y = model.predict(&x)?;
    let steps = model.config.horizon;

    let out = &a.common.out_dir;
    create_out_dir(out)?;
    let path = out.join("forecast.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "step,{}", ds.node_names.join(","))?;
    let mut rows = Vec::new();
    for k in 0..steps {
        let row: Vec<f64> = (0..n).map(|i| y.get(&[i, k])).collect();
        writeln!(w, "{},{}", k + 1, format_row(&row))?;
        rows.push(row);
    }
    w.flush()?;
    drop(w);

    let mut manifest = RunManifest::new("predict");
    manifest.config = Some(model.config.clone());
    manifest.seed = Some(model.config.seed);
    manifest.input(&a.checkpoint)?;
    manifest.input(&a.data)?;
    manifest.output(&path)?;
    manifest.seconds = started.elapsed().as_secs_f64();
    manifest.write(out)?;

    match a.common.format {
        Format::Text => {
            println!("step,{}", ds.node_names.join(","));
            for (k, row) in rows.iter().enumerate() {
                println!("{},{}", k + 1, format_row(row));
            }
        }
        Format::Json => print_json(&json!({
            "nodes": ds.node_names,
            "from_row": end,
            "forecast": rows,
        }))?,
    }
    Ok(())
}

pub fn export_graphs(a: ExportArgs) -> Result<()> {
    let started = Instant::now();
    let model = load_model(&a.checkpoint)?;
    let ds = load_data(&a.data)?;
    check_nodes(&model, &ds)?;
    let n = model.config.nodes;
    let out = &a.common.out_dir;
    create_out_dir(out)?;
    let mut manifest = RunManifest::new("export-graphs");
    manifest.config = Some(model.config.clone());
    manifest.seed = Some(model.config.seed);
    manifest.input(&a.checkpoint)?;
    manifest.input(&a.data)?;

    let a_static = model.static_graph()?;
    let static_path = out.join("static.csv");
    write_matrix_csv(&static_path, &a_static)?;
    manifest.output(&static_path)?;

    let threshold = a.threshold.unwrap_or(1.0 / n as f64);
    let edges_path = out.join("edges.csv");
    let mut w = BufWriter::new(File::create(&edges_path)?);
    writeln!(w, "row,col,weight")?;
    let mut edges = 0;
    for i in 0..n {
        for j in 0..n {
            let v = a_static.get(&[i, j]);
            if v >= threshold {
                writeln!(w, "{i},{j},{}", format_f64(v))?;
                edges += 1;
            }
        }
    }
    w.flush()?;
    drop(w);
    manifest.output(&edges_path)?;

    let mut dynamic_paths = Vec::new();
    if !a.windows.is_empty() {
        if model.config.ablation.no_dyadj {
            return Err(usage(
                "--windows given but the model has no dynamic graph (no_dyadj)",
            ));
        }
        let scaler = model
            .scaler
            .as_ref()
            .ok_or_else(|| usage("checkpoint has not been trained"))?;
        let normalized = scaler.transform(ds.values(), 1)?;
        let all = WindowSet::new(normalized, model.config.window, model.config.horizon, 0)?;
        if let Some(&bad) = a.windows.iter().find(|&&i| i >= all.len()) {
            return Err(usage(format!(
                "window index {bad} out of range: the series has {} windows",
                all.len()
            )));
        }
        let batch = all.batch(&a.windows)?;
        let (_, dynamic) = model.graphs(&batch.inputs)?;
        let dynamic = dynamic.expect("dynamic branch enabled");
        for (k, &i) in a.windows.iter().enumerate() {
            let path = out.join(format!("dynamic_w{i}.csv"));
            write_matrix_csv(&path, &dynamic.index_first(k))?;
            manifest.output(&path)?;
            dynamic_paths.push(path);
        }
    }
    manifest.seconds = started.elapsed().as_secs_f64();
    let mpath = manifest.write(out)?;

    match a.common.format {
        Format::Text => {
            println!("static graph: {}", static_path.display());
            println!(
                "edge list: {} ({edges} edges at threshold {})",
                edges_path.display(),
                format_f64(threshold)
            );
            for p in &dynamic_paths {
                println!("dynamic graph: {}", p.display());
            }
            println!("manifest: {}", mpath.display());
        }
        Format::Json => print_json(&json!({
            "static": static_path,
            "edges": edges_path,
            "edge_count": edges,
            "threshold": threshold,
            "dynamic": dynamic_paths,
            "manifest": mpath,
        }))?,
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let started = Instant::now();
    let switches = if a.switch_every == 0 {
        Vec::new()
    } else {
        PlantedGraphSpec::periodic_switches(a.steps, a.switch_every, a.switch_duration)
    };
    let spec = PlantedGraphSpec {
        nodes: a.nodes,
        edge_prob: a.edge_prob,
        alpha: a.alpha,
        period: a.period,
        seasonal_amplitude: a.amplitude,
        noise_std: a.noise,
        switch_fraction: a.switch_fraction,
        switches,
    };
    let generated = synth_generate(&spec, a.steps, a.seed)?;
    let out = &a.common.out_dir;
    create_out_dir(out)?;
    let mut manifest = RunManifest::new("synth");
    manifest.seed = Some(a.seed);

    let series = out.join("series.csv");
    generated.dataset.write_csv(&series)?;
    let truth = out.join("truth.csv");
    write_matrix_csv(&truth, &generated.primary)?;
    let secondary = out.join("truth_secondary.csv");
    write_matrix_csv(&secondary, &generated.secondary)?;
    let schedule = out.join("schedule.csv");
    let mut w = BufWriter::new(File::create(&schedule)?);
    writeln!(w, "start,end")?;
    for iv in &generated.schedule {
        writeln!(w, "{},{}", iv.start, iv.end)?;
    }
    w.flush()?;
    drop(w);
    for p in [&series, &truth, &secondary, &schedule] {
        manifest.output(p)?;
    }
    manifest.synth = Some(SynthRecord {
        spec,
        steps: a.steps,
        seed: a.seed,
    });
    manifest.seconds = started.elapsed().as_secs_f64();
    let mpath = manifest.write(out)?;

    match a.common.format {
        Format::Text => {
            println!("series: {} ({}×{})", series.display(), a.steps, a.nodes);
            println!("truth: {}", truth.display());
            println!("manifest: {}", mpath.display());
        }
        Format::Json => print_json(&json!({
            "series": series,
            "truth": truth,
            "truth_secondary": secondary,
            "schedule": schedule,
            "manifest": mpath,
        }))?,
    }
    Ok(())
}
