use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use smb_core::encoders::EncoderKind;
use smb_core::evalproto::{self, CmcCurve, Exclusion, Protocol};
use smb_core::illum;
use smb_core::io;
use smb_core::metric::{PairingPolicy, Regularization};
use smb_core::pipeline::{self, DiffusionDemoConfig, DiffusionReport, PipelineConfig, PipelineReport};
use smb_core::smb::SynthesisModelBank;
use smb_core::types::{SampleSet, DEFAULT_DIM};
use smb_core::ulisynth::{self, GeneratorConfig};

use crate::settings::Settings;

pub struct Run {
    pub settings: Settings,
    pub out: Option<PathBuf>,
    pub json: bool,
}

fn out_dir(ctx: &Run) -> Result<&Path> {
    ctx.out.as_deref().ok_or_else(|| anyhow!("--out <dir> is required for this command"))
}

fn load_features(path: &Path) -> Result<SampleSet> {
    Ok(io::parse_features(&io::read_text(path)?, &path.display().to_string())?)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    io::write_text(&path, text)?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    write(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))?;
    Ok(())
}

/// Prints `value` as JSON when asked to, otherwise the human-readable `table`.
fn emit<T: Serialize>(ctx: &Run, value: &T, table: String) -> Result<()> {
    if ctx.json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{table}");
    }
    Ok(())
}

fn generator(s: &Settings, defaults: &GeneratorConfig) -> Result<GeneratorConfig> {
    let dim: usize = s.get("dim", defaults.dimension)?;
    Ok(GeneratorConfig {
        identities: s.get("identities", defaults.identities)?,
        backgrounds: s.get("backgrounds", defaults.backgrounds)?,
        zrotations: s.get("zrotations", defaults.zrotations)?,
        illuminations: s.list("illuminations", defaults.illuminations.clone())?,
        dimension: dim,
        illum_gain_dims: s.get("gain_dims", dim / 4)?,
        nuisance_dims: s.get("nuisance_dims", dim / 4)?,
        noise_scale: s.get("noise", defaults.noise_scale)?,
        albedo: s.get("albedo", defaults.albedo)?,
        background_scale: s.get("background_scale", defaults.background_scale)?,
        zrotation_scale: s.get("zrotation_scale", defaults.zrotation_scale)?,
        seed: s.get("seed", 0u64)?,
    })
}

#[derive(Serialize)]
struct GenReport {
    domain: String,
    records: usize,
    dimension: usize,
    path: PathBuf,
}

pub fn gen(ctx: &Run) -> Result<()> {
    let s = &ctx.settings;
    let dir = out_dir(ctx)?;
    let domain: String = s.get("domain", "source".to_string())?;
    let defaults = GeneratorConfig {
        dimension: DEFAULT_DIM,
        ..GeneratorConfig::default()
    };
    let config = generator(s, &defaults)?;
    let set = match domain.as_str() {
        "source" => {
            s.finish()?;
            ulisynth::generate_source_domain(&config)?
        }
        "target" => {
            let n = config.illuminations.len();
            let weights = s.list("weights", vec![1.0 / n as f64; n])?;
            s.finish()?;
            ulisynth::simulate_target_domain(&config, &weights, config.seed)?
        }
        other => bail!("domain must be `source` or `target`, not `{other}`"),
    };
    let path = write(dir, &format!("{domain}.csv"), &io::format_features(&set))?;
    s.write_manifest(dir, "gen", &[])?;
    let report = GenReport {
        domain,
        records: set.len(),
        dimension: set.dimension(),
        path,
    };
    let table = format!("wrote {} {} records of dimension {} to {}\n", report.records, report.domain, report.dimension, report.path.display());
    emit(ctx, &report, table)
}

#[derive(Serialize)]
struct SwitchReport {
    label_counts: BTreeMap<u16, usize>,
    selected_labels: Vec<u16>,
    coverage: f64,
}

pub fn train_switch(ctx: &Run, source: &Path, target: &Path) -> Result<()> {
    let s = &ctx.settings;
    let dir = out_dir(ctx)?;
    let conditions: usize = s.get("conditions", illum::DEFAULT_CONDITIONS)?;
    s.finish()?;
    let (src, tgt) = (load_features(source)?, load_features(target)?);
    let choice = pipeline::choose_conditions(&src, &tgt, conditions)?;
    let subsets = pipeline::condition_subsets(&src, &choice.labels)?;
    let switch = illum::train_switch(&subsets)?;
    write(dir, "estimator.csv", &io::format_classifier(&choice.estimator))?;
    write(dir, "switch.csv", &io::format_classifier(&switch))?;
    s.write_manifest(dir, "train-switch", &[("source", source), ("target", target)])?;
    let report = SwitchReport {
        label_counts: choice.counts,
        selected_labels: choice.labels,
        coverage: choice.coverage,
    };
    write_json(dir, "report.json", &report)?;
    let mut table = String::from("label  predicted\n");
    for (l, c) in &report.label_counts {
        table += &format!("{l:>5}  {c:>9}\n");
    }
    table += &format!(
        "selected labels {:?} cover {:.1}% of the target\n",
        report.selected_labels,
        100.0 * report.coverage
    );
    emit(ctx, &report, table)
}

pub fn learn_metrics(ctx: &Run, source: &Path) -> Result<()> {
    let s = &ctx.settings;
    let dir = out_dir(ctx)?;
    let labels: Vec<u16> = s.list("labels", Vec::new())?;
    let kind: EncoderKind = s.get("encoder", EncoderKind::Whitening)?;
    let ridge: f64 = s.get("ridge", 1e-3)?;
    let max_pairs: usize = s.get("max_pairs", 50_000)?;
    let seed: u64 = s.get("seed", 0)?;
    s.finish()?;
    if labels.is_empty() {
        bail!("setting `labels` is required, e.g. --labels 2,5");
    }
    let src = load_features(source)?;
    let subsets = pipeline::condition_subsets(&src, &labels)?;
    let policy = PairingPolicy {
        max_similar: max_pairs,
        seed,
    };
    let smb = pipeline::train_model_bank(&subsets, kind, &policy, Regularization::TraceScaled(ridge))?;
    write(dir, "switch.csv", &io::format_classifier(smb.switch()))?;
    write(dir, "encoders.csv", &io::format_encoders(smb.encoders()))?;
    write(dir, "bank.csv", &io::format_bank(smb.bank()))?;
    s.write_manifest(dir, "learn-metrics", &[("source", source)])?;
    let report = serde_json::json!({
        "labels": labels,
        "conditions": smb.conditions(),
        "matrices": smb.bank().len(),
        "dimension": smb.bank().dim(),
    });
    write_json(dir, "report.json", &report)?;
    let table = format!(
        "learned {} encoders and {} matrices of dimension {} for labels {:?}\n",
        smb.conditions(),
        smb.bank().len(),
        smb.bank().dim(),
        labels
    );
    emit(ctx, &report, table)
}

pub fn split(ctx: &Run, features: &Path) -> Result<()> {
    let s = &ctx.settings;
    let dir = out_dir(ctx)?;
    let protocol: Protocol = s.get("protocol", Protocol::Generic { identity_fraction: 1.0 })?;
    let seed: u64 = s.get("seed", 0)?;
    s.finish()?;
    let set = load_features(features)?;
    let meta = evalproto::meta_from_set(&set);
    let raw = evalproto::make_split(&meta, protocol, seed)?;
    let valid = evalproto::filter_valid_queries(&raw, &meta);
    write(dir, "split.csv", &io::format_split(&valid))?;
    s.write_manifest(dir, "split", &[("features", features)])?;
    let report = serde_json::json!({
        "protocol": protocol.to_string(),
        "seed": valid.seed,
        "queries": raw.query.len(),
        "valid_queries": valid.query.len(),
        "gallery": valid.gallery.len(),
    });
    write_json(dir, "report.json", &report)?;
    let table = format!(
        "{protocol}: {} queries ({} valid), {} gallery\n",
        raw.query.len(),
        valid.query.len(),
        valid.gallery.len()
    );
    emit(ctx, &report, table)
}

fn load_model(dir: &Path) -> Result<SynthesisModelBank> {
    let read = |name: &str| -> Result<(String, String)> {
        let path = dir.join(name);
        Ok((io::read_text(&path)?, path.display().to_string()))
    };
    let (t, p) = read("switch.csv")?;
    let switch = io::parse_classifier(&t, &p)?;
    let (t, p) = read("encoders.csv")?;
    let encoders = io::parse_encoders(&t, &p)?;
    let (t, p) = read("bank.csv")?;
    let bank = io::parse_bank(&t, &p)?;
    Ok(SynthesisModelBank::assemble(switch, encoders, bank)?)
}

#[derive(Serialize)]
struct EvalReport {
    method: String,
    queries: usize,
    gallery: usize,
    cmc: CmcCurve,
}

pub fn eval(ctx: &Run, features: &Path, split: &Path, model: Option<&Path>) -> Result<()> {
    let s = &ctx.settings;
    let dir = out_dir(ctx)?;
    let method: String = s.get("method", "smb".to_string())?;
    let ranks: Vec<usize> = s.list("ranks", vec![1, 5, 10, 20])?;
    let exclusion: Exclusion = s.get("exclusion", Exclusion::None)?;
    s.finish()?;
    let set = load_features(features)?;
    let meta = evalproto::meta_from_set(&set);
    let spec = io::parse_split(&io::read_text(split)?, &split.display().to_string())?;
    let spec = evalproto::filter_valid_queries(&spec, &meta);
    let sets = pipeline::split_sets(&set, &meta, &spec)?;
    let need_model = || model.ok_or_else(|| anyhow!("--model <dir> is required for method `{method}`"));
    let dist = match method.split_once(':') {
        None if method == "euclidean" => evalproto::euclidean_distances(&sets.queries, &sets.gallery)?,
        None if method == "smb" => load_model(need_model()?)?.distance_matrix(&sets.queries, &sets.gallery)?,
        Some(("single", n)) => {
            let smb = load_model(need_model()?)?;
            let n: u16 = n.parse().with_context(|| format!("bad condition in `{method}`"))?;
            if n == 0 || n as usize > smb.conditions() {
                bail!("condition {n} is outside 1..={}", smb.conditions());
            }
            let matrix = smb.bank().get(n, n).expect("assembled bank has every diagonal matrix");
            evalproto::single_model_distances(&smb.encoders()[n as usize - 1], matrix, &sets.queries, &sets.gallery)?
        }
        _ => bail!("method must be `smb`, `euclidean` or `single:<n>`, not `{method}`"),
    };
    let cmc = evalproto::cmc(&dist, &sets.query_meta, &sets.gallery_meta, &ranks, exclusion)?;
    write(dir, "cmc.csv", &io::format_cmc(&cmc))?;
    write(dir, "distances.csv", &io::format_distances(&dist))?;
    let mut inputs = vec![("features", features), ("split", split)];
    if let Some(m) = model {
        inputs.push(("model", m));
    }
    s.write_manifest(dir, "eval", &inputs)?;
    let report = EvalReport {
        method,
        queries: sets.queries.len(),
        gallery: sets.gallery.len(),
        cmc,
    };
    write_json(dir, "report.json", &report)?;
    let mut table = format!("{}: {} queries, {} gallery\n", report.method, report.queries, report.gallery);
    for (k, a) in &report.cmc.points {
        table += &format!("CMC-{k:<3} {a}\n");
    }
    emit(ctx, &report, table)
}

fn pipeline_config(s: &Settings) -> Result<PipelineConfig> {
    let d = PipelineConfig::default();
    let source = generator(s, &d.source)?;
    let target = GeneratorConfig {
        identities: s.get("target_identities", d.target.identities)?,
        backgrounds: s.get("target_backgrounds", d.target.backgrounds)?,
        zrotations: s.get("target_zrotations", d.target.zrotations)?,
        illuminations: s.list("target_labels", d.target.illuminations.clone())?,
        ..source.clone()
    };
    Ok(PipelineConfig {
        seed: source.seed,
        target_weights: s.list("target_weights", d.target_weights.clone())?,
        conditions: s.get("conditions", d.conditions)?,
        encoder: s.get("encoder", d.encoder)?,
        ridge: s.get("ridge", d.ridge)?,
        max_similar_pairs: s.get("max_pairs", d.max_similar_pairs)?,
        protocol: s.get("protocol", d.protocol)?,
        ranks: s.list("ranks", d.ranks.clone())?,
        exclusion: s.get("exclusion", d.exclusion)?,
        source,
        target,
    })
}

fn cmc_row(name: &str, curve: &CmcCurve, ranks: &[usize]) -> String {
    let mut row = format!("{name:<12}");
    for k in ranks {
        row += &format!(" {:>7.1}", curve.at(*k).map_or(f64::NAN, |a| a.percent()));
    }
    row + "\n"
}

fn pipeline_table(r: &PipelineReport, ranks: &[usize]) -> String {
    let mut t = format!(
        "selected labels {:?}, coverage {:.1}%, switch accuracy {:.1}%\n{} queries, {} gallery\n\n{:<12}",
        r.selected_labels,
        100.0 * r.coverage,
        100.0 * r.switch_accuracy,
        r.queries,
        r.gallery,
        "model"
    );
    for k in ranks {
        t += &format!(" {:>7}", format!("CMC-{k}"));
    }
    t.push('\n');
    for (n, c) in r.single.iter().enumerate() {
        t += &cmc_row(&format!("S{} (l={})", n + 1, r.selected_labels[n]), c, ranks);
    }
    t += &cmc_row("SMB", &r.smb, ranks);
    t += &cmc_row("Euclidean", &r.euclidean, ranks);
    t += "\ncondition  queries  gallery  valid  CMC-1 subset  CMC-1 full\n";
    for sub in &r.subsets {
        let subset = sub.subset_cmc.as_ref().map_or("-".to_string(), |c| format!("{:.1}", 100.0 * c.rank1()));
        t += &format!(
            "{:>9}  {:>7}  {:>7}  {:>5}  {:>12}  {:>10.1}\n",
            sub.condition,
            sub.queries,
            sub.gallery,
            sub.valid_queries,
            subset,
            100.0 * sub.full_cmc.rank1()
        );
    }
    t
}

pub fn run_pipeline(ctx: &Run) -> Result<()> {
    let s = &ctx.settings;
    let config = pipeline_config(s)?;
    s.finish()?;
    let report = pipeline::run_pipeline(&config)?;
    if let Some(dir) = &ctx.out {
        s.write_manifest(dir, "pipeline", &[])?;
        write_json(dir, "report.json", &report)?;
    }
    emit(ctx, &report, pipeline_table(&report, &config.ranks))
}

fn demo_config(s: &Settings) -> Result<DiffusionDemoConfig> {
    let d = DiffusionDemoConfig::default();
    Ok(DiffusionDemoConfig {
        seed: s.get("seed", d.seed)?,
        steps: s.get("steps", d.steps)?,
        dimension: s.get("dim", d.dimension)?,
        samples: s.get("samples", d.samples)?,
        source_mean: s.get("source_mean", d.source_mean)?,
        target_mean: s.get("target_mean", d.target_mean)?,
        data_scale: s.get("data_scale", d.data_scale)?,
        peak: s.get("peak", d.peak)?,
    })
}

fn demo_table(r: &DiffusionReport) -> String {
    let mut t = format!(
        "T = {}, linear betas {:.4e}..{:.4e}\n\n T_es  reconstruction   PSNR (dB)  target mean err  mean |change|\n",
        r.steps, r.beta_start, r.beta_end
    );
    for row in &r.rows {
        t += &format!(
            "{:>5}  {:>14.3e}  {:>10.3}  {:>15.4}  {:>13.4}\n",
            row.t_es, row.reconstruction_error, row.psnr, row.target_mean_error, row.mean_abs_change
        );
    }
    t
}

pub fn diffusion_demo(ctx: &Run) -> Result<()> {
    let s = &ctx.settings;
    let config = demo_config(s)?;
    s.finish()?;
    let report = pipeline::run_diffusion_demo(&config)?;
    if let Some(dir) = &ctx.out {
        s.write_manifest(dir, "diffusion-demo", &[])?;
        write_json(dir, "report.json", &report)?;
    }
    emit(ctx, &report, demo_table(&report))?;
    if !report.psnr_non_increasing {
        return Err(smb_core::Error::Numerical {
            tag: "diffusion demo".into(),
            detail: "PSNR increased with the number of encoding steps".into(),
        }
        .into());
    }
    Ok(())
}
