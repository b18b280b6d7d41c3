use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use psmlab::align::{ExternalDetector, GroundTruthLandmarks, LandmarkSource, PrecomputedLandmarks};
use psmlab::cluster::{
    cluster_au_frequencies, cluster_sweep, dbscan, novelty_flags, project_2d, sweep_space, MetricDistance, Side,
    SweepResult, NOVELTY_THRESHOLD,
};
use psmlab::data::{au_statistics, load_disfa, synth_generate, write_disfa_tree, Dataset, FrameRef};
use psmlab::model::{LossBreakdown, ModelBundle, RegimeTag};
use psmlab::probe::{
    embed_frames, eval_person_dependent, eval_person_independent, EmbeddingSource, EmbeddingTable, ProbeConfig,
    ProbeResult,
};
use psmlab::regimes::{
    train_gm_with, train_psm, train_psm_with, transfer, transfer_with, CurriculumConfig, EpochHook, Regime,
    RegimeConfig, Trained,
};
use psmlab::report::{neutral_consistency, noise_check, render, ClusterSubject, CurveSeries, FigureStyle, TransferApproach};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::manifest::{hash_bytes, hash_path, list_outputs, now_unix, RunManifest, MANIFEST_FILE};
use crate::{Cli, Command, ProtocolArg, RegimeArg};

/// Bad command-line usage that clap cannot catch.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Ctx {
    out: PathBuf,
    inputs: BTreeMap<String, String>,
}

impl Ctx {
    /// Record an input's hash; a missing input is a usage error.
    fn input(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(usage(format!("input {} does not exist", path.display())));
        }
        self.inputs.insert(path.display().to_string(), hash_path(path)?);
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(psmlab::Error::from)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(psmlab::Error::from)?)
}

fn load_dataset(ctx: &mut Ctx, path: &Path) -> Result<Dataset> {
    ctx.input(path)?;
    Ok(Dataset::load_index(path)?)
}

fn pick_ids(ds: &Dataset, requested: &[String]) -> Result<Vec<String>> {
    if requested.is_empty() {
        return Ok(ds.identities());
    }
    for id in requested {
        ds.frames(id)?;
    }
    Ok(requested.to_vec())
}

fn is_bundle(path: &Path) -> bool {
    path.join("manifest.json").is_file()
}

/// A bundle directory, or the model for `identity` inside a training run
/// (falling back to the run's general model, then to its only model).
pub fn resolve_model(path: &Path, identity: Option<&str>) -> Result<PathBuf> {
    if is_bundle(path) {
        return Ok(path.to_path_buf());
    }
    let models = path.join("models");
    if let Some(id) = identity {
        let p = models.join(id);
        if is_bundle(&p) {
            return Ok(p);
        }
    }
    let gm = models.join("gm");
    if is_bundle(&gm) {
        return Ok(gm);
    }
    let mut found: Vec<PathBuf> = match fs::read_dir(&models) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_bundle(p)).collect(),
        Err(_) => Vec::new(),
    };
    found.sort();
    if found.len() == 1 {
        return Ok(found.remove(0));
    }
    Err(usage(format!(
        "no model{} under {}",
        identity.map(|i| format!(" for {i}")).unwrap_or_default(),
        path.display()
    )))
}

fn load_model(ctx: &mut Ctx, path: &Path, identity: Option<&str>) -> Result<(PathBuf, ModelBundle)> {
    let p = resolve_model(path, identity)?;
    ctx.input(&p)?;
    let b = ModelBundle::load(&p)?;
    Ok((p, b))
}

/// Embeddings of every usable frame of `ids`, cached under `PSMLAB_CACHE`
/// when that is set.
fn embedding_table(ds: &Dataset, model_dir: &Path, bundle: &ModelBundle, ids: &[String]) -> Result<EmbeddingTable> {
    let cache = std::env::var_os("PSMLAB_CACHE").map(PathBuf::from);
    let key = match &cache {
        Some(_) => {
            let mut frames = Vec::new();
            for id in ids {
                frames.push(serde_json::to_vec(ds.frames(id)?).map_err(psmlab::Error::from)?);
            }
            let mut material = hash_path(model_dir)?.into_bytes();
            for f in frames {
                material.extend(hash_bytes(&f).into_bytes());
            }
            Some(hash_bytes(&material))
        }
        None => None,
    };
    if let (Some(dir), Some(k)) = (&cache, &key) {
        let p = dir.join(format!("{k}.json"));
        if p.is_file() {
            log::info!("embedding cache hit {}", p.display());
            return Ok(EmbeddingTable::read(&p)?);
        }
    }
    let mut table = EmbeddingTable::new(bundle.embedding_dim());
    for id in ids {
        let usable: Vec<&FrameRef> = ds.usable_frames(id)?;
        for (f, e) in usable.iter().zip(embed_frames(bundle, &usable)?) {
            table.push(id, f.index, &e)?;
        }
    }
    if let (Some(dir), Some(k)) = (&cache, &key) {
        fs::create_dir_all(dir)?;
        table.write(&dir.join(format!("{k}.json")))?;
    }
    Ok(table)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    let started = now_unix();
    let args: Vec<String> = std::env::args().collect();
    let (name, out) = match &cli.command {
        Command::Synth { out, .. } => ("synth", out),
        Command::Ingest { out, .. } => ("ingest", out),
        Command::Align { out, .. } => ("align", out),
        Command::Train { out, .. } => ("train", out),
        Command::Embed { out, .. } => ("embed", out),
        Command::Probe { out, .. } => ("probe", out),
        Command::Cluster { out, .. } => ("cluster", out),
        Command::TransferEval { out, .. } => ("transfer-eval", out),
        Command::NoiseCheck { out, .. } => ("noise-check", out),
        Command::Report { out, .. } => ("report", out),
    };
    fs::create_dir_all(&out.out).with_context(|| format!("creating {}", out.out.display()))?;
    let mut ctx = Ctx {
        out: out.out.clone(),
        inputs: BTreeMap::new(),
    };
    if let Some(c) = &cli.config {
        ctx.input(c)?;
    }
    let seed = match cli.command {
        Command::Synth {
            subjects,
            frames,
            size,
            patterns,
            seed,
            ..
        } => {
            let s = &mut cfg.synth;
            s.subjects = subjects.unwrap_or(s.subjects);
            s.frames_per_subject = frames.unwrap_or(s.frames_per_subject);
            s.image_size = size.unwrap_or(s.image_size);
            s.person_specific_patterns = patterns.unwrap_or(s.person_specific_patterns);
            s.seed = seed.unwrap_or(s.seed);
            synth(&mut ctx, &cfg)?;
            cfg.synth.seed
        }
        Command::Ingest {
            root,
            landmarks,
            subjects,
            ..
        } => {
            ingest(&mut ctx, &root, landmarks.as_deref(), &subjects)?;
            0
        }
        Command::Align {
            dataset,
            landmarks,
            detector,
            size,
            grayscale,
            ..
        } => {
            cfg.align.out_size = size.unwrap_or(cfg.align.out_size);
            cfg.align.grayscale |= grayscale;
            align(&mut ctx, &cfg, &dataset, landmarks.as_deref(), detector.as_deref())?;
            0
        }
        Command::Train {
            dataset,
            regime,
            identity,
            init,
            epochs,
            seed,
            lr,
            dim,
            frame_fraction,
            curriculum,
            curve_every,
            ..
        } => {
            let t = &mut cfg.train;
            t.regime = match regime {
                RegimeArg::Psm => Regime::Psm,
                RegimeArg::Gm => Regime::Gm,
                RegimeArg::ScratchShort => Regime::ScratchShort,
                RegimeArg::TransferFromGm => Regime::TransferFromGm,
                RegimeArg::TransferFromPsm => Regime::TransferFromPsm,
            };
            t.epochs = epochs.unwrap_or(t.epochs);
            t.seed = seed.unwrap_or(t.seed);
            t.adam.lr = lr.unwrap_or(t.adam.lr);
            t.frame_fraction = frame_fraction.unwrap_or(t.frame_fraction);
            if let Some(c) = curriculum {
                t.curriculum = Some(parse_curriculum(&c)?);
            }
            cfg.model.embedding_dim = dim.unwrap_or(cfg.model.embedding_dim);
            train(&mut ctx, &mut cfg, &dataset, &identity, init.as_deref(), curve_every)?;
            cfg.train.seed
        }
        Command::Embed {
            dataset,
            model,
            identity,
            ..
        } => {
            embed(&mut ctx, &dataset, &model, &identity)?;
            0
        }
        Command::Probe {
            dataset,
            psm,
            gm,
            table,
            protocol,
            bootstrap,
            seed,
            ..
        } => {
            cfg.probe.n_bootstrap = bootstrap.unwrap_or(cfg.probe.n_bootstrap);
            cfg.probe.seed = seed.unwrap_or(cfg.probe.seed);
            probe(&mut ctx, &cfg.probe, &dataset, psm.as_deref(), gm.as_deref(), &table, protocol)?;
            cfg.probe.seed
        }
        Command::Cluster {
            dataset,
            psm,
            gm,
            identity,
            pca_dims,
            l2,
            ..
        } => {
            if pca_dims.is_some() {
                cfg.sweep.pca_dims = pca_dims;
            }
            let distance = if l2 { MetricDistance::L2 } else { MetricDistance::L1 };
            cluster(&mut ctx, &cfg, &dataset, &psm, &gm, &identity, distance)?;
            0
        }
        Command::TransferEval {
            dataset,
            source,
            identity,
            fraction,
            epochs,
            seed,
            ..
        } => {
            cfg.transfer.fraction = fraction.unwrap_or(cfg.transfer.fraction);
            cfg.transfer.epochs = epochs.unwrap_or(cfg.transfer.epochs);
            cfg.train.seed = seed.unwrap_or(cfg.train.seed);
            transfer_eval(&mut ctx, &cfg, &dataset, &source, &identity)?;
            cfg.train.seed
        }
        Command::NoiseCheck {
            dataset,
            model,
            identity,
            n,
            seed,
            ..
        } => {
            cfg.noise.n_noise = n.unwrap_or(cfg.noise.n_noise);
            cfg.noise.seed = seed.unwrap_or(cfg.noise.seed);
            noise(&mut ctx, &cfg, &dataset, &model, &identity)?;
            cfg.noise.seed
        }
        Command::Report { style, input, .. } => {
            report(&mut ctx, &style, &input)?;
            0
        }
    };
    let manifest = RunManifest {
        command: name.to_string(),
        args,
        config: serde_json::to_value(&cfg).map_err(psmlab::Error::from)?,
        seed,
        inputs: ctx.inputs.clone(),
        outputs: list_outputs(&ctx.out)?,
        started_unix: started,
        finished_unix: now_unix(),
        tool_version: concat!("psmlab ", env!("CARGO_PKG_VERSION")).to_string(),
    };
    write_json(&ctx.path(MANIFEST_FILE), &manifest)
}

fn parse_curriculum(s: &str) -> Result<CurriculumConfig> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Option<Vec<u32>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some(&[a, b, r]) => {
            let c = CurriculumConfig::linear(a, b, r);
            c.validate()?;
            Ok(c)
        }
        _ => Err(usage(format!("curriculum must be d_min:d_max:ramp_epochs, got {s:?}"))),
    }
}

fn synth(ctx: &mut Ctx, cfg: &PipelineConfig) -> Result<()> {
    let ds = synth_generate(&cfg.synth)?;
    let tree = ctx.path("tree");
    let lm = write_disfa_tree(&ds, &tree)?;
    log::info!(
        "wrote {} subjects x {} frames to {}{}",
        cfg.synth.subjects,
        cfg.synth.frames_per_subject,
        tree.display(),
        lm.map(|p| format!(" (landmarks in {})", p.display())).unwrap_or_default()
    );
    Ok(())
}

fn ingest(ctx: &mut Ctx, root: &Path, landmarks: Option<&Path>, subjects: &[String]) -> Result<()> {
    ctx.input(root)?;
    let root = fs::canonicalize(root)?;
    let lm = match landmarks {
        Some(p) => Some(fs::canonicalize(p)?),
        None => Some(root.join("landmarks")).filter(|p| p.is_dir()),
    };
    let mut ds = load_disfa(&root, lm.as_deref())?;
    if !subjects.is_empty() {
        ds = ds.subset(subjects)?;
    }
    ds.save_index(&ctx.path("dataset.json"))?;
    let stats = au_statistics(&ds)?;
    write_json(&ctx.path("au_statistics.json"), &stats)?;
    write_json(
        &ctx.path("ingest.json"),
        &json!({
            "root": root,
            "landmark_dir": lm,
            "subjects": ds.identities(),
            "frames": ds.total_frames(),
            "missing_landmark_ratio": ds.discard_ratio(),
        }),
    )?;
    log::info!("indexed {} frames of {} subjects", ds.total_frames(), ds.identities().len());
    Ok(())
}

fn align(
    ctx: &mut Ctx,
    cfg: &PipelineConfig,
    dataset: &Path,
    landmarks: Option<&Path>,
    detector: Option<&Path>,
) -> Result<()> {
    let ds = load_dataset(ctx, dataset)?;
    let ingest_lm = dataset
        .parent()
        .map(|d| d.join("ingest.json"))
        .filter(|p| p.is_file())
        .map(|p| read_json(&p))
        .transpose()?
        .and_then(|v| v["landmark_dir"].as_str().map(PathBuf::from));
    let has_truth = ds.subjects().values().flatten().any(|f| f.truth.is_some());
    let source: Box<dyn LandmarkSource> = if let Some(p) = landmarks {
        ctx.input(p)?;
        Box::new(PrecomputedLandmarks::new(p))
    } else if let Some(prog) = detector {
        let scratch = ctx.path("detector_scratch");
        fs::create_dir_all(&scratch)?;
        Box::new(ExternalDetector {
            program: prog.to_path_buf(),
            scratch_dir: scratch,
        })
    } else if let Some(p) = ingest_lm {
        Box::new(PrecomputedLandmarks::new(p))
    } else if has_truth {
        Box::new(GroundTruthLandmarks)
    } else {
        return Err(usage("no landmark source: pass --landmarks or --detector"));
    };
    let (aligned, discards) = ds.aligned(source.as_ref(), &cfg.align);
    let stored = aligned.materialize(&ctx.path("frames"))?;
    stored.save_index(&ctx.path("dataset.json"))?;
    write_json(
        &ctx.path("discard_log.json"),
        &json!({
            "fraction": discards.fraction(),
            "discarded": discards.len(),
            "total_frames": discards.total_frames,
            "entries": discards.entries,
        }),
    )?;
    let _ = fs::remove_dir(ctx.path("detector_scratch"));
    log::info!(
        "aligned to {}px; discarded {} of {} frames ({:.2}%)",
        cfg.align.out_size,
        discards.len(),
        discards.total_frames,
        100.0 * discards.fraction()
    );
    Ok(())
}

fn curve_hook<'a>(
    ds: &'a Dataset,
    ids: Vec<String>,
    every: u32,
    probe: ProbeConfig,
    points: &'a mut Vec<(u32, f64)>,
) -> impl FnMut(u32, &LossBreakdown, &ModelBundle) -> psmlab::Result<()> + 'a {
    move |e, _l, b| {
        let done = e + 1;
        if every > 0 && (done % every == 0 || e == 0) {
            let cfg = ProbeConfig {
                n_bootstrap: 0,
                ..probe.clone()
            };
            let mut sum = 0.0;
            for id in &ids {
                sum += eval_person_dependent(&EmbeddingSource::Bundle(b), ds, id, &cfg)?.mean_f1();
            }
            points.push((done, sum / ids.len() as f64));
        }
        Ok(())
    }
}

fn train(
    ctx: &mut Ctx,
    cfg: &mut PipelineConfig,
    dataset: &Path,
    identity: &[String],
    init: Option<&Path>,
    curve_every: Option<u32>,
) -> Result<()> {
    let ds = load_dataset(ctx, dataset)?;
    if ds.meta.frame_width != ds.meta.frame_height {
        return Err(usage("training needs square aligned frames; run align first"));
    }
    cfg.model.image_size = ds.meta.frame_width;
    cfg.model.channels = ds.meta.channels;
    cfg.model.validate()?;
    let rc = cfg.train.clone();
    let every = curve_every.unwrap_or(0);
    let ids = pick_ids(&ds, identity)?;
    let mut losses: BTreeMap<String, Vec<LossBreakdown>> = BTreeMap::new();
    let mut curves = Vec::new();
    let mut models = BTreeMap::new();
    let out = ctx.out.clone();
    let mut save = |key: &str, t: Trained, points: Vec<(u32, f64)>| -> Result<()> {
        let dir = out.join("models").join(key);
        t.bundle.save(&dir)?;
        models.insert(key.to_string(), format!("models/{key}"));
        if let Some(l) = t.losses.last() {
            log::info!("{key}: {} epochs, final loss {:.5}", t.losses.len(), l.total);
        }
        losses.insert(key.to_string(), t.losses);
        if !points.is_empty() {
            curves.push(CurveSeries {
                label: format!("{:?} {key}", rc.regime).to_lowercase(),
                points,
            });
        }
        Ok(())
    };
    match rc.regime {
        Regime::Gm => {
            let mut points = Vec::new();
            let mut hook = curve_hook(&ds, ds.identities(), every, cfg.probe.clone(), &mut points);
            let t = train_gm_with(&ds, &rc, &cfg.model, Some(&mut hook as &mut EpochHook))?;
            drop(hook);
            save("gm", t, points)?;
        }
        Regime::Psm | Regime::ScratchShort => {
            for id in &ids {
                let mut points = Vec::new();
                let mut hook = curve_hook(&ds, vec![id.clone()], every, cfg.probe.clone(), &mut points);
                let t = train_psm_with(&ds, id, &rc, &cfg.model, Some(&mut hook as &mut EpochHook))?;
                drop(hook);
                save(id, t, points)?;
            }
        }
        Regime::TransferFromGm | Regime::TransferFromPsm => {
            let init = init.ok_or_else(|| usage("transfer regimes need --init"))?;
            for id in &ids {
                let target = match rc.regime {
                    Regime::TransferFromGm => Some(id.as_str()),
                    _ => None,
                };
                let (_, src) = load_model(ctx, init, target)?;
                let mut points = Vec::new();
                let mut hook = curve_hook(&ds, vec![id.clone()], every, cfg.probe.clone(), &mut points);
                let t = transfer_with(&src, &ds, id, &rc, Some(&mut hook as &mut EpochHook))?;
                drop(hook);
                save(id, t, points)?;
            }
        }
    }
    write_json(
        &ctx.path("train.json"),
        &json!({
            "regime": rc.regime,
            "models": models,
            "losses": losses,
        }),
    )?;
    if !curves.is_empty() {
        write_json(&ctx.path("fig6.json"), &json!({ "series": curves }))?;
    }
    Ok(())
}

fn embed(ctx: &mut Ctx, dataset: &Path, model: &Path, identity: &[String]) -> Result<()> {
    let ds = load_dataset(ctx, dataset)?;
    let ids = pick_ids(&ds, identity)?;
    let mut out = EmbeddingTable::new(0);
    for id in &ids {
        let (dir, bundle) = load_model(ctx, model, Some(id))?;
        let t = embedding_table(&ds, &dir, &bundle, std::slice::from_ref(id))?;
        if out.is_empty() {
            out = EmbeddingTable::new(bundle.embedding_dim());
        }
        for (i, row) in t.rows().iter().enumerate() {
            out.push(&row.identity, row.index, t.row(i))?;
        }
    }
    out.write(&ctx.path("embeddings.json"))?;
    log::info!("wrote {} embeddings", out.len());
    Ok(())
}

fn probe(
    ctx: &mut Ctx,
    cfg: &ProbeConfig,
    dataset: &Path,
    psm: Option<&Path>,
    gm: Option<&Path>,
    tables: &[String],
    protocol: ProtocolArg,
) -> Result<()> {
    let ds = load_dataset(ctx, dataset)?;
    if psm.is_none() && gm.is_none() && tables.is_empty() {
        return Err(usage("probe needs --psm, --gm or --table"));
    }
    let mut named = Vec::new();
    for t in tables {
        let (name, path) = t
            .split_once('=')
            .ok_or_else(|| usage(format!("--table expects NAME=PATH, got {t:?}")))?;
        ctx.input(Path::new(path))?;
        named.push((name.to_string(), EmbeddingTable::read(Path::new(path))?));
    }
    let ids = ds.identities();
    let mut psm_results: Vec<ProbeResult> = Vec::new();
    let mut gm_results: Vec<ProbeResult> = Vec::new();
    let mut methods = Vec::new();
    let mut csv = String::from("model,identity,mean_f1,evaluated_aus\n");
    let mut row = |model: &str, id: &str, r: &ProbeResult| {
        csv.push_str(&format!("{model},{id},{:.6},{}\n", r.mean_f1(), r.evaluated_aus.len()));
    };
    match protocol {
        ProtocolArg::Dependent => {
            for id in &ids {
                let one = std::slice::from_ref(id);
                if let Some(p) = psm {
                    let (dir, b) = load_model(ctx, p, Some(id))?;
                    let t = embedding_table(&ds, &dir, &b, one)?;
                    let r = eval_person_dependent(&EmbeddingSource::Table(&t), &ds, id, cfg)?;
                    row("psm", id, &r);
                    psm_results.push(r);
                }
                if let Some(g) = gm {
                    let (dir, b) = load_model(ctx, g, Some(id))?;
                    let t = embedding_table(&ds, &dir, &b, one)?;
                    let r = eval_person_dependent(&EmbeddingSource::Table(&t), &ds, id, cfg)?;
                    row("gm", id, &r);
                    gm_results.push(r);
                }
                for (name, t) in &named {
                    let r = eval_person_dependent(&EmbeddingSource::Table(t), &ds, id, cfg)?;
                    row(name, id, &r);
                }
            }
        }
        ProtocolArg::Independent => {
            if psm.is_some() {
                return Err(usage("person-specific models cannot be probed person-independently"));
            }
            if let Some(g) = gm {
                let (dir, b) = load_model(ctx, g, None)?;
                let t = embedding_table(&ds, &dir, &b, &ids)?;
                let r = eval_person_independent(&EmbeddingSource::Table(&t), &ds, cfg)?;
                row("gm", "all", &r);
                methods.push(json!({ "name": "GM", "result": r }));
                gm_results.push(r);
            }
            for (name, t) in &named {
                let r = eval_person_independent(&EmbeddingSource::Table(t), &ds, cfg)?;
                row(name, "all", &r);
                methods.push(json!({ "name": name, "result": r }));
            }
        }
    }
    let protocol_name = match protocol {
        ProtocolArg::Dependent => "person_dependent",
        ProtocolArg::Independent => "person_independent",
    };
    write_json(
        &ctx.path("probe.json"),
        &json!({
            "title": format!("PSM vs GM, {}", protocol_name.replace('_', "-")),
            "protocol": protocol_name,
            "probe_config": cfg,
            "psm": psm_results,
            "gm": gm_results,
            "methods": methods,
        }),
    )?;
    fs::write(ctx.path("probe.csv"), csv)?;
    Ok(())
}

/// Labels of the sweep run whose cluster count is closest to the sweep
/// average (first such run in grid order).
fn representative(points: &[Vec<f64>], cfg: &PipelineConfig, sweep: &SweepResult) -> Result<(f64, usize, Vec<Option<usize>>)> {
    let best = sweep
        .runs
        .iter()
        .min_by(|a, b| {
            let da = (a.clusters as f64 - sweep.average_clusters).abs();
            let db = (b.clusters as f64 - sweep.average_clusters).abs();
            da.total_cmp(&db)
        })
        .ok_or_else(|| usage("empty sweep"))?;
    let space = sweep_space(points, &cfg.sweep)?;
    Ok((best.eps, best.min_samples, dbscan(&space, best.eps, best.min_samples)?))
}

fn cluster(
    ctx: &mut Ctx,
    cfg: &PipelineConfig,
    dataset: &Path,
    psm: &Path,
    gm: &Path,
    identity: &[String],
    distance: MetricDistance,
) -> Result<()> {
    let ds = load_dataset(ctx, dataset)?;
    let ids = pick_ids(&ds, identity)?;
    let mut subjects = Vec::new();
    for id in &ids {
        let one = std::slice::from_ref(id);
        let records: Vec<_> = ds.usable_frames(id)?.iter().map(|f| f.labels).collect();
        let mut side = |path: &Path, which: Side| -> Result<(Vec<Vec<f64>>, SweepResult, Value, Vec<_>)> {
            let (dir, b) = load_model(ctx, path, Some(id))?;
            let t = embedding_table(&ds, &dir, &b, one)?;
            let pts: Vec<Vec<f64>> = (0..t.len()).map(|i| t.row(i).iter().map(|&v| v as f64).collect()).collect();
            let sweep = cluster_sweep(&pts, &cfg.sweep)?;
            let (eps, min_samples, labels) = representative(&pts, cfg, &sweep)?;
            let profiles = cluster_au_frequencies(&labels, &records, which)?;
            Ok((pts, sweep, json!({ "eps": eps, "min_samples": min_samples }), profiles))
        };
        let (psm_pts, psm_sweep, psm_rep, psm_profiles) = side(psm, Side::Psm)?;
        let (gm_pts, gm_sweep, gm_rep, gm_profiles) = side(gm, Side::Gm)?;
        let novelty = if psm_profiles.is_empty() || gm_profiles.is_empty() {
            log::warn!("{id}: one model produced no clusters; novelty not computed");
            None
        } else {
            Some(novelty_flags(&psm_profiles, &gm_profiles, NOVELTY_THRESHOLD, distance)?)
        };
        let (pxy, gxy) = (project_2d(&psm_pts)?, project_2d(&gm_pts)?);
        let mut csv = String::from("row,psm_pc1,psm_pc2,gm_pc1,gm_pc2\n");
        for (i, (p, g)) in pxy.iter().zip(&gxy).enumerate() {
            csv.push_str(&format!("{i},{:.6},{:.6},{:.6},{:.6}\n", p[0], p[1], g[0], g[1]));
        }
        fs::write(ctx.path(&format!("projection_{id}.csv")), csv)?;
        log::info!(
            "{id}: average clusters psm {:.2}, gm {:.2}",
            psm_sweep.average_clusters,
            gm_sweep.average_clusters
        );
        let subject = ClusterSubject {
            identity: id.clone(),
            psm_sweep,
            gm_sweep,
            psm_profiles,
            gm_profiles,
            novelty,
        };
        let mut v = serde_json::to_value(&subject).map_err(psmlab::Error::from)?;
        v["psm_representative"] = psm_rep;
        v["gm_representative"] = gm_rep;
        subjects.push(v);
    }
    write_json(
        &ctx.path("cluster.json"),
        &json!({ "sweep_config": cfg.sweep, "distance": distance, "subjects": subjects }),
    )
}

/// Evenly spaced usable frames of one person, at most `n`.
fn consistency_frames(ds: &Dataset, id: &str, n: usize) -> Result<Vec<psmlab::image::Image>> {
    let usable = ds.usable_frames(id)?;
    let keep = n.min(usable.len()).max(1);
    (0..keep)
        .map(|k| usable[k * usable.len() / keep].load_pixels().map_err(Into::into))
        .collect()
}

fn transfer_eval(ctx: &mut Ctx, cfg: &PipelineConfig, dataset: &Path, source: &Path, id: &str) -> Result<()> {
    let ds = load_dataset(ctx, dataset)?;
    ds.frames(id)?;
    let (_, src) = load_model(ctx, source, None)?;
    let tc = &cfg.transfer;
    let regime = if src.provenance.regime == RegimeTag::Gm {
        Regime::TransferFromGm
    } else {
        Regime::TransferFromPsm
    };
    let rc = RegimeConfig {
        regime,
        epochs: tc.epochs,
        frame_fraction: tc.fraction,
        ..cfg.train.clone()
    };
    let tuned = transfer(&src, &ds, id, &rc)?;
    let scratch = train_psm(
        &ds,
        id,
        &RegimeConfig {
            regime: Regime::ScratchShort,
            ..rc.clone()
        },
        src.config(),
    )?;
    tuned.bundle.save(&ctx.path("models/transfer"))?;
    scratch.bundle.save(&ctx.path("models/scratch"))?;
    let frames = consistency_frames(&ds, id, tc.consistency_frames)?;
    let mut approaches = Vec::new();
    let mut add = |name: &str, b: &ModelBundle, frames: &[psmlab::image::Image], probe_id: &str| -> Result<()> {
        let r = eval_person_dependent(&EmbeddingSource::Bundle(b), &ds, probe_id, &cfg.probe)?;
        let ci = r.bootstrap.values().fold(None::<[f64; 2]>, |acc, s| {
            let [lo, hi] = acc.unwrap_or([0.0, 0.0]);
            Some([lo + s.ci_low, hi + s.ci_high])
        });
        let n = r.bootstrap.len().max(1) as f64;
        approaches.push(TransferApproach {
            name: name.to_string(),
            f1: r.mean_f1(),
            ci: ci.map(|[lo, hi]| [lo / n, hi / n]),
            neutral_consistency: Some(neutral_consistency(b, frames)?),
        });
        Ok(())
    };
    add("pretrained", &src, &frames, id)?;
    add("transfer", &tuned.bundle, &frames, id)?;
    add("scratch-short", &scratch.bundle, &frames, id)?;
    if let [own] = src.provenance.identities.as_slice() {
        if own != id && ds.frames(own).is_ok() {
            let own_frames = consistency_frames(&ds, own, tc.consistency_frames)?;
            add("pretrained on own subject", &src, &own_frames, own)?;
        }
    }
    for a in &approaches {
        log::info!(
            "{}: F1 {:.3}, neutral consistency {:.2}",
            a.name,
            a.f1,
            a.neutral_consistency.unwrap_or(f64::NAN)
        );
    }
    write_json(&ctx.path("transfer.json"), &json!({ "subject": id, "approaches": approaches }))
}

fn noise(ctx: &mut Ctx, cfg: &PipelineConfig, dataset: &Path, model: &Path, id: &str) -> Result<()> {
    let ds = load_dataset(ctx, dataset)?;
    let (_, bundle) = load_model(ctx, model, Some(id))?;
    let reference = ds
        .usable_frames(id)?
        .iter()
        .map(|f| f.load_pixels())
        .collect::<psmlab::Result<Vec<_>>>()?;
    let r = noise_check(&bundle, cfg.noise.n_noise, &reference, cfg.noise.seed)?;
    log::info!(
        "{:.1}% of noise inputs beyond the 95th percentile ({:.2}): {}",
        100.0 * r.fraction_beyond,
        r.threshold,
        if r.passed { "pass" } else { "fail" }
    );
    write_json(&ctx.path("noise_check.json"), &r)
}

fn report(ctx: &mut Ctx, style: &str, input: &Path) -> Result<()> {
    let style: FigureStyle = style.parse()?;
    ctx.input(input)?;
    let out = render(style, &read_json(input)?)?;
    write_json(&ctx.path(&format!("{}.json", style.name())), &out.json)?;
    fs::write(ctx.path(&format!("{}.csv", style.name())), &out.csv)?;
    for (name, svg) in &out.images {
        fs::write(ctx.path(name), svg)?;
    }
    log::info!("rendered {} ({} images)", style.name(), out.images.len());
    Ok(())
}
