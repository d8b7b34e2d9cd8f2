use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use medcoop::backbone::{encode_text_bank, init_context, stack_bank, unstack_bank};
use medcoop::ensemble::mean_ensemble;
use medcoop::eval::{base_novel_split, classify_accuracy, context_accuracy, harmonic_mean};
use medcoop::prompt_gen::{fetch_prompts, load_offline, validate_bank, HttpTransport};
use medcoop::synthetic::{SyntheticTask, TaskSpec};
use medcoop::trainer::{load_checkpoint, render_log, sample_few_shot, save_checkpoint};
use medcoop::types::{
    load_manifest, read_embedding_cache, write_embedding_cache, CacheIndex, ClassCatalog, DatasetManifest,
    EmbeddingMatrix, PromptBank, Split,
};
use medcoop::{
    build_ensembles, Batch, CachedVisionSource, ContextVectors, DatasetReport, Error, EvalReport, Result, RunConfig,
    SeedResult, SyntheticTextEncoder, SyntheticVisionEncoder, TextEncoder, Trainer,
};
use serde_json::json;

use crate::config::LoadedConfig;

/// Writes `bytes` to `path` plus a `.meta` sidecar carrying the
/// nondeterministic details (time, host).
fn write_artifact(cfg: &LoadedConfig, command: &str, seed: u64, path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_meta(cfg, command, seed, path)
}

fn write_meta(cfg: &LoadedConfig, command: &str, seed: u64, path: &Path) -> Result<()> {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or_default();
    let meta = json!({
        "artifact": path.file_name().map(|n| n.to_string_lossy().into_owned()),
        "command": command,
        "config_digest": cfg.digest,
        "seed": seed,
        "created_unix": created,
        "host": std::env::var("HOSTNAME").unwrap_or_else(|_| "unknown".into()),
        "tool_version": env!("CARGO_PKG_VERSION"),
    });
    let mut meta_path = path.as_os_str().to_owned();
    meta_path.push(".meta");
    let meta_path = PathBuf::from(meta_path);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

fn provenance(cfg: &LoadedConfig, seed: u64) -> String {
    format!("config {} seed {seed}", cfg.digest)
}

fn output_dir(cfg: &LoadedConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn catalog(cfg: &LoadedConfig) -> Result<ClassCatalog> {
    ClassCatalog::load(&cfg.path("catalog", &cfg.files.catalog)?)
}

fn manifest(cfg: &LoadedConfig, catalog: &ClassCatalog) -> Result<DatasetManifest> {
    load_manifest(&cfg.path("manifest", &cfg.files.manifest)?, catalog)
}

fn text_encoder(cfg: &LoadedConfig) -> Result<SyntheticTextEncoder> {
    SyntheticTextEncoder::new(
        cfg.files.text_seed,
        cfg.files.token_width,
        cfg.files.embedding_dim,
        cfg.run.tau,
    )
}

fn vision(cfg: &LoadedConfig) -> Result<CachedVisionSource> {
    let embeddings = read_embedding_cache(&cfg.path("image_cache", &cfg.files.image_cache)?)?;
    let index = CacheIndex::read(&cfg.path("image_index", &cfg.files.image_index)?)?;
    CachedVisionSource::new(embeddings, index)
}

fn load_bank(cfg: &LoadedConfig, catalog: &ClassCatalog) -> Result<PromptBank> {
    let bank = PromptBank::load(&cfg.path("bank", &cfg.files.bank)?)?;
    let diagnostics = validate_bank(&bank, catalog, cfg.run.n_prompts);
    if !diagnostics.is_empty() {
        let list: Vec<String> = diagnostics.iter().map(ToString::to_string).collect();
        return Err(Error::Data(format!("prompt bank unusable: {}", list.join("; "))));
    }
    Ok(bank)
}

/// Per-class prompt embeddings: from the bank cache when configured,
/// otherwise encoded on the fly.
fn banks(
    cfg: &LoadedConfig,
    catalog: &ClassCatalog,
    encoder: Option<&dyn TextEncoder>,
) -> Result<Vec<EmbeddingMatrix>> {
    match (&cfg.files.bank_cache, encoder) {
        (Some(p), _) => {
            let stacked = read_embedding_cache(&cfg.resolve(p))?;
            unstack_bank(&stacked, catalog.len(), cfg.run.n_prompts)
        }
        (None, Some(e)) => encode_text_bank(e, &load_bank(cfg, catalog)?, catalog),
        (None, None) => Err(Error::Config("`bank_cache` must be set for this command".into())),
    }
}

/// All items of `split` whose class is in `catalog`, labeled by position in
/// `catalog`.
fn split_batch(
    manifest: &DatasetManifest,
    catalog: &ClassCatalog,
    vision: &CachedVisionSource,
    split: Split,
) -> Result<Batch> {
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for r in manifest.records_in(split) {
        if let Some(c) = catalog.index_of(&r.class_name) {
            ids.push(r.item_id.as_str());
            labels.push(c);
        }
    }
    if ids.is_empty() {
        return Err(Error::Data(format!("no {split} items for the requested classes")));
    }
    Batch::new(vision.encode(&ids)?, labels)
}

fn restrict_manifest(manifest: &DatasetManifest, catalog: &ClassCatalog) -> DatasetManifest {
    DatasetManifest {
        records: manifest
            .records
            .iter()
            .filter(|r| catalog.contains(&r.class_name))
            .cloned()
            .collect(),
        image_size: manifest.image_size,
    }
}

fn seeded(run: &RunConfig, seed: u64) -> RunConfig {
    RunConfig { seed, ..run.clone() }
}

pub fn gen_prompts(cfg: &LoadedConfig) -> Result<()> {
    let catalog = catalog(cfg)?;
    let n = cfg.run.n_prompts;
    let (bank, source) = match &cfg.files.offline_bank {
        Some(p) => (load_offline(&cfg.resolve(p), &catalog, n)?, "offline"),
        None => {
            let llm = cfg.llm();
            let transport = HttpTransport::from_config(&llm)?;
            (fetch_prompts(&transport, &llm, &catalog, n)?, "endpoint")
        }
    };
    let out = cfg.path("bank", &cfg.files.bank)?;
    write_artifact(cfg, "gen-prompts", cfg.run.seed, &out, bank.to_json().as_bytes())?;
    println!(
        "wrote {} classes x {n} prompts ({source}) to {}",
        bank.classes.len(),
        out.display()
    );
    Ok(())
}

pub fn encode_bank(cfg: &LoadedConfig) -> Result<()> {
    let catalog = catalog(cfg)?;
    let encoder = text_encoder(cfg)?;
    let bank = load_bank(cfg, &catalog)?;
    let stacked = stack_bank(&encode_text_bank(&encoder, &bank, &catalog)?)?;
    let out = cfg.path("bank_cache", &cfg.files.bank_cache)?;
    write_embedding_cache(&stacked, &out)?;
    write_meta(cfg, "encode-bank", cfg.run.seed, &out)?;
    println!(
        "wrote {}x{} bank embeddings to {}",
        stacked.len(),
        stacked.dim(),
        out.display()
    );
    Ok(())
}

pub fn encode_images(cfg: &LoadedConfig) -> Result<()> {
    let features = read_embedding_cache(&cfg.path("image_features", &cfg.files.image_features)?)?;
    let index = CacheIndex::read(&cfg.path("image_features_index", &cfg.files.image_features_index)?)?;
    if index.len() != features.len() {
        return Err(Error::Data(format!(
            "feature index has {} ids for {} rows",
            index.len(),
            features.len()
        )));
    }
    let encoder = SyntheticVisionEncoder::new(
        cfg.files.vision_seed,
        features.dim(),
        cfg.files.embedding_dim,
        cfg.files.vision_bias,
    )?;
    let embeddings = encoder.encode(features.matrix())?;
    let out = cfg.path("image_cache", &cfg.files.image_cache)?;
    let out_index = cfg.path("image_index", &cfg.files.image_index)?;
    write_embedding_cache(&embeddings, &out)?;
    write_meta(cfg, "encode-images", cfg.run.seed, &out)?;
    index.write(&out_index)?;
    println!(
        "wrote {}x{} image embeddings to {}",
        embeddings.len(),
        embeddings.dim(),
        out.display()
    );
    Ok(())
}

pub fn select(cfg: &LoadedConfig) -> Result<()> {
    let catalog = catalog(cfg)?;
    let manifest = manifest(cfg, &catalog)?;
    let encoder = text_encoder(cfg)?;
    let banks = banks(cfg, &catalog, Some(&encoder))?;
    let vision = vision(cfg)?;
    let dir = output_dir(cfg)?;
    for seed in cfg.seeds() {
        let support = sample_few_shot(&manifest, &catalog, cfg.run.shots, seed)?.to_batch(&vision)?;
        let ens = build_ensembles(&banks, &support.images, &catalog, cfg.run.beta, cfg.run.zeta_s)?;
        let report = json!({
            "config_digest": cfg.digest,
            "seed": seed,
            "beta": cfg.run.beta,
            "zeta_s": cfg.run.zeta_s,
            "classes": ens.reports,
        });
        let path = dir.join(format!("select-seed{seed}.json"));
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        write_artifact(cfg, "select", seed, &path, text.as_bytes())?;
        for r in &ens.reports {
            println!(
                "seed {seed} {}: kept {}/{} excluded {:?}",
                r.class_name,
                r.n_selected,
                r.scores.len(),
                r.excluded()
            );
        }
    }
    Ok(())
}

struct TrainedSeed {
    ctx: ContextVectors,
}

/// Samples the support set, builds the ensembles, trains, and writes the
/// checkpoint and log under `prefix`.
#[allow(clippy::too_many_arguments)]
fn train_seed(
    cfg: &LoadedConfig,
    command: &str,
    prefix: &str,
    seed: u64,
    catalog: &ClassCatalog,
    manifest: &DatasetManifest,
    banks: &[EmbeddingMatrix],
    encoder: &dyn TextEncoder,
    vision: &CachedVisionSource,
) -> Result<TrainedSeed> {
    let run = seeded(&cfg.run, seed);
    let support = sample_few_shot(manifest, catalog, run.shots, seed)?.to_batch(vision)?;
    let ens = build_ensembles(banks, &support.images, catalog, run.beta, run.zeta_s)?;
    let names: Vec<String> = catalog.names().map(str::to_string).collect();
    let trainer = Trainer::new(encoder, names, &ens, &support, &run)?;
    let (state, log) = trainer.run(trainer.initial_state()?)?;
    let dir = output_dir(cfg)?;
    let ckpt = dir.join(format!("{prefix}ckpt-seed{seed}.bin"));
    save_checkpoint(&state, &provenance(cfg, seed), &ckpt)?;
    write_meta(cfg, command, seed, &ckpt)?;
    let log_path = dir.join(format!("{prefix}train-seed{seed}.log"));
    let header = format!("{}\nepoch\tce\tsccm\tkdsp\ttotal\ttrain_acc", provenance(cfg, seed));
    write_artifact(
        cfg,
        command,
        seed,
        &log_path,
        render_log(&log, Some(&header)).as_bytes(),
    )?;
    if let Some(last) = log.last() {
        println!("seed {seed}: {}", last.log_line());
    }
    Ok(TrainedSeed { ctx: state.ctx })
}

pub fn train(cfg: &LoadedConfig) -> Result<()> {
    let catalog = catalog(cfg)?;
    let manifest = manifest(cfg, &catalog)?;
    let encoder = text_encoder(cfg)?;
    let banks = banks(cfg, &catalog, Some(&encoder))?;
    let vision = vision(cfg)?;
    for seed in cfg.seeds() {
        train_seed(cfg, "train", "", seed, &catalog, &manifest, &banks, &encoder, &vision)?;
    }
    Ok(())
}

fn write_report(cfg: &LoadedConfig, command: &str, stem: &str, report: &EvalReport) -> Result<()> {
    let dir = output_dir(cfg)?;
    write_artifact(
        cfg,
        command,
        cfg.run.seed,
        &dir.join(format!("{stem}.json")),
        report.to_json().as_bytes(),
    )?;
    let table = report.render_table();
    write_artifact(
        cfg,
        command,
        cfg.run.seed,
        &dir.join(format!("{stem}.txt")),
        table.as_bytes(),
    )?;
    print!("{table}");
    Ok(())
}

/// Context for `seed`: the trained checkpoint when present, otherwise the
/// untrained template context.
fn context_for(cfg: &LoadedConfig, encoder: &dyn TextEncoder, path: &Path, seed: u64) -> Result<ContextVectors> {
    let init_text = &cfg.run.context_init_text;
    if path.exists() {
        let ckpt = load_checkpoint(path, cfg.run.context_length, encoder.token_width(), init_text)?;
        if ckpt.provenance != provenance(cfg, seed) {
            log::warn!("{} was written under `{}`", path.display(), ckpt.provenance);
        }
        return Ok(ckpt.state.ctx);
    }
    log::info!("{} not found; evaluating the untrained context", path.display());
    let mut ctx = init_context(encoder, init_text, cfg.run.context_length, seed)?;
    for v in ctx.vectors_mut().as_mut_slice() {
        *v = f64::from(*v as f32);
    }
    Ok(ctx)
}

pub fn eval(cfg: &LoadedConfig) -> Result<()> {
    let catalog = catalog(cfg)?;
    let manifest = manifest(cfg, &catalog)?;
    let vision = vision(cfg)?;
    let test = split_batch(&manifest, &catalog, &vision, Split::Test)?;
    let names: Vec<String> = catalog.names().map(str::to_string).collect();
    let mut seeds = Vec::new();
    let benchmark = if cfg.files.zero_shot_ensemble {
        // exported caches need no text encoder
        let encoder = match cfg.files.bank_cache {
            Some(_) => None,
            None => Some(text_encoder(cfg)?),
        };
        let banks = banks(cfg, &catalog, encoder.as_ref().map(|e| e as &dyn TextEncoder))?;
        let ensemble = mean_ensemble(&banks)?;
        let acc = classify_accuracy(&ensemble, &test, cfg.run.tau)?;
        // the ensemble does not depend on the support seed
        seeds.push(SeedResult {
            seed: cfg.run.seed,
            accuracy: acc,
            base: None,
            novel: None,
        });
        "zero-shot-ensemble"
    } else {
        let encoder = text_encoder(cfg)?;
        let dir = cfg.output_dir();
        for seed in cfg.seeds() {
            let ctx = context_for(cfg, &encoder, &dir.join(format!("ckpt-seed{seed}.bin")), seed)?;
            let acc = context_accuracy(&encoder, &ctx, &names, &test)?;
            seeds.push(SeedResult {
                seed,
                accuracy: acc,
                base: None,
                novel: None,
            });
        }
        "few-shot"
    };
    let mut report = EvalReport::new(cfg.digest.clone(), cfg.run.seed, benchmark);
    report
        .datasets
        .push(DatasetReport::aggregate(cfg.files.dataset.clone(), seeds)?);
    write_report(cfg, "eval", "report", &report)
}

pub fn base_to_novel(cfg: &LoadedConfig) -> Result<()> {
    let catalog = catalog(cfg)?;
    let manifest = manifest(cfg, &catalog)?;
    let encoder = text_encoder(cfg)?;
    let all_banks = banks(cfg, &catalog, Some(&encoder))?;
    let vision = vision(cfg)?;
    let (base_idx, novel_idx) = base_novel_split(&catalog)?;
    let base = catalog.subset(&base_idx)?;
    let novel = catalog.subset(&novel_idx)?;
    let base_manifest = restrict_manifest(&manifest, &base);
    let base_banks: Vec<EmbeddingMatrix> = base_idx.iter().map(|&i| all_banks[i].clone()).collect();
    let base_test = split_batch(&manifest, &base, &vision, Split::Test)?;
    let novel_test = split_batch(&manifest, &novel, &vision, Split::Test)?;
    let base_names: Vec<String> = base.names().map(str::to_string).collect();
    let novel_names: Vec<String> = novel.names().map(str::to_string).collect();

    let mut seeds = Vec::new();
    for seed in cfg.seeds() {
        let trained = train_seed(
            cfg,
            "base-to-novel",
            "b2n-",
            seed,
            &base,
            &base_manifest,
            &base_banks,
            &encoder,
            &vision,
        )?;
        // the base-trained context is reused with the novel class names
        let b = context_accuracy(&encoder, &trained.ctx, &base_names, &base_test)?;
        let n = context_accuracy(&encoder, &trained.ctx, &novel_names, &novel_test)?;
        let hm = if b + n > 0.0 { harmonic_mean(b, n)? } else { 0.0 };
        seeds.push(SeedResult {
            seed,
            accuracy: hm,
            base: Some(b),
            novel: Some(n),
        });
    }
    let mut report = EvalReport::new(cfg.digest.clone(), cfg.run.seed, "base-to-novel");
    report
        .datasets
        .push(DatasetReport::aggregate(cfg.files.dataset.clone(), seeds)?);
    write_report(cfg, "base-to-novel", "b2n-report", &report)
}

#[derive(Debug, clap::Args)]
pub struct SyntheticArgs {
    /// Directory for the data files and `config.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 50)]
    pub n_prompts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub text_seed: u64,
    #[arg(long, default_value_t = 64)]
    pub token_width: usize,
    #[arg(long, default_value_t = 32)]
    pub embedding_dim: usize,
}

pub fn synthetic(args: &SyntheticArgs) -> Result<()> {
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let encoder = SyntheticTextEncoder::new(
        args.text_seed,
        args.token_width,
        args.embedding_dim,
        RunConfig::default().tau,
    )?;
    let spec = TaskSpec {
        classes: args.classes,
        train_per_class: args.train_per_class,
        test_per_class: args.test_per_class,
        sigma: args.sigma,
        n_prompts: args.n_prompts,
        seed: args.seed,
    };
    let task = SyntheticTask::generate(&encoder, &spec)?;
    task.write(&args.out)?;
    let config = json!({
        "dataset": "synthetic",
        "catalog": "catalog.tsv",
        "manifest": "manifest.tsv",
        "bank": "bank.json",
        "bank_cache": "bank.bin",
        "image_cache": "images.bin",
        "image_index": "images.idx",
        "output_dir": "runs",
        "n_prompts": args.n_prompts,
        "shots": args.train_per_class.min(16),
        "text_seed": args.text_seed,
        "token_width": args.token_width,
        "embedding_dim": args.embedding_dim,
    });
    let path = args.out.join("config.json");
    let text = serde_json::to_string_pretty(&config).expect("config serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!("wrote synthetic task and {}", path.display());
    Ok(())
}
