//! attribex pipeline runner.
//!
//! Stages read their inputs from the run directory, write their artifact,
//! and append a manifest entry carrying the config hash. Exit codes:
//! 0 success, 2 config problem (including refusing to overwrite), 3 missing
//! upstream artifact, 4 stage failure.

mod config;
mod rundir;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attribex::atsf;
use attribex::attrdesign::{design_attributes, AttributeMatrix, AttributeSidecar};
use attribex::dataset::{generate_synthetic, load_features, save_corpus, FeatureDataset, Projector, Split};
use attribex::detectors::{
    train_attribute_detectors, train_category_classifier, AttributeEmbedding,
    DetectorBank, DetectorSidecar, LinearModel,
};
use attribex::error::Error;
use attribex::eval::{repeated_splits_eval, report_from_rankings, parameter_sweep};
use attribex::graph::SimilarityGraph;
use attribex::linalg::Mat;
use attribex::pipeline::{assign_query_roles, fit_projector, preprocess, search_embedded};
use attribex::retrieval::RankedResult;
use attribex::synthcheck::{
    run_attr_vs_raw_experiment, run_redundancy_experiment, run_sharing_experiment, ExperimentSpec,
};

use config::RunConfig;
use rundir::RunDir;

#[derive(Parser)]
#[command(name = "attribex", about = "Attribute learning and instance retrieval pipeline", version)]
struct Cli {
    /// Path to the JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory holding all artifacts.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replace existing artifacts instead of refusing.
    #[arg(long, global = true)]
    overwrite: bool,

    /// Let eval proceed across artifacts produced by different configs.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth,
    /// Build the similarity graph and learn the attribute matrix.
    Learn,
    /// Train attribute detectors (and the category classifier).
    Detect,
    /// Embed gallery/probe/distractor images as detector scores.
    Embed,
    /// Rank gallery images for every probe with fused scores.
    Search,
    /// Evaluate rankings (or run the repeated-split protocol).
    Eval,
    /// Parameter sweep over lambda/gamma/k grids.
    Sweep,
    /// Run the directional synthetic experiments.
    Experiments,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("error: {kind}: {e}");
            ExitCode::from(code)
        }
    }
}

fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::InvalidConfig(_) | Error::AlphaOutOfRange(_) => ("config", 2),
        Error::MissingFile(_) => ("missing-artifact", 3),
        Error::Json { context, .. } if context.contains("config") => ("config", 2),
        _ => ("stage", 4),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| Error::json(format!("parsing config {}", path.display()), e))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn thread_budget() -> Result<usize, Error> {
    let available = std::thread::available_parallelism()
        .map(usize::from)
        .unwrap_or(1);
    match std::env::var("ATTRIBEX_THREADS") {
        Ok(raw) => {
            let cap: usize = raw.parse().map_err(|_| {
                Error::InvalidConfig(format!("ATTRIBEX_THREADS must be a positive integer, got {raw:?}"))
            })?;
            if cap == 0 {
                return Err(Error::InvalidConfig(
                    "ATTRIBEX_THREADS must be at least 1".into(),
                ));
            }
            Ok(cap.min(available))
        }
        Err(_) => Ok(available.min(8)),
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let dir = RunDir::new(&cli.run_dir, cli.overwrite);
    match cli.command {
        Command::Synth => cmd_synth(&cfg, &dir),
        Command::Learn => cmd_learn(&cfg, &dir),
        Command::Detect => cmd_detect(&cfg, &dir),
        Command::Embed => cmd_embed(&cfg, &dir),
        Command::Search => cmd_search(&cfg, &dir),
        Command::Eval => cmd_eval(&cfg, &dir, cli.force),
        Command::Sweep => cmd_sweep(&cfg, &dir),
        Command::Experiments => cmd_experiments(&cfg, &dir),
    }
}

// ---------------------------------------------------------------------------

fn cmd_synth(cfg: &RunConfig, dir: &RunDir) -> Result<(), Error> {
    let corpus = dir.corpus_dir();
    dir.claim(&[corpus.join("meta.jsonl"), corpus.join("features.bin")])?;

    let total = cfg.n_train_instances + cfg.n_test_instances;
    let pool = generate_synthetic(total, cfg.views_per_instance, cfg.dim, cfg.view_noise, cfg.seed)?;
    let ids = pool.instance_ids().to_vec();
    let train_ids: std::collections::BTreeSet<&String> =
        ids[..cfg.n_train_instances].iter().collect();

    let train = pool.filtered(|r| train_ids.contains(&r.instance_id))?;
    let test = pool.filtered(|r| !train_ids.contains(&r.instance_id))?;
    let test = assign_query_roles(&test, cfg.single_gallery_shot)?;

    let mut images = Vec::with_capacity(pool.n_images());
    images.extend(train.images().iter().cloned());
    images.extend(test.images().iter().cloned());

    // Distractors come from their own generator draw: a different latent
    // population, the way clutter in a search corpus is simply not the
    // query's category. That is what gives the category classifier
    // something to separate.
    if cfg.n_distractor_instances > 0 {
        let other = generate_synthetic(
            cfg.n_distractor_instances,
            cfg.views_per_instance,
            cfg.dim,
            cfg.view_noise,
            cfg.seed ^ 0xD15_7AC7,
        )?;
        for rec in other.images() {
            let mut r = rec.clone();
            r.image_id = format!("dist_{}", r.image_id);
            r.instance_id = format!("dist_{}", r.instance_id);
            r.category_id = "distractor".into();
            r.split = Split::Distractor;
            images.push(r);
        }
    }
    let dataset = FeatureDataset::new(images, cfg.dim)?;
    save_corpus(&dataset, &corpus)?;
    dir.append_manifest("synth", &cfg.hash(), &[corpus.join("meta.jsonl"), corpus.join("features.bin")])?;
    println!(
        "synth: {} images ({} instances) -> {}",
        dataset.n_images(),
        dataset.n_instances(),
        corpus.display()
    );
    Ok(())
}

fn load_projector_if_any(cfg: &RunConfig, dir: &RunDir) -> Result<Option<Projector>, Error> {
    if cfg.pca_dim == 0 {
        return Ok(None);
    }
    dir.require("projector", &dir.projector())?;
    let text = std::fs::read_to_string(dir.projector())
        .map_err(|e| Error::io(format!("reading {}", dir.projector().display()), e))?;
    Ok(Some(Projector::from_json(&text)?))
}

fn write_matrix_artifact(path: &std::path::Path, m: &Mat) -> Result<(), Error> {
    atsf::write_matrix(path, m.rows(), m.cols(), m.data())
}

fn cmd_learn(cfg: &RunConfig, dir: &RunDir) -> Result<(), Error> {
    dir.require("dataset", &dir.corpus_dir())?;
    let graph_dir = dir.graph_dir();
    let mut outputs = vec![
        dir.attributes_bin(),
        dir.attributes_json(),
        graph_dir.join("s.bin"),
        graph_dir.join("laplacian.bin"),
        graph_dir.join("p.bin"),
    ];
    if cfg.pca_dim > 0 {
        outputs.push(dir.projector());
    }
    dir.claim(&outputs)?;

    let dataset = load_features(&dir.corpus_dir())?;
    let train = dataset.split_subset(Split::Train)?;
    let pipeline_cfg = cfg.to_pipeline(1);

    let projector = fit_projector(&train, &pipeline_cfg)?;
    if let Some(p) = &projector {
        std::fs::write(dir.projector(), p.to_json())
            .map_err(|e| Error::io(format!("writing {}", dir.projector().display()), e))?;
    }
    let processed = preprocess(&train, cfg.power_alpha, projector.as_ref())?;

    let graph = SimilarityGraph::build(&processed, cfg.k_nn, cfg.lambda, cfg.edge_weighting)?;
    if graph.k_nn_was_clipped() {
        eprintln!(
            "warning: k_nn clipped from {} to {} (n = {})",
            graph.k_nn_requested(),
            graph.k_nn_effective(),
            graph.n()
        );
    }
    std::fs::create_dir_all(&graph_dir)
        .map_err(|e| Error::io(format!("creating {}", graph_dir.display()), e))?;
    write_matrix_artifact(&graph_dir.join("s.bin"), graph.s())?;
    write_matrix_artifact(&graph_dir.join("laplacian.bin"), graph.laplacian())?;
    write_matrix_artifact(&graph_dir.join("p.bin"), graph.p())?;

    let attributes = design_attributes(&graph, cfg.k, cfg.gamma, cfg.eigen_tol, cfg.eigen_max_iter)?;
    if attributes.was_clipped() {
        eprintln!(
            "warning: k clipped from {} to {} (4n bound at n = {})",
            attributes.k_requested(),
            attributes.k(),
            attributes.n()
        );
    }
    write_matrix_artifact(&dir.attributes_bin(), attributes.matrix())?;
    let sidecar = serde_json::to_string_pretty(&attributes.sidecar(cfg.seed))
        .map_err(|e| Error::json("serializing attribute sidecar", e))?;
    std::fs::write(dir.attributes_json(), sidecar)
        .map_err(|e| Error::io(format!("writing {}", dir.attributes_json().display()), e))?;

    dir.append_manifest("learn", &cfg.hash(), &outputs)?;
    println!(
        "learn: {} attributes over {} instances -> {}",
        attributes.k(),
        attributes.n(),
        dir.attributes_bin().display()
    );
    Ok(())
}

fn load_attributes(dir: &RunDir) -> Result<AttributeMatrix, Error> {
    dir.require("attributes", &dir.attributes_bin())?;
    dir.require("attributes", &dir.attributes_json())?;
    let m = atsf::read_matrix(&dir.attributes_bin())?;
    let a = Mat::from_vec(m.rows, m.cols, m.values)?;
    let text = std::fs::read_to_string(dir.attributes_json())
        .map_err(|e| Error::io(format!("reading {}", dir.attributes_json().display()), e))?;
    let sidecar: AttributeSidecar =
        serde_json::from_str(&text).map_err(|e| Error::json("parsing attribute sidecar", e))?;
    AttributeMatrix::from_parts(a, &sidecar)
}

fn cmd_detect(cfg: &RunConfig, dir: &RunDir) -> Result<(), Error> {
    dir.require("dataset", &dir.corpus_dir())?;
    let attributes = load_attributes(dir)?;
    let mut outputs = vec![dir.detectors_bin(), dir.detectors_json()];
    // the category model is only produced when distractors exist
    let dataset = load_features(&dir.corpus_dir())?;
    let distractors = dataset.filtered(|r| r.split == Split::Distractor)?;
    let wants_category = cfg.use_class && distractors.n_images() > 0;
    if wants_category {
        outputs.push(dir.category());
    }
    dir.claim(&outputs)?;

    let projector = load_projector_if_any(cfg, dir)?;
    let train = dataset.split_subset(Split::Train)?;
    let processed = preprocess(&train, cfg.power_alpha, projector.as_ref())?;
    let threads = thread_budget()?;

    let bank = train_attribute_detectors(&processed, &attributes, cfg.c, threads)?;
    write_matrix_artifact(&dir.detectors_bin(), &bank.to_matrix())?;

    // positives per attribute: images of instances with A > 0
    let positive_counts: Vec<usize> = (0..attributes.k())
        .map(|j| {
            processed
                .instance_ids()
                .iter()
                .enumerate()
                .filter(|(row, _)| attributes.value(*row, j) > 0.0)
                .map(|(_, id)| processed.images_of(id).map(<[usize]>::len).unwrap_or(0))
                .sum()
        })
        .collect();
    let sidecar = DetectorSidecar {
        c: cfg.c,
        seed: cfg.seed,
        feature_dim: bank.feature_dim(),
        attribute_count: bank.attribute_count(),
        per_detector_loss: bank.detectors().iter().map(|d| d.train_loss).collect(),
        positive_counts,
        degenerate: bank.detectors().iter().map(|d| d.degenerate).collect(),
    };
    std::fs::write(
        dir.detectors_json(),
        serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::json("serializing detector sidecar", e))?,
    )
    .map_err(|e| Error::io(format!("writing {}", dir.detectors_json().display()), e))?;

    if wants_category {
        let processed_distract = preprocess(&distractors, cfg.power_alpha, projector.as_ref())?;
        let model = train_category_classifier(
            &processed.feature_matrix(),
            &processed_distract.feature_matrix(),
            cfg.c,
        )?;
        std::fs::write(
            dir.category(),
            serde_json::to_string_pretty(&model)
                .map_err(|e| Error::json("serializing category model", e))?,
        )
        .map_err(|e| Error::io(format!("writing {}", dir.category().display()), e))?;
    }

    dir.append_manifest("detect", &cfg.hash(), &outputs)?;
    println!(
        "detect: {} detectors (dim {}) -> {}",
        bank.attribute_count(),
        bank.feature_dim(),
        dir.detectors_bin().display()
    );
    Ok(())
}

fn load_bank(dir: &RunDir) -> Result<DetectorBank, Error> {
    dir.require("detectors", &dir.detectors_bin())?;
    dir.require("detectors", &dir.detectors_json())?;
    let m = atsf::read_matrix(&dir.detectors_bin())?;
    let m = Mat::from_vec(m.rows, m.cols, m.values)?;
    let text = std::fs::read_to_string(dir.detectors_json())
        .map_err(|e| Error::io(format!("reading {}", dir.detectors_json().display()), e))?;
    let sidecar: DetectorSidecar =
        serde_json::from_str(&text).map_err(|e| Error::json("parsing detector sidecar", e))?;
    DetectorBank::from_matrix(&m, &sidecar)
}

fn cmd_embed(cfg: &RunConfig, dir: &RunDir) -> Result<(), Error> {
    dir.require("dataset", &dir.corpus_dir())?;
    let bank = load_bank(dir)?;
    let emb_dir = dir.embeddings_dir();
    dir.claim(&[emb_dir.join("meta.jsonl"), emb_dir.join("features.bin")])?;

    let dataset = load_features(&dir.corpus_dir())?;
    let projector = load_projector_if_any(cfg, dir)?;
    let searchable = dataset.filtered(|r| r.split != Split::Train)?;
    let processed = preprocess(&searchable, cfg.power_alpha, projector.as_ref())?;

    let embedded = processed.mapped_features(bank.attribute_count(), |rec| {
        attribex::detectors::embed(&bank, &rec.feature).expect("dimension checked")
    })?;
    save_corpus(&embedded, &emb_dir)?;

    dir.append_manifest(
        "embed",
        &cfg.hash(),
        &[emb_dir.join("meta.jsonl"), emb_dir.join("features.bin")],
    )?;
    println!(
        "embed: {} images embedded at dim {} -> {}",
        embedded.n_images(),
        embedded.dim(),
        emb_dir.display()
    );
    Ok(())
}

fn to_embeddings(ds: &FeatureDataset) -> Vec<AttributeEmbedding> {
    ds.images()
        .iter()
        .map(|r| AttributeEmbedding {
            image_id: r.image_id.clone(),
            scores: r.feature.clone(),
        })
        .collect()
}

/// Reorder corpus records to match `ids`, preserving their metadata.
fn aligned_subset(dataset: &FeatureDataset, ids: &[String]) -> Result<FeatureDataset, Error> {
    let index: BTreeMap<&str, usize> = dataset
        .images()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.image_id.as_str(), i))
        .collect();
    let mut records = Vec::with_capacity(ids.len());
    for id in ids {
        let &i = index.get(id.as_str()).ok_or_else(|| {
            Error::ShapeMismatch(format!("embeddings reference unknown image {id}"))
        })?;
        records.push(dataset.images()[i].clone());
    }
    FeatureDataset::new(records, dataset.dim())
}

fn cmd_search(cfg: &RunConfig, dir: &RunDir) -> Result<(), Error> {
    dir.require("dataset", &dir.corpus_dir())?;
    dir.require("embeddings", &dir.embeddings_dir())?;
    dir.claim(&[dir.rankings()])?;

    let dataset = load_features(&dir.corpus_dir())?;
    let embeddings = load_features(&dir.embeddings_dir())?;
    let projector = load_projector_if_any(cfg, dir)?;

    let probe_emb_ds = embeddings.split_subset(Split::Probe)?;
    let gallery_emb_ds = embeddings.filtered(|r| {
        r.split == Split::Gallery || r.split == Split::Distractor
    })?;
    if gallery_emb_ds.n_images() == 0 {
        return Err(Error::DegenerateData("empty gallery".into()));
    }

    let probe_ids: Vec<String> = probe_emb_ds.images().iter().map(|r| r.image_id.clone()).collect();
    let gallery_ids: Vec<String> = gallery_emb_ds.images().iter().map(|r| r.image_id.clone()).collect();
    let probes_raw = aligned_subset(&dataset, &probe_ids)?;
    let gallery_raw = aligned_subset(&dataset, &gallery_ids)?;
    let probes = preprocess(&probes_raw, cfg.power_alpha, projector.as_ref())?;
    let gallery = preprocess(&gallery_raw, cfg.power_alpha, projector.as_ref())?;

    let category: Option<LinearModel> = if cfg.use_class && dir.category().exists() {
        let text = std::fs::read_to_string(dir.category())
            .map_err(|e| Error::io(format!("reading {}", dir.category().display()), e))?;
        Some(serde_json::from_str(&text).map_err(|e| Error::json("parsing category model", e))?)
    } else {
        None
    };

    let results = search_embedded(
        category.as_ref(),
        &probes,
        &to_embeddings(&probe_emb_ds),
        &gallery,
        &to_embeddings(&gallery_emb_ds),
        &cfg.to_pipeline(1),
    )?;

    let pos: BTreeMap<&str, usize> = gallery_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut csv = String::from("query_id,rank,image_id,fused,s_attr,s_deep,s_class\n");
    for q in &results {
        for (rank_idx, (image_id, fused)) in q.ranked.ranking.iter().enumerate() {
            let g = pos[image_id.as_str()];
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                q.ranked.query_id,
                rank_idx + 1,
                image_id,
                fused,
                q.fusion.s_attr[g],
                q.fusion.s_deep[g],
                q.fusion.s_class[g],
            ));
        }
    }
    std::fs::write(dir.rankings(), csv)
        .map_err(|e| Error::io(format!("writing {}", dir.rankings().display()), e))?;

    dir.append_manifest("search", &cfg.hash(), &[dir.rankings()])?;
    println!(
        "search: {} probes ranked over {} gallery images -> {}",
        results.len(),
        gallery_ids.len(),
        dir.rankings().display()
    );
    Ok(())
}

fn parse_rankings(path: &PathBuf) -> Result<Vec<RankedResult>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut per_query: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::ShapeMismatch(format!(
                "rankings.csv line {} has {} fields, expected 7",
                lineno + 1,
                fields.len()
            )));
        }
        let rank: usize = fields[1]
            .parse()
            .map_err(|_| Error::ShapeMismatch(format!("bad rank on line {}", lineno + 1)))?;
        let fused: f64 = fields[3]
            .parse()
            .map_err(|_| Error::ShapeMismatch(format!("bad score on line {}", lineno + 1)))?;
        per_query
            .entry(fields[0].to_string())
            .or_default()
            .push((rank, fields[2].to_string(), fused));
    }
    Ok(per_query
        .into_iter()
        .map(|(query_id, mut rows)| {
            rows.sort_by_key(|(rank, _, _)| *rank);
            RankedResult {
                query_id,
                ranking: rows.into_iter().map(|(_, id, s)| (id, s)).collect(),
            }
        })
        .collect())
}

fn check_chain_hashes(dir: &RunDir, cfg: &RunConfig, force: bool) -> Result<(), Error> {
    let current = cfg.hash();
    let mut mismatched = Vec::new();
    for command in ["synth", "learn", "detect", "embed", "search"] {
        if let Some(hash) = dir.latest_hash(command)? {
            if hash != current {
                mismatched.push(format!("{command} ({hash})"));
            }
        }
    }
    if !mismatched.is_empty() {
        if force {
            eprintln!(
                "warning: evaluating a mixed-hash chain (current {current}): {}",
                mismatched.join(", ")
            );
        } else {
            return Err(Error::InvalidConfig(format!(
                "refusing mixed-hash chain (current {current}): {} (pass --force to override)",
                mismatched.join(", ")
            )));
        }
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, dir: &RunDir, force: bool) -> Result<(), Error> {
    dir.require("dataset", &dir.corpus_dir())?;
    dir.claim(&[dir.eval_report(), dir.cmc_csv()])?;
    let dataset = load_features(&dir.corpus_dir())?;
    let pipeline_cfg = cfg.to_pipeline(thread_budget()?);

    let mut csv = String::from("lambda,gamma,k,repeat,metric,value\n");
    let report_json = if cfg.eval_repeats > 1 {
        // repeated half-split protocol straight from the corpus
        let pool = dataset.filtered(|r| r.split != Split::Distractor)?;
        let report = repeated_splits_eval(&pool, cfg.eval_repeats, &pipeline_cfg, cfg.seed)?;
        for (rep_idx, rep) in report.repeats.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},map,{}\n",
                cfg.lambda, cfg.gamma, cfg.k, rep_idx, rep.map
            ));
            for (r, v) in rep.cmc.iter().enumerate() {
                csv.push_str(&format!(
                    "{},{},{},{},cmc@{},{}\n",
                    cfg.lambda,
                    cfg.gamma,
                    cfg.k,
                    rep_idx,
                    r + 1,
                    v
                ));
            }
        }
        csv.push_str(&format!(
            "{},{},{},mean,map,{}\n",
            cfg.lambda, cfg.gamma, cfg.k, report.mean_map
        ));
        for (r, v) in report.mean_cmc.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},mean,cmc@{},{}\n",
                cfg.lambda,
                cfg.gamma,
                cfg.k,
                r + 1,
                v
            ));
        }
        println!(
            "eval: repeated protocol over {} splits, mean mAP {:.4}, rank-1 {:.4}",
            report.n_repeats,
            report.mean_map,
            report.mean_cmc.first().copied().unwrap_or(0.0)
        );
        serde_json::to_string_pretty(&report).map_err(|e| Error::json("serializing report", e))?
    } else {
        check_chain_hashes(dir, cfg, force)?;
        dir.require("rankings", &dir.rankings())?;
        let ranked = parse_rankings(&dir.rankings())?;
        let probes = dataset.split_subset(Split::Probe)?;
        let gallery =
            dataset.filtered(|r| r.split == Split::Gallery || r.split == Split::Distractor)?;
        let report = report_from_rankings(&ranked, &probes, &gallery, &pipeline_cfg, cfg.seed)?;
        csv.push_str(&format!(
            "{},{},{},0,map,{}\n",
            cfg.lambda, cfg.gamma, cfg.k, report.map
        ));
        for (r, v) in report.cmc.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},0,cmc@{},{}\n",
                cfg.lambda,
                cfg.gamma,
                cfg.k,
                r + 1,
                v
            ));
        }
        if !report.excluded_queries.is_empty() {
            eprintln!(
                "warning: {} queries had no relevant gallery image and were excluded",
                report.excluded_queries.len()
            );
        }
        println!(
            "eval: mAP {:.4} over {} queries, rank-1 {:.4}",
            report.map,
            report.per_query_ap.len(),
            report.cmc.first().copied().unwrap_or(0.0)
        );
        serde_json::to_string_pretty(&report).map_err(|e| Error::json("serializing report", e))?
    };

    std::fs::write(dir.eval_report(), report_json)
        .map_err(|e| Error::io(format!("writing {}", dir.eval_report().display()), e))?;
    std::fs::write(dir.cmc_csv(), csv)
        .map_err(|e| Error::io(format!("writing {}", dir.cmc_csv().display()), e))?;
    dir.append_manifest("eval", &cfg.hash(), &[dir.eval_report(), dir.cmc_csv()])?;
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, dir: &RunDir) -> Result<(), Error> {
    dir.require("dataset", &dir.corpus_dir())?;
    dir.claim(&[dir.sweep_csv(), dir.sweep_json()])?;
    let dataset = load_features(&dir.corpus_dir())?;
    let pool = dataset.filtered(|r| r.split != Split::Distractor)?;
    let pipeline_cfg = cfg.to_pipeline(thread_budget()?);

    let grid = parameter_sweep(
        &pool,
        &cfg.sweep_lambdas,
        &cfg.sweep_gammas,
        &cfg.sweep_ks,
        &pipeline_cfg,
        cfg.seed,
    )?;
    for note in &grid.deduplicated {
        eprintln!("warning: duplicate grid value {note} ignored");
    }
    let failed = grid.cells.iter().filter(|c| c.map.is_none()).count();
    if failed > 0 {
        eprintln!("warning: {failed} sweep cells failed; see sweep.json");
    }
    std::fs::write(dir.sweep_csv(), grid.to_csv())
        .map_err(|e| Error::io(format!("writing {}", dir.sweep_csv().display()), e))?;
    std::fs::write(
        dir.sweep_json(),
        serde_json::to_string_pretty(&grid).map_err(|e| Error::json("serializing sweep", e))?,
    )
    .map_err(|e| Error::io(format!("writing {}", dir.sweep_json().display()), e))?;
    dir.append_manifest("sweep", &cfg.hash(), &[dir.sweep_csv(), dir.sweep_json()])?;
    println!(
        "sweep: {} cells ({} failed) -> {}",
        grid.cells.len(),
        failed,
        dir.sweep_csv().display()
    );
    Ok(())
}

fn cmd_experiments(cfg: &RunConfig, dir: &RunDir) -> Result<(), Error> {
    let exp_dir = dir.experiments_dir();
    let outputs = vec![
        exp_dir.join("sharing.json"),
        exp_dir.join("redundancy.json"),
        exp_dir.join("attr_vs_raw.json"),
        exp_dir.join("summary.csv"),
    ];
    dir.claim(&outputs)?;
    std::fs::create_dir_all(&exp_dir)
        .map_err(|e| Error::io(format!("creating {}", exp_dir.display()), e))?;

    // The experiments follow a fixed protocol; the config contributes corpus
    // shape, the objective weights and the seed.
    let spec = ExperimentSpec {
        n_train_instances: cfg.n_train_instances,
        n_test_instances: cfg.n_test_instances.max(2),
        views_per_instance: cfg.views_per_instance,
        dim: cfg.dim,
        view_noise: cfg.view_noise,
        seed: cfg.seed,
        lambda: cfg.lambda,
        gamma: cfg.gamma,
        c: cfg.c,
        repeats: cfg.experiment_repeats,
        ..ExperimentSpec::default()
    };

    let sharing = run_sharing_experiment(&spec)?;
    let redundancy = run_redundancy_experiment(&spec)?;
    let attr_vs_raw = run_attr_vs_raw_experiment(&spec)?;

    let write = |name: &str, json: String| -> Result<(), Error> {
        let path = exp_dir.join(name);
        std::fs::write(&path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    };
    write(
        "sharing.json",
        serde_json::to_string_pretty(&sharing).map_err(|e| Error::json("serializing", e))?,
    )?;
    write(
        "redundancy.json",
        serde_json::to_string_pretty(&redundancy).map_err(|e| Error::json("serializing", e))?,
    )?;
    write(
        "attr_vs_raw.json",
        serde_json::to_string_pretty(&attr_vs_raw).map_err(|e| Error::json("serializing", e))?,
    )?;

    let mut summary = String::from("experiment,metric,value\n");
    for at_k in &sharing.per_k {
        summary.push_str(&format!("sharing,map_sharing_k{},{}\n", at_k.k, at_k.map_sharing));
        summary.push_str(&format!(
            "sharing,map_no_sharing_k{},{}\n",
            at_k.k, at_k.map_no_sharing
        ));
        summary.push_str(&format!("sharing,wins_k{},{}\n", at_k.k, at_k.wins));
    }
    summary.push_str(&format!("redundancy,map_high_gamma,{}\n", redundancy.map_high_gamma));
    summary.push_str(&format!("redundancy,map_low_gamma,{}\n", redundancy.map_low_gamma));
    summary.push_str(&format!(
        "redundancy,correlation_high_gamma,{}\n",
        redundancy.correlation_high_gamma
    ));
    summary.push_str(&format!(
        "redundancy,correlation_low_gamma,{}\n",
        redundancy.correlation_low_gamma
    ));
    summary.push_str(&format!("attr_vs_raw,map_attributes,{}\n", attr_vs_raw.map_attributes));
    summary.push_str(&format!("attr_vs_raw,map_raw,{}\n", attr_vs_raw.map_raw));
    summary.push_str(&format!("attr_vs_raw,wins,{}\n", attr_vs_raw.attribute_wins));
    write("summary.csv", summary)?;

    dir.append_manifest("experiments", &cfg.hash(), &outputs)?;
    println!(
        "experiments: sharing {:.3}/{:.3}, redundancy corr {:.3}/{:.3}, attr-vs-raw {:.3}/{:.3} -> {}",
        sharing.per_k.last().map(|p| p.map_sharing).unwrap_or(0.0),
        sharing.per_k.last().map(|p| p.map_no_sharing).unwrap_or(0.0),
        redundancy.correlation_high_gamma,
        redundancy.correlation_low_gamma,
        attr_vs_raw.map_attributes,
        attr_vs_raw.map_raw,
        exp_dir.display()
    );
    Ok(())
}
