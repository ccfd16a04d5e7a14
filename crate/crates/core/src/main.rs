use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use modswap::cca::{CcaModel, CrossMap};
use modswap::costs::{self, CostParams};
use modswap::evaluate::cross_validate;
use modswap::ingest::{self, Modality};
use modswap::pairing::Dedup;
use modswap::pipeline::{
    self, CostArtifact, FeaturesSidecar, ModelArtifact, PairsArtifact, PipelineConfig, Provenance, ReferenceValues,
    ReportArtifact,
};
use modswap::retrieval::{RetrievalIndex, Retriever, SearchSpace};
use modswap::synth::{self, SynthSpec};
use modswap::{Error, Result};

/// Like `println!`, but a closed stdout (e.g. `| head`) is not a panic.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "modswap", version, about = "Attention-equivalent text retrieval for webpage images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a corpus, check its references and report fixation hit statistics.
    Validate {
        root: PathBuf,
        #[arg(long, default_value_t = ingest::DEFAULT_MIN_FIXATION_MS)]
        min_fixation_ms: i64,
    },
    /// Pair the corpus and write aligned text/image feature matrices.
    Features {
        root: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        pairing: PairingArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write the text/image pairs that share a fixation index.
    Pair {
        root: PathBuf,
        #[command(flatten)]
        pairing: PairingArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit the correlated subspace on a features file.
    Fit {
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Also write a retrieval index over the paired text rows.
        #[arg(long)]
        index_out: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Rank candidate texts for image feature vectors.
    Query {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// JSON array of image features, or an array of such arrays.
        #[arg(long)]
        image_features: PathBuf,
        #[arg(short, default_value_t = 5)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Space::Text)]
        space: Space,
    },
    /// Cross-validated retrieval evaluation.
    Evaluate {
        /// Corpus root; features are extracted on the fly.
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        root: Option<PathBuf>,
        /// Precomputed features file instead of a corpus.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        pairing: PairingArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Page-weight savings and transfer times.
    Cost {
        /// Corpus whose image rasters give the per-image and per-page costs.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        image_cost_kb: Option<f64>,
        #[arg(long)]
        page_cost_kb: Option<f64>,
        #[arg(long, default_value_t = costs::DEVELOPING_KBPS)]
        bandwidth: f64,
        #[arg(long, default_value_t = 0.52)]
        micro_f1: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with ground truth.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run every stage from one configuration file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(short)]
        d: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct PairingArgs {
    #[arg(long, default_value_t = ingest::DEFAULT_MIN_FIXATION_MS)]
    min_fixation_ms: i64,
    /// Give refixations their own index instead of ignoring them.
    #[arg(long)]
    every_fixation: bool,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(short, default_value_t = modswap::cca::DEFAULT_DIM)]
    d: usize,
    #[arg(long, default_value_t = modswap::cca::DEFAULT_LAMBDA)]
    lambda: f64,
    /// Keep components with canonical correlation of at least 0.1.
    #[arg(long)]
    auto_d: bool,
    #[arg(long, value_enum, default_value_t = Cross::Identity)]
    cross_map: Cross,
}

#[derive(Args, Clone)]
struct EvalArgs {
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    leave_one_page_out: bool,
    #[arg(long, value_enum, default_value_t = Space::Text)]
    space: Space,
    #[arg(long)]
    same_page_only: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Text,
    Subspace,
}

impl From<Space> for SearchSpace {
    fn from(s: Space) -> Self {
        match s {
            Space::Text => SearchSpace::TextSpace,
            Space::Subspace => SearchSpace::Subspace,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Cross {
    Identity,
    Rho,
}

impl From<Cross> for CrossMap {
    fn from(c: Cross) -> Self {
        match c {
            Cross::Identity => CrossMap::Identity,
            Cross::Rho => CrossMap::Rho,
        }
    }
}

fn config_from(pairing: Option<&PairingArgs>, model: Option<&ModelArgs>, eval: Option<&EvalArgs>) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    if let Some(p) = pairing {
        cfg.min_fixation_ms = p.min_fixation_ms;
        cfg.dedup = if p.every_fixation { Dedup::EveryFixation } else { Dedup::FirstFixation };
    }
    if let Some(m) = model {
        cfg.d = m.d;
        cfg.lambda = m.lambda;
        cfg.auto_d = m.auto_d;
        cfg.cross_map = m.cross_map.into();
    }
    if let Some(e) = eval {
        cfg.folds = e.folds;
        cfg.leave_one_page_out = e.leave_one_page_out;
        cfg.retrieval_space = e.space.into();
        cfg.same_page_only = e.same_page_only;
        cfg.seed = e.seed;
    }
    cfg
}

fn provenance(cfg: &PipelineConfig, corpus_digest: String) -> Provenance {
    cfg.provenance(corpus_digest)
}

fn load_corpus(root: &Path) -> Result<(ingest::Corpus, String)> {
    let corpus = ingest::load_corpus(root).map_err(|e| e.in_stage("ingest"))?;
    let digest = pipeline::corpus_digest(&corpus).map_err(|e| e.in_stage("ingest"))?;
    Ok((corpus, digest))
}

/// Write JSON to `output`, or to stdout when no path is given.
fn emit<T: Serialize>(output: Option<&Path>, value: &T) -> Result<()> {
    match output {
        Some(p) => pipeline::write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
                context: "stdout".into(),
                source: e,
            })?;
            out!("{text}");
            Ok(())
        }
    }
}

fn pair_stage(corpus: &ingest::Corpus, cfg: &PipelineConfig) -> Result<(modswap::pairing::PairedDataset, ingest::HitDiagnostics)> {
    let (pairs, diag) = pipeline::pair_corpus(corpus, cfg.min_fixation_ms, cfg.dedup).map_err(|e| e.in_stage("pair"))?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no text/image pairs").in_stage("pair"));
    }
    Ok((pairs, diag))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { root, min_fixation_ms } => {
            let corpus = ingest::load_corpus(&root).map_err(|e| e.in_stage("validate"))?;
            let (_, diag) = corpus.attended_events(min_fixation_ms);
            emit(
                None,
                &json!({
                    "pages": corpus.pages.len(),
                    "text_elements": corpus.count(Modality::Text),
                    "image_elements": corpus.count(Modality::Image),
                    "fixation_records": corpus.fixations.len(),
                    "fixations_kept": diag.fixations,
                    "hits": diag.hits,
                    "misses": diag.misses,
                }),
            )
        }
        Command::Features { root, manifest, pairing, output } => {
            let mut cfg = config_from(Some(&pairing), None, None);
            cfg.manifest_path = manifest.clone();
            let (corpus, digest) = load_corpus(&root)?;
            let manifest = pipeline::load_manifest(manifest.as_deref()).map_err(|e| e.in_stage("features"))?;
            let (pairs, _) = pair_stage(&corpus, &cfg)?;
            let data = pipeline::paired_features(&corpus, pairs, &manifest).map_err(|e| e.in_stage("features"))?;
            pipeline::write_features(&output, &data, &manifest, &provenance(&cfg, digest))?;
            eprintln!("{} pairs, {} text and {} image features", data.pairs.len(), data.text.ncols(), data.image.ncols());
            Ok(())
        }
        Command::Pair { root, pairing, output } => {
            let cfg = config_from(Some(&pairing), None, None);
            let (corpus, digest) = load_corpus(&root)?;
            let (pairs, diagnostics) = pair_stage(&corpus, &cfg)?;
            let art = PairsArtifact {
                provenance: provenance(&cfg, digest),
                diagnostics,
                median_fi: modswap::evaluate::median_fi(&pairs).ok(),
                pairs: pairs.rows,
            };
            emit(output.as_deref(), &art)
        }
        Command::Fit { pairs, model, index_out, output } => {
            let cfg = config_from(None, Some(&model), None);
            let (data, sidecar): (_, FeaturesSidecar) = pipeline::read_features(&pairs).map_err(|e| e.in_stage("fit"))?;
            let fitted = pipeline::fit_model(&data, &cfg.eval_options()).map_err(|e| e.in_stage("fit"))?;
            let prov = provenance(&cfg, sidecar.provenance.corpus_digest);
            let meta = serde_json::to_string(&prov).expect("provenance serializes");
            fitted.save(&output, &meta)?;
            pipeline::write_json(
                &output.with_extension("json"),
                &ModelArtifact {
                    provenance: prov,
                    summary: fitted.summary(),
                },
            )?;
            if let Some(path) = index_out {
                RetrievalIndex::build(&fitted, &data.text, pipeline::text_refs(&data.pairs))
                    .map_err(|e| e.in_stage("fit"))?
                    .save(&path)?;
            }
            eprintln!("d = {}, leading rho = {:.4}", fitted.d(), fitted.leading_rho());
            Ok(())
        }
        Command::Query { model, index, image_features, k, space } => {
            let model = CcaModel::load(&model).map_err(|e| e.in_stage("query"))?;
            let index = RetrievalIndex::load(&index).map_err(|e| e.in_stage("query"))?;
            let value: serde_json::Value = pipeline::read_json(&image_features)?;
            let queries: Vec<Vec<f64>> = match &value {
                serde_json::Value::Array(items) if items.iter().all(|v| v.is_array()) && !items.is_empty() => {
                    serde_json::from_value(value)
                }
                _ => serde_json::from_value(value).map(|q| vec![q]),
            }
            .map_err(|e| Error::Json {
                context: image_features.display().to_string(),
                source: e,
            })?;
            let results = Retriever::new(&model)
                .nearest_text_batch(&index, &queries, k, space.into())
                .map_err(|e| e.in_stage("query"))?;
            emit(None, &results)
        }
        Command::Evaluate {
            root,
            features,
            manifest,
            pairing,
            model,
            eval,
            output,
        } => {
            let mut cfg = config_from(Some(&pairing), Some(&model), Some(&eval));
            cfg.manifest_path = manifest.clone();
            let (data, digest) = match (root, features) {
                (Some(root), _) => {
                    let (corpus, digest) = load_corpus(&root)?;
                    let manifest = pipeline::load_manifest(manifest.as_deref()).map_err(|e| e.in_stage("features"))?;
                    let (pairs, _) = pair_stage(&corpus, &cfg)?;
                    let data = pipeline::paired_features(&corpus, pairs, &manifest).map_err(|e| e.in_stage("features"))?;
                    (data, digest)
                }
                (None, Some(path)) => {
                    let (data, sidecar) = pipeline::read_features(&path).map_err(|e| e.in_stage("evaluate"))?;
                    (data, sidecar.provenance.corpus_digest)
                }
                (None, None) => unreachable!("clap requires --root or --features"),
            };
            let evaluation = cross_validate(&data, &cfg.eval_options()).map_err(|e| e.in_stage("evaluate"))?;
            eprintln!(
                "micro-F1 {:.4} (chance {:.4}) over {} queries, FI <= {}",
                evaluation.micro_f1, evaluation.chance_micro_f1, evaluation.n_queries, evaluation.median_fi
            );
            emit(
                output.as_deref(),
                &ReportArtifact {
                    provenance: provenance(&cfg, digest),
                    evaluation,
                    reference: ReferenceValues::default(),
                },
            )
        }
        Command::Cost {
            root,
            image_cost_kb,
            page_cost_kb,
            bandwidth,
            micro_f1,
            output,
        } => {
            let cfg = PipelineConfig {
                bandwidth_kbps: bandwidth,
                ..PipelineConfig::default()
            };
            let (mut image_costs, digest) = match &root {
                Some(root) => {
                    let (corpus, digest) = load_corpus(root)?;
                    (costs::corpus_image_costs(&corpus).map_err(|e| e.in_stage("cost"))?, digest)
                }
                None => (
                    costs::ImageCosts {
                        total_kb: 0.0,
                        mean_per_image_kb: 0.0,
                        mean_per_page_kb: 0.0,
                        image_count: 0,
                        page_count: 0,
                    },
                    String::new(),
                ),
            };
            if let Some(v) = image_cost_kb {
                image_costs.mean_per_image_kb = v;
            }
            if let Some(v) = page_cost_kb {
                image_costs.mean_per_page_kb = v;
            }
            if root.is_none() && (image_cost_kb.is_none() || page_cost_kb.is_none()) {
                return Err(Error::InvalidArgument(
                    "without --root both --image-cost-kb and --page-cost-kb are required".into(),
                ));
            }
            let params = CostParams {
                bandwidth_kbps: bandwidth,
                ..CostParams::default()
            };
            let report = costs::cost_report(&params, image_costs.mean_per_image_kb, image_costs.mean_per_page_kb, micro_f1)
                .map_err(|e| e.in_stage("cost"))?;
            emit(
                output.as_deref(),
                &CostArtifact {
                    provenance: provenance(&cfg, digest),
                    image_costs,
                    report,
                    reference: ReferenceValues::default(),
                },
            )
        }
        Command::Synth { spec, seed, output } => {
            let mut spec = match spec {
                Some(p) => SynthSpec::load(&p)?,
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (corpus, gt) = synth::gen_attention_corpus(&spec, &output).map_err(|e| e.in_stage("synth"))?;
            eprintln!(
                "{} pages, {} elements, {} fixations, {} ground-truth pairs",
                corpus.pages.len(),
                corpus.elements.len(),
                corpus.fixations.len(),
                gt.pairs.len()
            );
            Ok(())
        }
        Command::Pipeline {
            config,
            d,
            lambda,
            folds,
            seed,
            bandwidth,
            output_dir,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(v) = d {
                cfg.d = v;
            }
            if let Some(v) = lambda {
                cfg.lambda = v;
            }
            if let Some(v) = folds {
                cfg.folds = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = bandwidth {
                cfg.bandwidth_kbps = v;
            }
            if let Some(v) = output_dir {
                cfg.output_dir = v;
            }
            let out = pipeline::run_pipeline(&cfg)?;
            let ev = &out.report.evaluation;
            eprintln!(
                "{} pairs, d = {}, leading rho = {:.4}, micro-F1 = {:.4} (chance {:.4}), achieved saving = {:.2}%",
                ev.n_pairs,
                ev.d,
                ev.leading_rho,
                ev.micro_f1,
                ev.chance_micro_f1,
                out.cost.report.achieved_saving_pct
            );
            if !out.reused.is_empty() {
                eprintln!("reused cached stages: {}", out.reused.join(", "));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
