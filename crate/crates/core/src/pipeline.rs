//! End-to-end runs: ingest, pair, extract, fit, evaluate and price, with
//! content-addressed caching of stage outputs.
//!
//! Every JSON artifact carries a [`Provenance`] block. Nothing time-dependent
//! is written, so identical inputs give byte-identical outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio;
use crate::cca::{self, CcaModel, CcaOptions, CrossMap, ModelSummary};
use crate::costs::{self, CostParams, CostReport, ImageCosts};
use crate::error::{Error, Result};
use crate::evaluate::{self, EvalOptions, EvaluationReport, PairedFeatures, Protocol};
use crate::features::{self, manifest::FeatureManifest};
use crate::ingest::{self, Corpus, HitDiagnostics, DEFAULT_MIN_FIXATION_MS};
use crate::pairing::{self, Dedup, PairRow, PairedDataset};
use crate::retrieval::{ElementRef, RetrievalIndex, SearchSpace};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const PAIRS_FILE: &str = "pairs.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const FEATURES_SIDECAR: &str = "features.json";
pub const MODEL_FILE: &str = "model.cca";
pub const MODEL_SIDECAR: &str = "model.json";
pub const INDEX_FILE: &str = "index.bin";
pub const REPORT_FILE: &str = "report.json";
pub const COST_FILE: &str = "cost.json";
const CACHE_FILE: &str = ".cache.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_root: PathBuf,
    pub manifest_path: Option<PathBuf>,
    pub d: usize,
    pub lambda: f64,
    pub min_fixation_ms: i64,
    pub folds: usize,
    pub bandwidth_kbps: f64,
    pub retrieval_space: SearchSpace,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub auto_d: bool,
    pub same_page_only: bool,
    pub leave_one_page_out: bool,
    pub cross_map: CrossMap,
    pub dedup: Dedup,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus_root: PathBuf::from("corpus"),
            manifest_path: None,
            d: cca::DEFAULT_DIM,
            lambda: cca::DEFAULT_LAMBDA,
            min_fixation_ms: DEFAULT_MIN_FIXATION_MS,
            folds: 5,
            bandwidth_kbps: costs::DEVELOPING_KBPS,
            retrieval_space: SearchSpace::TextSpace,
            seed: 0,
            output_dir: PathBuf::from("out"),
            auto_d: false,
            same_page_only: false,
            leave_one_page_out: false,
            cross_map: CrossMap::Identity,
            dedup: Dedup::FirstFixation,
        }
    }
}

impl PipelineConfig {
    /// Read a config; relative paths are taken relative to the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.corpus_root = base.join(&cfg.corpus_root);
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.manifest_path = cfg.manifest_path.map(|m| base.join(m));
        Ok(cfg)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            cca: self.cca_options(),
            auto_d: self.auto_d,
            protocol: if self.leave_one_page_out {
                Protocol::LeaveOnePageOut
            } else {
                Protocol::KFold { folds: self.folds }
            },
            space: self.retrieval_space,
            same_page_only: self.same_page_only,
            seed: self.seed,
        }
    }

    pub fn cca_options(&self) -> CcaOptions {
        CcaOptions {
            d: self.d,
            lambda: self.lambda,
            cross_map: self.cross_map,
        }
    }

    /// The config with filesystem locations cleared; what artifacts echo.
    pub fn settings(&self) -> PipelineConfig {
        PipelineConfig {
            corpus_root: PathBuf::new(),
            output_dir: PathBuf::new(),
            manifest_path: None,
            ..self.clone()
        }
    }

    pub fn hash(&self) -> String {
        sha256_hex(&to_json_bytes(&self.settings()))
    }

    pub fn provenance(&self, corpus_digest: String) -> Provenance {
        Provenance {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: self.hash(),
            corpus_digest,
            config: self.settings(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub corpus_digest: String,
    /// Settings the artifact was produced with; locations are omitted so
    /// the same run in another directory gives the same bytes.
    pub config: PipelineConfig,
}

/// Values published for the original eye-tracking study, kept alongside
/// results for comparison. They need the original corpus to reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub leading_rho_at_d28: f64,
    pub micro_f1: f64,
    pub pairs: usize,
    pub images: usize,
    pub image_total_kb: f64,
    pub note: String,
}

impl Default for ReferenceValues {
    fn default() -> Self {
        ReferenceValues {
            leading_rho_at_d28: 0.9948,
            micro_f1: 0.52,
            pairs: 14330,
            images: 139,
            image_total_kb: 8573.05,
            note: "reference study values; not reproducible without the original eye-tracking corpus".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsArtifact {
    pub provenance: Provenance,
    pub diagnostics: HitDiagnostics,
    pub median_fi: Option<u32>,
    pub pairs: Vec<PairRow>,
}

/// Describes the rows and columns of `features.bin` (text block, then image block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesSidecar {
    pub provenance: Provenance,
    pub text_features: Vec<String>,
    pub image_features: Vec<String>,
    pub pairs: Vec<PairRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub provenance: Provenance,
    pub summary: ModelSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportArtifact {
    pub provenance: Provenance,
    pub evaluation: EvaluationReport,
    pub reference: ReferenceValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostArtifact {
    pub provenance: Provenance,
    pub image_costs: ImageCosts,
    pub report: CostReport,
    pub reference: ReferenceValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub pairs: PairsArtifact,
    pub model: ModelArtifact,
    pub report: ReportArtifact,
    pub cost: CostArtifact,
    /// Stages whose outputs were reused from a previous run.
    pub reused: Vec<&'static str>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact types serialize");
    v.push(b'\n');
    v
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })
}

/// Write via a temporary file so readers never see a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value))
}

/// Digest over the corpus tables and every raster they reference.
pub fn corpus_digest(corpus: &Corpus) -> Result<String> {
    let mut h = Sha256::new();
    let mut files: Vec<PathBuf> = [ingest::PAGES_FILE, ingest::ELEMENTS_FILE, ingest::FIXATIONS_FILE]
        .iter()
        .map(PathBuf::from)
        .collect();
    files.extend(corpus.pages.iter().map(|p| p.screenshot_ref.clone()));
    files.extend(corpus.elements.iter().filter_map(|e| e.raster_ref.clone()));
    for rel in files {
        let path = corpus.resolve(&rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn load_manifest(path: Option<&Path>) -> Result<FeatureManifest> {
    match path {
        Some(p) => FeatureManifest::load(p),
        None => Ok(FeatureManifest::default()),
    }
}

/// Hit-test, index and pair a corpus's fixations.
pub fn pair_corpus(corpus: &Corpus, min_fixation_ms: i64, dedup: Dedup) -> Result<(PairedDataset, HitDiagnostics)> {
    let (events, diag) = corpus.attended_events(min_fixation_ms);
    let indexed = pairing::assign_fixation_indices(&events, dedup)?;
    Ok((pairing::build_pairs(&indexed), diag))
}

pub fn paired_features(corpus: &Corpus, pairs: PairedDataset, manifest: &FeatureManifest) -> Result<PairedFeatures> {
    let table = features::extract_corpus_features(corpus, manifest)?;
    let (t, i) = features::paired_matrices(&pairs, &table)?;
    PairedFeatures::new(pairs, t, i)
}

pub fn write_features(path: &Path, data: &PairedFeatures, manifest: &FeatureManifest, prov: &Provenance) -> Result<()> {
    write_atomic(path, &binio::encode_matrices(&[&data.text, &data.image]))?;
    let sidecar = FeaturesSidecar {
        provenance: prov.clone(),
        text_features: manifest.names().into_iter().map(String::from).collect(),
        image_features: features::image_feature_names(),
        pairs: data.pairs.rows.clone(),
    };
    write_json(&path.with_extension("json"), &sidecar)
}

/// Read `features.bin` with its `.json` sidecar.
pub fn read_features(path: &Path) -> Result<(PairedFeatures, FeaturesSidecar)> {
    let blocks = binio::read_matrices(path)?;
    let [t, i]: [_; 2] = blocks
        .try_into()
        .map_err(|b: Vec<_>| Error::format(path.display().to_string(), format!("expected 2 blocks, found {}", b.len())))?;
    let sidecar: FeaturesSidecar = read_json(&path.with_extension("json"))?;
    let data = PairedFeatures::new(PairedDataset { rows: sidecar.pairs.clone() }, t, i)?;
    Ok((data, sidecar))
}

/// Candidate references for the text side of each pair row.
pub fn text_refs(pairs: &PairedDataset) -> Vec<ElementRef> {
    pairs
        .rows
        .iter()
        .map(|r| ElementRef {
            element_id: r.text_element.clone(),
            page_id: r.page_id.clone(),
            participant_id: r.participant_id.clone(),
            fixation_index: r.fixation_index,
        })
        .collect()
}

pub fn fit_model(data: &PairedFeatures, opts: &EvalOptions) -> Result<CcaModel> {
    if opts.auto_d {
        cca::fit_auto_d(&data.text, &data.image, opts.cca.lambda, opts.cca.cross_map)
    } else {
        CcaModel::fit_raw(&data.text, &data.image, &opts.cca)
    }
}

pub fn image_cost_report(corpus: &Corpus, bandwidth_kbps: f64, micro_f1: f64) -> Result<(ImageCosts, CostReport)> {
    let params = CostParams {
        bandwidth_kbps,
        ..CostParams::default()
    };
    params.validate()?;
    let ic = costs::corpus_image_costs(corpus)?;
    let report = costs::cost_report(&params, ic.mean_per_image_kb, ic.mean_per_page_kb, micro_f1)?;
    Ok((ic, report))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    outputs: BTreeMap<String, String>,
}

/// Tracks stage cache state and files written during one run.
struct Run {
    dir: PathBuf,
    cache: BTreeMap<String, CacheEntry>,
    written: Vec<PathBuf>,
    reused: Vec<&'static str>,
}

impl Run {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cache = read_json(&dir.join(CACHE_FILE)).unwrap_or_default();
        Ok(Run {
            dir: dir.to_path_buf(),
            cache,
            written: Vec::new(),
            reused: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn file_digest(&self, name: &str) -> Option<String> {
        fs::read(self.path(name)).ok().map(|b| sha256_hex(&b))
    }

    /// True if `stage` last ran with `key` and its outputs are untouched.
    fn fresh(&mut self, stage: &'static str, key: &str) -> bool {
        let ok = self.cache.get(stage).is_some_and(|c| {
            c.key == key
                && c.outputs
                    .iter()
                    .all(|(name, digest)| self.file_digest(name).as_deref() == Some(digest))
        });
        if ok {
            self.reused.push(stage);
        }
        ok
    }

    fn wrote(&mut self, stage: &'static str, key: &str, names: &[&str]) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for name in names {
            let path = self.path(name);
            let digest = self
                .file_digest(name)
                .ok_or_else(|| Error::MissingFile(path.clone()))?;
            outputs.insert(name.to_string(), digest);
            self.written.push(path);
        }
        self.cache.insert(stage.to_string(), CacheEntry { key: key.to_string(), outputs });
        Ok(())
    }

    fn discard_written(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

fn stage_key(stage: &str, upstream: &str, params: &impl Serialize) -> String {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(stage.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(upstream.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(&to_json_bytes(params));
    bytes.extend_from_slice(TOOL_VERSION.as_bytes());
    sha256_hex(&bytes)
}

/// Run every stage, reusing cached outputs whose inputs are unchanged.
/// On failure, artifacts written by this run are removed.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let mut run = Run::new(&cfg.output_dir)?;
    match run_stages(cfg, &mut run) {
        Ok(outcome) => {
            write_json(&run.path(CACHE_FILE), &run.cache)?;
            Ok(outcome)
        }
        Err(e) => {
            run.discard_written();
            Err(e)
        }
    }
}

fn run_stages(cfg: &PipelineConfig, run: &mut Run) -> Result<PipelineOutcome> {
    let corpus = ingest::load_corpus(&cfg.corpus_root).map_err(|e| e.in_stage("ingest"))?;
    let manifest = load_manifest(cfg.manifest_path.as_deref()).map_err(|e| e.in_stage("features"))?;
    let prov = cfg.provenance(corpus_digest(&corpus).map_err(|e| e.in_stage("ingest"))?);
    let opts = cfg.eval_options();

    // pair
    let pair_key = stage_key("pair", &prov.corpus_digest, &(cfg.min_fixation_ms, cfg.dedup, &prov));
    let pairs_art: PairsArtifact = if run.fresh("pair", &pair_key) {
        read_json(&run.path(PAIRS_FILE))?
    } else {
        let (pairs, diagnostics) =
            pair_corpus(&corpus, cfg.min_fixation_ms, cfg.dedup).map_err(|e| e.in_stage("pair"))?;
        let art = PairsArtifact {
            provenance: prov.clone(),
            diagnostics,
            median_fi: evaluate::median_fi(&pairs).ok(),
            pairs: pairs.rows,
        };
        write_json(&run.path(PAIRS_FILE), &art)?;
        run.wrote("pair", &pair_key, &[PAIRS_FILE])?;
        art
    };
    if pairs_art.pairs.is_empty() {
        return Err(Error::EmptyDataset("no text/image pairs").in_stage("pair"));
    }

    // features
    let feat_key = stage_key("features", &pair_key, &manifest);
    let data = if run.fresh("features", &feat_key) {
        read_features(&run.path(FEATURES_FILE))?.0
    } else {
        let pairs = PairedDataset { rows: pairs_art.pairs.clone() };
        let data = paired_features(&corpus, pairs, &manifest).map_err(|e| e.in_stage("features"))?;
        write_features(&run.path(FEATURES_FILE), &data, &manifest, &prov)?;
        run.wrote("features", &feat_key, &[FEATURES_FILE, FEATURES_SIDECAR])?;
        data
    };

    // fit
    let fit_key = stage_key("fit", &feat_key, &(&opts.cca, opts.auto_d));
    let model_art: ModelArtifact = if run.fresh("fit", &fit_key) {
        read_json(&run.path(MODEL_SIDECAR))?
    } else {
        let model = fit_model(&data, &opts).map_err(|e| e.in_stage("fit"))?;
        let meta = String::from_utf8(to_json_bytes(&prov)).expect("json is utf-8");
        write_atomic(&run.path(MODEL_FILE), &model.to_bytes(&meta))?;
        let index = RetrievalIndex::build(&model, &data.text, text_refs(&data.pairs)).map_err(|e| e.in_stage("fit"))?;
        write_atomic(&run.path(INDEX_FILE), &index.to_bytes())?;
        let art = ModelArtifact {
            provenance: prov.clone(),
            summary: model.summary(),
        };
        write_json(&run.path(MODEL_SIDECAR), &art)?;
        run.wrote("fit", &fit_key, &[MODEL_FILE, INDEX_FILE, MODEL_SIDECAR])?;
        art
    };

    // evaluate
    let eval_key = stage_key("evaluate", &feat_key, &opts);
    let report: ReportArtifact = if run.fresh("evaluate", &eval_key) {
        read_json(&run.path(REPORT_FILE))?
    } else {
        let evaluation = evaluate::cross_validate(&data, &opts).map_err(|e| e.in_stage("evaluate"))?;
        let art = ReportArtifact {
            provenance: prov.clone(),
            evaluation,
            reference: ReferenceValues::default(),
        };
        write_json(&run.path(REPORT_FILE), &art)?;
        run.wrote("evaluate", &eval_key, &[REPORT_FILE])?;
        art
    };

    // cost
    let micro = report.evaluation.micro_f1;
    let cost_key = stage_key("cost", &eval_key, &(cfg.bandwidth_kbps, micro.to_bits()));
    let cost: CostArtifact = if run.fresh("cost", &cost_key) {
        read_json(&run.path(COST_FILE))?
    } else {
        let (image_costs, report) =
            image_cost_report(&corpus, cfg.bandwidth_kbps, micro).map_err(|e| e.in_stage("cost"))?;
        let art = CostArtifact {
            provenance: prov.clone(),
            image_costs,
            report,
            reference: ReferenceValues::default(),
        };
        write_json(&run.path(COST_FILE), &art)?;
        run.wrote("cost", &cost_key, &[COST_FILE])?;
        art
    };

    Ok(PipelineOutcome {
        pairs: pairs_art,
        model: model_art,
        report,
        cost,
        reused: run.reused.clone(),
    })
}
