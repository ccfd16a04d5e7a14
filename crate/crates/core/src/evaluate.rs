//! Replacement quality: fixation-index agreement between each query image
//! and the text retrieved for it, scored as micro-F1 over FIs up to the
//! median.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cca::{fit_auto_d, CcaModel, CcaOptions};
use crate::error::{Error, Result};
use crate::pairing::PairedDataset;
use crate::retrieval::{ElementRef, RetrievalIndex, Retriever, SearchSpace};

/// Lower median of the pair fixation indices, at least 1.
pub fn median_fi(pairs: &PairedDataset) -> Result<u32> {
    median_of(&pairs.fixation_indices())
}

pub fn median_of(fis: &[u32]) -> Result<u32> {
    if fis.is_empty() {
        return Err(Error::EmptyDataset("no fixation indices"));
    }
    let mut v = fis.to_vec();
    v.sort_unstable();
    Ok(v[(v.len() - 1) / 2].max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiScore {
    pub fi: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroScores {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub per_fi: Vec<FiScore>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Micro-averaged precision, recall and F1 over FI classes `1..=max_fi`.
///
/// Predictions outside `1..=max_fi` count as false positives of an overflow
/// class, so with one prediction per query all three equal exact-match
/// accuracy.
pub fn micro_scores(true_fis: &[u32], pred_fis: &[u32], max_fi: u32) -> Result<MicroScores> {
    if true_fis.len() != pred_fis.len() {
        return Err(Error::LengthMismatch {
            expected: true_fis.len(),
            got: pred_fis.len(),
        });
    }
    if true_fis.is_empty() {
        return Err(Error::EmptyInput("no queries to score"));
    }
    if let Some(bad) = true_fis.iter().find(|t| **t == 0 || **t > max_fi) {
        return Err(Error::InvalidArgument(format!("true FI {bad} outside 1..={max_fi}")));
    }
    let classes = max_fi as usize;
    // index `classes` is the overflow class
    let mut tp = vec![0usize; classes + 1];
    let mut fp = vec![0usize; classes + 1];
    let mut fn_ = vec![0usize; classes + 1];
    let mut support = vec![0usize; classes + 1];
    let slot = |fi: u32| -> usize {
        if fi >= 1 && fi <= max_fi {
            fi as usize - 1
        } else {
            classes
        }
    };
    for (&t, &p) in true_fis.iter().zip(pred_fis) {
        support[slot(t)] += 1;
        if t == p {
            tp[slot(t)] += 1;
        } else {
            fp[slot(p)] += 1;
            fn_[slot(t)] += 1;
        }
    }
    let (stp, sfp, sfn): (usize, usize, usize) = (tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    let micro_precision = ratio(stp, stp + sfp);
    let micro_recall = ratio(stp, stp + sfn);
    let per_fi = (0..classes)
        .map(|c| {
            let p = ratio(tp[c], tp[c] + fp[c]);
            let r = ratio(tp[c], tp[c] + fn_[c]);
            FiScore {
                fi: c as u32 + 1,
                precision: p,
                recall: r,
                f1: f1(p, r),
                support: support[c],
            }
        })
        .collect();
    Ok(MicroScores {
        micro_precision,
        micro_recall,
        micro_f1: f1(micro_precision, micro_recall),
        per_fi,
    })
}

pub fn micro_f1(true_fis: &[u32], pred_fis: &[u32], max_fi: u32) -> Result<f64> {
    micro_scores(true_fis, pred_fis, max_fi).map(|s| s.micro_f1)
}

/// One image query with its ground-truth fixation index.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub image_features: Vec<f64>,
    pub true_fi: u32,
    pub page_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub true_fis: Vec<u32>,
    pub pred_fis: Vec<u32>,
    /// Expected accuracy of a uniformly random candidate, summed over queries.
    pub chance_hits: f64,
}

/// Retrieve the top text for each query with true FI ≤ `max_fi` and record
/// the retrieved text's FI as the prediction.
pub fn predict(
    model: &CcaModel,
    index: &RetrievalIndex,
    queries: &[Query],
    max_fi: u32,
    space: SearchSpace,
    same_page_only: bool,
) -> Result<Predictions> {
    let retriever = Retriever::new(model);
    let kept: Vec<&Query> = queries.iter().filter(|q| q.true_fi <= max_fi).collect();
    let results: Vec<(u32, u32, f64)> = kept
        .par_iter()
        .map(|q| {
            let keep = |r: &ElementRef| !same_page_only || r.page_id == q.page_id;
            let res = retriever.nearest_text_filtered(index, &q.image_features, 1, space, keep)?;
            let top = res.top().ok_or(Error::EmptyIndex)?;
            let (same, total) = index
                .refs()
                .iter()
                .filter(|r| keep(r))
                .fold((0usize, 0usize), |(s, t), r| (s + usize::from(r.fixation_index == q.true_fi), t + 1));
            Ok((q.true_fi, top.element.fixation_index, ratio(same, total)))
        })
        .collect::<Result<_>>()?;
    let mut out = Predictions::default();
    for (t, p, c) in results {
        out.true_fis.push(t);
        out.pred_fis.push(p);
        out.chance_hits += c;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Protocol {
    /// K folds over pairs, each page's pairs spread evenly across folds.
    KFold { folds: usize },
    LeaveOnePageOut,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol::KFold { folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub cca: CcaOptions,
    #[serde(default)]
    pub auto_d: bool,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub space: SearchSpace,
    #[serde(default)]
    pub same_page_only: bool,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            cca: CcaOptions::default(),
            auto_d: false,
            protocol: Protocol::default(),
            space: SearchSpace::TextSpace,
            same_page_only: false,
            seed: 0,
        }
    }
}

/// Pairs joined with their raw feature rows.
#[derive(Debug, Clone)]
pub struct PairedFeatures {
    pub pairs: PairedDataset,
    pub text: DMatrix<f64>,
    pub image: DMatrix<f64>,
}

impl PairedFeatures {
    pub fn new(pairs: PairedDataset, text: DMatrix<f64>, image: DMatrix<f64>) -> Result<Self> {
        if text.nrows() != pairs.len() || image.nrows() != pairs.len() {
            return Err(Error::RowCountMismatch {
                left: pairs.len(),
                right: text.nrows().min(image.nrows()),
            });
        }
        Ok(PairedFeatures { pairs, text, image })
    }

    fn select(&self, rows: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.text.select_rows(rows), self.image.select_rows(rows))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Mean of per-fold micro-F1.
    pub micro_f1: f64,
    pub pooled_micro_f1: f64,
    pub fold_micro_f1: Vec<f64>,
    /// Expected micro-F1 of a uniformly random candidate pick.
    pub chance_micro_f1: f64,
    pub per_fi: Vec<FiScore>,
    pub median_fi: u32,
    pub n_queries: usize,
    pub n_pairs: usize,
    pub d: usize,
    pub leading_rho: f64,
    pub mean_rho: f64,
    pub rho: Vec<f64>,
    pub options: EvalOptions,
}

fn fit(text: &DMatrix<f64>, image: &DMatrix<f64>, opts: &EvalOptions) -> Result<CcaModel> {
    if opts.auto_d {
        fit_auto_d(text, image, opts.cca.lambda, opts.cca.cross_map)
    } else {
        CcaModel::fit_raw(text, image, &opts.cca)
    }
}

/// Fold membership for each row in canonical (sorted pair) order.
pub fn assign_folds(pairs: &PairedDataset, protocol: Protocol, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut by_page: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs.rows[a].cmp(&pairs.rows[b]));
    for i in order {
        by_page.entry(pairs.rows[i].page_id.as_str()).or_default().push(i);
    }
    match protocol {
        Protocol::LeaveOnePageOut => {
            if by_page.len() < 2 {
                return Err(Error::InvalidArgument("leave-one-page-out needs at least 2 pages".into()));
            }
            Ok(by_page.into_values().collect())
        }
        Protocol::KFold { folds } => {
            if folds < 2 || folds > pairs.len() {
                return Err(Error::InvalidArgument(format!(
                    "folds must be in 2..={}, got {folds}",
                    pairs.len()
                )));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut out = vec![Vec::new(); folds];
            let mut next = 0usize;
            for rows in by_page.values_mut() {
                rows.shuffle(&mut rng);
                for &r in rows.iter() {
                    out[next % folds].push(r);
                    next += 1;
                }
            }
            for f in &mut out {
                f.sort_unstable();
            }
            Ok(out)
        }
    }
}

/// Cross-validated retrieval evaluation.
pub fn cross_validate(data: &PairedFeatures, opts: &EvalOptions) -> Result<EvaluationReport> {
    if data.pairs.is_empty() {
        return Err(Error::EmptyDataset("no text/image pairs"));
    }
    let max_fi = median_fi(&data.pairs)?;
    let folds = assign_folds(&data.pairs, opts.protocol, opts.seed)?;
    let n = data.pairs.len();

    let fold_results: Vec<Predictions> = folds
        .par_iter()
        .map(|test_rows| {
            let mut is_test = vec![false; n];
            for &r in test_rows {
                is_test[r] = true;
            }
            let train_rows: Vec<usize> = (0..n).filter(|r| !is_test[*r]).collect();
            let (t_train, i_train) = data.select(&train_rows);
            let model = fit(&t_train, &i_train, opts)?;
            let refs = train_rows
                .iter()
                .map(|&r| {
                    let row = &data.pairs.rows[r];
                    ElementRef {
                        element_id: row.text_element.clone(),
                        page_id: row.page_id.clone(),
                        participant_id: row.participant_id.clone(),
                        fixation_index: row.fixation_index,
                    }
                })
                .collect();
            let index = RetrievalIndex::build(&model, &t_train, refs)?;
            let queries: Vec<Query> = test_rows
                .iter()
                .map(|&r| Query {
                    image_features: data.image.row(r).iter().copied().collect(),
                    true_fi: data.pairs.rows[r].fixation_index,
                    page_id: data.pairs.rows[r].page_id.clone(),
                })
                .collect();
            predict(&model, &index, &queries, max_fi, opts.space, opts.same_page_only)
        })
        .collect::<Result<_>>()?;

    let mut pooled = Predictions::default();
    let mut fold_f1 = Vec::new();
    for p in &fold_results {
        if !p.true_fis.is_empty() {
            fold_f1.push(micro_f1(&p.true_fis, &p.pred_fis, max_fi)?);
        }
        pooled.true_fis.extend_from_slice(&p.true_fis);
        pooled.pred_fis.extend_from_slice(&p.pred_fis);
        pooled.chance_hits += p.chance_hits;
    }
    if pooled.true_fis.is_empty() {
        return Err(Error::EmptyDataset("no queries with FI at or below the median"));
    }
    let scores = micro_scores(&pooled.true_fis, &pooled.pred_fis, max_fi)?;
    let full = fit(&data.text, &data.image, opts)?;
    Ok(EvaluationReport {
        micro_f1: fold_f1.iter().sum::<f64>() / fold_f1.len() as f64,
        pooled_micro_f1: scores.micro_f1,
        fold_micro_f1: fold_f1,
        chance_micro_f1: pooled.chance_hits / pooled.true_fis.len() as f64,
        per_fi: scores.per_fi,
        median_fi: max_fi,
        n_queries: pooled.true_fis.len(),
        n_pairs: n,
        d: full.d(),
        leading_rho: full.leading_rho(),
        mean_rho: full.mean_rho(),
        rho: full.rho,
        options: opts.clone(),
    })
}

/// FI frequency table, used when reporting chance baselines.
pub fn fi_histogram(fis: &[u32]) -> BTreeMap<u32, usize> {
    let mut h = BTreeMap::new();
    for f in fis {
        *h.entry(*f).or_insert(0) += 1;
    }
    h
}

/// Exact-match accuracy, the quantity micro-F1 must equal for single-label predictions.
pub fn accuracy(true_fis: &[u32], pred_fis: &[u32]) -> f64 {
    let hits = true_fis.iter().zip(pred_fis).filter(|(a, b)| a == b).count();
    ratio(hits, true_fis.len())
}
