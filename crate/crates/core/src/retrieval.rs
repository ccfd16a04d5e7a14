//! Back-projection of image queries into text feature space and exact
//! nearest-neighbor ranking of candidate text elements.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::cca::CcaModel;
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"MSWPIDX\0";
pub const INDEX_VERSION: u32 = 1;

/// Identity of one candidate text row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ElementRef {
    pub element_id: String,
    pub page_id: String,
    pub participant_id: String,
    pub fixation_index: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchSpace {
    /// Distance between the back-projected query and standardized text rows.
    #[default]
    #[serde(alias = "text")]
    TextSpace,
    /// Distance between subspace coordinates.
    Subspace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub element: ElementRef,
    pub distance: f64,
}

/// Hits with nondecreasing distance; ties ordered by element reference.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub hits: Vec<Hit>,
}

impl RankedResult {
    pub fn top(&self) -> Option<&Hit> {
        self.hits.first()
    }
}

/// Standardized candidate text features with their identities.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    rows: DMatrix<f64>,
    refs: Vec<ElementRef>,
}

impl RetrievalIndex {
    pub fn from_standardized(rows: DMatrix<f64>, refs: Vec<ElementRef>) -> Result<Self> {
        if rows.nrows() != refs.len() {
            return Err(Error::RowCountMismatch {
                left: rows.nrows(),
                right: refs.len(),
            });
        }
        Ok(RetrievalIndex { rows, refs })
    }

    /// Standardize raw text feature rows with the model's text stats.
    pub fn build(model: &CcaModel, raw: &DMatrix<f64>, refs: Vec<ElementRef>) -> Result<Self> {
        Self::from_standardized(model.text_stats.apply_matrix(raw)?, refs)
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn refs(&self) -> &[ElementRef] {
        &self.refs
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let refs = serde_json::to_vec(&self.refs).expect("refs serialize");
        let mut w = Writer::new();
        w.bytes(INDEX_MAGIC)
            .u32(INDEX_VERSION)
            .u64(self.rows.nrows() as u64)
            .u64(self.rows.ncols() as u64)
            .u64(refs.len() as u64)
            .bytes(&refs)
            .matrix_body(&self.rows);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, context);
        r.magic(INDEX_MAGIC)?;
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let n = r.usize()?;
        let p = r.usize()?;
        let refs_len = r.usize()?;
        let refs: Vec<ElementRef> = serde_json::from_slice(r.take(refs_len)?).map_err(|e| Error::Json {
            context: context.to_string(),
            source: e,
        })?;
        let rows = r.matrix_body(n, p)?;
        r.expect_end()?;
        Self::from_standardized(rows, refs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Moore–Penrose pseudo-inverse of `P_Tᵀ` (`text_dim × d`).
pub fn text_pseudo_inverse(model: &CcaModel) -> DMatrix<f64> {
    let pt_t = model.text_proj.transpose();
    let svd = pt_t.svd(true, true);
    let eps = svd.singular_values.max() * 1e-12;
    svd.pseudo_inverse(eps).expect("u and v_t were computed")
}

/// `t̂ = pinv(P_Tᵀ) · P · P_Iᵀ z_q` for a raw image query, in standardized
/// text feature space.
pub fn back_project_to_text(model: &CcaModel, image_query: &[f64]) -> Result<Vec<f64>> {
    Retriever::new(model).back_project(image_query)
}

/// Query engine with the model-dependent matrices precomputed.
#[derive(Debug, Clone)]
pub struct Retriever<'m> {
    model: &'m CcaModel,
    /// `pinv(P_Tᵀ) · P`
    lift: DMatrix<f64>,
}

impl<'m> Retriever<'m> {
    pub fn new(model: &'m CcaModel) -> Self {
        let lift = text_pseudo_inverse(model) * &model.cross;
        Retriever { model, lift }
    }

    /// `P · P_Iᵀ z_q`: the query's coordinates in the text subspace.
    pub fn query_coordinates(&self, image_query: &[f64]) -> Result<DVector<f64>> {
        let coords = self.model.project_image(image_query)?;
        Ok(&self.model.cross * DVector::from_vec(coords))
    }

    pub fn back_project(&self, image_query: &[f64]) -> Result<Vec<f64>> {
        let coords = self.model.project_image(image_query)?;
        Ok((&self.lift * DVector::from_vec(coords)).iter().copied().collect())
    }

    /// Back-projection of an already standardized image vector.
    pub fn back_project_standardized(&self, z: &[f64]) -> Result<Vec<f64>> {
        let coords = self.model.project_image_standardized(z)?;
        Ok((&self.lift * DVector::from_vec(coords)).iter().copied().collect())
    }

    pub fn nearest_text(&self, index: &RetrievalIndex, image_query: &[f64], k: usize, space: SearchSpace) -> Result<RankedResult> {
        self.nearest_text_filtered(index, image_query, k, space, |_| true)
    }

    /// Like [`Self::nearest_text`], restricted to candidates accepted by `keep`.
    pub fn nearest_text_filtered(
        &self,
        index: &RetrievalIndex,
        image_query: &[f64],
        k: usize,
        space: SearchSpace,
        keep: impl Fn(&ElementRef) -> bool,
    ) -> Result<RankedResult> {
        if index.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if index.dim() != self.model.text_dim() {
            return Err(Error::LengthMismatch {
                expected: self.model.text_dim(),
                got: index.dim(),
            });
        }
        let (target, candidates) = match space {
            SearchSpace::TextSpace => (DVector::from_vec(self.back_project(image_query)?), None),
            SearchSpace::Subspace => (self.query_coordinates(image_query)?, Some(&index.rows * &self.model.text_proj)),
        };
        let rows = candidates.as_ref().unwrap_or(&index.rows);
        let mut scored: Vec<(f64, usize)> = (0..rows.nrows())
            .filter(|&r| keep(&index.refs[r]))
            .map(|r| {
                let d2 = rows
                    .row(r)
                    .iter()
                    .zip(target.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d2, r)
            })
            .collect();
        scored.sort_by(|a, b| match a.0.total_cmp(&b.0) {
            Ordering::Equal => index.refs[a.1].cmp(&index.refs[b.1]),
            o => o,
        });
        let hits = scored
            .into_iter()
            .take(k.max(1))
            .map(|(d2, r)| Hit {
                element: index.refs[r].clone(),
                distance: d2.sqrt(),
            })
            .collect();
        Ok(RankedResult { hits })
    }

    /// Parallel queries; output order matches input order.
    pub fn nearest_text_batch(
        &self,
        index: &RetrievalIndex,
        queries: &[Vec<f64>],
        k: usize,
        space: SearchSpace,
    ) -> Result<Vec<RankedResult>> {
        queries
            .par_iter()
            .map(|q| self.nearest_text(index, q, k, space))
            .collect()
    }
}

pub fn nearest_text(
    model: &CcaModel,
    index: &RetrievalIndex,
    image_query: &[f64],
    k: usize,
    space: SearchSpace,
) -> Result<RankedResult> {
    Retriever::new(model).nearest_text(index, image_query, k, space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cca::{CcaOptions, CrossMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn toy_model(seed: u64) -> (CcaModel, DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = 200;
        let lat = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let t = DMatrix::from_fn(n, 4, |i, j| lat[(i, j % 2)] * (j + 1) as f64 + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let im = DMatrix::from_fn(n, 3, |i, j| lat[(i, j % 2)] + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let m = CcaModel::fit_raw(&t, &im, &CcaOptions { d: 2, lambda: 1e-4, cross_map: CrossMap::Identity }).unwrap();
        (m, t, im)
    }

    fn refs(n: usize) -> Vec<ElementRef> {
        (0..n)
            .map(|i| ElementRef {
                element_id: format!("t{i:03}"),
                page_id: "w".into(),
                participant_id: "p".into(),
                fixation_index: i as u32 + 1,
            })
            .collect()
    }

    #[test]
    fn query_at_means_maps_to_origin() {
        let (m, _, _) = toy_model(1);
        let t_hat = back_project_to_text(&m, &m.image_stats.means.clone()).unwrap();
        assert!(t_hat.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn pinv_consistency() {
        let (m, _, im) = toy_model(2);
        let r = Retriever::new(&m);
        let q: Vec<f64> = im.row(5).iter().copied().collect();
        let t_hat = r.back_project(&q).unwrap();
        let lhs = m.project_text_standardized(&t_hat).unwrap();
        let rhs = r.query_coordinates(&q).unwrap();
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn exact_vector_ranks_first() {
        let (m, t, im) = toy_model(3);
        let r = Retriever::new(&m);
        let q: Vec<f64> = im.row(0).iter().copied().collect();
        let t_hat = r.back_project(&q).unwrap();
        let mut rows = m.text_stats.apply_matrix(&t).unwrap();
        rows.set_row(7, &DMatrix::from_row_slice(1, 4, &t_hat).row(0));
        let index = RetrievalIndex::from_standardized(rows, refs(t.nrows())).unwrap();
        let res = r.nearest_text(&index, &q, 3, SearchSpace::TextSpace).unwrap();
        assert_eq!(res.top().unwrap().element.element_id, "t007");
        assert!(res.top().unwrap().distance < 1e-12);
    }

    #[test]
    fn k_larger_than_index_returns_all_sorted() {
        let (m, t, im) = toy_model(4);
        let sub = t.rows(0, 5).into_owned();
        let index = RetrievalIndex::build(&m, &sub, refs(5)).unwrap();
        let q: Vec<f64> = im.row(9).iter().copied().collect();
        for space in [SearchSpace::TextSpace, SearchSpace::Subspace] {
            let res = nearest_text(&m, &index, &q, 50, space).unwrap();
            assert_eq!(res.hits.len(), 5);
            assert!(res.hits.windows(2).all(|w| w[0].distance <= w[1].distance));
        }
    }

    #[test]
    fn ties_break_on_reference() {
        let (m, _, im) = toy_model(5);
        let rows = DMatrix::zeros(3, 4);
        let mut rs = refs(3);
        rs.reverse();
        let index = RetrievalIndex::from_standardized(rows, rs).unwrap();
        let q: Vec<f64> = im.row(1).iter().copied().collect();
        let res = nearest_text(&m, &index, &q, 3, SearchSpace::TextSpace).unwrap();
        let ids: Vec<&str> = res.hits.iter().map(|h| h.element.element_id.as_str()).collect();
        assert_eq!(ids, vec!["t000", "t001", "t002"]);
    }

    #[test]
    fn empty_index_and_bad_query() {
        let (m, _, _) = toy_model(6);
        let index = RetrievalIndex::from_standardized(DMatrix::zeros(0, 4), vec![]).unwrap();
        assert!(matches!(nearest_text(&m, &index, &[0.0; 3], 1, SearchSpace::TextSpace), Err(Error::EmptyIndex)));
        assert!(matches!(back_project_to_text(&m, &[0.0; 2]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn index_roundtrip() {
        let (m, t, _) = toy_model(7);
        let index = RetrievalIndex::build(&m, &t.rows(0, 4).into_owned(), refs(4)).unwrap();
        let back = RetrievalIndex::from_bytes(&index.to_bytes(), "t").unwrap();
        assert_eq!(back, index);
    }
}
