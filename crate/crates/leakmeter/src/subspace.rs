//! Embedding-space similarity between paired original and de-identified
//! sets: mean of the top canonical correlations, and Procrustes MSE /
//! mean cosine after optimal orthogonal alignment.
//!
//! Canonical correlations are the singular values of
//! `(Sxx + eI)^{-1/2} Sxy (Syy + eI)^{-1/2}` with the covariances taken
//! over column-centered data; the inverse square roots come from the
//! Jacobi SVD in [`crate::linalg`]. Procrustes centers both clouds, scales
//! each to unit Frobenius norm, and aligns with `R = U V^T` from the SVD
//! of `X^T Y`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Condition, CorpusManifest, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::linalg::{svd, Mat};

/// Paired row sets: row i of `x` and `y` describe the same underlying
/// segment pairing.
#[derive(Debug, Clone)]
pub struct PairedEmbeddings {
    pub x: Mat,
    pub y: Mat,
    /// (speaker_id, session_id) behind each row.
    pub keys: Vec<(String, String)>,
}

/// Pairs original and de-identified embeddings through the manifest.
///
/// Rows are per-(speaker, session) mean vectors over the segments of each
/// condition; when a session holds exactly one original and one
/// de-identified segment this degenerates to segment-level pairing.
pub fn pair_embeddings(
    manifest: &CorpusManifest,
    orig: &EmbeddingMatrix,
    deid: &EmbeddingMatrix,
    profile: u32,
) -> Result<PairedEmbeddings> {
    type Acc = (Vec<f64>, usize);
    let mut orig_acc: BTreeMap<(String, String), Acc> = BTreeMap::new();
    let mut deid_acc: BTreeMap<(String, String), Acc> = BTreeMap::new();

    for r in manifest.segments() {
        let key = (r.speaker_id.clone(), r.session_id.clone());
        match r.condition {
            Condition::Orig => {
                if let Some(e) = orig.get(&r.segment_id) {
                    let acc = orig_acc
                        .entry(key)
                        .or_insert_with(|| (vec![0.0; orig.dim()], 0));
                    for (a, v) in acc.0.iter_mut().zip(e) {
                        *a += v;
                    }
                    acc.1 += 1;
                }
            }
            Condition::Deid if r.profile_id == Some(profile) => {
                if let Some(e) = deid.get(&r.segment_id) {
                    let acc = deid_acc
                        .entry(key)
                        .or_insert_with(|| (vec![0.0; deid.dim()], 0));
                    for (a, v) in acc.0.iter_mut().zip(e) {
                        *a += v;
                    }
                    acc.1 += 1;
                }
            }
            Condition::Deid => {}
        }
    }

    let mut keys = Vec::new();
    let mut x_rows = Vec::new();
    let mut y_rows = Vec::new();
    for (key, (sum_o, n_o)) in &orig_acc {
        if let Some((sum_d, n_d)) = deid_acc.get(key) {
            x_rows.push(sum_o.iter().map(|v| v / *n_o as f64).collect::<Vec<_>>());
            y_rows.push(sum_d.iter().map(|v| v / *n_d as f64).collect::<Vec<_>>());
            keys.push(key.clone());
        }
    }
    if keys.is_empty() {
        return Err(Error::EmptyScenario(format!(
            "no (speaker, session) pairs between orig and deid profile {profile}"
        )));
    }
    Ok(PairedEmbeddings {
        x: Mat::from_rows(x_rows),
        y: Mat::from_rows(y_rows),
        keys,
    })
}

/// Ridge policy for the CCA whitening step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// `1e-6 * trace(S)/d` per covariance; safe when n is close to d.
    Default,
    /// Explicit additive ridge; `0.0` demands full-rank covariances.
    Value(f64),
}

impl Ridge {
    fn resolve(self, cov: &Mat) -> f64 {
        match self {
            Ridge::Default => 1e-6 * cov.trace() / cov.rows() as f64,
            Ridge::Value(v) => v,
        }
    }
}

fn center_columns(m: &Mat) -> Mat {
    let n = m.rows();
    let d = m.cols();
    let mut means = vec![0.0f64; d];
    for i in 0..n {
        for (j, mu) in means.iter_mut().enumerate() {
            *mu += m.get(i, j);
        }
    }
    for mu in means.iter_mut() {
        *mu /= n as f64;
    }
    let mut out = m.clone();
    for i in 0..n {
        let row = out.row_mut(i);
        for (v, mu) in row.iter_mut().zip(&means) {
            *v -= mu;
        }
    }
    out
}

/// `(S + ridge I)^{-1/2}` for a symmetric PSD matrix.
fn inv_sqrt_sym(cov: &Mat, ridge: f64) -> Result<Mat> {
    let d = cov.rows();
    let mut shifted = cov.clone();
    for i in 0..d {
        shifted.set(i, i, shifted.get(i, i) + ridge);
    }
    let dec = svd(&shifted)?;
    let s_max = dec.s[0];
    let s_min = *dec.s.last().unwrap();
    if s_max <= 0.0 || s_min <= s_max * 1e-12 {
        return Err(Error::RankDeficient(format!(
            "covariance singular values span [{s_min:.3e}, {s_max:.3e}]"
        )));
    }
    // S is symmetric PD after the shift, so U spans the eigenbasis.
    let mut scaled = dec.u.clone();
    for j in 0..d {
        let f = 1.0 / dec.s[j].sqrt();
        for i in 0..d {
            scaled.set(i, j, scaled.get(i, j) * f);
        }
    }
    Ok(scaled.matmul(&dec.u.transpose()))
}

/// All canonical correlations between the paired sets, descending,
/// clamped to [0, 1].
pub fn canonical_correlations(x: &Mat, y: &Mat, ridge: Ridge) -> Result<Vec<f64>> {
    if x.rows() != y.rows() {
        return Err(Error::DimensionMismatch(format!(
            "paired sets with {} vs {} rows",
            x.rows(),
            y.rows()
        )));
    }
    let n = x.rows();
    if n < 2 {
        return Err(Error::RankDeficient("need at least 2 paired rows".into()));
    }
    if ridge == Ridge::Value(0.0) && n < x.cols().max(y.cols()) + 1 {
        return Err(Error::RankDeficient(format!(
            "unregularized CCA needs n >= max(d1, d2) + 1, got n = {n}"
        )));
    }
    let xc = center_columns(x);
    let yc = center_columns(y);
    let denom = (n - 1) as f64;
    let sxx = xc.gram().scale(1.0 / denom);
    let syy = yc.gram().scale(1.0 / denom);
    let sxy = xc.t_matmul(&yc).scale(1.0 / denom);

    let wx = inv_sqrt_sym(&sxx, ridge.resolve(&sxx))?;
    let wy = inv_sqrt_sym(&syy, ridge.resolve(&syy))?;
    let k = wx.matmul(&sxy).matmul(&wy);
    let dec = svd(&k)?;
    Ok(dec.s.iter().map(|&s| s.clamp(0.0, 1.0)).collect())
}

/// Mean of the `m` largest canonical correlations.
pub fn cca_mean_top(x: &Mat, y: &Mat, m: usize, ridge: Ridge) -> Result<f64> {
    if x.rows() <= m {
        return Err(Error::RankDeficient(format!(
            "need more than {m} paired rows, got {}",
            x.rows()
        )));
    }
    let rho = canonical_correlations(x, y, ridge)?;
    let take = m.min(rho.len());
    Ok(rho.iter().take(take).sum::<f64>() / take as f64)
}

/// Result of orthogonal Procrustes alignment.
#[derive(Debug, Clone)]
pub struct ProcrustesResult {
    /// The optimal orthogonal alignment, d x d.
    pub rotation: Mat,
    /// Per-element squared alignment error: |XR - Y|_F^2 / (n d).
    pub p_mse: f64,
    /// Mean cosine of aligned row pairs (zero rows excluded).
    pub p_cosine: f64,
}

/// Optimal orthogonal alignment of `x` onto `y` after centering and
/// unit-Frobenius scaling of each cloud.
pub fn procrustes(x: &Mat, y: &Mat) -> Result<ProcrustesResult> {
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch(format!(
            "procrustes needs equal dims, got {} vs {}",
            x.cols(),
            y.cols()
        )));
    }
    if x.rows() != y.rows() {
        return Err(Error::DimensionMismatch(format!(
            "paired sets with {} vs {} rows",
            x.rows(),
            y.rows()
        )));
    }
    let n = x.rows();
    let d = x.cols();
    let xc = center_columns(x);
    let yc = center_columns(y);
    let nx = xc.frob_norm();
    let ny = yc.frob_norm();
    if nx <= 1e-300 {
        return Err(Error::DegenerateCloud("all X rows identical".into()));
    }
    if ny <= 1e-300 {
        return Err(Error::DegenerateCloud("all Y rows identical".into()));
    }
    let xs = xc.scale(1.0 / nx);
    let ys = yc.scale(1.0 / ny);

    let m = xs.t_matmul(&ys);
    let dec = svd(&m)?;
    let rotation = dec.u.matmul(&dec.v.transpose());

    let aligned = xs.matmul(&rotation);
    let diff = aligned.sub(&ys);
    let p_mse = diff.frob_norm().powi(2) / (n as f64 * d as f64);

    let mut cos_sum = 0.0;
    let mut cos_n = 0usize;
    for i in 0..n {
        let a = aligned.row(i);
        let b = ys.row(i);
        let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        cos_sum += dot / (na * nb);
        cos_n += 1;
    }
    let p_cosine = if cos_n == 0 { 0.0 } else { cos_sum / cos_n as f64 };

    Ok(ProcrustesResult {
        rotation,
        p_mse,
        p_cosine,
    })
}

/// JSON shape of the subspace similarity report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceReport {
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub cca_mean_top10: f64,
    pub ridge: f64,
    pub p_mse: f64,
    pub p_cosine: f64,
}

/// Computes the full subspace block for one paired set.
pub fn subspace_report(paired: &PairedEmbeddings, ridge: Ridge) -> Result<SubspaceReport> {
    let ridge_val = match ridge {
        Ridge::Default => {
            let xc = center_columns(&paired.x);
            let sxx = xc.gram().scale(1.0 / (paired.x.rows().max(2) - 1) as f64);
            Ridge::Default.resolve(&sxx)
        }
        Ridge::Value(v) => v,
    };
    let cca = cca_mean_top(&paired.x, &paired.y, 10, ridge)?;
    let proc = procrustes(&paired.x, &paired.y)?;
    Ok(SubspaceReport {
        n: paired.x.rows(),
        d1: paired.x.cols(),
        d2: paired.y.cols(),
        cca_mean_top10: cca,
        ridge: ridge_val,
        p_mse: proc.p_mse,
        p_cosine: proc.p_cosine,
    })
}
