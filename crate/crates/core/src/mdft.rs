//! Multi-alternative Decision Field Theory: contrast and feedback matrices,
//! stochastic one-hot attention, valence computation, and iterative preference
//! accumulation until a choice is made.
//!
//! The recursion is `P(t+1) = S * P(t) + V(t+1)` with `V(t) = C * M * W(t)`,
//! starting from `P(0) = 0`. Attention `W(t)` is a fresh one-hot draw each
//! iteration from a fixed distribution `w` over attributes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// When deliberation stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DeliberationPolicy {
    /// Accumulate for exactly `iterations` steps, then pick the argmax.
    FixedHorizon { iterations: u32 },
    /// Stop as soon as some preference reaches `threshold`, or at
    /// `max_iterations`.
    Threshold { threshold: f64, max_iterations: u32 },
}

/// Inhibition parameters of the distance-based feedback matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackParams {
    /// Distance sensitivity, > 0.
    pub phi1: f64,
    /// Inhibition strength, in (0, 1).
    pub phi2: f64,
}

impl Default for FeedbackParams {
    fn default() -> Self {
        FeedbackParams {
            phi1: 0.022,
            phi2: 0.05,
        }
    }
}

/// A fully constructed MDFT model: immutable after `new`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdftModel {
    m: DMatrix<f64>,
    contrast: DMatrix<f64>,
    feedback: DMatrix<f64>,
    attention: Vec<f64>,
    deliberation: DeliberationPolicy,
}

/// Result of one deliberation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliberationOutcome {
    pub chosen: usize,
    pub iterations: u32,
    /// False when a threshold run hit its iteration cap without any
    /// preference reaching the threshold.
    pub converged: bool,
}

/// Contrast matrix: 1 on the diagonal, -1/(k-1) off-diagonal, so each row
/// compares one option against the average of the others.
pub fn contrast_matrix(k: usize) -> Result<DMatrix<f64>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "contrast matrix needs at least 2 options, got {k}"
        )));
    }
    let off = -1.0 / (k as f64 - 1.0);
    Ok(DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { off }))
}

/// Feedback matrix with Gaussian distance-based lateral inhibition:
/// `S_ij = delta_ij - phi2 * exp(-phi1 * d_ij^2)` where `d_ij` is the
/// Euclidean distance between the evaluation rows of options i and j.
pub fn feedback_matrix(m: &DMatrix<f64>, params: FeedbackParams) -> Result<DMatrix<f64>> {
    if !(params.phi1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "phi1 must be positive, got {}",
            params.phi1
        )));
    }
    if !(params.phi2 > 0.0 && params.phi2 < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "phi2 must lie in (0,1), got {}",
            params.phi2
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("evaluation matrix not finite".into()));
    }
    let k = m.nrows();
    let mut s = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let d2: f64 = (m.row(i) - m.row(j)).iter().map(|v| v * v).sum();
            let delta = if i == j { 1.0 } else { 0.0 };
            s[(i, j)] = delta - params.phi2 * (-params.phi1 * d2).exp();
        }
    }
    Ok(s)
}

/// Largest eigenvalue magnitude of a symmetric matrix.
pub fn spectral_radius(s: &DMatrix<f64>) -> f64 {
    s.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|e| e.abs())
        .fold(0.0, f64::max)
}

/// Draw the attended attribute index from `w`.
pub fn sample_attention<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (j, wj) in w.iter().enumerate() {
        acc += wj;
        if u < acc {
            return j;
        }
    }
    w.len() - 1
}

impl MdftModel {
    /// Build a model from its evaluation matrix and attention distribution,
    /// deriving the contrast and feedback matrices.
    pub fn new(
        m: DMatrix<f64>,
        attention: Vec<f64>,
        feedback_params: FeedbackParams,
        deliberation: DeliberationPolicy,
    ) -> Result<MdftModel> {
        let k = m.nrows();
        if attention.len() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "attention has {} entries for {} attributes",
                attention.len(),
                m.ncols()
            )));
        }
        if attention.iter().any(|w| *w < 0.0)
            || (attention.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidParameter(
                "attention weights must be a probability distribution".into(),
            ));
        }
        let contrast = contrast_matrix(k)?;
        let feedback = feedback_matrix(&m, feedback_params)?;
        // Duplicated evaluation rows put an eigenvalue at exactly 1; its
        // eigendirection receives zero valence, so allow it within tolerance.
        let radius = spectral_radius(&feedback);
        if radius > 1.0 + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "feedback spectral radius {radius} >= 1, accumulation would diverge"
            )));
        }
        Ok(MdftModel {
            m,
            contrast,
            feedback,
            attention,
            deliberation,
        })
    }

    pub fn options(&self) -> usize {
        self.m.nrows()
    }

    pub fn attributes(&self) -> usize {
        self.m.ncols()
    }

    pub fn evaluation(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn contrast(&self) -> &DMatrix<f64> {
        &self.contrast
    }

    pub fn feedback(&self) -> &DMatrix<f64> {
        &self.feedback
    }

    pub fn attention(&self) -> &[f64] {
        &self.attention
    }

    pub fn deliberation(&self) -> DeliberationPolicy {
        self.deliberation
    }

    /// Valence under attention to attribute `attribute`: `C * M * W` with `W`
    /// the one-hot vector for that attribute. Evaluated row-wise as
    /// `m_i - (sum_j m_j - m_i) / (k-1)` so that identical evaluations give
    /// identical (and for all-equal columns, exactly tied) valences.
    pub fn valence(&self, attribute: usize) -> Result<DVector<f64>> {
        if attribute >= self.m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "attribute {attribute} out of range for {} attributes",
                self.m.ncols()
            )));
        }
        let column = self.m.column(attribute);
        let total: f64 = column.iter().sum();
        let k = self.m.nrows() as f64;
        Ok(DVector::from_iterator(
            self.m.nrows(),
            column.iter().map(|&m_i| m_i - (total - m_i) / (k - 1.0)),
        ))
    }

    /// Run one deliberation: accumulate preferences per the model's stopping
    /// policy and return the chosen option (argmax, ties broken uniformly).
    pub fn deliberate<R: Rng + ?Sized>(&self, rng: &mut R) -> DeliberationOutcome {
        let k = self.options();
        let mut p = DVector::zeros(k);
        let (cap, threshold) = match self.deliberation {
            DeliberationPolicy::FixedHorizon { iterations } => (iterations, None),
            DeliberationPolicy::Threshold {
                threshold,
                max_iterations,
            } => (max_iterations, Some(threshold)),
        };
        let mut iterations = 0;
        let mut converged = threshold.is_none();
        while iterations < cap {
            let attribute = sample_attention(&self.attention, rng);
            let v = self.valence(attribute).expect("attention index in range");
            p = &self.feedback * p + v;
            iterations += 1;
            if let Some(theta) = threshold {
                if p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= theta {
                    converged = true;
                    break;
                }
            }
        }
        DeliberationOutcome {
            chosen: argmax_with_ties(p.as_slice(), rng),
            iterations,
            converged,
        }
    }

    /// Empirical choice frequencies over `n_samples` independent
    /// deliberations.
    pub fn choice_distribution<R: Rng + ?Sized>(
        &self,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if n_samples == 0 {
            return Err(Error::InvalidParameter("need at least one sample".into()));
        }
        let mut counts = vec![0u64; self.options()];
        for _ in 0..n_samples {
            counts[self.deliberate(rng).chosen] += 1;
        }
        Ok(counts
            .into_iter()
            .map(|c| c as f64 / n_samples as f64)
            .collect())
    }

    /// Export as JSON: evaluation matrix, attention, feedback parameters and
    /// deliberation policy, plus checksums of the derived C and S matrices.
    pub fn to_json(&self, feedback_params: FeedbackParams) -> Result<String> {
        let doc = ModelDocument {
            m: self
                .m
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            attention: self.attention.clone(),
            feedback_params,
            deliberation: self.deliberation,
            contrast_checksum: matrix_checksum(&self.contrast),
            feedback_checksum: matrix_checksum(&self.feedback),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Import from JSON. C and S are recomputed and verified against the
    /// stored checksums.
    pub fn from_json(json: &str) -> Result<MdftModel> {
        let doc: ModelDocument = serde_json::from_str(json)?;
        let k = doc.m.len();
        let j = doc.m.first().map(|r| r.len()).unwrap_or(0);
        if doc.m.iter().any(|r| r.len() != j) {
            return Err(Error::DimensionMismatch("ragged evaluation matrix".into()));
        }
        let m = DMatrix::from_fn(k, j, |r, c| doc.m[r][c]);
        let model = MdftModel::new(m, doc.attention, doc.feedback_params, doc.deliberation)?;
        if matrix_checksum(&model.contrast) != doc.contrast_checksum {
            return Err(Error::ChecksumMismatch("contrast"));
        }
        if matrix_checksum(&model.feedback) != doc.feedback_checksum {
            return Err(Error::ChecksumMismatch("feedback"));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    m: Vec<Vec<f64>>,
    attention: Vec<f64>,
    feedback_params: FeedbackParams,
    deliberation: DeliberationPolicy,
    contrast_checksum: String,
    feedback_checksum: String,
}

/// SHA-256 over the row-major little-endian bit pattern of the matrix.
fn matrix_checksum(m: &DMatrix<f64>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(m.nrows().to_le_bytes());
    hasher.update(m.ncols().to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            hasher.update(m[(i, j)].to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Index of the maximum, ties broken uniformly at random.
pub fn argmax_with_ties<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    debug_assert!(!values.is_empty());
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == max)
        .map(|(i, _)| i)
        .collect();
    ties[rng.random_range(0..ties.len())]
}
