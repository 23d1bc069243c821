//! Band and single-component filters on module outputs in logit space.
//!
//! A filter names a set of Fourier components to remove. Removing them from
//! a residual-stream vector y means solving argmin ||y - y'|| subject to
//! B F W_U y' = 0, i.e. orthogonally projecting y onto the null space of the
//! masked unembedded-basis map. B is a row mask over Fourier rows, F the
//! basis, W_U the unembedding; the projector P = N N^T comes from an SVD
//! null-space basis N with a relative singular-value cutoff.
//!
//! Projectors are cached keyed by a content hash of W_U plus the filter, so
//! sweeping many ablation specs over one checkpoint factors once per filter.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::fourier::FourierBasis;

/// Relative singular-value cutoff for the numerical null space.
pub const SV_CUTOFF: f64 = 1e-8;

/// Which Fourier components a filter removes. tau and gamma are component
/// numbers k (period (p-1)/k), not raw row indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    /// Keep components below tau, remove k >= tau.
    LowPass { tau: usize },
    /// Remove 1 <= k < tau, keep the rest.
    HighPass { tau: usize },
    /// Remove every nonconstant component except gamma.
    SinglePass { gamma: usize },
}

impl FilterSpec {
    /// Short label used in CSV output and cache-adjacent file names.
    pub fn label(&self) -> String {
        match self {
            FilterSpec::LowPass { tau } => format!("low_pass({tau})"),
            FilterSpec::HighPass { tau } => format!("high_pass({tau})"),
            FilterSpec::SinglePass { gamma } => format!("single_pass({gamma})"),
        }
    }
}

/// Default low/high band split: 50 at p = 521, scaled proportionally.
pub fn default_tau(p: usize) -> usize {
    let t = (50.0 * (p - 1) as f64 / 520.0).round() as usize;
    t.clamp(1, (p - 1) / 2)
}

/// Binary removal mask over the p Fourier rows; true = row constrained to 0.
/// The constant row is never removed.
pub fn build_mask(spec: &FilterSpec, p: usize) -> Result<Vec<bool>> {
    if p < 3 || p % 2 == 0 {
        return Err(CoreError::BadModulus(p));
    }
    let kmax = (p - 1) / 2;
    let mut removed_k = vec![false; kmax + 1];
    match *spec {
        // tau = kmax + 1 is the explicit no-op (nothing removed)
        FilterSpec::LowPass { tau } => {
            check_range("tau", tau, 1, kmax + 1)?;
            for k in tau..=kmax {
                removed_k[k] = true;
            }
        }
        FilterSpec::HighPass { tau } => {
            check_range("tau", tau, 1, kmax + 1)?;
            for k in 1..tau {
                removed_k[k] = true;
            }
        }
        FilterSpec::SinglePass { gamma } => {
            check_range("gamma", gamma, 1, kmax)?;
            for k in 1..=kmax {
                removed_k[k] = k != gamma;
            }
        }
    }
    let mut mask = vec![false; p];
    for k in 1..=kmax {
        if removed_k[k] {
            mask[2 * k - 1] = true;
            mask[2 * k] = true;
        }
    }
    Ok(mask)
}

fn check_range(what: &'static str, got: usize, lo: usize, hi: usize) -> Result<()> {
    if got < lo || got > hi {
        return Err(CoreError::OutOfRange { what, got, lo, hi });
    }
    Ok(())
}

/// Orthogonal projector onto the filter's feasible set.
#[derive(Debug, Clone)]
pub struct Projector {
    pub spec: FilterSpec,
    /// D x D projection matrix applied to module outputs.
    matrix: Array2<f64>,
    /// Number of masked Fourier rows.
    pub rank_removed: usize,
    /// Dimension of the feasible (null) space.
    pub null_dim: usize,
    /// True when W_U was numerically zero and the projector fell back to
    /// identity; the constraint is vacuous in that case.
    pub degenerate: bool,
}

impl Projector {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }
}

/// Build the projector for `spec` against an unembedding W_U (p x D).
pub fn build_projector(
    basis: &FourierBasis<f64>,
    w_u: ArrayView2<f64>,
    spec: &FilterSpec,
) -> Result<Projector> {
    let p = basis.p();
    if w_u.nrows() != p {
        return Err(CoreError::ShapeMismatch {
            what: "W_U",
            expected: format!("({p}, D)"),
            got: format!("({}, {})", w_u.nrows(), w_u.ncols()),
        });
    }
    let d = w_u.ncols();
    let mask = build_mask(spec, p)?;
    let removed: Vec<usize> = (0..p).filter(|&i| mask[i]).collect();
    let rank_removed = removed.len();
    if removed.is_empty() {
        return Ok(Projector {
            spec: *spec,
            matrix: Array2::eye(d),
            rank_removed,
            null_dim: d,
            degenerate: false,
        });
    }

    // Constraint matrix: the removed rows of F * W_U. Zero rows of B
    // contribute nothing to the null-space condition, so they are dropped
    // rather than materialized. Padding with zero rows up to D guarantees a
    // full D x D right-singular basis from the thin SVD.
    let g = basis.matrix().dot(&w_u);
    let rows = removed.len().max(d);
    let m = DMatrix::<f64>::from_fn(rows, d, |r, c| {
        if r < removed.len() {
            g[(removed[r], c)]
        } else {
            0.0
        }
    });
    let svd = m.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("SVD was built with compute_v");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return Ok(Projector {
            spec: *spec,
            matrix: Array2::eye(d),
            rank_removed,
            null_dim: d,
            degenerate: true,
        });
    }
    let tol = SV_CUTOFF * smax;
    let mut matrix = Array2::<f64>::zeros((d, d));
    let mut null_dim = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol {
            null_dim += 1;
            let v = v_t.row(i);
            for a in 0..d {
                for b in 0..d {
                    matrix[(a, b)] += v[a] * v[b];
                }
            }
        }
    }
    Ok(Projector {
        spec: *spec,
        matrix,
        rank_removed,
        null_dim,
        degenerate: false,
    })
}

/// Project one module-output vector onto the feasible set.
pub fn apply_filter(proj: &Projector, x: ArrayView1<f64>) -> Array1<f64> {
    proj.matrix.dot(&x)
}

/// Project each row of a (positions x D) activation block.
pub fn apply_filter_rows(proj: &Projector, x: ArrayView2<f64>) -> Array2<f64> {
    x.dot(&proj.matrix) // P is symmetric, so right-multiplying projects rows
}

fn w_u_digest(w_u: ArrayView2<f64>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((w_u.nrows() as u64).to_le_bytes());
    h.update((w_u.ncols() as u64).to_le_bytes());
    for v in w_u.iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Content-addressed projector cache: same W_U bytes + same spec = same
/// projector instance. Lock-protected; lookups clone an Arc.
#[derive(Default)]
pub struct ProjectorCache {
    inner: RwLock<HashMap<([u8; 32], FilterSpec), Arc<Projector>>>,
}

impl ProjectorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(
        &self,
        basis: &FourierBasis<f64>,
        w_u: ArrayView2<f64>,
        spec: &FilterSpec,
    ) -> Result<Arc<Projector>> {
        let key = (w_u_digest(w_u), *spec);
        if let Some(hit) = self.inner.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let built = Arc::new(build_projector(basis, w_u, spec)?);
        let mut map = self.inner.write().expect("cache lock");
        // a racing builder may have inserted first; keep the existing one
        let entry = map.entry(key).or_insert_with(|| Arc::clone(&built));
        Ok(Arc::clone(entry))
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_counts_match_hand_arithmetic() {
        let p = 521;
        let single = build_mask(&FilterSpec::SinglePass { gamma: 260 }, p).unwrap();
        assert_eq!(single.iter().filter(|&&b| b).count(), 518);
        assert!(!single[0]);
        assert!(!single[2 * 260 - 1] && !single[2 * 260]);

        let high = build_mask(&FilterSpec::HighPass { tau: 50 }, p).unwrap();
        assert_eq!(high.iter().filter(|&&b| b).count(), 98);

        let noop = build_mask(&FilterSpec::LowPass { tau: 261 }, p).unwrap();
        assert_eq!(noop.iter().filter(|&&b| b).count(), 0);
    }

    #[test]
    fn mask_rejects_out_of_range() {
        assert!(build_mask(&FilterSpec::LowPass { tau: 0 }, 101).is_err());
        assert!(build_mask(&FilterSpec::LowPass { tau: 52 }, 101).is_err());
        assert!(build_mask(&FilterSpec::SinglePass { gamma: 51 }, 101).is_err());
        assert!(build_mask(&FilterSpec::SinglePass { gamma: 50 }, 101).is_ok());
    }

    #[test]
    fn default_tau_scales_from_reference() {
        assert_eq!(default_tau(521), 50);
        assert_eq!(default_tau(101), 10);
        assert_eq!(default_tau(5), 1);
    }

    #[test]
    fn noop_projector_is_exact_identity() {
        let basis = FourierBasis::<f64>::new(21).unwrap();
        let mut rng = crate::rng::seeded(2);
        let w_u = Array2::from_shape_fn((21, 8), |_| crate::rng::normal(&mut rng));
        let kmax_plus = (21 - 1) / 2 + 1;
        let proj =
            build_projector(&basis, w_u.view(), &FilterSpec::LowPass { tau: kmax_plus }).unwrap();
        assert_eq!(proj.matrix(), &Array2::<f64>::eye(8));
        assert_eq!(proj.null_dim, 8);
        assert!(!proj.degenerate);
    }

    #[test]
    fn zero_unembedding_degenerates_to_identity_with_flag() {
        let basis = FourierBasis::<f64>::new(21).unwrap();
        let w_u = Array2::<f64>::zeros((21, 6));
        let proj = build_projector(&basis, w_u.view(), &FilterSpec::HighPass { tau: 5 }).unwrap();
        assert!(proj.degenerate);
        assert_eq!(proj.matrix(), &Array2::<f64>::eye(6));
    }

    #[test]
    fn filter_spec_toml_round_trip() {
        let spec = FilterSpec::SinglePass { gamma: 260 };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"single_pass","gamma":260}"#);
        let back: FilterSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn cache_returns_shared_instance() {
        let basis = FourierBasis::<f64>::new(21).unwrap();
        let mut rng = crate::rng::seeded(3);
        let w_u = Array2::from_shape_fn((21, 8), |_| crate::rng::normal(&mut rng));
        let cache = ProjectorCache::new();
        let spec = FilterSpec::LowPass { tau: 4 };
        let a = cache.get_or_build(&basis, w_u.view(), &spec).unwrap();
        let b = cache.get_or_build(&basis, w_u.view(), &spec).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
        let other = FilterSpec::HighPass { tau: 4 };
        let c = cache.get_or_build(&basis, w_u.view(), &other).unwrap();
        assert!(!Arc::ptr_eq(&a, &c));
        assert_eq!(cache.len(), 2);
    }
}
