//! Spectral and cluster structure of the number-token embedding matrix.
//!
//! The spectrum answers "which periodic components do the embedding columns
//! carry" by pushing W_E through the Fourier basis and collapsing sin/cos
//! row norms per component. Clustering asks the complementary question of
//! whether numbers group by arithmetic structure (multiples of ten being
//! the interesting case), checked with a chi-square test rather than by
//! eyeballing a scatter plot. The 2-D view uses the top two principal
//! components so the whole pipeline stays deterministic.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{CoreError, Result};
use crate::fourier::FourierBasis;
use crate::rng;
use crate::stats;

/// Per-component magnitude of F * W_E: index 0 is the constant row's norm,
/// index k >= 1 collapses the sin/cos pair. No centering is applied; the
/// constant component simply lands at index 0.
pub fn embedding_spectrum(basis: &FourierBasis<f64>, w: ArrayView2<f64>) -> Result<Vec<f64>> {
    let p = basis.p();
    if w.nrows() != p {
        return Err(CoreError::ShapeMismatch {
            what: "embedding rows",
            expected: format!("({p}, D)"),
            got: format!("({}, {})", w.nrows(), w.ncols()),
        });
    }
    let v = basis.matrix().dot(&w);
    let row_norm = |r: usize| v.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
    let kmax = basis.n_components();
    let mut out = Vec::with_capacity(kmax + 1);
    out.push(row_norm(0));
    for k in 1..=kmax {
        out.push(row_norm(2 * k - 1).hypot(row_norm(2 * k)));
    }
    Ok(out)
}

const KMEANS_RESTARTS: u64 = 50;
const KMEANS_MAX_ITERS: usize = 200;

#[derive(Debug, Clone)]
pub struct ClusterResult {
    /// Cluster id per row of the input (per number).
    pub assignments: Vec<usize>,
    /// Top-2 principal-component coordinates per row.
    pub coords: Array2<f64>,
    /// Sum of squared distances to the winning centers.
    pub inertia: f64,
}

fn dist2(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One k-means run: seeded k-means++ initialization then Lloyd iterations
/// until assignments stabilize.
fn kmeans_once(data: ArrayView2<f64>, k: usize, seed: u64) -> (Vec<usize>, f64) {
    let n = data.nrows();
    let d = data.ncols();
    let mut rng = rng::seeded(seed);

    // k-means++ seeding
    let mut centers = Array2::<f64>::zeros((k, d));
    let first = rng::below(&mut rng, n as u64) as usize;
    centers.row_mut(0).assign(&data.row(first));
    let mut min_d2: Vec<f64> = (0..n).map(|i| dist2(data.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng::uniform01(&mut rng) * total;
            let mut chosen = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                r -= w;
                if r <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng::below(&mut rng, n as u64) as usize
        };
        centers.row_mut(c).assign(&data.row(pick));
        for i in 0..n {
            let d2 = dist2(data.row(i), centers.row(c));
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        // assignment step; ties go to the lower cluster id
        let mut changed = false;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = dist2(data.row(i), centers.row(0));
            for c in 1..k {
                let d2 = dist2(data.row(i), centers.row(c));
                if d2 < best_d {
                    best_d = d2;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // update step
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, d));
        for i in 0..n {
            counts[assign[i]] += 1;
            let mut row = sums.row_mut(assign[i]);
            row += &data.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let mut row = centers.row_mut(c);
                row.assign(&sums.row(c));
                row.map_inplace(|v| *v *= inv);
            } else {
                // dead cluster: restart it at the point farthest from its
                // own center (smallest index on ties), a deterministic kick
                let mut far = 0usize;
                let mut far_d = -1.0;
                for i in 0..n {
                    let d2 = dist2(data.row(i), centers.row(assign[i]));
                    if d2 > far_d {
                        far_d = d2;
                        far = i;
                    }
                }
                centers.row_mut(c).assign(&data.row(far));
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia: f64 = (0..n).map(|i| dist2(data.row(i), centers.row(assign[i]))).sum();
    (assign, inertia)
}

/// Top-2 principal component coordinates of the rows, with a fixed sign
/// convention (largest-magnitude loading positive) so output is unique.
fn pca_top2(data: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = data.nrows();
    let d = data.ncols();
    if d < 2 || n < 2 {
        return Err(CoreError::ShapeMismatch {
            what: "pca input",
            expected: "at least 2 rows and 2 columns".into(),
            got: format!("({n}, {d})"),
        });
    }
    let mean: Array1<f64> = data.mean_axis(ndarray::Axis(0)).unwrap();
    let centered = &data - &mean.broadcast((n, d)).unwrap();
    let cov = centered.t().dot(&centered) / n as f64;
    let m = nalgebra::DMatrix::from_fn(d, d, |r, c| cov[(r, c)]);
    let eig = nalgebra::linalg::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut coords = Array2::<f64>::zeros((n, 2));
    for (j, &e) in order.iter().take(2).enumerate() {
        let col = eig.eigenvectors.column(e);
        let mut lead = 0usize;
        for i in 1..d {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            let mut acc = 0.0;
            for jj in 0..d {
                acc += centered[(i, jj)] * col[jj];
            }
            coords[(i, j)] = acc * sign;
        }
    }
    Ok(coords)
}

/// Seeded k-means over the embedding rows (full dimension), best of 50
/// restarts by inertia, plus a deterministic 2-D projection for plotting.
pub fn cluster_embeddings(w: ArrayView2<f64>, k: usize, seed: u64) -> Result<ClusterResult> {
    let n = w.nrows();
    if k == 0 || k > n {
        return Err(CoreError::OutOfRange {
            what: "cluster count",
            got: k,
            lo: 1,
            hi: n,
        });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..KMEANS_RESTARTS {
        let (assign, inertia) = kmeans_once(w, k, rng::derive_seed(seed, r));
        if best.as_ref().map_or(true, |(_, bi)| inertia < *bi) {
            best = Some((assign, inertia));
        }
    }
    let (assignments, inertia) = best.unwrap();
    let coords = pca_top2(w)?;
    Ok(ClusterResult {
        assignments,
        coords,
        inertia,
    })
}

/// Chi-square independence test between cluster membership and being a
/// multiple of ten. Row i of the clustered matrix is the number i.
#[derive(Debug, Clone, Copy)]
pub struct Mult10Association {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    /// False when the table is degenerate (a margin is empty).
    pub valid: bool,
}

pub fn mult10_association(assignments: &[usize], k: usize) -> Mult10Association {
    let n = assignments.len();
    let mut obs = vec![[0f64; 2]; k];
    for (num, &c) in assignments.iter().enumerate() {
        let col = if num % 10 == 0 { 0 } else { 1 };
        obs[c][col] += 1.0;
    }
    let col_tot = [
        obs.iter().map(|r| r[0]).sum::<f64>(),
        obs.iter().map(|r| r[1]).sum::<f64>(),
    ];
    let live_rows: Vec<&[f64; 2]> = obs.iter().filter(|r| r[0] + r[1] > 0.0).collect();
    if col_tot[0] == 0.0 || col_tot[1] == 0.0 || live_rows.len() < 2 {
        return Mult10Association {
            chi2: 0.0,
            df: 0,
            p_value: 1.0,
            valid: false,
        };
    }
    let mut chi2 = 0.0;
    for row in &live_rows {
        let row_tot = row[0] + row[1];
        for j in 0..2 {
            let e = row_tot * col_tot[j] / n as f64;
            let diff = row[j] - e;
            chi2 += diff * diff / e;
        }
    }
    let df = live_rows.len() - 1;
    Mult10Association {
        chi2,
        df,
        p_value: stats::chi2_sf(chi2, df),
        valid: true,
    }
}

/// CSV of cluster assignments and 2-D coordinates, one row per number.
pub fn write_clusters_csv<W: std::io::Write>(res: &ClusterResult, mut w: W) -> std::io::Result<()> {
    writeln!(w, "number,cluster,x,y")?;
    for (i, &c) in res.assignments.iter().enumerate() {
        writeln!(w, "{},{},{},{}", i, c, res.coords[(i, 0)], res.coords[(i, 1)])?;
    }
    Ok(())
}

/// Per-component magnitude CSV. Component 0 is the constant and has no
/// period, so that cell is left empty.
pub fn write_spectrum_csv<W: std::io::Write>(
    p: usize,
    magnitudes: &[f64],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "component,period,norm")?;
    for (k, m) in magnitudes.iter().enumerate() {
        if k == 0 {
            writeln!(w, "0,,{m}")?;
        } else {
            writeln!(w, "{},{},{}", k, (p - 1) as f64 / k as f64, m)?;
        }
    }
    Ok(())
}
