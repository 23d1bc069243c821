//! Fourier basis over a number vocabulary 0..p-1 and the dense DFT built on it.
//!
//! The basis is the classic real trig family sampled on the integers: one
//! constant row, then alternating sin/cos rows at angular frequencies
//! w_k = 2*pi*k/(p-1) for k = 1..=(p-1)/2. Row norms use sqrt(1/(p-1)) for the
//! constant and sqrt(2/(p-1)) for the trig rows, which makes the family only
//! near-orthonormal: the sample grid 0..p-1 covers one full period plus a
//! duplicated phase point (x = p-1 is the same phase as x = 0), and the sin
//! row at the Nyquist component k = (p-1)/2 is identically zero on integers.
//! Tests pin the measured deviations; nothing here "fixes" the basis.
//!
//! p stays small (hundreds), so the DFT is a dense matrix multiply. No FFT.

use ndarray::{Array1, Array2, ArrayView1};
use std::io::Write;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::stats;

/// What a basis row holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Constant,
    Sin,
    Cos,
}

/// Label for one basis row: which component it belongs to and its shape.
#[derive(Debug, Clone, Copy)]
pub struct RowMeta {
    pub row: usize,
    pub kind: RowKind,
    /// Component number k; 0 for the constant row.
    pub component: usize,
    /// Frequency k/(p-1) in cycles per unit step.
    pub frequency: f64,
    /// Period (p-1)/k in tokens; infinite for the constant row.
    pub period: f64,
}

/// The p x p real Fourier basis; rows are (near-)unit-norm waves.
#[derive(Debug, Clone)]
pub struct FourierBasis<T: Scalar> {
    p: usize,
    matrix: Array2<T>,
    rows: Vec<RowMeta>,
}

/// DFT output: raw coefficients plus per-component magnitudes.
#[derive(Debug, Clone)]
pub struct Spectrum<T: Scalar> {
    p: usize,
    raw: Array1<T>,
    magnitudes: Array1<T>,
}

/// One entry of a ranked component listing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentPeak<T> {
    pub component: usize,
    pub period: f64,
    pub magnitude: T,
}

impl<T: Scalar> FourierBasis<T> {
    /// Build the basis for an odd p >= 3.
    pub fn new(p: usize) -> Result<Self> {
        if p < 3 || p % 2 == 0 {
            return Err(CoreError::BadModulus(p));
        }
        let denom = (p - 1) as f64;
        let c0 = (1.0 / denom).sqrt();
        let ctrig = (2.0 / denom).sqrt();
        let mut matrix = Array2::zeros((p, p));
        let mut rows = Vec::with_capacity(p);
        for x in 0..p {
            matrix[(0, x)] = T::from_f64_lossy(c0);
        }
        rows.push(RowMeta {
            row: 0,
            kind: RowKind::Constant,
            component: 0,
            frequency: 0.0,
            period: f64::INFINITY,
        });
        for k in 1..=(p - 1) / 2 {
            let w = std::f64::consts::TAU * k as f64 / denom;
            for x in 0..p {
                let phase = w * x as f64;
                matrix[(2 * k - 1, x)] = T::from_f64_lossy(ctrig * phase.sin());
                matrix[(2 * k, x)] = T::from_f64_lossy(ctrig * phase.cos());
            }
            let frequency = k as f64 / denom;
            let period = denom / k as f64;
            rows.push(RowMeta {
                row: 2 * k - 1,
                kind: RowKind::Sin,
                component: k,
                frequency,
                period,
            });
            rows.push(RowMeta {
                row: 2 * k,
                kind: RowKind::Cos,
                component: k,
                frequency,
                period,
            });
        }
        Ok(Self { p, matrix, rows })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of nonconstant components, (p-1)/2.
    pub fn n_components(&self) -> usize {
        (self.p - 1) / 2
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.matrix
    }

    pub fn row_meta(&self) -> &[RowMeta] {
        &self.rows
    }

    /// Row indices (sin, cos) for component k >= 1.
    pub fn rows_for_component(&self, k: usize) -> Result<(usize, usize)> {
        if k == 0 || k > self.n_components() {
            return Err(CoreError::OutOfRange {
                what: "component",
                got: k,
                lo: 1,
                hi: self.n_components(),
            });
        }
        Ok((2 * k - 1, 2 * k))
    }

    pub fn period_of(&self, k: usize) -> f64 {
        if k == 0 {
            f64::INFINITY
        } else {
            (self.p - 1) as f64 / k as f64
        }
    }

    /// Forward transform: raw coefficients F*u plus component magnitudes.
    pub fn dft(&self, u: ArrayView1<T>) -> Result<Spectrum<T>> {
        if u.len() != self.p {
            return Err(CoreError::LengthMismatch {
                expected: self.p,
                got: u.len(),
            });
        }
        let raw = self.matrix.dot(&u);
        Ok(Spectrum::from_raw_unchecked(self.p, raw))
    }

    /// Inverse transform F^T * raw. Near-inverse only; see module docs.
    pub fn idft(&self, raw: ArrayView1<T>) -> Result<Array1<T>> {
        if raw.len() != self.p {
            return Err(CoreError::LengthMismatch {
                expected: self.p,
                got: raw.len(),
            });
        }
        Ok(self.matrix.t().dot(&raw))
    }
}

impl<T: Scalar> Spectrum<T> {
    /// Wrap raw coefficients of length p, computing magnitudes.
    pub fn from_raw(p: usize, raw: Array1<T>) -> Result<Self> {
        if raw.len() != p {
            return Err(CoreError::LengthMismatch {
                expected: p,
                got: raw.len(),
            });
        }
        Ok(Self::from_raw_unchecked(p, raw))
    }

    fn from_raw_unchecked(p: usize, raw: Array1<T>) -> Self {
        let half = (p - 1) / 2;
        let mut magnitudes = Array1::zeros(half + 1);
        magnitudes[0] = raw[0].abs();
        for k in 1..=half {
            magnitudes[k] = raw[2 * k - 1].hypot(raw[2 * k]);
        }
        Self { p, raw, magnitudes }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn raw(&self) -> &Array1<T> {
        &self.raw
    }

    /// Magnitude per component, index 0 = constant, length (p-1)/2 + 1.
    pub fn magnitudes(&self) -> &Array1<T> {
        &self.magnitudes
    }
}

/// Rank components by magnitude, largest first, ties toward the smaller k.
/// Zero-magnitude components never appear; fewer than n entries may return.
pub fn top_outlier_components<T: Scalar>(
    s: &Spectrum<T>,
    n: usize,
    min_component: usize,
) -> Vec<ComponentPeak<T>> {
    let denom = (s.p - 1) as f64;
    let mut peaks: Vec<ComponentPeak<T>> = s
        .magnitudes
        .iter()
        .enumerate()
        .filter(|&(k, m)| k >= min_component && *m > T::zero())
        .map(|(k, &m)| ComponentPeak {
            component: k,
            period: if k == 0 { f64::INFINITY } else { denom / k as f64 },
            magnitude: m,
        })
        .collect();
    peaks.sort_by(|a, b| {
        b.magnitude
            .partial_cmp(&a.magnitude)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.component.cmp(&b.component))
    });
    peaks.truncate(n);
    peaks
}

/// Components in the band k >= min_component that stick out above
/// mean + 4*stddev of the rest of the band. The outlier convention used
/// everywhere.
///
/// Peeled from the top down: the largest remaining magnitude is flagged
/// only if it clears the line fitted to everything below it, then removed
/// and the test repeated. Fitting the line once over the whole band fails
/// in both directions: a lone spike inflates the spread enough to hide a
/// second, smaller peak, and several comparable spikes can hide each other
/// entirely. Peeling is also what keeps spike-free spectra clean: a smooth
/// tail never separates from the points just under it, so nothing flags.
pub fn outlier_components(magnitudes: &[f64], min_component: usize) -> Vec<usize> {
    let kmax = magnitudes.len().saturating_sub(1);
    if min_component < 1 || min_component > kmax {
        return Vec::new();
    }
    let mut kept: Vec<usize> = (min_component..=kmax).collect();
    let mut flagged = Vec::new();
    while kept.len() > 3 {
        let (imax, &ktop) = kept
            .iter()
            .enumerate()
            .max_by(|a, b| {
                magnitudes[*a.1]
                    .partial_cmp(&magnitudes[*b.1])
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        let rest: Vec<f64> = kept
            .iter()
            .filter(|&&k| k != ktop)
            .map(|&k| magnitudes[k])
            .collect();
        let cut = stats::mean(&rest) + 4.0 * stats::std_dev(&rest);
        if magnitudes[ktop] <= cut {
            break;
        }
        flagged.push(ktop);
        kept.swap_remove(imax);
    }
    flagged.sort_unstable();
    flagged
}

/// Spectrum CSV: component_k, period, magnitude; constant row first.
pub fn write_spectrum_csv<W: Write>(w: &mut W, p: usize, magnitudes: &[f64]) -> Result<()> {
    debug_assert_eq!(magnitudes.len(), (p - 1) / 2 + 1);
    writeln!(w, "component_k,period,magnitude")?;
    for (k, m) in magnitudes.iter().enumerate() {
        let period = if k == 0 {
            f64::INFINITY
        } else {
            (p - 1) as f64 / k as f64
        };
        writeln!(w, "{k},{period},{m}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_even_or_tiny_p() {
        assert!(FourierBasis::<f64>::new(4).is_err());
        assert!(FourierBasis::<f64>::new(1).is_err());
        assert!(FourierBasis::<f64>::new(5).is_ok());
    }

    #[test]
    fn p5_rows_match_hand_values() {
        let b = FourierBasis::<f64>::new(5).unwrap();
        let m = b.matrix();
        for x in 0..5 {
            assert!((m[(0, x)] - 0.5).abs() < 1e-15);
        }
        // sin row k=1 at w = pi/2: (0, 1, 0, -1, 0) * sqrt(1/2)
        let s = (0.5f64).sqrt();
        let expect = [0.0, s, 0.0, -s, 0.0];
        for x in 0..5 {
            assert!((m[(1, x)] - expect[x]).abs() < 1e-15, "x={x}");
        }
        // cos row k=2 at w = pi: alternating +-1 * sqrt(1/2)
        for x in 0..5 {
            let want = s * if x % 2 == 0 { 1.0 } else { -1.0 };
            assert!((m[(4, x)] - want).abs() < 1e-15, "x={x}");
        }
    }

    #[test]
    fn row_meta_periods() {
        let b = FourierBasis::<f64>::new(521).unwrap();
        assert_eq!(b.n_components(), 260);
        assert_eq!(b.period_of(260), 2.0);
        assert_eq!(b.period_of(208), 2.5);
        assert_eq!(b.period_of(104), 5.0);
        assert_eq!(b.period_of(52), 10.0);
        let meta = &b.row_meta()[2 * 260];
        assert_eq!(meta.kind, RowKind::Cos);
        assert_eq!(meta.component, 260);
        assert_eq!(meta.period, 2.0);
        assert!((meta.frequency - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dft_of_constant_vector() {
        // c * ones: raw[0] = c * p / sqrt(p-1) (the constant row has p
        // entries of sqrt(1/(p-1))); every other |raw[i]| <= 3c/(p-1).
        let p = 5;
        let c = 2.0;
        let b = FourierBasis::<f64>::new(p).unwrap();
        let u = Array1::from_elem(p, c);
        let s = b.dft(u.view()).unwrap();
        let want0 = c * p as f64 / ((p - 1) as f64).sqrt();
        assert!((s.raw()[0] - want0).abs() < 1e-12, "raw0 {}", s.raw()[0]);
        assert!((want0 - 2.5 * c).abs() < 1e-12);
        for i in 1..p {
            assert!(
                s.raw()[i].abs() <= 3.0 * c / (p - 1) as f64 + 1e-12,
                "i={i} raw={}",
                s.raw()[i]
            );
        }
    }

    #[test]
    fn idft_of_unit_constant_mass() {
        let b = FourierBasis::<f64>::new(5).unwrap();
        let raw = array![1.0, 0.0, 0.0, 0.0, 0.0];
        let u = b.idft(raw.view()).unwrap();
        for x in 0..5 {
            assert!((u[x] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn dft_of_pure_cosine_peaks_at_its_component() {
        let p = 521;
        let b = FourierBasis::<f64>::new(p).unwrap();
        let w = std::f64::consts::TAU * 10.0 / (p - 1) as f64;
        let u = Array1::from_shape_fn(p, |x| (w * x as f64).cos());
        let s = b.dft(u.view()).unwrap();
        let mags = s.magnitudes();
        let argmax = (0..mags.len()).max_by(|&a, &c| mags[a].partial_cmp(&mags[c]).unwrap());
        assert_eq!(argmax, Some(10));
    }

    #[test]
    fn magnitudes_capture_all_energy() {
        let b = FourierBasis::<f64>::new(21).unwrap();
        let mut rng = crate::rng::seeded(5);
        let u = Array1::from_shape_fn(21, |_| crate::rng::normal(&mut rng));
        let s = b.dft(u.view()).unwrap();
        let raw_norm = s.raw().iter().map(|v| v * v).sum::<f64>().sqrt();
        let mag_norm = s.magnitudes().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((raw_norm - mag_norm).abs() <= 1e-9 * raw_norm.max(1e-300));
    }

    #[test]
    fn top_components_rank_and_skip_zeros() {
        let p = 521;
        let mut raw = Array1::zeros(p);
        raw[2 * 260 - 1] = 3.0; // sin part of k=260
        let s = Spectrum::from_raw(p, raw).unwrap();
        let peaks = top_outlier_components::<f64>(&s, 5, 1);
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].component, 260);
        assert_eq!(peaks[0].period, 2.0);
        assert!((peaks[0].magnitude - 3.0).abs() < 1e-15);
    }

    #[test]
    fn top_components_tie_breaks_toward_smaller_k() {
        let p = 9;
        let mut raw = Array1::zeros(p);
        raw[2 * 3] = 1.0;
        raw[2 * 1] = 1.0;
        let s = Spectrum::from_raw(p, raw).unwrap();
        let peaks = top_outlier_components(&s, 2, 1);
        assert_eq!(peaks[0].component, 1);
        assert_eq!(peaks[1].component, 3);
    }

    #[test]
    fn outlier_rule_is_mean_plus_four_sigma() {
        let mut mags = vec![1.0; 50];
        mags[30] = 2.0;
        let out = outlier_components(&mags, 10);
        assert_eq!(out, vec![30]);
        // flat band: no outliers
        assert!(outlier_components(&vec![1.0; 50], 10).is_empty());
    }

    #[test]
    fn outlier_peeling_finds_peak_a_single_pass_hides() {
        // band k=10..50 near 5.0 with peaks at 40 and 50; the 40 peak alone
        // lifts mean + 4 sd above the 50 peak, so one pass misses it
        let mut mags = vec![5.0f64; 51];
        let mut rng = crate::rng::seeded(9);
        for m in mags.iter_mut().skip(10) {
            *m += 0.5 * crate::rng::normal(&mut rng);
        }
        mags[40] = 45.0;
        mags[50] = 17.0;
        let band: Vec<f64> = mags[10..].to_vec();
        let one_pass = stats::mean(&band) + 4.0 * stats::std_dev(&band);
        assert!(mags[50] < one_pass && mags[40] > one_pass);
        assert_eq!(outlier_components(&mags, 10), vec![40, 50]);
    }

    #[test]
    fn outlier_peeling_unmasks_comparable_peaks() {
        // four peaks of similar size inflate the whole-band spread enough
        // that a single mean + 4 sd line clears all of them; peeling from
        // the top recovers each one against the band below it
        let mut rng = crate::rng::seeded(3);
        let mut mags: Vec<f64> =
            (0..51).map(|_| 0.5 + 0.2 * crate::rng::uniform01(&mut rng)).collect();
        mags[10] = 8.3;
        mags[20] = 7.2;
        mags[40] = 5.9;
        mags[50] = 8.1;
        let band: Vec<f64> = mags[10..].to_vec();
        let one_pass = stats::mean(&band) + 4.0 * stats::std_dev(&band);
        assert!(mags[10] < one_pass);
        assert_eq!(outlier_components(&mags, 10), vec![10, 20, 40, 50]);
    }

    #[test]
    fn outlier_peeling_ignores_smooth_tail() {
        // a geometric decay has no discrete spikes: the largest point never
        // separates from the points just under it
        let mags: Vec<f64> = (0..51)
            .map(|k| if k < 10 { 0.0 } else { 1.0 + 20.0 * 0.9f64.powi(k - 10) })
            .collect();
        assert!(outlier_components(&mags, 10).is_empty());
    }

    #[test]
    fn outlier_peeling_flags_nothing_on_flat_noise() {
        // bounded noise keeps every point within 4 sd of the band mean
        for seed in 0..10 {
            let mut rng = crate::rng::seeded(seed);
            let mags: Vec<f64> =
                (0..51).map(|_| 5.0 + crate::rng::uniform01(&mut rng)).collect();
            assert!(outlier_components(&mags, 10).is_empty(), "seed {seed}");
        }
    }

    #[test]
    fn outlier_peeling_handles_degenerate_bands() {
        assert!(outlier_components(&[1.0, 2.0], 1).is_empty());
        assert!(outlier_components(&[1.0; 51], 49).is_empty());
        assert!(outlier_components(&[1.0; 51], 0).is_empty());
        assert!(outlier_components(&[1.0; 51], 60).is_empty());
    }

    #[test]
    fn spectrum_csv_shape() {
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, 5, &[1.0, 0.5, 0.25]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("component_k,period,magnitude"));
        assert_eq!(lines.next(), Some("0,inf,1"));
        assert_eq!(lines.next(), Some("1,4,0.5"));
        assert_eq!(lines.next(), Some("2,2,0.25"));
    }
}
