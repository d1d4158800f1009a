//! Empirical probability measures over R^d and Wasserstein-2 distances between them.
//!
//! Three exact-or-bounding routes are provided for W2 between equal-size clouds:
//!
//! - [`w2_sorted_1d`]: order statistics, exact in one dimension;
//! - [`w2_matched`]: index-matched coupling, an upper bound in any dimension;
//! - [`w2_assignment`]: exact optimal coupling via a dense assignment solve (small M only).
//!
//! [`wq_pow_quantile_1d`] evaluates W_q^q between 1-D clouds of different sizes
//! through their quantile functions; it backs the i.i.d. rate probe.

pub mod assignment;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TemError};

/// Upper bound on M for the O(M^3) assignment oracle.
pub const ASSIGNMENT_MAX_POINTS: usize = 512;

/// Uniformly weighted point cloud `(1/M) sum_i delta_{x_i}` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    data: Vec<f64>,
}

/// Summary statistics through which model coefficients see the measure.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureStats {
    pub mean: Vec<f64>,
    pub second_moment: f64,
}

impl MeasureStats {
    /// Statistics of the Dirac mass at `x`.
    pub fn dirac(x: &[f64]) -> Self {
        MeasureStats {
            mean: x.to_vec(),
            second_moment: norm_sq(x),
        }
    }

    /// Statistics of a flat row-major state buffer, summed in index order.
    pub fn from_states(states: &[f64], dim: usize) -> Self {
        let count = states.len() / dim;
        let mut mean = vec![0.0; dim];
        let mut second = 0.0;
        for row in states.chunks_exact(dim) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
            second += norm_sq(row);
        }
        let inv = 1.0 / count as f64;
        for m in &mut mean {
            *m *= inv;
        }
        MeasureStats {
            mean,
            second_moment: second * inv,
        }
    }
}

impl EmpiricalMeasure {
    /// Builds a measure from a flat row-major buffer of `dim`-vectors.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(TemError::Domain("dimension must be positive".into()));
        }
        if data.is_empty() {
            return Err(TemError::Domain(
                "empirical measure needs at least one point".into(),
            ));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(TemError::Domain(format!(
                "buffer of length {} is not a whole number of {dim}-vectors",
                data.len()
            )));
        }
        Ok(EmpiricalMeasure { dim, data })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| TemError::Domain("empirical measure needs at least one point".into()))?;
        if points.iter().any(|p| p.len() != dim) {
            return Err(TemError::Domain(
                "all points must share one dimension".into(),
            ));
        }
        Self::from_flat(dim, points.concat())
    }

    /// One-dimensional cloud.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_flat(1, values.to_vec())
    }

    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::from_flat(x.len(), x.to_vec())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn stats(&self) -> MeasureStats {
        MeasureStats::from_states(&self.data, self.dim)
    }

    /// Writes one row per particle, one column per coordinate, under an `x0,x1,..` header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((0..self.dim).map(|c| format!("x{c}")))?;
        for p in self.points() {
            w.write_record(p.iter().map(|v| format_float(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a point cloud; a non-numeric first row is treated as a header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut dim = 0;
        let mut data = Vec::new();
        for (row_idx, record) in r.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> =
                record.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(row) => {
                    if dim == 0 {
                        dim = row.len();
                    } else if row.len() != dim {
                        return Err(TemError::Domain(format!(
                            "row {row_idx} has {} columns, expected {dim}",
                            row.len()
                        )));
                    }
                    data.extend(row);
                }
                Err(_) if row_idx == 0 => continue,
                Err(e) => {
                    return Err(TemError::Domain(format!("row {row_idx}: {e}")));
                }
            }
        }
        Self::from_flat(dim.max(1), data)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Method used to evaluate a W2 distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2Method {
    Sorted1d,
    Matched,
    Assignment,
}

impl W2Method {
    pub fn as_str(self) -> &'static str {
        match self {
            W2Method::Sorted1d => "sorted_1d",
            W2Method::Matched => "matched",
            W2Method::Assignment => "assignment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Result {
    pub value: f64,
    pub method: W2Method,
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Shortest round-tripping decimal representation, used for every CSV float.
pub(crate) fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// `(1/M) sum_i |x_i|^q`.
pub fn moment(mu: &EmpiricalMeasure, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(TemError::Domain(format!(
            "moment order must be positive, got {q}"
        )));
    }
    if mu.is_empty() {
        return Err(TemError::Domain("moment of an empty measure".into()));
    }
    let sum: f64 = if q == 2.0 {
        mu.points().map(norm_sq).sum()
    } else {
        mu.points().map(|p| norm_sq(p).sqrt().powf(q)).sum()
    };
    Ok(sum / mu.len() as f64)
}

/// `W2(mu, delta_{x0}) = sqrt((1/M) sum_i |x_i - x0|^2)`; the only coupling is the product.
pub fn w2_to_dirac(mu: &EmpiricalMeasure, x0: &[f64]) -> Result<f64> {
    if x0.len() != mu.dim() {
        return Err(TemError::Domain(format!(
            "dirac point has dimension {}, measure has {}",
            x0.len(),
            mu.dim()
        )));
    }
    let sum: f64 = mu.points().map(|p| dist_sq(p, x0)).sum();
    Ok((sum / mu.len() as f64).sqrt())
}

fn check_equal_shape(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(TemError::Domain(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.len() != b.len() {
        return Err(TemError::Domain(format!(
            "point count mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Exact W2 in one dimension: pair the order statistics.
pub fn w2_sorted_1d(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<W2Result> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(TemError::Unsupported("sorted_1d requires d = 1".into()));
    }
    if a.len() != b.len() {
        return Err(TemError::Unsupported(
            "sorted_1d requires equal point counts".into(),
        ));
    }
    let xs = sorted_copy(a.as_flat());
    let ys = sorted_copy(b.as_flat());
    Ok(W2Result {
        value: w2_presorted_1d(&xs, &ys),
        method: W2Method::Sorted1d,
    })
}

/// W2 between two already-sorted equal-size 1-D samples.
pub fn w2_presorted_1d(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let sum: f64 = xs.iter().zip(ys).map(|(x, y)| (x - y) * (x - y)).sum();
    (sum / xs.len() as f64).sqrt()
}

pub(crate) fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Index-matched coupling bound `sqrt((1/M) sum_i |a_i - b_i|^2) >= W2(a, b)`.
pub fn w2_matched(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<W2Result> {
    check_equal_shape(a, b)?;
    let sum: f64 = a.points().zip(b.points()).map(|(x, y)| dist_sq(x, y)).sum();
    Ok(W2Result {
        value: (sum / a.len() as f64).sqrt(),
        method: W2Method::Matched,
    })
}

/// Exact W2 from the optimal assignment under squared-distance cost. Limited to
/// [`ASSIGNMENT_MAX_POINTS`] points.
pub fn w2_assignment(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<W2Result> {
    if a.dim() != b.dim() || a.len() != b.len() {
        return Err(TemError::Unsupported(
            "assignment requires equal point counts and dimensions".into(),
        ));
    }
    let n = a.len();
    if n > ASSIGNMENT_MAX_POINTS {
        return Err(TemError::Unsupported(format!(
            "assignment limited to {ASSIGNMENT_MAX_POINTS} points, got {n}"
        )));
    }
    // Solve in a canonical orientation so that dist(a, b) and dist(b, a) agree bit for bit.
    let (rows, cols) = if lexicographic_le(a.as_flat(), b.as_flat()) {
        (a, b)
    } else {
        (b, a)
    };
    let mut cost = Vec::with_capacity(n * n);
    for x in rows.points() {
        for y in cols.points() {
            cost.push(dist_sq(x, y));
        }
    }
    let col_of_row = assignment::min_cost_assignment(&cost, n);
    let sum: f64 = col_of_row
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok(W2Result {
        value: (sum.max(0.0) / n as f64).sqrt(),
        method: W2Method::Assignment,
    })
}

fn lexicographic_le(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    true
}

/// Default distance for equal-size clouds: exact in 1-D, matched-coupling bound otherwise.
pub fn w2_default(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<W2Result> {
    if a.dim() == 1 && b.dim() == 1 {
        w2_sorted_1d(a, b)
    } else {
        w2_matched(a, b)
    }
}

/// `W_q^q` between two sorted 1-D samples of possibly different sizes:
/// `int_0^1 |F^{-1}(u) - G^{-1}(u)|^q du`, evaluated exactly on the merged
/// quantile breakpoints.
pub fn wq_pow_quantile_1d(xs: &[f64], ys: &[f64], q: f64) -> f64 {
    let n = xs.len() as u64;
    let m = ys.len() as u64;
    assert!(n > 0 && m > 0, "quantile distance of an empty sample");
    debug_assert!(xs.windows(2).all(|w| w[0] <= w[1]));
    debug_assert!(ys.windows(2).all(|w| w[0] <= w[1]));
    // Breakpoints on the integer grid scaled by n*m: x-atom i ends at (i+1)*m, y-atom j at (j+1)*n.
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0u64;
    let mut acc = 0.0;
    let total = n * m;
    while pos < total {
        let x_end = (i as u64 + 1) * m;
        let y_end = (j as u64 + 1) * n;
        let next = x_end.min(y_end);
        let diff = (xs[i] - ys[j]).abs();
        let term = if q == 2.0 { diff * diff } else { diff.powf(q) };
        acc += term * (next - pos) as f64;
        pos = next;
        if x_end == next {
            i += 1;
        }
        if y_end == next {
            j += 1;
        }
    }
    acc / total as f64
}

/// Writes a W2 table under the header `m,method,value`.
pub fn write_w2_table<W: Write>(writer: W, rows: &[(usize, W2Result)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["m", "method", "value"])?;
    for (m, r) in rows {
        w.write_record([
            m.to_string(),
            r.method.as_str().to_string(),
            format_float(r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(v: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_scalars(v).unwrap()
    }

    #[test]
    fn moment_examples() {
        assert_eq!(moment(&cloud(&[1.0, -1.0]), 2.0).unwrap(), 1.0);
        assert_eq!(moment(&cloud(&[3.0]), 2.0).unwrap(), 9.0);
        for q in [0.5, 1.0, 2.0, 3.7] {
            assert_eq!(moment(&cloud(&[0.0, 0.0, 0.0]), q).unwrap(), 0.0);
        }
        assert!(matches!(
            moment(&cloud(&[1.0]), 0.0),
            Err(TemError::Domain(_))
        ));
    }

    #[test]
    fn empty_measure_rejected() {
        assert!(matches!(
            EmpiricalMeasure::from_scalars(&[]),
            Err(TemError::Domain(_))
        ));
        assert!(EmpiricalMeasure::from_points(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn w2_to_dirac_examples() {
        assert_eq!(w2_to_dirac(&cloud(&[1.0, -1.0]), &[0.0]).unwrap(), 1.0);
        assert_eq!(w2_to_dirac(&cloud(&[2.5, 2.5, 2.5]), &[2.5]).unwrap(), 0.0);
        assert_eq!(w2_to_dirac(&cloud(&[0.0, 2.0]), &[1.0]).unwrap(), 1.0);
        assert!(matches!(
            w2_to_dirac(&cloud(&[0.0]), &[0.0, 1.0]),
            Err(TemError::Domain(_))
        ));
    }

    #[test]
    fn sorted_examples() {
        let a = cloud(&[0.3, -1.2, 4.0]);
        assert_eq!(w2_sorted_1d(&a, &a).unwrap().value, 0.0);
        assert_eq!(
            w2_sorted_1d(&cloud(&[0.0, 0.0]), &cloud(&[1.0, 1.0]))
                .unwrap()
                .value,
            1.0
        );
        assert!(matches!(
            w2_sorted_1d(&cloud(&[0.0]), &cloud(&[0.0, 1.0])),
            Err(TemError::Unsupported(_))
        ));
        let two_d = EmpiricalMeasure::from_points(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            w2_sorted_1d(&two_d, &two_d),
            Err(TemError::Unsupported(_))
        ));
    }

    #[test]
    fn matched_depends_on_coupling() {
        let a = cloud(&[0.0, 1.0]);
        let b = cloud(&[1.0, 0.0]);
        assert_eq!(w2_matched(&a, &b).unwrap().value, 1.0);
        assert_eq!(w2_sorted_1d(&a, &b).unwrap().value, 0.0);
        assert_eq!(w2_matched(&a, &a).unwrap().value, 0.0);
        assert!(matches!(
            w2_matched(&a, &cloud(&[1.0])),
            Err(TemError::Domain(_))
        ));
    }

    #[test]
    fn assignment_examples() {
        let b = cloud(&[3.0, -1.0, 2.0, 0.5]);
        let a = cloud(&[0.5, 2.0, 3.0, -1.0]);
        assert_eq!(w2_assignment(&a, &b).unwrap().value, 0.0);
        let a2 = EmpiricalMeasure::from_points(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let b2 = EmpiricalMeasure::from_points(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(w2_assignment(&a2, &b2).unwrap().value, 0.0);
        let big = cloud(&vec![0.0; ASSIGNMENT_MAX_POINTS + 1]);
        assert!(matches!(
            w2_assignment(&big, &big),
            Err(TemError::Unsupported(_))
        ));
    }

    #[test]
    fn sorted_matches_permutation_brute_force() {
        // Minimum over all 6! pairings, independent of the sorting route.
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for pos in 0..n {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let a: [f64; 6] = [0.83, -1.7, 2.2, 0.01, -0.4, 1.5];
        let b = [1.1, 0.9, -2.3, 0.6, -0.05, 3.3];
        let best = permutations(6)
            .iter()
            .map(|s| {
                let sum: f64 = (0..6).map(|i| (a[i] - b[s[i]]).powi(2)).sum();
                (sum / 6.0).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        let got = w2_sorted_1d(&cloud(&a), &cloud(&b)).unwrap().value;
        assert!((got - best).abs() <= 1e-12 * best);
    }

    #[test]
    fn quantile_distance_equal_sizes_matches_sorted() {
        let a = sorted_copy(&[0.5, -0.2, 1.7, 3.0]);
        let b = sorted_copy(&[1.0, 0.0, -1.0, 2.0]);
        let w2 = w2_presorted_1d(&a, &b);
        assert!((wq_pow_quantile_1d(&a, &b, 2.0) - w2 * w2).abs() < 1e-14);
    }

    #[test]
    fn quantile_distance_unequal_sizes() {
        // a = {0, 1}: quantile 0 on [0,1/2), 1 on [1/2,1). b = {0, 0, 3}: 0 on [0,2/3), 3 after.
        // |diff|^2: [0,1/2) -> 0, [1/2,2/3) -> 1, [2/3,1) -> 4.  Total 1/6 + 4/3 = 1.5.
        let got = wq_pow_quantile_1d(&[0.0, 1.0], &[0.0, 0.0, 3.0], 2.0);
        assert!((got - 1.5).abs() < 1e-15);
        // Single atom against itself.
        assert_eq!(wq_pow_quantile_1d(&[2.0], &[2.0, 2.0, 2.0], 2.0), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let mu = EmpiricalMeasure::from_points(&[vec![0.1, -2.0], vec![1e-300, 7.5]]).unwrap();
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1\n"));
        assert_eq!(EmpiricalMeasure::read_csv(&buf[..]).unwrap(), mu);
    }

    #[test]
    fn w2_table_header() {
        let mut buf = Vec::new();
        write_w2_table(
            &mut buf,
            &[(
                4,
                W2Result {
                    value: 0.5,
                    method: W2Method::Sorted1d,
                },
            )],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "m,method,value\n4,sorted_1d,0.5\n"
        );
    }
}
