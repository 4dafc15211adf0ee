//! Cosine similarity, bias directions and projection-based direct bias.
//!
//! Inputs may be `f32` (embedding rows) or `f64`; all arithmetic is done in
//! `f64`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no input vectors")]
    Empty,
    #[error("all difference vectors are zero")]
    AllZeroDifferences,
    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("strictness exponent must be positive, got {0}")]
    InvalidExponent(f64),
}

const POWER_TOLERANCE: f64 = 1e-10;
const POWER_MAX_ITER: usize = 1000;
/// Relative eigengap below which the top direction is reported as degenerate.
const TIE_TOLERANCE: f64 = 1e-9;

fn dot<T: Copy + Into<f64>, U: Copy + Into<f64>>(a: &[T], b: &[U]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.into() * y.into()).sum()
}

fn norm<T: Copy + Into<f64>>(a: &[T]) -> f64 {
    a.iter().map(|&x| x.into() * x.into()).sum::<f64>().sqrt()
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity<T, U>(a: &[T], b: &[U]) -> Result<f64, GeometryError>
where
    T: Copy + Into<f64>,
    U: Copy + Into<f64>,
{
    if a.len() != b.len() {
        return Err(GeometryError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(GeometryError::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 - cosine_similarity(a, b)`, in `[0, 2]`.
pub fn cosine_distance<T, U>(a: &[T], b: &[U]) -> Result<f64, GeometryError>
where
    T: Copy + Into<f64>,
    U: Copy + Into<f64>,
{
    cosine_similarity(a, b).map(|s| 1.0 - s)
}

/// A unit-norm vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    unit: Vec<f64>,
}

impl Direction {
    pub fn new<T: Copy + Into<f64>>(v: &[T]) -> Result<Self, GeometryError> {
        let n = norm(v);
        if v.is_empty() {
            return Err(GeometryError::Empty);
        }
        if n == 0.0 {
            return Err(GeometryError::ZeroNorm);
        }
        Ok(Self {
            unit: v.iter().map(|&x| x.into() / n).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.unit
    }

    pub fn dim(&self) -> usize {
        self.unit.len()
    }
}

/// Output of [`principal_direction`].
#[derive(Debug, Clone)]
pub struct PrincipalDirection {
    pub direction: Direction,
    /// Top eigenvalue of `DᵀD`.
    pub eigenvalue: f64,
    /// Estimate of the second eigenvalue (0 for a rank-one input).
    pub second_eigenvalue: f64,
    /// The top eigenvalue is (numerically) repeated, so the direction is one
    /// arbitrary member of the top eigenspace.
    pub degenerate: bool,
    pub iterations: usize,
}

/// Applies `DᵀD` to `v` without forming the Gram matrix.
fn gram_apply(diffs: &[Vec<f64>], v: &[f64], deflate: Option<(&[f64], f64)>) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for d in diffs {
        let p = dot(d, v);
        for (o, x) in out.iter_mut().zip(d) {
            *o += p * x;
        }
    }
    if let Some((u, lambda)) = deflate {
        let p = dot(u, v);
        for (o, x) in out.iter_mut().zip(u) {
            *o -= lambda * p * x;
        }
    }
    out
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Angle between two unit vectors, ignoring sign.
fn angular_change(a: &[f64], b: &[f64]) -> f64 {
    let c = dot(a, b).abs().min(1.0);
    // acos is ill-conditioned near 1; use the chord length instead
    let chord: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y * dot(a, b).signum();
            d * d
        })
        .sum::<f64>()
        .sqrt();
    if c > 0.99 {
        2.0 * (chord / 2.0).asin()
    } else {
        c.acos()
    }
}

struct PowerResult {
    vector: Vec<f64>,
    eigenvalue: f64,
    iterations: usize,
    converged: bool,
}

fn power_iterate(diffs: &[Vec<f64>], start: Vec<f64>, deflate: Option<(&[f64], f64)>) -> PowerResult {
    let mut v = start;
    normalize(&mut v);
    for it in 1..=POWER_MAX_ITER {
        let mut next = gram_apply(diffs, &v, deflate);
        if normalize(&mut next) == 0.0 {
            return PowerResult {
                vector: v,
                eigenvalue: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let change = angular_change(&v, &next);
        v = next;
        if change < POWER_TOLERANCE {
            let eigenvalue = dot(&v, &gram_apply(diffs, &v, deflate));
            return PowerResult {
                vector: v,
                eigenvalue,
                iterations: it,
                converged: true,
            };
        }
    }
    let eigenvalue = dot(&v, &gram_apply(diffs, &v, deflate));
    PowerResult {
        vector: v,
        eigenvalue,
        iterations: POWER_MAX_ITER,
        converged: false,
    }
}

/// Dominant eigenvector of `DᵀD`, where the rows of `D` are the uncentered
/// pair differences `first - second`.
///
/// Power iteration starts from `(1, …, 1)/√dim`. The sign is fixed so that
/// the first nonzero coordinate is positive.
pub fn principal_direction<T>(pairs: &[(&[T], &[T])]) -> Result<PrincipalDirection, GeometryError>
where
    T: Copy + Into<f64>,
{
    let Some((first, _)) = pairs.first() else {
        return Err(GeometryError::Empty);
    };
    let dim = first.len();
    let mut diffs = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        for v in [a, b] {
            if v.len() != dim {
                return Err(GeometryError::LengthMismatch {
                    left: dim,
                    right: v.len(),
                });
            }
        }
        diffs.push(
            a.iter()
                .zip(b.iter())
                .map(|(&x, &y)| x.into() - y.into())
                .collect::<Vec<f64>>(),
        );
    }
    if diffs.iter().all(|d| d.iter().all(|&x| x == 0.0)) {
        return Err(GeometryError::AllZeroDifferences);
    }

    let start = vec![1.0; dim];
    let mut top = power_iterate(&diffs, start, None);
    if top.eigenvalue == 0.0 {
        // start vector orthogonal to every difference; restart from the
        // first nonzero difference
        let seed = diffs.iter().find(|d| d.iter().any(|&x| x != 0.0)).unwrap().clone();
        top = power_iterate(&diffs, seed, None);
    }
    if !top.converged {
        return Err(GeometryError::NoConvergence {
            iterations: top.iterations,
        });
    }

    // second eigenvalue via deflation, from a start vector unrelated to the first
    let second = if dim > 1 {
        let mut start: Vec<f64> = (1..=dim)
            .map(|i| (i as f64).sqrt() * if i % 2 == 0 { -1.0 } else { 1.0 })
            .collect();
        let p = dot(&start, &top.vector);
        start.iter_mut().zip(&top.vector).for_each(|(s, u)| *s -= p * u);
        power_iterate(&diffs, start, Some((&top.vector, top.eigenvalue)))
            .eigenvalue
            .max(0.0)
    } else {
        0.0
    };

    let mut unit = top.vector;
    if let Some(first_nz) = unit.iter().find(|x| x.abs() > 1e-12) {
        if *first_nz < 0.0 {
            unit.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let degenerate = (top.eigenvalue - second) <= TIE_TOLERANCE * top.eigenvalue;
    Ok(PrincipalDirection {
        direction: Direction { unit },
        eigenvalue: top.eigenvalue,
        second_eigenvalue: second,
        degenerate,
        iterations: top.iterations,
    })
}

/// Mean of `|cos(w, dir)|^c` over `words`.
pub fn direct_bias<T>(words: &[&[T]], dir: &Direction, c: f64) -> Result<f64, GeometryError>
where
    T: Copy + Into<f64>,
{
    if words.is_empty() {
        return Err(GeometryError::Empty);
    }
    if !(c > 0.0) {
        return Err(GeometryError::InvalidExponent(c));
    }
    let mut total = 0.0;
    for w in words {
        total += cosine_similarity(w, dir.as_slice())?.abs().powf(c);
    }
    Ok(total / words.len() as f64)
}
