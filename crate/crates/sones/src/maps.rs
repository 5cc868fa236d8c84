//! Exact multivariable polynomial maps and their derivatives.
//!
//! Maps are stored as canonical term lists (graded lexicographic order on
//! exponent multi-indices, duplicates merged). Differentiation is symbolic and
//! exact, so the modules downstream can treat gradients, Hessians and the
//! third-derivative tensor as ground truth. A central finite-difference
//! routine is provided as an independent cross-check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SonesError};

/// A static map `y = h(theta)` given as an exact multivariable polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialMap {
    dim: usize,
    terms: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq)]
struct Term {
    exps: Vec<u32>,
    coeff: f64,
}

/// Graded lexicographic order: total degree first, then lexicographic.
fn grlex(a: &[u32], b: &[u32]) -> std::cmp::Ordering {
    let da: u32 = a.iter().sum();
    let db: u32 = b.iter().sum();
    da.cmp(&db).then_with(|| a.cmp(b))
}

impl PolynomialMap {
    pub fn new(dim: usize, terms: Vec<(Vec<u32>, f64)>) -> Result<Self> {
        for (exps, _) in &terms {
            if exps.len() != dim {
                return Err(SonesError::DimensionMismatch {
                    expected: dim,
                    got: exps.len(),
                });
            }
        }
        let mut terms: Vec<Term> = terms
            .into_iter()
            .map(|(exps, coeff)| Term { exps, coeff })
            .collect();
        terms.sort_by(|a, b| grlex(&a.exps, &b.exps));
        // merge duplicate multi-indices
        let mut merged: Vec<Term> = Vec::with_capacity(terms.len());
        for t in terms {
            match merged.last_mut() {
                Some(last) if last.exps == t.exps => last.coeff += t.coeff,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coeff != 0.0);
        Ok(Self { dim, terms: merged })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, vec![(vec![0; dim], c)]).expect("constant term is well formed")
    }

    /// The monomial `theta_i`.
    pub fn variable(dim: usize, i: usize) -> Self {
        assert!(i < dim, "variable index out of range");
        let mut exps = vec![0; dim];
        exps[i] = 1;
        Self { dim, terms: vec![Term { exps, coeff: 1.0 }] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.exps.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|t| (t.exps.as_slice(), t.coeff))
    }

    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim {
            return Err(SonesError::DimensionMismatch {
                expected: self.dim,
                got: theta.len(),
            });
        }
        let mut acc = 0.0;
        for t in &self.terms {
            let mut v = t.coeff;
            for (x, &e) in theta.iter().zip(&t.exps) {
                if e > 0 {
                    v *= x.powi(e as i32);
                }
            }
            acc += v;
        }
        Ok(acc)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(SonesError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let terms = self
            .terms()
            .chain(other.terms())
            .map(|(e, c)| (e.to_vec(), c))
            .collect();
        Self::new(self.dim, terms)
    }

    pub fn scale(&self, s: f64) -> Self {
        let terms = self.terms.iter().map(|t| Term { exps: t.exps.clone(), coeff: t.coeff * s });
        Self { dim: self.dim, terms: terms.collect() }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(SonesError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let exps: Vec<u32> = a.exps.iter().zip(&b.exps).map(|(x, y)| x + y).collect();
                terms.push((exps, a.coeff * b.coeff));
            }
        }
        Self::new(self.dim, terms)
    }

    pub fn powi(&self, n: u32) -> Self {
        let mut acc = Self::constant(self.dim, 1.0);
        for _ in 0..n {
            acc = acc.mul(self).expect("same dimension");
        }
        acc
    }

    /// Exact partial derivative with respect to `theta_i`.
    pub fn partial_one(&self, i: usize) -> Result<Self> {
        if i >= self.dim {
            return Err(SonesError::InvalidArgument(format!(
                "derivative index {i} out of range for dimension {}",
                self.dim
            )));
        }
        let mut terms = Vec::new();
        for t in &self.terms {
            if t.exps[i] > 0 {
                let mut exps = t.exps.clone();
                let e = exps[i];
                exps[i] = e - 1;
                terms.push((exps, t.coeff * e as f64));
            }
        }
        Self::new(self.dim, terms)
    }

    /// Exact mixed partial derivative of order `alpha` (one entry per axis).
    pub fn partial(&self, alpha: &[u32]) -> Result<Self> {
        if alpha.len() != self.dim {
            return Err(SonesError::DimensionMismatch {
                expected: self.dim,
                got: alpha.len(),
            });
        }
        let mut out = self.clone();
        for (i, &k) in alpha.iter().enumerate() {
            for _ in 0..k {
                out = out.partial_one(i)?;
            }
        }
        Ok(out)
    }

    /// Gradient, Hessian and third-derivative tensor at `theta`, all exact.
    pub fn derivative_bundle(&self, theta: &[f64]) -> Result<DerivativeBundle> {
        if theta.len() != self.dim {
            return Err(SonesError::DimensionMismatch {
                expected: self.dim,
                got: theta.len(),
            });
        }
        let p = self.dim;
        let mut gradient = DVector::zeros(p);
        let mut hessian = DMatrix::zeros(p, p);
        let mut third = SymmetricTensor3::zeros(p);
        let firsts: Vec<PolynomialMap> =
            (0..p).map(|i| self.partial_one(i)).collect::<Result<_>>()?;
        for i in 0..p {
            gradient[i] = firsts[i].eval(theta)?;
            for j in i..p {
                let dij = firsts[i].partial_one(j)?;
                let v = dij.eval(theta)?;
                hessian[(i, j)] = v;
                hessian[(j, i)] = v;
                for k in j..p {
                    let v3 = dij.partial_one(k)?.eval(theta)?;
                    third.set_sym(i, j, k, v3);
                }
            }
        }
        Ok(DerivativeBundle { gradient, hessian, third })
    }

    /// The recentered map `q -> h(theta_star + q) - h(theta_star)`.
    pub fn recentered(&self, theta_star: &[f64]) -> Result<Self> {
        if theta_star.len() != self.dim {
            return Err(SonesError::DimensionMismatch {
                expected: self.dim,
                got: theta_star.len(),
            });
        }
        let mut shifted = Self::zero(self.dim);
        for t in &self.terms {
            let mut term_poly = Self::constant(self.dim, t.coeff);
            for (i, &e) in t.exps.iter().enumerate() {
                if e > 0 {
                    let factor = Self::variable(self.dim, i)
                        .add(&Self::constant(self.dim, theta_star[i]))?;
                    term_poly = term_poly.mul(&factor.powi(e))?;
                }
            }
            shifted = shifted.add(&term_poly)?;
        }
        let offset = self.eval(theta_star)?;
        shifted.add(&Self::constant(self.dim, -offset))
    }
}

/// Gradient, Hessian and symmetric third-derivative tensor at a point.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub third: SymmetricTensor3,
}

impl DerivativeBundle {
    /// Column `m` of the Hessian (gradient of `G_m`).
    pub fn hessian_column(&self, m: usize) -> DVector<f64> {
        self.hessian.column(m).into_owned()
    }

    /// The slice `T[.,.,m]` of the third-derivative tensor.
    pub fn third_slice(&self, m: usize) -> DMatrix<f64> {
        self.third.slice(m)
    }
}

/// Dense order-3 tensor, kept symmetric under all index permutations.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricTensor3 {
    p: usize,
    data: Vec<f64>,
}

impl SymmetricTensor3 {
    pub fn zeros(p: usize) -> Self {
        Self { p, data: vec![0.0; p * p * p] }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.p + j) * self.p + k]
    }

    /// Writes all six permutations of (i, j, k).
    fn set_sym(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let p = self.p;
        for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
            self.data[(a * p + b) * p + c] = v;
        }
    }

    pub fn slice(&self, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.p, |i, j| self.get(m, i, j))
    }
}

/// Anything the estimators and loops can probe: a scalar map of `p` inputs.
pub trait StaticMap: Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> f64;
}

impl StaticMap for PolynomialMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.eval(theta).expect("dimension checked by caller")
    }
}

/// Adapter turning an arbitrary closure into a [`StaticMap`].
pub struct MapFn<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> MapFn<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> StaticMap for MapFn<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: &[f64]) -> f64 {
        (self.f)(theta)
    }
}

/// Central finite-difference approximation of the mixed partial `alpha`,
/// with O(h^2) error. Independent of the symbolic path.
pub fn fd_partial<M: StaticMap + ?Sized>(
    map: &M,
    theta: &[f64],
    alpha: &[u32],
    h: f64,
) -> Result<f64> {
    if theta.len() != map.dim() || alpha.len() != map.dim() {
        return Err(SonesError::DimensionMismatch {
            expected: map.dim(),
            got: theta.len().max(alpha.len()),
        });
    }
    if h <= 0.0 {
        return Err(SonesError::InvalidArgument("step must be positive".into()));
    }
    let order: u32 = alpha.iter().sum();
    if order > 3 {
        return Err(SonesError::InvalidArgument(
            "finite differences supported up to order 3".into(),
        ));
    }
    Ok(fd_recurse(map, theta, alpha, h))
}

fn fd_recurse<M: StaticMap + ?Sized>(map: &M, theta: &[f64], alpha: &[u32], h: f64) -> f64 {
    match alpha.iter().position(|&a| a > 0) {
        None => map.value(theta),
        Some(i) => {
            let mut reduced = alpha.to_vec();
            reduced[i] -= 1;
            let mut plus = theta.to_vec();
            plus[i] += h;
            let mut minus = theta.to_vec();
            minus[i] -= h;
            (fd_recurse(map, &plus, &reduced, h) - fd_recurse(map, &minus, &reduced, h)) / (2.0 * h)
        }
    }
}

/// The cubic example map with a directional inflection point at `theta_star`:
///
/// `h = 1 + x - y + (3/2) y^2 - (1/6)(2x^3 + 3x^2 y + 12x y^2 + y^3)`
///
/// with `x = theta_1 - theta_star_1`, `y = theta_2 - theta_star_2`.
pub fn paper_example_map(theta_star: &[f64]) -> Result<PolynomialMap> {
    if theta_star.len() != 2 {
        return Err(SonesError::DimensionMismatch { expected: 2, got: theta_star.len() });
    }
    let x = PolynomialMap::variable(2, 0).add(&PolynomialMap::constant(2, -theta_star[0]))?;
    let y = PolynomialMap::variable(2, 1).add(&PolynomialMap::constant(2, -theta_star[1]))?;
    let mut h = PolynomialMap::constant(2, 1.0);
    h = h.add(&x)?;
    h = h.add(&y.scale(-1.0))?;
    h = h.add(&y.powi(2).scale(1.5))?;
    let cubic = x
        .powi(3)
        .scale(2.0)
        .add(&x.powi(2).mul(&y)?.scale(3.0))?
        .add(&x.mul(&y.powi(2))?.scale(12.0))?
        .add(&y.powi(3))?;
    h.add(&cubic.scale(-1.0 / 6.0))
}
