//! Dither generation, demodulation signals and probing-frequency conditions.
//!
//! Frequencies are exact rationals. The condition set that guarantees the
//! demodulation cross-terms average to zero is a family of equality-avoidance
//! constraints; checking them in floating point would be meaningless, so the
//! validator works entirely in rational arithmetic.

use std::fmt;

use nalgebra::DMatrix;
use num_integer::Integer;
use num_rational::Ratio;

use crate::error::{Result, SonesError};

/// Exact probing frequency in rad/s.
pub type Rational = Ratio<i64>;

pub fn rational(num: i64, den: i64) -> Rational {
    Ratio::new(num, den)
}

/// Parse "500" or "3/7" into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let parse_int = |t: &str| {
        t.trim()
            .parse::<i64>()
            .map_err(|_| SonesError::InvalidArgument(format!("not a rational: {s:?}")))
    };
    match s.split_once('/') {
        None => Ok(Ratio::from_integer(parse_int(s)?)),
        Some((n, d)) => {
            let den = parse_int(d)?;
            if den == 0 {
                return Err(SonesError::InvalidArgument("zero denominator".into()));
            }
            Ok(Ratio::new(parse_int(n)?, den))
        }
    }
}

/// Dither amplitudes, exact frequencies and the target axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbingConfig {
    amplitudes: Vec<f64>,
    freqs: Vec<Rational>,
    freqs_f64: Vec<f64>,
    /// Target axis `m`, 0-based.
    axis: usize,
}

impl ProbingConfig {
    /// `axis` is 0-based; amplitudes and frequencies must be positive.
    pub fn new(amplitudes: Vec<f64>, freqs: Vec<Rational>, axis: usize) -> Result<Self> {
        if amplitudes.len() != freqs.len() {
            return Err(SonesError::DimensionMismatch {
                expected: amplitudes.len(),
                got: freqs.len(),
            });
        }
        if amplitudes.iter().any(|&a| !(a > 0.0)) {
            return Err(SonesError::InvalidArgument("amplitudes must be positive".into()));
        }
        if freqs.iter().any(|w| *w <= Ratio::from_integer(0)) {
            return Err(SonesError::InvalidArgument("frequencies must be positive".into()));
        }
        if axis >= freqs.len() {
            return Err(SonesError::InvalidArgument(format!(
                "axis {axis} out of range for dimension {}",
                freqs.len()
            )));
        }
        let freqs_f64 = freqs.iter().map(ratio_to_f64).collect();
        Ok(Self { amplitudes, freqs, freqs_f64, axis })
    }

    pub fn dim(&self) -> usize {
        self.freqs.len()
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn frequencies(&self) -> &[Rational] {
        &self.freqs
    }

    pub fn omega(&self, i: usize) -> f64 {
        self.freqs_f64[i]
    }

    pub fn max_omega(&self) -> f64 {
        self.freqs_f64.iter().cloned().fold(0.0, f64::max)
    }

    /// `S_i(t) = a_i sin(omega_i t)`.
    pub fn dither(&self, t: f64) -> Vec<f64> {
        self.amplitudes
            .iter()
            .zip(&self.freqs_f64)
            .map(|(&a, &w)| a * (w * t).sin())
            .collect()
    }

    pub fn dither_into(&self, t: f64, out: &mut [f64]) {
        for ((o, &a), &w) in out.iter_mut().zip(&self.amplitudes).zip(&self.freqs_f64) {
            *o = a * (w * t).sin();
        }
    }

    /// Entry (i, j) of the Hessian demodulation matrix `N(t)`.
    pub fn demod_n_entry(&self, i: usize, j: usize, t: f64) -> f64 {
        let (ai, aj) = (self.amplitudes[i], self.amplitudes[j]);
        let (wi, wj) = (self.freqs_f64[i], self.freqs_f64[j]);
        if i == j {
            -8.0 / (ai * ai) * (2.0 * wi * t).cos()
        } else {
            -4.0 / (ai * aj) * ((wi + wj) * t).cos()
        }
    }

    /// Column `m` of `N(t)`: the demodulation vector for the Hessian column.
    pub fn demod_n_vector(&self, t: f64) -> Vec<f64> {
        (0..self.dim()).map(|i| self.demod_n_entry(i, self.axis, t)).collect()
    }

    /// Entry (i, j, k) of the third-derivative demodulation tensor `P(t)`.
    /// Fully symmetric under index permutation: with exactly two equal
    /// indices the repeated one takes the squared amplitude.
    pub fn demod_p_entry(&self, i: usize, j: usize, k: usize, t: f64) -> f64 {
        let a = &self.amplitudes;
        let w = &self.freqs_f64;
        if i == j && j == k {
            -48.0 / (a[i] * a[i] * a[i]) * (3.0 * w[i] * t).sin()
        } else if i == j || i == k || j == k {
            let (rep, single) = if i == j {
                (i, k)
            } else if i == k {
                (i, j)
            } else {
                (j, i)
            };
            -16.0 / (a[rep] * a[rep] * a[single]) * ((2.0 * w[rep] + w[single]) * t).sin()
        } else {
            -8.0 / (a[i] * a[j] * a[k]) * ((w[i] + w[j] + w[k]) * t).sin()
        }
    }

    /// The slice `P_m(t)`: entry (i, j) is `P_{m,i,j}(t)`.
    pub fn demod_p_matrix(&self, t: f64) -> DMatrix<f64> {
        let p = self.dim();
        DMatrix::from_fn(p, p, |i, j| self.demod_p_entry(self.axis, i, j, t))
    }

    pub fn demod_p_matrix_into(&self, t: f64, out: &mut [f64]) {
        let p = self.dim();
        for i in 0..p {
            for j in i..p {
                let v = self.demod_p_entry(self.axis, i, j, t);
                out[i * p + j] = v;
                out[j * p + i] = v;
            }
        }
    }

    /// Common period of all dither and demodulation harmonics:
    /// `Pi = 2 pi * LCM{1/omega_i}`, computed exactly.
    pub fn averaging_period(&self) -> f64 {
        2.0 * std::f64::consts::PI * ratio_to_f64(&self.period_factor())
    }

    /// The exact rational `LCM{1/omega_i}` (the period divided by 2 pi).
    pub fn period_factor(&self) -> Rational {
        rational_lcm(self.freqs.iter().map(|w| Ratio::new(*w.denom(), *w.numer())))
    }

    pub fn validate(&self, level: ValidationLevel) -> Vec<FrequencyViolation> {
        validate_frequencies(&self.freqs, level)
    }
}

fn ratio_to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// LCM of a nonempty set of positive rationals: lcm of numerators over gcd of
/// denominators.
fn rational_lcm(rs: impl Iterator<Item = Rational>) -> Rational {
    let mut num = 1i64;
    let mut den = 0i64;
    for r in rs {
        num = num.lcm(r.numer());
        den = den.gcd(r.denom());
    }
    Ratio::new(num, den.max(1))
}

/// Which condition set to enforce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationLevel {
    /// The smaller set sufficient for Hessian estimation alone.
    HessianOnly,
    /// The full set required for joint second- and third-derivative
    /// estimation.
    Full,
}

/// One family of forbidden frequency relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionFamily {
    Equal,
    TwiceOther,
    ThriceOther,
    FiveTimesOther,
    SumOfTwo,
    SumOfThree,
    OnePlusDouble,
    OnePlusQuadruple,
    DoublePlusTriple,
    OnePlusTwoDoubles,
    SumOfTwoPlusTriple,
    SumOfThreePlusDouble,
    SumOfFive,
    HalfSumOfTwo,
    HalfOnePlusTriple,
    ThirdOnePlusDouble,
    ThirdSumOfThree,
    QuarterSumOfTwo,
    HalfSumPlusDouble,
    HalfSumOfFour,
    PairVsPair,
    PairVsOnePlusTriple,
    PairVsTwoDoubles,
    PairVsSumPlusDouble,
    PairVsSumOfFour,
    WeightedVsWeighted,
    WeightedVsSumOfThree,
    TripleVsTriple,
    SumOfTwoMinusOne,
}

impl ConditionFamily {
    pub fn formula(&self) -> &'static str {
        use ConditionFamily::*;
        match self {
            Equal => "omega_i = omega_j",
            TwiceOther => "omega_i = 2*omega_j",
            ThriceOther => "omega_i = 3*omega_j",
            FiveTimesOther => "omega_i = 5*omega_j",
            SumOfTwo => "omega_i = omega_j + omega_k",
            SumOfThree => "omega_i = omega_j + omega_k + omega_l",
            OnePlusDouble => "omega_i = omega_j + 2*omega_k",
            OnePlusQuadruple => "omega_i = omega_j + 4*omega_k",
            DoublePlusTriple => "omega_i = 2*omega_j + 3*omega_k",
            OnePlusTwoDoubles => "omega_i = omega_j + 2*omega_k + 2*omega_l",
            SumOfTwoPlusTriple => "omega_i = omega_j + omega_k + 3*omega_l",
            SumOfThreePlusDouble => "omega_i = omega_j + omega_k + omega_l + 2*omega_m",
            SumOfFive => "omega_i = omega_j + omega_k + omega_l + omega_m + omega_n",
            HalfSumOfTwo => "omega_i = (omega_j + omega_k)/2",
            HalfOnePlusTriple => "omega_i = (omega_j + 3*omega_k)/2",
            ThirdOnePlusDouble => "omega_i = (omega_j + 2*omega_k)/3",
            ThirdSumOfThree => "omega_i = (omega_j + omega_k + omega_l)/3",
            QuarterSumOfTwo => "omega_i = (omega_j + omega_k)/4",
            HalfSumPlusDouble => "omega_i = (omega_j + omega_k + 2*omega_l)/2",
            HalfSumOfFour => "omega_i = (omega_j + omega_k + omega_l + omega_m)/2",
            PairVsPair => "omega_i + omega_j = omega_k + omega_l",
            PairVsOnePlusTriple => "omega_i + omega_j = omega_k + 3*omega_l",
            PairVsTwoDoubles => "omega_i + omega_j = 2*omega_k + 2*omega_l",
            PairVsSumPlusDouble => "omega_i + omega_j = omega_k + omega_l + 2*omega_m",
            PairVsSumOfFour => "omega_i + omega_j = omega_k + omega_l + omega_m + omega_n",
            WeightedVsWeighted => "omega_i + 2*omega_j = omega_k + 2*omega_l",
            WeightedVsSumOfThree => "omega_i + 2*omega_j = omega_k + omega_l + omega_m",
            TripleVsTriple => "omega_i + omega_j + omega_k = omega_l + omega_m + omega_n",
            SumOfTwoMinusOne => "omega_i = omega_j + omega_k - omega_l",
        }
    }
}

/// A condition instance that the given frequencies violate. Indices are
/// 0-based and in the order the variables appear in the family formula.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyViolation {
    pub family: ConditionFamily,
    pub indices: Vec<usize>,
}

impl fmt::Display for FrequencyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx: Vec<String> = self.indices.iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "condition {}: omega indices ({})", self.family.formula(), idx.join(", "))
    }
}

/// A condition is `sum_s coeffs[s] * omega[t_s] != 0` over pairwise-distinct
/// index tuples `t`. The display order of `coeffs` matches the formula with
/// right-hand-side terms negated.
struct CondDef {
    family: ConditionFamily,
    coeffs: &'static [i64],
}

const FULL_CONDITIONS: &[CondDef] = &[
    CondDef { family: ConditionFamily::Equal, coeffs: &[1, -1] },
    CondDef { family: ConditionFamily::TwiceOther, coeffs: &[1, -2] },
    CondDef { family: ConditionFamily::ThriceOther, coeffs: &[1, -3] },
    CondDef { family: ConditionFamily::FiveTimesOther, coeffs: &[1, -5] },
    CondDef { family: ConditionFamily::SumOfTwo, coeffs: &[1, -1, -1] },
    CondDef { family: ConditionFamily::SumOfThree, coeffs: &[1, -1, -1, -1] },
    CondDef { family: ConditionFamily::OnePlusDouble, coeffs: &[1, -1, -2] },
    CondDef { family: ConditionFamily::OnePlusQuadruple, coeffs: &[1, -1, -4] },
    CondDef { family: ConditionFamily::DoublePlusTriple, coeffs: &[1, -2, -3] },
    CondDef { family: ConditionFamily::OnePlusTwoDoubles, coeffs: &[1, -1, -2, -2] },
    CondDef { family: ConditionFamily::SumOfTwoPlusTriple, coeffs: &[1, -1, -1, -3] },
    CondDef { family: ConditionFamily::SumOfThreePlusDouble, coeffs: &[1, -1, -1, -1, -2] },
    CondDef { family: ConditionFamily::SumOfFive, coeffs: &[1, -1, -1, -1, -1, -1] },
    CondDef { family: ConditionFamily::HalfSumOfTwo, coeffs: &[2, -1, -1] },
    CondDef { family: ConditionFamily::HalfOnePlusTriple, coeffs: &[2, -1, -3] },
    CondDef { family: ConditionFamily::ThirdOnePlusDouble, coeffs: &[3, -1, -2] },
    CondDef { family: ConditionFamily::ThirdSumOfThree, coeffs: &[3, -1, -1, -1] },
    CondDef { family: ConditionFamily::QuarterSumOfTwo, coeffs: &[4, -1, -1] },
    CondDef { family: ConditionFamily::HalfSumPlusDouble, coeffs: &[2, -1, -1, -2] },
    CondDef { family: ConditionFamily::HalfSumOfFour, coeffs: &[2, -1, -1, -1, -1] },
    CondDef { family: ConditionFamily::PairVsPair, coeffs: &[1, 1, -1, -1] },
    CondDef { family: ConditionFamily::PairVsOnePlusTriple, coeffs: &[1, 1, -1, -3] },
    CondDef { family: ConditionFamily::PairVsTwoDoubles, coeffs: &[1, 1, -2, -2] },
    CondDef { family: ConditionFamily::PairVsSumPlusDouble, coeffs: &[1, 1, -1, -1, -2] },
    CondDef { family: ConditionFamily::PairVsSumOfFour, coeffs: &[1, 1, -1, -1, -1, -1] },
    CondDef { family: ConditionFamily::WeightedVsWeighted, coeffs: &[1, 2, -1, -2] },
    CondDef { family: ConditionFamily::WeightedVsSumOfThree, coeffs: &[1, 2, -1, -1, -1] },
    CondDef { family: ConditionFamily::TripleVsTriple, coeffs: &[1, 1, 1, -1, -1, -1] },
];

const HESSIAN_CONDITIONS: &[CondDef] = &[
    CondDef { family: ConditionFamily::Equal, coeffs: &[1, -1] },
    CondDef { family: ConditionFamily::HalfSumOfTwo, coeffs: &[2, -1, -1] },
    CondDef { family: ConditionFamily::OnePlusDouble, coeffs: &[1, -1, -2] },
    CondDef { family: ConditionFamily::SumOfThree, coeffs: &[1, -1, -1, -1] },
    CondDef { family: ConditionFamily::SumOfTwoMinusOne, coeffs: &[1, -1, -1, 1] },
];

/// Exhaustively checks every condition of the chosen level over all
/// pairwise-distinct index tuples, in exact rational arithmetic. Distinctness
/// is required only among indices actually appearing in a condition. Returns
/// an empty list iff the frequencies are admissible.
pub fn validate_frequencies(freqs: &[Rational], level: ValidationLevel) -> Vec<FrequencyViolation> {
    let defs = match level {
        ValidationLevel::HessianOnly => HESSIAN_CONDITIONS,
        ValidationLevel::Full => FULL_CONDITIONS,
    };
    let mut out = Vec::new();
    let p = freqs.len();
    let mut tuple = Vec::new();
    for def in defs {
        if def.coeffs.len() <= p {
            enumerate(def, freqs, &mut tuple, &mut out);
        }
    }
    out
}

fn enumerate(
    def: &CondDef,
    freqs: &[Rational],
    tuple: &mut Vec<usize>,
    out: &mut Vec<FrequencyViolation>,
) {
    let slot = tuple.len();
    if slot == def.coeffs.len() {
        let sum: Rational = tuple
            .iter()
            .zip(def.coeffs)
            .map(|(&i, &c)| freqs[i] * Ratio::from_integer(c))
            .sum();
        if sum == Ratio::from_integer(0) {
            out.push(FrequencyViolation { family: def.family, indices: tuple.clone() });
        }
        return;
    }
    // slots with equal coefficients are interchangeable: keep their indices
    // ascending so each condition instance is reported once
    let floor = tuple
        .iter()
        .enumerate()
        .filter(|(s, _)| def.coeffs[*s] == def.coeffs[slot])
        .map(|(_, &i)| i + 1)
        .max()
        .unwrap_or(0);
    for i in floor..freqs.len() {
        if tuple.contains(&i) {
            continue;
        }
        tuple.push(i);
        enumerate(def, freqs, tuple, out);
        tuple.pop();
    }
}

/// Smallest (lexicographic) integer frequency tuple in `[lo, hi]` passing the
/// validator, found by depth-first search with prefix pruning.
pub fn search_frequencies(
    p: usize,
    lo: i64,
    hi: i64,
    level: ValidationLevel,
) -> Result<Vec<Rational>> {
    if lo > hi || lo <= 0 {
        return Err(SonesError::InvalidArgument(
            "search range must be nonempty and positive".into(),
        ));
    }
    let mut tuple: Vec<Rational> = Vec::with_capacity(p);
    if search_recurse(p, lo, hi, level, &mut tuple) {
        Ok(tuple)
    } else {
        Err(SonesError::SearchExhausted)
    }
}

fn search_recurse(p: usize, lo: i64, hi: i64, level: ValidationLevel, tuple: &mut Vec<Rational>) -> bool {
    if tuple.len() == p {
        return true;
    }
    for v in lo..=hi {
        tuple.push(Ratio::from_integer(v));
        // a valid tuple has every prefix valid, so pruning here is safe
        if validate_frequencies(tuple, level).is_empty() && search_recurse(p, lo, hi, level, tuple) {
            return true;
        }
        tuple.pop();
    }
    false
}
