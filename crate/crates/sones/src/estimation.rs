//! Open-loop, period-averaged demodulation estimators.
//!
//! These are the verifiable realizations of the averaging identities: freeze
//! the parameter estimate, average the demodulated output over one exact
//! period, and read off the derivative. The closed loop uses filters instead;
//! this module is the oracle the closed loop is tested against.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SonesError};
use crate::maps::StaticMap;
use crate::probing::{ProbingConfig, ValidationLevel};

/// Controls the composite-Simpson average over one period.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    /// Initial panel count over the full period (made even internally).
    pub initial_samples: usize,
    /// Absolute tolerance on successive refinements.
    pub tol: f64,
}

impl QuadratureSpec {
    /// Sizes the initial grid so the fastest demodulation harmonic
    /// (`3 max omega_i`) gets at least `samples_per_cycle` samples per cycle.
    pub fn for_probing(cfg: &ProbingConfig, samples_per_cycle: usize, tol: f64) -> Self {
        let samples_per_cycle = samples_per_cycle.max(50);
        let period = cfg.averaging_period();
        let cycles = (period * 3.0 * cfg.max_omega() / (2.0 * std::f64::consts::PI)).ceil();
        QuadratureSpec { initial_samples: samples_per_cycle * cycles as usize, tol }
    }

    /// 64 samples per fastest cycle, tolerance 1e-9.
    pub fn default_for(cfg: &ProbingConfig) -> Self {
        Self::for_probing(cfg, 64, 1e-9)
    }
}

const MAX_REFINEMENTS: usize = 10;

/// Average of `f` over `[0, period]` by composite Simpson quadrature, with
/// grid doubling until two successive estimates agree within `spec.tol`.
pub fn periodic_average<F: Fn(f64) -> f64>(f: F, period: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(period > 0.0) {
        return Err(SonesError::InvalidArgument("period must be positive".into()));
    }
    let mut n = spec.initial_samples.max(4);
    if n % 2 == 1 {
        n += 1;
    }
    let mut prev = simpson_average(&f, period, n);
    for _ in 0..MAX_REFINEMENTS {
        n *= 2;
        let next = simpson_average(&f, period, n);
        let delta = (next - prev).abs();
        if delta < spec.tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(SonesError::QuadratureNoConvergence { delta: f64::NAN })
}

fn simpson_average<F: Fn(f64) -> f64>(f: &F, period: f64, n: usize) -> f64 {
    let h = period / n as f64;
    let mut acc = f(0.0) + f(period);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(k as f64 * h);
    }
    acc * h / (3.0 * period)
}

/// Full Hessian estimate: entry (i, j) is the period average of
/// `N_ij(t) * h(theta_hat + S(t))`. Requires frequencies valid at the
/// Hessian-only level.
pub fn estimate_hessian<M: StaticMap + ?Sized>(
    map: &M,
    theta_hat: &[f64],
    cfg: &ProbingConfig,
    spec: &QuadratureSpec,
) -> Result<DMatrix<f64>> {
    check_dims(map, theta_hat, cfg)?;
    require_valid(cfg, ValidationLevel::HessianOnly)?;
    let p = cfg.dim();
    let period = cfg.averaging_period();
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let v = periodic_average(
                |t| cfg.demod_n_entry(i, j, t) * output_at(map, theta_hat, cfg, t),
                period,
                spec,
            )?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Column `m` of the Hessian via the demodulation vector `N_m(t)`.
pub fn estimate_hessian_column<M: StaticMap + ?Sized>(
    map: &M,
    theta_hat: &[f64],
    cfg: &ProbingConfig,
    spec: &QuadratureSpec,
) -> Result<DVector<f64>> {
    check_dims(map, theta_hat, cfg)?;
    require_valid(cfg, ValidationLevel::HessianOnly)?;
    let p = cfg.dim();
    let period = cfg.averaging_period();
    let mut out = DVector::zeros(p);
    for i in 0..p {
        out[i] = periodic_average(
            |t| cfg.demod_n_vector(t)[i] * output_at(map, theta_hat, cfg, t),
            period,
            spec,
        )?;
    }
    Ok(out)
}

/// Third-derivative slice `T[m, ., .]` via `P_m(t)`. Requires the full
/// frequency condition set.
pub fn estimate_third_slice<M: StaticMap + ?Sized>(
    map: &M,
    theta_hat: &[f64],
    cfg: &ProbingConfig,
    spec: &QuadratureSpec,
) -> Result<DMatrix<f64>> {
    check_dims(map, theta_hat, cfg)?;
    require_valid(cfg, ValidationLevel::Full)?;
    let p = cfg.dim();
    let m = cfg.axis();
    let period = cfg.averaging_period();
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let v = periodic_average(
                |t| cfg.demod_p_entry(m, i, j, t) * output_at(map, theta_hat, cfg, t),
                period,
                spec,
            )?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Hessian estimates at a batch of operating points (parameter sweeps).
/// Points are independent, so the parallel build fans them out with rayon.
pub fn hessian_sweep<M: StaticMap + ?Sized>(
    map: &M,
    points: &[Vec<f64>],
    cfg: &ProbingConfig,
    spec: &QuadratureSpec,
) -> Result<Vec<DMatrix<f64>>> {
    #[cfg(feature = "parallel")]
    {
        hessian_sweep_par(map, points, cfg, spec)
    }
    #[cfg(not(feature = "parallel"))]
    {
        hessian_sweep_seq(map, points, cfg, spec)
    }
}

pub fn hessian_sweep_seq<M: StaticMap + ?Sized>(
    map: &M,
    points: &[Vec<f64>],
    cfg: &ProbingConfig,
    spec: &QuadratureSpec,
) -> Result<Vec<DMatrix<f64>>> {
    points.iter().map(|p| estimate_hessian(map, p, cfg, spec)).collect()
}

#[cfg(feature = "parallel")]
pub fn hessian_sweep_par<M: StaticMap + ?Sized>(
    map: &M,
    points: &[Vec<f64>],
    cfg: &ProbingConfig,
    spec: &QuadratureSpec,
) -> Result<Vec<DMatrix<f64>>> {
    use rayon::prelude::*;
    points.par_iter().map(|p| estimate_hessian(map, p, cfg, spec)).collect()
}

fn output_at<M: StaticMap + ?Sized>(map: &M, theta_hat: &[f64], cfg: &ProbingConfig, t: f64) -> f64 {
    let mut theta = theta_hat.to_vec();
    for (x, s) in theta.iter_mut().zip(cfg.dither(t)) {
        *x += s;
    }
    map.value(&theta)
}

fn check_dims<M: StaticMap + ?Sized>(map: &M, theta_hat: &[f64], cfg: &ProbingConfig) -> Result<()> {
    if map.dim() != cfg.dim() || theta_hat.len() != cfg.dim() {
        return Err(SonesError::DimensionMismatch {
            expected: cfg.dim(),
            got: map.dim().max(theta_hat.len()),
        });
    }
    Ok(())
}

fn require_valid(cfg: &ProbingConfig, level: ValidationLevel) -> Result<()> {
    let violations = cfg.validate(level);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(SonesError::InvalidFrequencies(violations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{paper_example_map, PolynomialMap};
    use crate::probing::rational;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn paper_cfg() -> ProbingConfig {
        ProbingConfig::new(vec![0.1, 0.1], vec![rational(500, 1), rational(300, 1)], 0).unwrap()
    }

    fn spec(cfg: &ProbingConfig) -> QuadratureSpec {
        QuadratureSpec::default_for(cfg)
    }

    #[test]
    fn average_of_sine_is_zero() {
        let s = QuadratureSpec { initial_samples: 64, tol: 1e-12 };
        let w = 3.0;
        let v = periodic_average(|t| (w * t).sin(), 2.0 * PI / w, &s).unwrap();
        assert_relative_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn average_of_cos_squared_is_half() {
        let s = QuadratureSpec { initial_samples: 64, tol: 1e-12 };
        let w = 5.0;
        let v = periodic_average(|t| (w * t).cos().powi(2), 2.0 * PI / w, &s).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn average_of_constant() {
        let s = QuadratureSpec { initial_samples: 64, tol: 1e-12 };
        let v = periodic_average(|_| 2.5, 1.0, &s).unwrap();
        assert_relative_eq!(v, 2.5, epsilon = 1e-13);
    }

    #[test]
    fn n_calibration_identity() {
        // (1/Pi) int N_11 * (1/2) S_1^2 dt = 1
        let cfg = paper_cfg();
        let period = cfg.averaging_period();
        let v = periodic_average(
            |t| {
                let s = cfg.dither(t);
                cfg.demod_n_entry(0, 0, t) * 0.5 * s[0] * s[0]
            },
            period,
            &spec(&cfg),
        )
        .unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn p_calibration_identity() {
        // (1/Pi) int P_111 * (1/6) S_1^3 dt = 1
        let cfg = paper_cfg();
        let period = cfg.averaging_period();
        let v = periodic_average(
            |t| {
                let s = cfg.dither(t);
                cfg.demod_p_entry(0, 0, 0, t) * s[0].powi(3) / 6.0
            },
            period,
            &spec(&cfg),
        )
        .unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn n_vector_zero_mean() {
        let cfg = paper_cfg();
        let period = cfg.averaging_period();
        for i in 0..2 {
            let v = periodic_average(|t| cfg.demod_n_vector(t)[i], period, &spec(&cfg)).unwrap();
            assert_relative_eq!(v, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn hessian_exact_on_centered_quadratic() {
        // quadratic centered at theta_hat: estimate returns A exactly
        let a = [[2.0, -0.5], [-0.5, 1.5]];
        let theta_hat = [0.4, -0.9];
        let mut terms = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                let mut e = vec![0u32; 2];
                e[i] += 1;
                e[j] += 1;
                terms.push((e.clone(), 0.5 * a[i][j]));
                // expand (theta - theta_hat) terms: build directly recentered
            }
        }
        let centered = PolynomialMap::new(2, terms).unwrap();
        let shifted = centered.recentered(&[-theta_hat[0], -theta_hat[1]]).unwrap();
        let cfg = paper_cfg();
        let est = estimate_hessian(&shifted, &theta_hat, &cfg, &spec(&cfg)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(est[(i, j)], a[i][j], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn hessian_column_zero_at_inflection() {
        let map = paper_example_map(&[1.0, 2.0]).unwrap();
        let cfg = paper_cfg();
        let col = estimate_hessian_column(&map, &[1.0, 2.0], &cfg, &spec(&cfg)).unwrap();
        assert_relative_eq!(col[0], 0.0, epsilon = 1e-6);
        assert_relative_eq!(col[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn hessian_column_linear_in_offset() {
        // H_1(theta*) + T_1 * [0.1, -0.1] = [-0.1, 0.3], exact for a cubic map
        let map = paper_example_map(&[1.0, 2.0]).unwrap();
        let cfg = paper_cfg();
        let col = estimate_hessian_column(&map, &[1.1, 1.9], &cfg, &spec(&cfg)).unwrap();
        assert_relative_eq!(col[0], -0.1, epsilon = 1e-6);
        assert_relative_eq!(col[1], 0.3, epsilon = 1e-6);
    }

    #[test]
    fn hessian_column_agrees_with_full_matrix() {
        let map = paper_example_map(&[1.0, 2.0]).unwrap();
        let cfg = paper_cfg();
        let s = spec(&cfg);
        let full = estimate_hessian(&map, &[0.8, 2.3], &cfg, &s).unwrap();
        let col = estimate_hessian_column(&map, &[0.8, 2.3], &cfg, &s).unwrap();
        for i in 0..2 {
            assert_relative_eq!(col[i], full[(i, 0)], epsilon = 1e-9);
        }
    }

    #[test]
    fn hessian_amplitude_independent_for_cubic() {
        let map = paper_example_map(&[1.0, 2.0]).unwrap();
        let big = paper_cfg();
        let small =
            ProbingConfig::new(vec![0.05, 0.05], vec![rational(500, 1), rational(300, 1)], 0)
                .unwrap();
        let hb = estimate_hessian(&map, &[1.2, 2.1], &big, &spec(&big)).unwrap();
        let hs = estimate_hessian(&map, &[1.2, 2.1], &small, &spec(&small)).unwrap();
        assert_relative_eq!((hb - hs).abs().max(), 0.0, epsilon = 1e-7);
    }

    #[test]
    fn third_slice_matches_t1_at_star() {
        let map = paper_example_map(&[1.0, 2.0]).unwrap();
        let cfg = paper_cfg();
        let t1 = estimate_third_slice(&map, &[1.0, 2.0], &cfg, &spec(&cfg)).unwrap();
        let expected = [[-2.0, -1.0], [-1.0, -4.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(t1[(i, j)], expected[i][j], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn third_slice_zero_for_quadratic() {
        let quad = PolynomialMap::new(2, vec![(vec![2, 0], 1.0), (vec![0, 2], -0.5)]).unwrap();
        let cfg = paper_cfg();
        let t = estimate_third_slice(&quad, &[0.3, 0.4], &cfg, &spec(&cfg)).unwrap();
        assert_relative_eq!(t.abs().max(), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn third_slice_exact_for_quartic_at_center() {
        // fourth-order dither products are cosine series, orthogonal to the
        // sine-type P entries, so a quartic map adds no error at the
        // expansion point: the O(|a|) remainder bound is not tight there
        let map = paper_example_map(&[1.0, 2.0])
            .unwrap()
            .add(&PolynomialMap::new(2, vec![(vec![4, 0], 0.3), (vec![2, 2], 0.2)]).unwrap())
            .unwrap();
        let exact = map.derivative_bundle(&[1.0, 2.0]).unwrap().third_slice(0);
        let cfg = paper_cfg();
        let est = estimate_third_slice(&map, &[1.0, 2.0], &cfg, &spec(&cfg)).unwrap();
        assert_relative_eq!((est - exact).abs().max(), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn third_slice_remainder_linear_along_amplitude_ray() {
        // the O(|theta_tilde|, |a|) remainder is exhibited by shrinking the
        // offset together with the amplitude: with theta_tilde = a*v the
        // error relative to the reference-point slice is dominated by the
        // fourth-derivative term, linear in a
        let map = paper_example_map(&[1.0, 2.0])
            .unwrap()
            .add(&PolynomialMap::new(2, vec![(vec![4, 0], 0.3), (vec![2, 2], 0.2)]).unwrap())
            .unwrap();
        let exact = map.derivative_bundle(&[1.0, 2.0]).unwrap().third_slice(0);
        let err_at = |a: f64| {
            let theta = [1.0 + 0.5 * a, 2.0 - 0.25 * a];
            let cfg =
                ProbingConfig::new(vec![a, a], vec![rational(500, 1), rational(300, 1)], 0).unwrap();
            let est = estimate_third_slice(&map, &theta, &cfg, &spec(&cfg)).unwrap();
            (est - &exact).abs().max()
        };
        let ratio = err_at(0.2) / err_at(0.1);
        assert!(
            (1.5..=2.5).contains(&ratio),
            "expected O(a) scaling along the ray, got ratio {ratio}"
        );
    }

    #[test]
    fn invalid_frequencies_rejected() {
        let map = paper_example_map(&[1.0, 2.0]).unwrap();
        let cfg =
            ProbingConfig::new(vec![0.1, 0.1], vec![rational(300, 1), rational(600, 1)], 0).unwrap();
        let s = QuadratureSpec::default_for(&cfg);
        assert!(matches!(
            estimate_third_slice(&map, &[1.0, 2.0], &cfg, &s),
            Err(SonesError::InvalidFrequencies(_))
        ));
    }

    #[test]
    fn estimated_matrices_symmetric() {
        let map = paper_example_map(&[1.0, 2.0]).unwrap();
        let cfg = paper_cfg();
        let s = spec(&cfg);
        let h = estimate_hessian(&map, &[0.7, 1.4], &cfg, &s).unwrap();
        let t = estimate_third_slice(&map, &[0.7, 1.4], &cfg, &s).unwrap();
        assert_relative_eq!((&h - h.transpose()).abs().max(), 0.0, epsilon = 1e-9);
        assert_relative_eq!((&t - t.transpose()).abs().max(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn sweep_matches_single_estimates() {
        let map = paper_example_map(&[1.0, 2.0]).unwrap();
        let cfg = paper_cfg();
        let s = spec(&cfg);
        let points = vec![vec![1.0, 2.0], vec![0.5, 1.5], vec![1.4, 2.2]];
        let swept = hessian_sweep(&map, &points, &cfg, &s).unwrap();
        let seq = hessian_sweep_seq(&map, &points, &cfg, &s).unwrap();
        for (a, b) in swept.iter().zip(&seq) {
            assert_relative_eq!((a - b).abs().max(), 0.0, epsilon = 1e-12);
        }
    }
}
