//! Plot-ready artifacts: trajectory CSV, run summary JSON and level-set
//! grids. All floating-point output uses Rust's shortest round-trip `f64`
//! formatting, so identical runs produce byte-identical files.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{Result, SonesError};
use crate::maps::{PolynomialMap, StaticMap};
use crate::probing::ProbingConfig;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// CSV for a full Newton-loop trajectory. Columns:
/// `t,theta_hat_1..p,Hhat_1..p,Lambda_11..pp,That_11..pp,eta,y` with `y`
/// recomputed as the dithered measurement at the recorded instant.
pub fn trajectory_csv<M: StaticMap + ?Sized>(
    traj: &Trajectory,
    map: &M,
    cfg: &ProbingConfig,
) -> Result<String> {
    let p = cfg.dim();
    let expected = crate::dynamics::state_dim(p);
    let mut out = String::new();
    out.push('t');
    for i in 1..=p {
        write!(out, ",theta_hat_{i}").unwrap();
    }
    for i in 1..=p {
        write!(out, ",Hhat_{i}").unwrap();
    }
    for i in 1..=p {
        for j in 1..=p {
            write!(out, ",Lambda_{i}{j}").unwrap();
        }
    }
    for i in 1..=p {
        for j in 1..=p {
            write!(out, ",That_{i}{j}").unwrap();
        }
    }
    out.push_str(",eta,y\n");

    let mut probe = vec![0.0; p];
    for (t, state) in traj.times.iter().zip(&traj.states) {
        if state.len() != expected {
            return Err(SonesError::DimensionMismatch { expected, got: state.len() });
        }
        write!(out, "{t}").unwrap();
        for v in state {
            write!(out, ",{v}").unwrap();
        }
        cfg.dither_into(*t, &mut probe);
        for i in 0..p {
            probe[i] += state[i];
        }
        let y = map.value(&probe);
        writeln!(out, ",{y}").unwrap();
    }
    Ok(out)
}

/// CSV for a reduced gradient-loop trajectory:
/// `t,theta_hat_1..p,Hhat_1..p,eta,y`.
pub fn grad2_trajectory_csv<M: StaticMap + ?Sized>(
    traj: &Trajectory,
    map: &M,
    cfg: &ProbingConfig,
) -> Result<String> {
    let p = cfg.dim();
    let expected = 2 * p + 1;
    let mut out = String::new();
    out.push('t');
    for i in 1..=p {
        write!(out, ",theta_hat_{i}").unwrap();
    }
    for i in 1..=p {
        write!(out, ",Hhat_{i}").unwrap();
    }
    out.push_str(",eta,y\n");
    let mut probe = vec![0.0; p];
    for (t, state) in traj.times.iter().zip(&traj.states) {
        if state.len() != expected {
            return Err(SonesError::DimensionMismatch { expected, got: state.len() });
        }
        write!(out, "{t}").unwrap();
        for v in state {
            write!(out, ",{v}").unwrap();
        }
        cfg.dither_into(*t, &mut probe);
        for i in 0..p {
            probe[i] += state[i];
        }
        let y = map.value(&probe);
        writeln!(out, ",{y}").unwrap();
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexEntry {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HurwitzReport {
    pub hurwitz: bool,
    pub max_real_part: f64,
    pub spectrum: Vec<ComplexEntry>,
}

impl HurwitzReport {
    pub fn from_spectrum(hurwitz: bool, spectrum: &[Complex<f64>]) -> Self {
        let max_real_part = spectrum.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        Self {
            hurwitz,
            max_real_part,
            spectrum: spectrum.iter().map(|z| ComplexEntry { re: z.re, im: z.im }).collect(),
        }
    }
}

/// End-of-run summary. Error fields are present only when the scenario
/// declares a reference point to measure against.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub final_time: f64,
    pub final_theta_hat: Vec<f64>,
    pub final_eta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<Vec<f64>>,
    /// sup-norm of theta_hat - theta_star at the final sample.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_theta_error: Option<f64>,
    /// First recorded time after which the theta error stays within
    /// `theta_band`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_convergence_time: Option<f64>,
    pub theta_band: f64,
    /// First recorded time after which every Lambda entry stays within
    /// `lambda_band` of the reference inverse, when one is available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_convergence_time: Option<f64>,
    pub lambda_band: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hurwitz: Option<HurwitzReport>,
}

/// Builds the summary for a full Newton-loop trajectory.
pub fn summarize(
    traj: &Trajectory,
    p: usize,
    theta_star: Option<&[f64]>,
    lambda_ref: Option<&DMatrix<f64>>,
    theta_band: f64,
    lambda_band: f64,
) -> Result<RunSummary> {
    let expected = crate::dynamics::state_dim(p);
    let last = traj.last_state();
    if last.len() != expected {
        return Err(SonesError::DimensionMismatch { expected, got: last.len() });
    }
    let final_theta_hat = last[0..p].to_vec();
    let final_eta = last[expected - 1];

    let theta_err_at = |state: &[f64], star: &[f64]| {
        state[0..p]
            .iter()
            .zip(star)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    };
    let final_theta_error = theta_star.map(|star| theta_err_at(last, star));
    let theta_convergence_time = theta_star
        .and_then(|star| enter_and_stay(traj, |s| theta_err_at(s, star) <= theta_band));

    let lambda_convergence_time = lambda_ref.and_then(|lref| {
        enter_and_stay(traj, |s| {
            let mut worst = 0.0f64;
            for i in 0..p {
                for j in 0..p {
                    worst = worst.max((s[2 * p + i * p + j] - lref[(i, j)]).abs());
                }
            }
            worst <= lambda_band
        })
    });

    Ok(RunSummary {
        final_time: *traj.times.last().unwrap(),
        final_theta_hat,
        final_eta,
        theta_star: theta_star.map(|s| s.to_vec()),
        final_theta_error,
        theta_convergence_time,
        theta_band,
        lambda_convergence_time,
        lambda_band,
        hurwitz: None,
    })
}

/// First recorded time from which `inside` holds for every later sample.
fn enter_and_stay<F: Fn(&[f64]) -> bool>(traj: &Trajectory, inside: F) -> Option<f64> {
    let mut candidate = None;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        if inside(s) {
            if candidate.is_none() {
                candidate = Some(*t);
            }
        } else {
            candidate = None;
        }
    }
    candidate
}

/// Level-set grid of a 2-D map: `value` is `h` for `order = 0` or the axis
/// gradient component `G_m = dh/dtheta_m` for `order = 1`. Rows are
/// `x,y,value` over a regular grid, y varying slowest.
pub fn level_set_grid(
    map: &PolynomialMap,
    order: usize,
    axis: usize,
    bbox: [f64; 4],
    nx: usize,
    ny: usize,
) -> Result<String> {
    let rows = level_set_rows(map, order, axis, bbox, nx, ny)?;
    let mut out = String::from("x,y,value\n");
    for r in rows {
        out.push_str(&r);
    }
    Ok(out)
}

fn level_set_field(map: &PolynomialMap, order: usize, axis: usize) -> Result<PolynomialMap> {
    if map.dim() != 2 {
        return Err(SonesError::InvalidArgument("level-set grids require a 2-D map".into()));
    }
    match order {
        0 => Ok(map.clone()),
        1 => map.partial_one(axis),
        _ => Err(SonesError::InvalidArgument("derivative order must be 0 or 1".into())),
    }
}

fn grid_coords(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(hi > lo) {
        return Err(SonesError::InvalidArgument("grid needs n >= 2 and hi > lo".into()));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

fn row_string(field: &PolynomialMap, xs: &[f64], y: f64) -> String {
    let mut line = String::new();
    for &x in xs {
        let v = field.value(&[x, y]);
        writeln!(line, "{x},{y},{v}").unwrap();
    }
    line
}

#[cfg(feature = "parallel")]
fn level_set_rows(
    map: &PolynomialMap,
    order: usize,
    axis: usize,
    bbox: [f64; 4],
    nx: usize,
    ny: usize,
) -> Result<Vec<String>> {
    let field = level_set_field(map, order, axis)?;
    let xs = grid_coords(bbox[0], bbox[1], nx)?;
    let ys = grid_coords(bbox[2], bbox[3], ny)?;
    Ok(ys.par_iter().map(|&y| row_string(&field, &xs, y)).collect())
}

#[cfg(not(feature = "parallel"))]
fn level_set_rows(
    map: &PolynomialMap,
    order: usize,
    axis: usize,
    bbox: [f64; 4],
    nx: usize,
    ny: usize,
) -> Result<Vec<String>> {
    level_set_rows_seq(map, order, axis, bbox, nx, ny)
}

/// Sequential reference implementation of [`level_set_grid`]'s row sweep.
pub fn level_set_rows_seq(
    map: &PolynomialMap,
    order: usize,
    axis: usize,
    bbox: [f64; 4],
    nx: usize,
    ny: usize,
) -> Result<Vec<String>> {
    let field = level_set_field(map, order, axis)?;
    let xs = grid_coords(bbox[0], bbox[1], nx)?;
    let ys = grid_coords(bbox[2], bbox[3], ny)?;
    Ok(ys.iter().map(|&y| row_string(&field, &xs, y)).collect())
}

/// Sequential variant of [`level_set_grid`], used by the benchmark suite and
/// the non-parallel build.
pub fn level_set_grid_seq(
    map: &PolynomialMap,
    order: usize,
    axis: usize,
    bbox: [f64; 4],
    nx: usize,
    ny: usize,
) -> Result<String> {
    let rows = level_set_rows_seq(map, order, axis, bbox, nx, ny)?;
    let mut out = String::from("x,y,value\n");
    for r in rows {
        out.push_str(&r);
    }
    Ok(out)
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| SonesError::InvalidArgument(format!("JSON serialization failed: {e}")))
}
