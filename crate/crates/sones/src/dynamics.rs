//! Closed-loop Newton and gradient seeking systems, a fixed-step RK4
//! integrator, the averaged system and its equilibrium/stability utilities.
//!
//! The closed loops run in original coordinates: the target point never
//! enters the right-hand side. Error coordinates appear only in the averaged
//! system and the analysis helpers, which take an explicit reference point.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Result, SonesError};
use crate::filters::FilterGains;
use crate::maps::{PolynomialMap, StaticMap};
use crate::probing::{ProbingConfig, ValidationLevel};

/// Adaptation gain and filter corner frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct GainConfig {
    /// Diagonal of the positive adaptation gain matrix `K`.
    pub k: Vec<f64>,
    pub filters: FilterGains,
    /// Analysis scale; informational only, the gains above are already scaled.
    pub delta: f64,
}

impl GainConfig {
    pub fn new(k: Vec<f64>, filters: FilterGains) -> Result<Self> {
        if k.iter().any(|&v| !(v > 0.0)) {
            return Err(SonesError::InvalidArgument("gain entries must be positive".into()));
        }
        Ok(Self { k, filters, delta: 1.0 })
    }
}

/// Stacked loop state: parameter estimate, Hessian-column estimate, Riccati
/// inverse, third-derivative estimate and washout state.
#[derive(Debug, Clone, PartialEq)]
pub struct SonesState {
    pub theta_hat: DVector<f64>,
    pub h_m: DVector<f64>,
    pub lambda_m: DMatrix<f64>,
    pub t_hat_m: DMatrix<f64>,
    pub eta: f64,
}

/// Length of the flattened state vector for dimension `p`.
pub fn state_dim(p: usize) -> usize {
    2 * p + 2 * p * p + 1
}

impl SonesState {
    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    /// Layout: theta_hat, h_m, lambda (row-major), t_hat (row-major), eta.
    pub fn flatten(&self) -> Vec<f64> {
        let p = self.dim();
        let mut out = Vec::with_capacity(state_dim(p));
        out.extend(self.theta_hat.iter());
        out.extend(self.h_m.iter());
        for i in 0..p {
            for j in 0..p {
                out.push(self.lambda_m[(i, j)]);
            }
        }
        for i in 0..p {
            for j in 0..p {
                out.push(self.t_hat_m[(i, j)]);
            }
        }
        out.push(self.eta);
        out
    }

    pub fn unflatten(p: usize, y: &[f64]) -> Result<Self> {
        if y.len() != state_dim(p) {
            return Err(SonesError::DimensionMismatch { expected: state_dim(p), got: y.len() });
        }
        let sq = p * p;
        Ok(Self {
            theta_hat: DVector::from_row_slice(&y[0..p]),
            h_m: DVector::from_row_slice(&y[p..2 * p]),
            lambda_m: DMatrix::from_row_slice(p, p, &y[2 * p..2 * p + sq]),
            t_hat_m: DMatrix::from_row_slice(p, p, &y[2 * p + sq..2 * p + 2 * sq]),
            eta: y[2 * p + 2 * sq],
        })
    }

    /// Standard initialization: `T_hat(0)` diagonal with large negative
    /// entries and `Lambda(0)` its inverse, so the Riccati state starts
    /// consistent and bounded.
    pub fn initial(theta0: &[f64], t_hat_diag: f64) -> Result<Self> {
        if t_hat_diag == 0.0 {
            return Err(SonesError::InvalidArgument("t_hat_diag must be nonzero".into()));
        }
        let p = theta0.len();
        Ok(Self {
            theta_hat: DVector::from_row_slice(theta0),
            h_m: DVector::zeros(p),
            lambda_m: DMatrix::identity(p, p) / t_hat_diag,
            t_hat_m: DMatrix::identity(p, p) * t_hat_diag,
            eta: 0.0,
        })
    }
}

/// Uniform-grid record of a simulation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Largest step that still resolves the fastest demodulation harmonic
/// (40 samples per cycle of `3 max omega`).
pub fn max_step(cfg: &ProbingConfig) -> f64 {
    2.0 * std::f64::consts::PI / (3.0 * cfg.max_omega()) / 40.0
}

/// Default step rule: at least 120 samples per fastest probing cycle and
/// never above 1e-4 s.
pub fn default_step(cfg: &ProbingConfig) -> f64 {
    (2.0 * std::f64::consts::PI / (120.0 * cfg.max_omega())).min(1e-4)
}

/// Classical fixed-step RK4. Records every `record_stride`-th step plus the
/// final one; fails with the offending time if the state goes non-finite.
pub fn integrate<F: FnMut(f64, &[f64], &mut [f64])>(
    mut rhs: F,
    y0: &[f64],
    t0: f64,
    duration: f64,
    dt: f64,
    record_stride: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(SonesError::InvalidArgument("dt must be positive".into()));
    }
    let stride = record_stride.max(1);
    let steps = (duration / dt).round() as usize;
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    let mut times = Vec::with_capacity(steps / stride + 2);
    let mut states = Vec::with_capacity(steps / stride + 2);
    let record = |t: f64, y: &[f64], times: &mut Vec<f64>, states: &mut Vec<Vec<f64>>| {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SonesError::Divergence { t });
        }
        times.push(t);
        states.push(y.to_vec());
        Ok(())
    };
    record(t0, &y, &mut times, &mut states)?;

    for step in 0..steps {
        let t = t0 + step as f64 * dt;
        rhs(t, &y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        rhs(t + 0.5 * dt, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        rhs(t + 0.5 * dt, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + dt * k3[i];
        }
        rhs(t + dt, &tmp, &mut k4);
        for i in 0..n {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if (step + 1) % stride == 0 || step + 1 == steps {
            record(t0 + (step + 1) as f64 * dt, &y, &mut times, &mut states)?;
        }
    }
    Ok(Trajectory { times, states })
}

/// The closed Newton loop in original coordinates:
///
/// ```text
/// theta_hat' = -K Lambda H_hat
/// H_hat'     = omega_l ((y - eta) N_m(t) - H_hat)
/// Lambda'    = omega_r Lambda (I - T_hat Lambda)
/// T_hat'     = omega_l ((y - eta) P_m(t) - T_hat)
/// eta'       = omega_h (y - eta)
/// ```
///
/// with `y = h(theta_hat + S(t))`.
pub struct SonesLoop<'a, M: StaticMap + ?Sized> {
    map: &'a M,
    cfg: &'a ProbingConfig,
    gains: &'a GainConfig,
    p: usize,
    theta: Vec<f64>,
    s: Vec<f64>,
    nm: Vec<f64>,
    pm: Vec<f64>,
    m1: Vec<f64>,
}

impl<'a, M: StaticMap + ?Sized> SonesLoop<'a, M> {
    pub fn new(map: &'a M, cfg: &'a ProbingConfig, gains: &'a GainConfig) -> Result<Self> {
        let p = cfg.dim();
        if map.dim() != p || gains.k.len() != p {
            return Err(SonesError::DimensionMismatch { expected: p, got: map.dim() });
        }
        let violations = cfg.validate(ValidationLevel::Full);
        if !violations.is_empty() {
            return Err(SonesError::InvalidFrequencies(violations));
        }
        Ok(Self {
            map,
            cfg,
            gains,
            p,
            theta: vec![0.0; p],
            s: vec![0.0; p],
            nm: vec![0.0; p],
            pm: vec![0.0; p * p],
            m1: vec![0.0; p * p],
        })
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.p)
    }

    pub fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let p = self.p;
        let sq = p * p;
        let (th, rest) = y.split_at(p);
        let (hh, rest) = rest.split_at(p);
        let (lam, rest) = rest.split_at(sq);
        let (that, rest) = rest.split_at(sq);
        let eta = rest[0];

        self.cfg.dither_into(t, &mut self.s);
        for i in 0..p {
            self.theta[i] = th[i] + self.s[i];
        }
        let yv = self.map.value(&self.theta);
        let w = yv - eta;

        let m = self.cfg.axis();
        for i in 0..p {
            self.nm[i] = self.cfg.demod_n_entry(i, m, t);
        }
        self.cfg.demod_p_matrix_into(t, &mut self.pm);

        let wl = self.gains.filters.omega_l;
        // theta_hat' = -K Lambda H_hat
        for i in 0..p {
            let mut acc = 0.0;
            for j in 0..p {
                acc += lam[i * p + j] * hh[j];
            }
            dy[i] = -self.gains.k[i] * acc;
        }
        // H_hat' = wl ((y - eta) N_m - H_hat)
        for i in 0..p {
            dy[p + i] = wl * (w * self.nm[i] - hh[i]);
        }
        // Lambda' = wr Lambda (I - T_hat Lambda)
        for i in 0..p {
            for j in 0..p {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += that[i * p + k] * lam[k * p + j];
                }
                self.m1[i * p + j] = if i == j { 1.0 - acc } else { -acc };
            }
        }
        let wr = self.gains.filters.omega_r;
        for i in 0..p {
            for j in 0..p {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += lam[i * p + k] * self.m1[k * p + j];
                }
                dy[2 * p + i * p + j] = wr * acc;
            }
        }
        // T_hat' = wl ((y - eta) P_m - T_hat)
        for idx in 0..sq {
            dy[2 * p + sq + idx] = wl * (w * self.pm[idx] - that[idx]);
        }
        // eta' = wh (y - eta)
        dy[2 * p + 2 * sq] = self.gains.filters.omega_h * w;
    }
}

/// Reduced second-order gradient loop: state `(theta_hat, H_hat, eta)` with
/// `theta_hat' = +K H_hat` (stable near the inflection point because the
/// third-derivative slice is negative definite there).
pub struct Grad2Loop<'a, M: StaticMap + ?Sized> {
    map: &'a M,
    cfg: &'a ProbingConfig,
    gains: &'a GainConfig,
    p: usize,
    theta: Vec<f64>,
    s: Vec<f64>,
}

impl<'a, M: StaticMap + ?Sized> Grad2Loop<'a, M> {
    pub fn new(map: &'a M, cfg: &'a ProbingConfig, gains: &'a GainConfig) -> Result<Self> {
        let p = cfg.dim();
        if map.dim() != p || gains.k.len() != p {
            return Err(SonesError::DimensionMismatch { expected: p, got: map.dim() });
        }
        let violations = cfg.validate(ValidationLevel::HessianOnly);
        if !violations.is_empty() {
            return Err(SonesError::InvalidFrequencies(violations));
        }
        Ok(Self { map, cfg, gains, p, theta: vec![0.0; p], s: vec![0.0; p] })
    }

    pub fn state_dim(&self) -> usize {
        2 * self.p + 1
    }

    pub fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let p = self.p;
        let (th, rest) = y.split_at(p);
        let (hh, rest) = rest.split_at(p);
        let eta = rest[0];

        self.cfg.dither_into(t, &mut self.s);
        for i in 0..p {
            self.theta[i] = th[i] + self.s[i];
        }
        let yv = self.map.value(&self.theta);
        let w = yv - eta;
        let m = self.cfg.axis();
        let wl = self.gains.filters.omega_l;
        for i in 0..p {
            dy[i] = self.gains.k[i] * hh[i];
            dy[p + i] = wl * (w * self.cfg.demod_n_entry(i, m, t) - hh[i]);
        }
        dy[2 * p] = self.gains.filters.omega_h * w;
    }
}

/// The averaged system in error coordinates around a declared reference
/// point. Period averages use a fixed Simpson grid precomputed once; the grid
/// oversamples every demodulation harmonic, so for polynomial maps the
/// averages are exact to rounding.
pub struct AveragedSones {
    nu: PolynomialMap,
    t_m: DMatrix<f64>,
    t_m_inv: DMatrix<f64>,
    cfg: ProbingConfig,
    gains: GainConfig,
    p: usize,
    /// Quadrature nodes and Simpson weights scaled by 1/period.
    nodes: Vec<QuadNode>,
}

struct QuadNode {
    weight: f64,
    dither: Vec<f64>,
    n_m: Vec<f64>,
    p_m: Vec<f64>,
}

impl AveragedSones {
    pub fn new(
        map: &PolynomialMap,
        theta_star: &[f64],
        cfg: &ProbingConfig,
        gains: &GainConfig,
        samples_per_cycle: usize,
    ) -> Result<Self> {
        let p = cfg.dim();
        if map.dim() != p || theta_star.len() != p || gains.k.len() != p {
            return Err(SonesError::DimensionMismatch { expected: p, got: map.dim() });
        }
        let violations = cfg.validate(ValidationLevel::Full);
        if !violations.is_empty() {
            return Err(SonesError::InvalidFrequencies(violations));
        }
        let nu = map.recentered(theta_star)?;
        let bundle = map.derivative_bundle(theta_star)?;
        let t_m = bundle.third_slice(cfg.axis());
        let t_m_inv = t_m.clone().try_inverse().ok_or(SonesError::Singular)?;

        let period = cfg.averaging_period();
        let cycles = (period * 3.0 * cfg.max_omega() / (2.0 * std::f64::consts::PI)).ceil();
        let mut n = (samples_per_cycle.max(50) as f64 * cycles) as usize;
        if n % 2 == 1 {
            n += 1;
        }
        let h = period / n as f64;
        let mut nodes = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let t = k as f64 * h;
            let simpson = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let mut p_m = vec![0.0; p * p];
            cfg.demod_p_matrix_into(t, &mut p_m);
            nodes.push(QuadNode {
                weight: simpson * h / (3.0 * period),
                dither: cfg.dither(t),
                n_m: cfg.demod_n_vector(t),
                p_m,
            });
        }
        Ok(Self { nu, t_m, t_m_inv, cfg: cfg.clone(), gains: gains.clone(), p, nodes })
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.p)
    }

    pub fn t_m(&self) -> &DMatrix<f64> {
        &self.t_m
    }

    pub fn t_m_inv(&self) -> &DMatrix<f64> {
        &self.t_m_inv
    }

    pub fn probing(&self) -> &ProbingConfig {
        &self.cfg
    }

    /// Right-hand side in error coordinates
    /// `(theta_tilde, H_hat, Lambda_tilde, T_tilde, eta_tilde)`.
    pub fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let p = self.p;
        let sq = p * p;
        let (tht, rest) = y.split_at(p);
        let (hh, rest) = rest.split_at(p);
        let (lamt, rest) = rest.split_at(sq);
        let (tt, rest) = rest.split_at(sq);
        let etat = rest[0];

        // period averages of nu(theta_tilde + S) against 1, N_m and P_m
        let mut avg_nu = 0.0;
        let mut avg_n = vec![0.0; p];
        let mut avg_p = vec![0.0; sq];
        let mut q = vec![0.0; p];
        for node in &self.nodes {
            for i in 0..p {
                q[i] = tht[i] + node.dither[i];
            }
            let v = self.nu.value(&q) * node.weight;
            avg_nu += v;
            for i in 0..p {
                avg_n[i] += v * node.n_m[i];
            }
            for idx in 0..sq {
                avg_p[idx] += v * node.p_m[idx];
            }
        }

        let fg = &self.gains.filters;
        // lambda = Lambda_tilde + T_m^{-1}, t_hat = T_tilde + T_m
        let mut lam = vec![0.0; sq];
        let mut that = vec![0.0; sq];
        for i in 0..p {
            for j in 0..p {
                lam[i * p + j] = lamt[i * p + j] + self.t_m_inv[(i, j)];
                that[i * p + j] = tt[i * p + j] + self.t_m[(i, j)];
            }
        }
        // theta_tilde' = -K lambda H_hat
        for i in 0..p {
            let mut acc = 0.0;
            for j in 0..p {
                acc += lam[i * p + j] * hh[j];
            }
            dy[i] = -self.gains.k[i] * acc;
        }
        // H_hat' = wl (avg(nu N_m) - H_hat)
        for i in 0..p {
            dy[p + i] = fg.omega_l * (avg_n[i] - hh[i]);
        }
        // Lambda_tilde' = wr lambda (I - t_hat lambda)
        let mut m1 = vec![0.0; sq];
        for i in 0..p {
            for j in 0..p {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += that[i * p + k] * lam[k * p + j];
                }
                m1[i * p + j] = if i == j { 1.0 - acc } else { -acc };
            }
        }
        for i in 0..p {
            for j in 0..p {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += lam[i * p + k] * m1[k * p + j];
                }
                dy[2 * p + i * p + j] = fg.omega_r * acc;
            }
        }
        // T_tilde' = wl (avg(nu P_m) - t_hat)
        for idx in 0..sq {
            dy[2 * p + sq + idx] = fg.omega_l * (avg_p[idx] - that[idx]);
        }
        // eta_tilde' = wh (avg(nu) - eta_tilde)
        dy[2 * p + 2 * sq] = fg.omega_h * (avg_nu - etat);
    }

    pub fn rhs_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut dy = vec![0.0; y.len()];
        self.rhs(y, &mut dy);
        dy
    }

    /// Drives the averaged system to steady state: integrate until the
    /// residual is small, then polish with damped Newton iterations until
    /// `||rhs||_inf < 1e-9`.
    pub fn equilibrium(&self, y0: &[f64], dt: f64, time_cap: f64) -> Result<Vec<f64>> {
        const TARGET: f64 = 1e-9;
        const COARSE: f64 = 1e-3;
        let chunk = 50.0f64;
        let mut y = y0.to_vec();
        let mut elapsed = 0.0;
        loop {
            let res = inf_norm(&self.rhs_vec(&y));
            if res < COARSE {
                if let Some(polished) = self.newton_polish(&y, TARGET) {
                    return Ok(polished);
                }
            }
            if elapsed >= time_cap {
                return Err(SonesError::NoEquilibrium { residual: res });
            }
            let traj = integrate(
                |_t, s, ds| self.rhs(s, ds),
                &y,
                0.0,
                chunk.min(time_cap - elapsed),
                dt,
                usize::MAX,
            )?;
            y = traj.last_state().to_vec();
            elapsed += chunk;
        }
    }

    fn newton_polish(&self, y0: &[f64], target: f64) -> Option<Vec<f64>> {
        let mut y = y0.to_vec();
        let mut res = inf_norm(&self.rhs_vec(&y));
        for _ in 0..30 {
            if res < target {
                return Some(y);
            }
            let jac = jacobian_at(|x| self.rhs_vec(x), &y);
            let f = DVector::from_vec(self.rhs_vec(&y));
            let step = jac.lu().solve(&(-&f))?;
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..8 {
                let trial: Vec<f64> =
                    y.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
                let trial_res = inf_norm(&self.rhs_vec(&trial));
                if trial_res < res {
                    y = trial;
                    res = trial_res;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                return None;
            }
        }
        (res < target).then_some(y)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Predicted equilibrium offsets to second order in the amplitudes.
///
/// The parameter bias solves the averaged stationarity condition: the
/// fourth-derivative rectification shifts the demodulated Hessian column by
/// `e_i = sum_j kappa(i,j,m) d^4 nu(0)/(dq_i dq_j^2 dq_m) a_j^2`, so
/// `theta_bias = -T_m^{-1} e`. The weight `kappa` is the exact periodic
/// average of the quartic dither product against the matching `N` entry and
/// depends on the index multiplicity: 1/4 when `j` differs from both `i` and
/// `m`, 1/8 when it coincides with exactly one of them, and 1/12 when
/// `i = j = m`. The washout bias combines the gradient-weighted parameter
/// bias with the quadratic dither rectification
/// `1/4 sum_i d^2 nu(0)/dq_i^2 a_i^2`.
pub fn theorem_bias(
    map: &PolynomialMap,
    theta_star: &[f64],
    cfg: &ProbingConfig,
) -> Result<(DVector<f64>, f64)> {
    let p = cfg.dim();
    if map.dim() != p || theta_star.len() != p {
        return Err(SonesError::DimensionMismatch { expected: p, got: map.dim() });
    }
    let nu = map.recentered(theta_star)?;
    let origin = vec![0.0; p];
    let bundle = nu.derivative_bundle(&origin)?;
    let t_m = bundle.third_slice(cfg.axis());
    let t_m_inv = t_m.try_inverse().ok_or(SonesError::Singular)?;
    let a = cfg.amplitudes();
    let m = cfg.axis();

    let mut shift = DVector::zeros(p);
    for j in 0..p {
        for i in 0..p {
            let mut alpha = vec![0u32; p];
            alpha[i] += 1;
            alpha[j] += 2;
            alpha[m] += 1;
            let fourth = nu.partial(&alpha)?.eval(&origin)?;
            let kappa = if i == j && j == m {
                1.0 / 12.0
            } else if j == i || j == m {
                1.0 / 8.0
            } else {
                0.25
            };
            shift[i] += kappa * fourth * a[j] * a[j];
        }
    }
    let theta_bias = -(t_m_inv * shift);

    let mut eta_bias = 0.0;
    for i in 0..p {
        eta_bias += bundle.gradient[i] * theta_bias[i];
        eta_bias += 0.25 * bundle.hessian[(i, i)] * a[i] * a[i];
    }
    Ok((theta_bias, eta_bias))
}

/// Central finite-difference Jacobian with relative step 1e-6.
pub fn jacobian_at<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut plus = x.to_vec();
        plus[j] += h;
        let mut minus = x.to_vec();
        minus[j] -= h;
        let fp = f(&plus);
        let fm = f(&minus);
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Eigenvalue test for exponential stability: Hurwitz iff every real part is
/// below `-1e-9`.
pub fn is_hurwitz(jac: &DMatrix<f64>) -> (bool, Vec<Complex<f64>>) {
    let spectrum: Vec<Complex<f64>> = jac.complex_eigenvalues().iter().cloned().collect();
    let hurwitz = spectrum.iter().all(|z| z.re < -1e-9);
    (hurwitz, spectrum)
}
