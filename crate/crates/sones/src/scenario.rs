//! TOML scenario files: a complete, reproducible description of one
//! simulation run. Parsing validates eagerly (dimensions, probing
//! frequencies) and `resolve` fills every default so that re-serializing a
//! resolved scenario reproduces the exact same run.

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::dynamics::{default_step, max_step, GainConfig, SonesState};
use crate::error::{Result, SonesError};
use crate::filters::FilterGains;
use crate::maps::{paper_example_map, PolynomialMap};
use crate::probing::{parse_rational, ProbingConfig, Rational, ValidationLevel};

/// Which closed loop the scenario runs; selects the frequency validation
/// level (the gradient loop only needs Hessian-level conditions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopKind {
    Newton,
    Gradient,
}

impl LoopKind {
    pub fn validation_level(self) -> ValidationLevel {
        match self {
            LoopKind::Newton => ValidationLevel::Full,
            LoopKind::Gradient => ValidationLevel::HessianOnly,
        }
    }
}

/// A probing frequency written either as a TOML integer or as a `"num/den"`
/// string; kept in exact rational form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreqSpec(pub Rational);

impl Serialize for FreqSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if *self.0.denom() == 1 {
            s.serialize_i64(*self.0.numer())
        } else {
            s.serialize_str(&format!("{}/{}", self.0.numer(), self.0.denom()))
        }
    }
}

impl<'de> Deserialize<'de> for FreqSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = FreqSpec;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("an integer or a \"num/den\" string")
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<FreqSpec, E> {
                Ok(FreqSpec(Rational::from_integer(v)))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<FreqSpec, E> {
                if v.fract() == 0.0 && v.abs() < 9e15 {
                    Ok(FreqSpec(Rational::from_integer(v as i64)))
                } else {
                    Err(E::custom("non-integer frequencies must be \"num/den\" strings"))
                }
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<FreqSpec, E> {
                parse_rational(v).map(FreqSpec).map_err(|e| E::custom(e.to_string()))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

/// Map selection: a builtin by name, or explicit polynomial terms.
/// `theta_star` is the analysis reference point; required for the builtin
/// (it parameterizes the map) and optional otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<TermSpec>>,
}

impl MapSpec {
    pub fn build(&self, dim: usize) -> Result<PolynomialMap> {
        match (&self.builtin, &self.terms) {
            (Some(name), None) => match name.as_str() {
                "paper_example" => {
                    let star = self.theta_star.as_deref().ok_or_else(|| {
                        SonesError::InvalidArgument(
                            "builtin map requires map.theta_star".into(),
                        )
                    })?;
                    paper_example_map(star)
                }
                other => Err(SonesError::InvalidArgument(format!("unknown builtin map {other:?}"))),
            },
            (None, Some(terms)) => PolynomialMap::new(
                dim,
                terms.iter().map(|t| (t.exponents.clone(), t.coeff)).collect(),
            ),
            _ => Err(SonesError::InvalidArgument(
                "map must give exactly one of `builtin` or `terms`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbingSection {
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<FreqSpec>,
    /// 1-based dither axis as written in scenario files.
    pub axis: usize,
}

impl ProbingSection {
    pub fn to_config(&self) -> Result<ProbingConfig> {
        if self.axis == 0 || self.axis > self.amplitudes.len() {
            return Err(SonesError::InvalidArgument(format!(
                "axis {} out of range 1..={}",
                self.axis,
                self.amplitudes.len()
            )));
        }
        ProbingConfig::new(
            self.amplitudes.clone(),
            self.frequencies.iter().map(|f| f.0).collect(),
            self.axis - 1,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub k: Vec<f64>,
    pub omega_l: f64,
    pub omega_h: f64,
    pub omega_r: f64,
}

impl GainsSection {
    pub fn to_config(&self) -> Result<GainConfig> {
        GainConfig::new(
            self.k.clone(),
            FilterGains::new(self.omega_l, self.omega_h, self.omega_r)?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_hat_diag: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(rename = "loop", default, skip_serializing_if = "Option::is_none")]
    pub loop_kind: Option<LoopKind>,
    pub duration: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary_json: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub averaged: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub hurwitz: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub map: MapSpec,
    pub probing: ProbingSection,
    pub gains: GainsSection,
    #[serde(default)]
    pub initial: InitialSection,
    pub simulation: SimulationSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

impl Scenario {
    /// Dimension `p`, taken from the probing amplitudes.
    pub fn dim(&self) -> usize {
        self.probing.amplitudes.len()
    }

    /// Fills every optional field with its documented default:
    /// `theta_hat(0) = 0`, `t_hat_diag = -50`, `eta(0) = 0`, Newton loop,
    /// `dt = min(1e-4, 2pi/(120 max omega))` and an output stride matching a
    /// 0.02 s record grid.
    pub fn resolve(&mut self) -> Result<()> {
        let p = self.dim();
        let cfg = self.probing.to_config()?;
        self.gains.to_config()?;
        if self.gains.k.len() != p {
            return Err(SonesError::DimensionMismatch { expected: p, got: self.gains.k.len() });
        }
        let map = self.map.build(p)?;
        if map.dim() != p {
            return Err(SonesError::DimensionMismatch { expected: p, got: map.dim() });
        }
        if let Some(star) = &self.map.theta_star {
            if star.len() != p {
                return Err(SonesError::DimensionMismatch { expected: p, got: star.len() });
            }
        }

        let init = &mut self.initial;
        init.theta_hat.get_or_insert_with(|| vec![0.0; p]);
        if init.theta_hat.as_ref().unwrap().len() != p {
            return Err(SonesError::DimensionMismatch {
                expected: p,
                got: init.theta_hat.as_ref().unwrap().len(),
            });
        }
        init.t_hat_diag.get_or_insert(-50.0);
        if init.t_hat_diag == Some(0.0) {
            return Err(SonesError::InvalidArgument("initial.t_hat_diag must be nonzero".into()));
        }
        init.eta.get_or_insert(0.0);

        let sim = &mut self.simulation;
        sim.loop_kind.get_or_insert(LoopKind::Newton);
        if !(sim.duration > 0.0) {
            return Err(SonesError::InvalidArgument("simulation.duration must be positive".into()));
        }
        let dt = *sim.dt.get_or_insert_with(|| default_step(&cfg));
        if !(dt > 0.0) || dt > max_step(&cfg) {
            return Err(SonesError::InvalidArgument(format!(
                "dt {dt} exceeds the resolvable step {} for these frequencies",
                max_step(&cfg)
            )));
        }
        sim.output_stride.get_or_insert_with(|| ((0.02 / dt).round() as usize).max(1));
        if sim.output_stride == Some(0) {
            return Err(SonesError::InvalidArgument("output_stride must be positive".into()));
        }

        // eager frequency validation at the level the chosen loop requires
        let level = sim.loop_kind.unwrap().validation_level();
        let violations = cfg.validate(level);
        if !violations.is_empty() {
            return Err(SonesError::InvalidFrequencies(violations));
        }
        Ok(())
    }

    pub fn is_resolved(&self) -> bool {
        self.initial.theta_hat.is_some()
            && self.initial.t_hat_diag.is_some()
            && self.initial.eta.is_some()
            && self.simulation.loop_kind.is_some()
            && self.simulation.dt.is_some()
            && self.simulation.output_stride.is_some()
    }

    pub fn probing_config(&self) -> Result<ProbingConfig> {
        self.probing.to_config()
    }

    pub fn gain_config(&self) -> Result<GainConfig> {
        self.gains.to_config()
    }

    pub fn build_map(&self) -> Result<PolynomialMap> {
        self.map.build(self.dim())
    }

    /// Initial full-loop state; requires a resolved scenario.
    pub fn initial_state(&self) -> Result<SonesState> {
        let theta = self
            .initial
            .theta_hat
            .as_deref()
            .ok_or_else(|| SonesError::InvalidArgument("scenario not resolved".into()))?;
        let mut state = SonesState::initial(theta, self.initial.t_hat_diag.unwrap())?;
        state.eta = self.initial.eta.unwrap();
        Ok(state)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| SonesError::InvalidArgument(format!("serialization failed: {e}")))
    }
}

/// Parses, validates and resolves a scenario from TOML text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut s: Scenario = toml::from_str(text)
        .map_err(|e| SonesError::InvalidArgument(format!("scenario parse error: {e}")))?;
    s.resolve()?;
    Ok(s)
}
