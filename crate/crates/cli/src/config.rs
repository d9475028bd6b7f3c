//! TOML run configuration. Every table rejects unknown keys.

use serde::{Deserialize, Serialize};
use singcurv::frame::{DerivativeSupply, GluedCollar, MetricField, SigmaSpec, WarpProfile};
use singcurv::harmonic::Core;
use singcurv::integrability::ScanOptions;
use singcurv::measure::QuadOptions;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub identities: Option<IdentitiesConfig>,
    pub curvature: Option<CurvatureConfig>,
    pub integrability: Option<IntegrabilityConfig>,
    pub dirac: Option<DiracConfig>,
    pub harmonic: Option<HarmonicConfig>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

/// Chart families that can be written down in a file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Flat { n: usize },
    ConformalFlat { n: usize, sigma: SigmaSpec },
    Cone { c: f64, n: usize },
    ConeFamily { base_dim: usize, fiber_dim: usize, c: f64 },
    GluedCollar { n: usize, first: WarpProfile, second: WarpProfile },
    HarmonicCone { c: f64, n: usize },
    StereographicSphere { n: usize, radius: f64 },
    TrigRandom { n: usize, seed: Option<u64> },
}

impl MetricSpec {
    pub fn dim(&self) -> usize {
        match self {
            MetricSpec::ConeFamily { base_dim, fiber_dim, .. } => base_dim + fiber_dim,
            MetricSpec::Flat { n }
            | MetricSpec::ConformalFlat { n, .. }
            | MetricSpec::Cone { n, .. }
            | MetricSpec::GluedCollar { n, .. }
            | MetricSpec::HarmonicCone { n, .. }
            | MetricSpec::StereographicSphere { n, .. }
            | MetricSpec::TrigRandom { n, .. } => *n,
        }
    }

    pub fn build(&self, seed: u64, derivatives: Option<DerivativeSupply>) -> Result<MetricField, String> {
        let n = self.dim();
        if !(1..=8).contains(&n) {
            return Err(format!("chart dimension {n} outside 1..=8"));
        }
        let c_ok = |c: f64| if (0.0..1.0).contains(&c) { Ok(()) } else { Err(format!("cone exponent {c} outside [0, 1)")) };
        let m = match self {
            MetricSpec::Flat { n } => MetricField::flat(*n),
            MetricSpec::ConformalFlat { n, sigma } => MetricField::conformal(*n, sigma.clone()),
            MetricSpec::Cone { c, n } => {
                c_ok(*c)?;
                MetricField::cone(*c, *n)
            }
            MetricSpec::ConeFamily { base_dim, fiber_dim, c } => {
                c_ok(*c)?;
                MetricField::cone_family(*base_dim, *fiber_dim, *c)
            }
            MetricSpec::GluedCollar { n, first, second } => MetricField::collar(*n, GluedCollar { first: first.clone(), second: second.clone() }),
            MetricSpec::HarmonicCone { c, n } => singcurv::harmonic::harmonic_cone_metric(*n, *c).map_err(|e| e.to_string())?,
            MetricSpec::StereographicSphere { n, radius } => MetricField::stereographic_sphere(*n, *radius),
            MetricSpec::TrigRandom { n, seed: s } => MetricField::trig_random(*n, s.unwrap_or(seed)),
        };
        Ok(match derivatives {
            Some(d) => m.with_derivatives(d),
            None => m,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesConfig {
    pub dims: Vec<usize>,
    #[serde(default = "default_draws")]
    pub contraction_draws: usize,
}

fn default_draws() -> usize {
    20
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    pub radial_order: Option<usize>,
    pub polar_order: Option<usize>,
    pub azimuth: Option<usize>,
    pub arc_order: Option<usize>,
    pub base_order: Option<usize>,
    pub eps0: Option<f64>,
    pub max_levels: Option<usize>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
}

impl QuadConfig {
    pub fn resolve(&self) -> QuadOptions {
        let mut q = QuadOptions::default();
        macro_rules! set {
            ($f:ident) => {
                if let Some(v) = self.$f {
                    q.$f = v;
                }
            };
            ($f:ident, ex) => {
                if let Some(v) = self.$f {
                    q.extrapolation.$f = v;
                }
            };
        }
        set!(radial_order);
        set!(polar_order);
        set!(azimuth);
        set!(arc_order);
        set!(base_order);
        set!(eps0, ex);
        set!(max_levels, ex);
        set!(rel_tol, ex);
        set!(abs_tol, ex);
        q
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub r0: f64,
    pub levels: usize,
    pub base_inner: f64,
    pub base_outer: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { r0: 0.5, levels: 3, base_inner: 0.3, base_outer: 0.7 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureConfig {
    pub metric: MetricSpec,
    pub derivatives: Option<DerivativeSupply>,
    #[serde(default)]
    pub probes: ProbeConfig,
    #[serde(default)]
    pub quad: QuadConfig,
    #[serde(default)]
    pub ac_points: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub r0: Option<f64>,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub radial_order: Option<usize>,
    pub polar_order: Option<usize>,
    pub azimuth: Option<usize>,
}

impl ScanConfig {
    pub fn resolve(&self) -> ScanOptions {
        let d = ScanOptions::default();
        ScanOptions {
            r0: self.r0.unwrap_or(d.r0),
            k_min: self.k_min.unwrap_or(d.k_min),
            k_max: self.k_max.unwrap_or(d.k_max),
            radial_order: self.radial_order.unwrap_or(d.radial_order),
            polar_order: self.polar_order.unwrap_or(d.polar_order),
            azimuth: self.azimuth.unwrap_or(d.azimuth),
            chart_radius: d.chart_radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    CurvatureTerms,
    DiracSquare,
    QuarterDensity,
    DiracCoefficients,
    FrameCoefficients,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub n: usize,
    pub c: f64,
    pub p_grid: Vec<f64>,
    /// exit 1 unless the scan brackets this exponent
    pub expect_bracket: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrabilityConfig {
    pub metric: Option<MetricSpec>,
    pub derivatives: Option<DerivativeSupply>,
    pub at: Option<Vec<f64>>,
    #[serde(default)]
    pub audits: Vec<AuditKind>,
    #[serde(default)]
    pub scan: ScanConfig,
    pub threshold: Option<ThresholdConfig>,
    #[serde(default)]
    pub expect_all_integrable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiracCheck {
    Adjointness,
    QuarterDensity,
    QuadraticForm,
    Lichnerowicz,
    DeltaHalving,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiracConfig {
    #[serde(default = "all_spins")]
    pub spins: Vec<String>,
    #[serde(default = "default_cs")]
    pub cs: Vec<f64>,
    #[serde(default = "default_ns")]
    pub ns: Vec<usize>,
    #[serde(default)]
    pub checks: Vec<DiracCheck>,
    #[serde(default = "default_sphere_n")]
    pub sphere_n: usize,
    #[serde(default = "default_sphere_modes")]
    pub sphere_modes: i32,
}

impl Default for DiracConfig {
    fn default() -> Self {
        DiracConfig { spins: all_spins(), cs: default_cs(), ns: default_ns(), checks: vec![], sphere_n: default_sphere_n(), sphere_modes: default_sphere_modes() }
    }
}

fn all_spins() -> Vec<String> {
    ["PP", "PA", "AP", "AA"].map(String::from).to_vec()
}

fn default_cs() -> Vec<f64> {
    vec![0.0, 0.25, 0.5]
}

fn default_ns() -> Vec<usize> {
    vec![16, 32]
}

fn default_sphere_n() -> usize {
    400
}

fn default_sphere_modes() -> i32 {
    6
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectVerdict {
    Met,
    NotMet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicConfig {
    pub metric: MetricSpec,
    pub core: Option<Core>,
    #[serde(default = "default_eps_r0")]
    pub eps_r0: f64,
    #[serde(default = "default_eps_count")]
    pub eps_count: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub expect: Option<ExpectVerdict>,
}

fn default_eps_r0() -> f64 {
    0.25
}

fn default_eps_count() -> usize {
    12
}

fn default_samples() -> usize {
    20
}
