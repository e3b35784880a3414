//! JSON run configuration with sections `grid`, `fields`, `go`, `carleman`,
//! `reconstruction` and `experiment`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::experiment::{FamilyConfig, Perturbation, StabilityLaw};
use crate::expr::Expr;
use crate::fields::{make_divfree_field, CoefficientPair, GaugeFunction, VectorField};
use crate::go::Frequency;
use crate::grid::SpaceTimeGrid;
use crate::reconstruction::ReconstructionConfig;
use crate::solver::Scheme;
use crate::suites::GoSetup;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: GridSection,
    pub fields: FieldsSection,
    pub go: GoSection,
    pub carleman: CarlemanSection,
    pub reconstruction: ReconstructionSection,
    pub experiment: ExperimentSection,
}

impl Config {
    pub fn from_json(src: &str) -> Result<Self> {
        serde_json::from_str(src).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&src)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub nx: usize,
    /// Number of time levels including `t = 0`.
    pub nt: usize,
    pub t_final: f64,
    pub scheme: Scheme,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { n: 2, nx: 33, nt: 64, t_final: 1.5, scheme: Scheme::BackwardEuler }
    }
}

impl GridSection {
    pub fn build(&self) -> Result<SpaceTimeGrid<f64>> {
        SpaceTimeGrid::new(self.n, self.nx, self.nt, self.t_final)
    }
}

/// Convection term given either componentwise or by stream potentials
/// (`n = 2`: one potential, `n = 3`: three).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorSpec {
    pub components: Option<Vec<String>>,
    pub potentials: Option<Vec<String>>,
}

impl VectorSpec {
    pub fn build(&self, n: usize) -> Result<VectorField> {
        match (&self.components, &self.potentials) {
            (Some(_), Some(_)) => Err(LabError::Config("give either components or potentials, not both".into())),
            (Some(c), None) => {
                if c.len() != n {
                    return Err(LabError::Config(format!("{} components for n = {n}", c.len())));
                }
                VectorField::parse(c)
            }
            (None, Some(p)) => {
                let exprs = p.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?;
                make_divfree_field(&exprs, n)
            }
            (None, None) => Ok(VectorField::zero(n)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSpec {
    pub a: VectorSpec,
    pub q: String,
    pub m_bound: f64,
}

impl Default for PairSpec {
    fn default() -> Self {
        PairSpec { a: VectorSpec::default(), q: "0".into(), m_bound: 100.0 }
    }
}

impl PairSpec {
    pub fn build(&self, n: usize) -> Result<CoefficientPair> {
        Ok(CoefficientPair::new(self.a.build(n)?, Expr::parse(&self.q)?, self.m_bound))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldsSection {
    pub pair1: PairSpec,
    /// Defaults to `pair1`.
    pub pair2: Option<PairSpec>,
    /// Dirichlet data of `forward`, an expression in `t, x1..xn`.
    pub boundary_data: String,
    pub gauge: Option<String>,
    /// Probe count and power iterations of the DN-difference norm.
    pub probes: usize,
    pub power_iters: usize,
    /// Measured part `Sigma_-` for the DN map; `None` measures everything.
    pub cone: Option<ConeSpec>,
}

impl Default for FieldsSection {
    fn default() -> Self {
        FieldsSection {
            pair1: PairSpec::default(),
            pair2: None,
            boundary_data: "t*(1+x1)".into(),
            gauge: None,
            probes: 6,
            power_iters: 200,
            cone: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeSpec {
    pub omega0: Vec<f64>,
    pub eps: f64,
}

impl FieldsSection {
    pub fn pairs(&self, n: usize) -> Result<(CoefficientPair, CoefficientPair)> {
        let p1 = self.pair1.build(n)?;
        let p2 = match &self.pair2 {
            Some(p) => p.build(n)?,
            None => p1.clone(),
        };
        Ok((p1, p2))
    }

    pub fn gauge(&self, grid: &SpaceTimeGrid<f64>) -> Result<Option<GaugeFunction>> {
        self.gauge.as_ref().map(|g| GaugeFunction::new(Expr::parse(g)?, grid)).transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoSection {
    pub enabled: bool,
    pub omega: Vec<f64>,
    pub tau: f64,
    pub xi: Vec<f64>,
    pub delta: f64,
    pub lambdas: Vec<f64>,
    /// Spatial grids of the transport-order study (time levels `transport_nt`).
    pub transport_nx: Vec<usize>,
    pub transport_nt: usize,
    pub min_order: f64,
    pub max_slope_l2: f64,
    pub max_slope_h1: f64,
}

impl Default for GoSection {
    fn default() -> Self {
        GoSection {
            enabled: true,
            omega: vec![1.0, 0.0],
            tau: 2.0 * std::f64::consts::PI / 1.5,
            xi: vec![0.0, std::f64::consts::PI],
            delta: 0.2,
            lambdas: vec![8.0, 16.0, 32.0, 64.0],
            transport_nx: vec![33, 65, 129],
            transport_nt: 16,
            min_order: 1.9,
            max_slope_l2: -0.8,
            max_slope_h1: 0.2,
        }
    }
}

impl GoSection {
    /// Growing-amplitude setup for `A_2` of `pair2` and `D = A_1 - A_2`.
    pub fn setup(&self, pair1: &CoefficientPair, pair2: &CoefficientPair) -> GoSetup {
        GoSetup {
            pair2: pair2.clone(),
            d: pair1.a.sub(&pair2.a),
            omega: self.omega.clone(),
            freq: Frequency { tau: self.tau, xi: self.xi.clone() },
            delta: self.delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlemanSection {
    pub enabled: bool,
    pub omega: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub suite_size: usize,
    pub seed: u64,
    /// Allowed growth of the bound when `lambda` quadruples.
    pub growth: f64,
}

impl Default for CarlemanSection {
    fn default() -> Self {
        CarlemanSection { enabled: true, omega: vec![0.6, 0.8], lambdas: vec![4.0, 8.0, 16.0, 32.0, 64.0], suite_size: 20, seed: 7, growth: 1.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
// `deny_unknown_fields` does not combine with `flatten`.
#[serde(default)]
pub struct ReconstructionSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub settings: ReconstructionConfig,
    pub reconstruct_q: bool,
    /// Suite passes only if the relative `L2(Q)` error of `eta^2 A` stays below this.
    pub max_rel_error: Option<f64>,
    /// Tolerance on `|xi . A^|` relative to `|A^|`.
    pub div_tol: f64,
    /// Time level written as a CSV grid (defaults to the middle).
    pub slice: Option<usize>,
}

impl Default for ReconstructionSection {
    fn default() -> Self {
        ReconstructionSection {
            enabled: true,
            settings: ReconstructionConfig::default(),
            reconstruct_q: false,
            max_rel_error: None,
            div_tol: 1e-8,
            slice: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub enabled: bool,
    pub scenario: String,
    pub scales: Vec<f64>,
    pub perturbation: VectorSpec,
    pub perturbation_q: String,
    pub theta: f64,
    pub hypothesis_tol: f64,
    pub laws: Vec<StabilityLaw>,
    pub min_rank_correlation: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            enabled: true,
            scenario: "family".into(),
            scales: vec![0.0, 0.05, 0.1, 0.2, 0.4, 0.8],
            perturbation: VectorSpec { components: None, potentials: Some(vec!["0.3*sin(pi*x1)^2*sin(pi*x2)^2".into()]) },
            perturbation_q: "0".into(),
            theta: 0.5,
            hypothesis_tol: 1e-8,
            laws: vec![StabilityLaw::Power, StabilityLaw::DoubleLog],
            min_rank_correlation: 0.9,
        }
    }
}

impl ExperimentSection {
    pub fn perturbation(&self, n: usize) -> Result<Perturbation> {
        Ok(Perturbation { da: self.perturbation.build(n)?, dq: Expr::parse(&self.perturbation_q)? })
    }

    pub fn family(&self, fields: &FieldsSection, recon: &ReconstructionSection) -> FamilyConfig {
        FamilyConfig {
            scenario: self.scenario.clone(),
            scales: self.scales.clone(),
            reconstruction: recon.settings.clone(),
            probes: fields.probes,
            power_iters: fields.power_iters,
            reconstruct_q: recon.reconstruct_q,
            theta: self.theta,
            hypothesis_tol: self.hypothesis_tol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_uses_defaults() {
        let c = Config::from_json("{}").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.grid.nx, 33);
    }

    #[test]
    fn sections_parse() {
        let c = Config::from_json(
            r#"{
              "grid": {"nx": 17, "nt": 16},
              "fields": {"pair1": {"a": {"potentials": ["sin(pi*x1)^2*sin(pi*x2)^2"]}, "q": "1+x1"},
                         "pair2": {"a": {"components": ["0", "0"]}, "q": "1"}},
              "reconstruction": {"lambda": 16, "mode": "cone", "eps": 1.0, "kmax": 2},
              "experiment": {"laws": ["double_log", "triple_log"]}
            }"#,
        )
        .unwrap();
        assert_eq!(c.reconstruction.settings.lambda, 16.0);
        let (p1, p2) = c.fields.pairs(2).unwrap();
        assert!(!p1.a.is_zero() && p2.a.is_zero());
        assert_eq!(c.experiment.laws, vec![StabilityLaw::DoubleLog, StabilityLaw::TripleLog]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = Config::from_json(r#"{"grid": {"nx": 17, "bogus": 1}}"#).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        assert!(Config::from_json(r#"{"extra": {}}"#).is_err());
    }

    #[test]
    fn vector_spec_is_exclusive() {
        let v = VectorSpec { components: Some(vec!["0".into(), "0".into()]), potentials: Some(vec!["0".into()]) };
        assert!(v.build(2).is_err());
    }
}
