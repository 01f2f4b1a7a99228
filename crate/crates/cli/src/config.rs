//! Experiment configuration: JSON schema, validation and conversion into
//! solver inputs.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use solitonlab_core::grid::{BoxGrid, Grid, ProblemParams, RadialGrid};
use solitonlab_core::penalty::{DecayClass, PenaltyCase, PenaltySpec, Potential, PotentialSpec};
use solitonlab_core::semiclassical::{Init, WINDOW_SLACK};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    LimitGround,
    CoupledGround,
    Thresholds,
    Sweep,
    Pohozaev,
    Verify,
}

impl RunKind {
    pub fn name(self) -> &'static str {
        match self {
            RunKind::LimitGround => "limit_ground",
            RunKind::CoupledGround => "coupled_ground",
            RunKind::Thresholds => "thresholds",
            RunKind::Sweep => "sweep",
            RunKind::Pohozaev => "pohozaev",
            RunKind::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub n: usize,
    pub p: f64,
    #[serde(default)]
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PresetConfig {
    Constant {
        value: f64,
    },
    DoubleWell {
        depth: f64,
        shallow: f64,
        stiffness: f64,
        #[serde(default)]
        skew: f64,
        #[serde(default)]
        z0: [f64; 3],
        z1: [f64; 3],
    },
    InversePower {
        m: f64,
        a: f64,
        b: f64,
        sigma: f64,
    },
    CompactSupport {
        m: f64,
        a: f64,
        radius: f64,
    },
}

impl PresetConfig {
    fn build(&self) -> Potential {
        match *self {
            PresetConfig::Constant { value } => Potential::constant(value),
            PresetConfig::DoubleWell {
                depth,
                shallow,
                stiffness,
                skew,
                z0,
                z1,
            } => Potential::double_well(depth, shallow, stiffness, skew, z0, z1),
            PresetConfig::InversePower { m, a, b, sigma } => Potential::inverse_power(m, a, b, sigma),
            PresetConfig::CompactSupport { m, a, radius } => Potential::compact_support(m, a, radius),
        }
    }

    fn decay(&self) -> DecayClass {
        match *self {
            PresetConfig::InversePower { sigma, .. } => DecayClass::InversePower { sigma },
            PresetConfig::CompactSupport { .. } => DecayClass::FastOrCompact,
            _ => DecayClass::InversePower { sigma: 0.0 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub v1: PresetConfig,
    pub v2: PresetConfig,
    #[serde(default)]
    pub center: [f64; 3],
    pub lambda_radius: f64,
    pub u_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridConfig {
    Box { half_width: f64, points: usize },
    Radial { r_max: f64, points: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseConfig {
    Auto,
    Slow,
    Fast,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    #[serde(default = "auto")]
    pub case: CaseConfig,
    pub sigma: Option<f64>,
    pub kappa: Option<f64>,
    pub delta_exp: Option<f64>,
}

fn auto() -> CaseConfig {
    CaseConfig::Auto
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    GroundBump,
    Synchronized,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub kind: InitKind,
    #[serde(default)]
    pub z: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitConfig {
    pub alpha1: f64,
    #[serde(default)]
    pub alpha2: Option<f64>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

fn default_spacing() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsConfig {
    pub m1: f64,
    pub m2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PohozaevConfig {
    pub delta: Option<f64>,
    #[serde(default)]
    pub axis: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_newton")]
    pub newton: f64,
    #[serde(default = "default_slack")]
    pub window_slack: f64,
}

fn default_newton() -> f64 {
    1e-9
}

fn default_slack() -> f64 {
    WINDOW_SLACK
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            newton: default_newton(),
            window_slack: default_slack(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: ParamsConfig,
    pub run: Option<RunKind>,
    pub potential: Option<PotentialConfig>,
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    pub penalty: Option<PenaltyConfig>,
    pub init: Option<InitConfig>,
    pub limit: Option<LimitConfig>,
    pub levels: Option<LevelsConfig>,
    pub pohozaev: Option<PohozaevConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub output_dir: Option<String>,
    pub seed: Option<u64>,
}

/// Inputs of a penalized run, validated and built.
pub struct Semiclassical {
    pub grid: Arc<Grid>,
    pub potential: PotentialSpec,
    pub penalty: PenaltySpec,
    pub init: Init,
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text =
            std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("malformed config: {e}")))
    }

    /// Hex SHA-256 of the canonical serialization, first 16 digits.
    pub fn hash(&self, seed: u64) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        h.update(seed.to_le_bytes());
        format!("{:x}", h.finalize())[..16].to_string()
    }

    pub fn problem(&self) -> Result<ProblemParams, Failure> {
        Ok(ProblemParams::new(self.params.n, self.params.p, self.params.beta)?)
    }

    pub fn limit(&self) -> Result<&LimitConfig, Failure> {
        let l = self
            .limit
            .as_ref()
            .ok_or_else(|| invalid("missing \"limit\" section"))?;
        if !(l.alpha1 > 0.0 && l.alpha2.is_none_or(|a| a > 0.0) && l.spacing > 0.0 && l.spacing <= 0.1) {
            return Err(invalid("limit needs alpha1, alpha2 > 0 and spacing in (0, 0.1]"));
        }
        Ok(l)
    }

    pub fn levels(&self) -> Result<&LevelsConfig, Failure> {
        let l = self
            .levels
            .as_ref()
            .ok_or_else(|| invalid("missing \"levels\" section"))?;
        if !(l.m1 > 0.0 && l.m2 >= l.m1) {
            return Err(invalid("levels need 0 < m1 <= m2"));
        }
        Ok(l)
    }

    pub fn epsilons(&self) -> Result<&[f64], Failure> {
        let e = &self.epsilons;
        if e.is_empty() {
            return Err(invalid("empty epsilon list"));
        }
        if e.iter().any(|x| !(*x > 0.0 && x.is_finite())) || e.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(invalid("epsilons must be positive and strictly decreasing"));
        }
        Ok(e)
    }

    pub fn semiclassical(&self) -> Result<Semiclassical, Failure> {
        let params = self.problem()?;
        let pc = self
            .potential
            .as_ref()
            .ok_or_else(|| invalid("missing \"potential\" section"))?;
        let grid: Arc<Grid> = match self.grid.as_ref().ok_or_else(|| invalid("missing \"grid\" section"))? {
            GridConfig::Box { half_width, points } => Arc::new(BoxGrid::new(params.n, *half_width, *points)?.into()),
            GridConfig::Radial { r_max, points } => Arc::new(RadialGrid::new(params.n, *r_max, *points)?.into()),
        };
        let decay = match (pc.v1.decay(), pc.v2.decay()) {
            (DecayClass::InversePower { sigma: a }, DecayClass::InversePower { sigma: b }) => {
                DecayClass::InversePower { sigma: a.min(b) }
            }
            _ => DecayClass::FastOrCompact,
        };
        let potential = PotentialSpec::new(
            pc.v1.build(),
            pc.v2.build(),
            params.n,
            pc.center,
            pc.lambda_radius,
            pc.u_radius,
            decay,
        )?;
        if !potential.covered_by(&grid) {
            return Err(invalid("grid does not cover the ball U around the potential centre"));
        }
        let eps0 = self.epsilons()?[0];
        let pen = self.penalty.clone().unwrap_or(PenaltyConfig {
            case: CaseConfig::Auto,
            sigma: None,
            kappa: None,
            delta_exp: None,
        });
        let mut penalty = match pen.case {
            CaseConfig::Auto => PenaltySpec::for_potential(eps0, &potential, params.p),
            CaseConfig::Slow => {
                let sigma = pen.sigma.unwrap_or(match decay {
                    DecayClass::InversePower { sigma } => sigma,
                    DecayClass::FastOrCompact => 0.0,
                });
                PenaltySpec::slow(eps0, sigma, params.p)
            }
            CaseConfig::Fast => PenaltySpec::fast(eps0),
        };
        if let (Some(s), PenaltyCase::Slow { .. }) = (pen.sigma, penalty.case) {
            penalty.case = PenaltyCase::Slow { sigma: s };
        }
        if let Some(k) = pen.kappa {
            penalty.kappa = k;
        }
        if let Some(d) = pen.delta_exp {
            penalty.delta_exp = d;
        }
        solitonlab_core::penalty::build_penalty(&penalty, &potential, &params)?;
        let ic = self.init.clone().unwrap_or(InitConfig {
            kind: InitKind::GroundBump,
            z: pc.center,
        });
        let init = match ic.kind {
            InitKind::GroundBump => Init::GroundBump { z: ic.z },
            InitKind::Synchronized => Init::Synchronized { z: ic.z },
        };
        if !potential.in_lambda(&ic.z) {
            return Err(invalid("initial bump centre lies outside Lambda"));
        }
        let h = grid.h();
        if let Some(e) = self.epsilons.iter().find(|e| h > **e / 8.0) {
            return Err(invalid(format!("grid spacing {h} does not resolve eps = {e}")));
        }
        if !(self.tolerances.newton > 0.0 && self.tolerances.window_slack >= 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        Ok(Semiclassical {
            grid,
            potential,
            penalty,
            init,
        })
    }

    /// Checks everything the given run kind will need, before any compute.
    pub fn validate(&self, kind: RunKind) -> Result<(), Failure> {
        if let Some(r) = self.run {
            if r != kind {
                return Err(invalid(format!(
                    "config declares run \"{}\" but the subcommand is \"{}\"",
                    r.name(),
                    kind.name()
                )));
            }
        }
        self.problem()?;
        match kind {
            RunKind::LimitGround | RunKind::CoupledGround => {
                self.limit()?;
            }
            RunKind::Thresholds => {
                self.levels()?;
            }
            RunKind::Sweep | RunKind::Verify => {
                self.semiclassical()?;
            }
            RunKind::Pohozaev => {
                let sc = self.semiclassical()?;
                if let Some(p) = &self.pohozaev {
                    if p.axis >= self.params.n {
                        return Err(invalid("pohozaev axis exceeds the dimension"));
                    }
                    if matches!(sc.grid.as_ref(), Grid::Radial(_)) && p.axis != 0 {
                        return Err(invalid("radial grids only support axis 0"));
                    }
                    if p.delta.is_some_and(|d| !(d > 0.0)) {
                        return Err(invalid("pohozaev delta must be positive"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ExperimentConfig {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn hash_ignores_formatting_and_tracks_seed() {
        let a = parse(r#"{"params":{"n":1,"p":2.0,"beta":1.0},"levels":{"m1":1.0,"m2":1.0}}"#);
        let b = parse("{\n  \"levels\": {\"m2\": 1, \"m1\": 1},\n  \"params\": {\"beta\": 1, \"p\": 2, \"n\": 1}\n}");
        assert_eq!(a.hash(0), b.hash(0));
        assert_ne!(a.hash(0), a.hash(1));
        assert_eq!(a.hash(0).len(), 16);
    }

    #[test]
    fn unsorted_epsilons_are_rejected() {
        let c = parse(r#"{"params":{"n":1,"p":2.0,"beta":1.0},"epsilons":[0.1,0.2]}"#);
        assert!(c.epsilons().is_err());
    }

    #[test]
    fn pohozaev_axis_must_fit_dimension() {
        let c = parse(
            r#"{"params":{"n":1,"p":2.0,"beta":1.0},"potential":{"v1":{"preset":"constant","value":1.0},
            "v2":{"preset":"constant","value":1.0},"lambda_radius":1.0,"u_radius":1.5},
            "grid":{"kind":"box","half_width":4.0,"points":801},"epsilons":[0.2],
            "init":{"kind":"ground_bump"},"pohozaev":{"axis":1}}"#,
        );
        assert!(matches!(c.validate(RunKind::Pohozaev), Err(Failure::Validation(_))));
    }
}
