//! Run configuration: a flat TOML file with `[metric]`, `[path_end]`,
//! `[run]`, `[tolerances]` and `[continue]` sections.

use std::path::Path;

use anyhow::{bail, Context, Result};
use geocount::geometry::{MetricPath, MetricSpec, Profile};
use geocount::weights::{GammaSpec, PerturbationStrategy};
use serde::Deserialize;

pub const MESHES: [usize; 4] = [128, 256, 512, 1024];

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MetricSection {
    /// `ellipsoid`, `sphere`, `revolution` or `conformal`.
    pub family: String,
    /// Ellipsoid coefficients: the `x_i` semi-axis is `1 / a_i`.
    pub a: Option<Vec<f64>>,
    /// Sphere dimension `n`.
    pub dim: Option<usize>,
    /// `radius`, `radius-squared`, `catenoid` or `spheroid`.
    pub profile: Option<String>,
    pub coeffs: Option<Vec<f64>>,
    pub z_range: Option<[f64; 2]>,
    pub waist: Option<f64>,
    /// Spheroid equatorial radius and polar semi-axis.
    pub semi_axes: Option<[f64; 2]>,
    /// Solid-harmonic coefficients of the conformal exponent.
    pub harmonics: Option<Vec<f64>>,
    pub pole_axis: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub length: Option<f64>,
    pub window: Option<[f64; 2]>,
    pub ids: Option<Vec<usize>>,
    pub mesh: Option<usize>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub strategies: Option<Vec<String>>,
    /// `census` or `degenerate`.
    pub protocol: Option<String>,
    pub d_max: Option<usize>,
    /// Geodesic ids analyzed by `jacobi` (all primitives when absent).
    pub geodesics: Option<Vec<usize>>,
    /// Lengths at which `count` evaluates π.
    pub count_at: Option<Vec<f64>>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    pub nullity: Option<f64>,
    pub residual: Option<f64>,
    pub event: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ContinueSection {
    /// Ids in the census of the start metric; defaults to one orientation
    /// of every primitive.
    pub start_ids: Option<Vec<usize>>,
    /// Number of grid points for the window invariance check.
    pub grid: Option<usize>,
    pub initial_step: Option<f64>,
    pub max_step: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub metric: MetricSection,
    pub path_end: Option<MetricSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(rename = "continue", default)]
    pub cont: ContinueSection,
}

fn need<T: Clone>(v: &Option<T>, key: &str) -> Result<T> {
    v.clone().with_context(|| format!("missing key `{key}`"))
}

impl MetricSection {
    pub fn build(&self) -> Result<MetricSpec> {
        let spec = match self.family.as_str() {
            "ellipsoid" => MetricSpec::ellipsoid(&need(&self.a, "a")?)?,
            "sphere" => {
                let n = self.dim.unwrap_or(2);
                MetricSpec::ellipsoid(&vec![1.0; n + 1])?
            }
            "revolution" => {
                let kind = self.profile.as_deref().unwrap_or("radius");
                let range = |s: &Self| need(&s.z_range, "z_range").map(|r| (r[0], r[1]));
                let profile = match kind {
                    "radius" => Profile::radius_poly(need(&self.coeffs, "coeffs")?, range(self)?),
                    "radius-squared" => Profile::radius_squared_poly(need(&self.coeffs, "coeffs")?, range(self)?),
                    "catenoid" => Profile::catenoid(need(&self.waist, "waist")?, range(self)?),
                    "spheroid" => {
                        let [a, c] = need(&self.semi_axes, "semi_axes")?;
                        Profile::spheroid(a, c)
                    }
                    other => bail!("unknown profile `{other}`"),
                };
                MetricSpec::revolution(profile)?
            }
            "conformal" => MetricSpec::conformal_sphere(&need(&self.harmonics, "harmonics")?)?,
            other => bail!("unknown metric family `{other}`"),
        };
        Ok(match self.pole_axis {
            Some(axis) => spec.with_pole_axis(axis),
            None => spec,
        })
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("malformed config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.metric.build()?;
        if let Some(end) = &self.path_end {
            MetricPath::new(self.metric.build()?, end.build()?)?;
        }
        if !MESHES.contains(&self.mesh()) {
            bail!("mesh must be one of {MESHES:?}, got {}", self.mesh());
        }
        let t = &self.tolerances;
        for (name, v) in [("nullity", t.nullity), ("residual", t.residual), ("event", t.event)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    bail!("tolerance `{name}` must be positive, got {v}");
                }
            }
        }
        if let Some(l) = self.run.length {
            if !(l > 0.0) {
                bail!("length must be positive");
            }
        }
        if let Some([lo, hi]) = self.run.window {
            if !(lo >= 0.0 && hi > lo) {
                bail!("window must satisfy 0 <= lo < hi");
            }
        }
        if self.run.trials == Some(0) {
            bail!("trials must be at least 1");
        }
        for s in self.run.strategies.iter().flatten() {
            PerturbationStrategy::parse(s)?;
        }
        if let Some(p) = &self.run.protocol {
            if p != "census" && p != "degenerate" {
                bail!("protocol must be `census` or `degenerate`");
            }
        }
        Ok(())
    }

    pub fn mesh(&self) -> usize {
        self.run.mesh.unwrap_or(256)
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.unwrap_or(1)
    }

    pub fn trials(&self) -> usize {
        self.run.trials.unwrap_or(2)
    }

    pub fn d_max(&self) -> usize {
        self.run.d_max.unwrap_or(geocount::weights::DEFAULT_D_MAX)
    }

    /// Census bound: the explicit length, else the window's upper end.
    pub fn length_bound(&self) -> Result<f64> {
        match (self.run.length, self.run.window) {
            (Some(l), _) => Ok(l),
            (None, Some([_, hi])) => Ok(hi),
            _ => bail!("missing key `length` (or `window`)"),
        }
    }

    pub fn gamma(&self) -> Result<GammaSpec> {
        if let Some(ids) = &self.run.ids {
            return Ok(GammaSpec::Ids(ids.clone()));
        }
        let [lo, hi] = self.run.window.unwrap_or([0.0, self.length_bound()?]);
        Ok(GammaSpec::Window(lo, hi))
    }

    pub fn strategies(&self) -> Result<Vec<PerturbationStrategy>> {
        let names = self.run.strategies.clone().unwrap_or_else(|| vec!["ellipsoid-jitter".into()]);
        names.iter().map(|s| Ok(PerturbationStrategy::parse(s)?)).collect()
    }

    pub fn path(&self) -> Result<MetricPath> {
        let end = self.path_end.as_ref().context("the continue command needs a [path_end] section")?;
        Ok(MetricPath::new(self.metric.build()?, end.build()?)?)
    }
}
