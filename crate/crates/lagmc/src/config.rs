//! Flat key-value run configuration with dotted sections.
//!
//! ```text
//! # disk -> disk with a small affine right-hand side
//! operator.tau = 1.5707963267948966
//! source.kind = disk
//! source.radius = 1.0
//! target.kind = disk
//! target.radius = 2.0
//! f.kind = kappa
//! f.kappa = 0.05 0.0
//! grid.n_rho = 48
//! grid.n_theta = 96
//! seed = 42
//! ```
//!
//! Parsing is total: every line must be `key = value`, `#` starts a comment,
//! unknown keys are errors (no silent typos), and every error message carries
//! the line number or the missing key.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{ConvexDomain, GeometryError, Vec2};
use crate::operators::OperatorParams;
use crate::solver::{FSpec, HomotopyControls, ProblemSpec, SolveError, Tolerances};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("line {line}: key `{key}`: {msg}")]
    BadValue {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("invalid domain: {0}")]
    Geometry(#[from] GeometryError),
    #[error("invalid problem: {0}")]
    Problem(String),
}

/// Domain entry of the config file.
#[derive(Debug, Clone)]
pub enum DomainSpec {
    Disk {
        center: Vec2,
        radius: f64,
    },
    Ellipse {
        center: Vec2,
        semi_axes: (f64, f64),
        rotation: f64,
    },
    Fourier {
        center: Vec2,
        r0: f64,
        harmonics: Vec<(f64, f64)>,
    },
}

impl DomainSpec {
    pub fn build(&self) -> Result<ConvexDomain, GeometryError> {
        match self {
            DomainSpec::Disk { center, radius } => ConvexDomain::disk(*center, *radius),
            DomainSpec::Ellipse {
                center,
                semi_axes,
                rotation,
            } => ConvexDomain::ellipse(*center, *semi_axes, *rotation),
            DomainSpec::Fourier {
                center,
                r0,
                harmonics,
            } => ConvexDomain::smooth_convex(*center, *r0, harmonics.clone()),
        }
    }
}

/// Parsed run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub tau: f64,
    pub experimental_logdet: bool,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub target_concavity_boost: Option<f64>,
    pub f: FSpec,
    pub n_rho: usize,
    pub n_theta: usize,
    pub tolerances: Tolerances,
    pub homotopy: HomotopyControls,
    pub eps_pos: f64,
    pub diagnostics_full: bool,
    pub out_dir: Option<String>,
    pub seed: u64,
}

struct Raw {
    entries: BTreeMap<String, (usize, String)>,
    consumed: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.consumed.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn require(&self, key: &str) -> Result<(usize, &str), ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| ConfigError::BadValue {
                line,
                key: key.into(),
                msg: format!("{e}"),
            }),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn f64_req(&self, key: &str) -> Result<f64, ConfigError> {
        let (line, v) = self.require(key)?;
        v.parse().map_err(|e| ConfigError::BadValue {
            line,
            key: key.into(),
            msg: format!("{e}"),
        })
    }

    fn usize_req(&self, key: &str) -> Result<usize, ConfigError> {
        let (line, v) = self.require(key)?;
        v.parse().map_err(|e| ConfigError::BadValue {
            line,
            key: key.into(),
            msg: format!("{e}"),
        })
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some((line, v)) => match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(ConfigError::BadValue {
                    line,
                    key: key.into(),
                    msg: format!("not a bool: `{v}`"),
                }),
            },
        }
    }

    fn vec_f64(&self, key: &str) -> Result<Option<(usize, Vec<f64>)>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((line, v)) => {
                let parts: Result<Vec<f64>, _> = v
                    .split([' ', ','])
                    .filter(|p| !p.is_empty())
                    .map(str::parse)
                    .collect();
                parts
                    .map(|xs| Some((line, xs)))
                    .map_err(|e| ConfigError::BadValue {
                        line,
                        key: key.into(),
                        msg: format!("{e}"),
                    })
            }
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            };
            if stripped.trim().is_empty() {
                continue;
            }
            let (key, value) = stripped
                .split_once('=')
                .ok_or_else(|| ConfigError::Malformed {
                    line,
                    text: stripped.trim().to_string(),
                })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Malformed {
                    line,
                    text: stripped.trim().to_string(),
                });
            }
            if entries.insert(key.clone(), (line, value)).is_some() {
                return Err(ConfigError::DuplicateKey { line, key });
            }
        }
        let raw = Raw {
            entries,
            consumed: Default::default(),
        };

        let tau = raw.f64_req("operator.tau")?;
        let experimental_logdet = raw.bool_or("operator.experimental_logdet", false)?;

        let source = Self::domain(&raw, "source")?;
        let target = Self::domain(&raw, "target")?;
        let target_concavity_boost = raw.f64_opt("target.concavity_boost")?;

        let f = Self::rhs(&raw)?;

        let n_rho = raw.usize_req("grid.n_rho")?;
        let n_theta = raw.usize_req("grid.n_theta")?;

        let tol_default = Tolerances::default();
        let tolerances = Tolerances {
            residual_tol: raw.f64_or("tol.residual", tol_default.residual_tol)?,
            step_tol: raw.f64_or("tol.step", tol_default.step_tol)?,
        };
        let hom_default = HomotopyControls::default();
        let homotopy = HomotopyControls {
            dt_init: raw.f64_or("homotopy.dt_init", hom_default.dt_init)?,
            dt_min: raw.f64_or("homotopy.dt_min", hom_default.dt_min)?,
            max_steps: raw.f64_or("homotopy.max_steps", hom_default.max_steps as f64)? as usize,
            max_newton_iters: raw.f64_or(
                "homotopy.max_newton_iters",
                hom_default.max_newton_iters as f64,
            )? as usize,
        };
        let eps_pos = raw.f64_or("safeguard.eps_pos", 1e-6)?;
        let diagnostics_full = raw.bool_or("diagnostics.full", false)?;
        let out_dir = raw.get("output.dir").map(|(_, v)| v.to_string());
        let seed = raw.f64_or("seed", 0.0)? as u64;

        // unknown keys are errors
        let consumed = raw.consumed.borrow();
        for (key, (line, _)) in &raw.entries {
            if !consumed.contains(key) {
                return Err(ConfigError::UnknownKey {
                    line: *line,
                    key: key.clone(),
                });
            }
        }

        Ok(Self {
            tau,
            experimental_logdet,
            source,
            target,
            target_concavity_boost,
            f,
            n_rho,
            n_theta,
            tolerances,
            homotopy,
            eps_pos,
            diagnostics_full,
            out_dir,
            seed,
        })
    }

    fn domain(raw: &Raw, section: &str) -> Result<DomainSpec, ConfigError> {
        let (line, kind) = raw.require(&format!("{section}.kind"))?;
        let center = match raw.vec_f64(&format!("{section}.center"))? {
            Some((l, v)) => {
                if v.len() != 2 {
                    return Err(ConfigError::BadValue {
                        line: l,
                        key: format!("{section}.center"),
                        msg: "expected two components".into(),
                    });
                }
                Vec2::new(v[0], v[1])
            }
            None => Vec2::zeros(),
        };
        match kind {
            "disk" => Ok(DomainSpec::Disk {
                center,
                radius: raw.f64_req(&format!("{section}.radius"))?,
            }),
            "ellipse" => {
                let (l, axes) = raw
                    .vec_f64(&format!("{section}.semi_axes"))?
                    .ok_or_else(|| ConfigError::MissingKey(format!("{section}.semi_axes")))?;
                if axes.len() != 2 {
                    return Err(ConfigError::BadValue {
                        line: l,
                        key: format!("{section}.semi_axes"),
                        msg: "expected two semi-axes".into(),
                    });
                }
                Ok(DomainSpec::Ellipse {
                    center,
                    semi_axes: (axes[0], axes[1]),
                    rotation: raw.f64_or(&format!("{section}.rotation"), 0.0)?,
                })
            }
            "fourier" => {
                let (l, coeffs) = raw
                    .vec_f64(&format!("{section}.coeffs"))?
                    .ok_or_else(|| ConfigError::MissingKey(format!("{section}.coeffs")))?;
                if coeffs.is_empty() || coeffs.len() % 2 == 0 {
                    return Err(ConfigError::BadValue {
                        line: l,
                        key: format!("{section}.coeffs"),
                        msg: "expected r0 followed by (a_k, b_k) pairs".into(),
                    });
                }
                let r0 = coeffs[0];
                let harmonics = coeffs[1..].chunks(2).map(|c| (c[0], c[1])).collect();
                Ok(DomainSpec::Fourier {
                    center,
                    r0,
                    harmonics,
                })
            }
            other => Err(ConfigError::BadValue {
                line,
                key: format!("{section}.kind"),
                msg: format!("unknown domain kind `{other}` (disk | ellipse | fourier)"),
            }),
        }
    }

    fn rhs(raw: &Raw) -> Result<FSpec, ConfigError> {
        match raw.get("f.kind") {
            None => Ok(FSpec::Zero),
            Some((line, kind)) => match kind {
                "zero" => Ok(FSpec::Zero),
                "kappa" => {
                    let (l, k) = raw
                        .vec_f64("f.kappa")?
                        .ok_or_else(|| ConfigError::MissingKey("f.kappa".into()))?;
                    if k.len() != 2 {
                        return Err(ConfigError::BadValue {
                            line: l,
                            key: "f.kappa".into(),
                            msg: "expected two components".into(),
                        });
                    }
                    Ok(FSpec::Affine {
                        kappa: [k[0], k[1]],
                    })
                }
                "radial_quartic" => Ok(FSpec::RadialQuartic {
                    eps: raw.f64_req("f.eps")?,
                }),
                other => Err(ConfigError::BadValue {
                    line,
                    key: "f.kind".into(),
                    msg: format!(
                        "unknown right-hand side `{other}` (zero | kappa | radial_quartic)"
                    ),
                }),
            },
        }
    }

    /// Operator selection honoring the explicit experimental flag.
    pub fn operator(&self) -> Result<OperatorParams, ConfigError> {
        if self.experimental_logdet {
            if self.tau != 0.0 {
                return Err(ConfigError::Problem(
                    "operator.experimental_logdet requires operator.tau = 0".into(),
                ));
            }
            return Ok(OperatorParams::experimental_log_det());
        }
        OperatorParams::new(self.tau).map_err(|e| ConfigError::Problem(e.to_string()))
    }

    /// Builds the full problem description.
    pub fn to_problem(&self) -> Result<ProblemSpec, ConfigError> {
        let operator = self.operator()?;
        let source = self.source.build()?;
        let target = self.target.build()?;
        let mut problem = ProblemSpec::new(
            operator,
            source,
            target,
            self.f.clone(),
            self.n_rho,
            self.n_theta,
        )
        .map_err(|e: SolveError| ConfigError::Problem(e.to_string()))?;
        if let Some(boost) = self.target_concavity_boost {
            problem.target_h =
                crate::geometry::DefiningFunction::new(problem.target.clone(), boost)?;
        }
        problem.tolerances = self.tolerances;
        problem.homotopy = self.homotopy;
        problem.eps_pos = self.eps_pos;
        Ok(problem)
    }

    /// Problem with grid sizes scaled by `2^level` (refinement studies).
    pub fn to_problem_at_level(&self, level: u32) -> Result<ProblemSpec, ConfigError> {
        let mut cfg = self.clone();
        cfg.n_rho = self.n_rho << level;
        cfg.n_theta = self.n_theta << level;
        cfg.to_problem()
    }
}
