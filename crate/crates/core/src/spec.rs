//! JSON distribution specs: the on-disk form of every [`Distribution`].
//!
//! ```json
//! {"kind": "parametric", "family": "pareto", "params": [2.0]}
//! {"kind": "atomic", "points": [0, 1], "log_masses": [-0.69, -0.69]}
//! {"kind": "grid", "dx": 0.01, "log_tail": [0, -0.01, "-inf"]}
//! {"kind": "counterexample", "variant": 1, "gamma_hat": 0.001, "n_atoms": 8}
//! {"kind": "shift_mixture", "base": {...}}
//! {"kind": "tilted", "base": {...}, "gamma": 0.5}
//! ```
//!
//! Non-finite reals are written as the strings `"inf"`, `"-inf"` and `"nan"`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dist::{build_atomic, build_grid, counterexample, make_parametric, shift_mixture, Distribution, Repr, Truncation};
use crate::error::{Error, Result};
use crate::transforms::{exp_tilt, LaplaceSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    Parametric {
        family: String,
        params: Vec<f64>,
    },
    Atomic {
        points: Vec<f64>,
        #[serde(with = "reals")]
        log_masses: Vec<f64>,
        /// Present for a finite section of an infinite atomic law.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncated: Option<TruncatedSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        declared: Option<LaplaceSummary>,
    },
    Grid {
        dx: f64,
        #[serde(with = "reals")]
        log_tail: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_reals")]
        log_err: Option<Vec<f64>>,
    },
    Counterexample {
        variant: u8,
        #[serde(default)]
        gamma_hat: Option<f64>,
        n_atoms: usize,
    },
    ShiftMixture {
        base: Box<DistSpec>,
    },
    Tilted {
        base: Box<DistSpec>,
        gamma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedSpec {
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_real")]
    pub log_neglected_mass: Option<f64>,
}

impl DistSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specs always serialize")
    }

    pub fn build(&self) -> Result<Distribution> {
        match self {
            DistSpec::Parametric { family, params } => make_parametric(family, params),
            DistSpec::Atomic {
                points,
                log_masses,
                truncated,
                declared,
            } => build_atomic(
                points.clone(),
                log_masses.clone(),
                truncated.map(|t| Truncation {
                    log_neglected_mass: t.log_neglected_mass,
                }),
                *declared,
                true,
            ),
            DistSpec::Grid { dx, log_tail, log_err } => {
                if let Some(e) = log_err {
                    if e.len() != log_tail.len() {
                        return Err(Error::Spec(format!(
                            "field `log_err` has {} entries, `log_tail` has {}",
                            e.len(),
                            log_tail.len()
                        )));
                    }
                }
                build_grid(*dx, log_tail.clone(), log_err.clone())
            }
            DistSpec::Counterexample {
                variant,
                gamma_hat,
                n_atoms,
            } => {
                let g = match (variant, gamma_hat) {
                    (3, g) => g.unwrap_or(f64::INFINITY),
                    (_, Some(g)) => *g,
                    (_, None) => return Err(Error::Spec("missing field `gamma_hat`".into())),
                };
                counterexample(*variant, g, *n_atoms)
            }
            DistSpec::ShiftMixture { base } => shift_mixture(&base.build()?),
            DistSpec::Tilted { base, gamma } => exp_tilt(&base.build()?, *gamma),
        }
    }

    /// The spec that rebuilds `f`.
    pub fn of(f: &Distribution) -> Self {
        match f.repr() {
            Repr::Parametric(fam) => DistSpec::Parametric {
                family: fam.tag().to_string(),
                params: fam.params(),
            },
            Repr::Atomic(a) => DistSpec::Atomic {
                points: a.points().to_vec(),
                log_masses: a.log_masses().to_vec(),
                truncated: a.truncation().map(|t| TruncatedSpec {
                    log_neglected_mass: t.log_neglected_mass,
                }),
                declared: a.declared().copied(),
            },
            Repr::Grid(g) => DistSpec::Grid {
                dx: g.dx(),
                log_tail: g.log_tail().to_vec(),
                log_err: g.log_err().map(|e| e.to_vec()),
            },
            Repr::ShiftMixture(b) => DistSpec::ShiftMixture {
                base: Box::new(DistSpec::of(b)),
            },
            Repr::Tilted(t) => DistSpec::Tilted {
                base: Box::new(DistSpec::of(t.base())),
                gamma: t.gamma(),
            },
        }
    }
}

/// Reads and builds a spec file.
pub fn read_spec(path: &std::path::Path) -> Result<Distribution> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Spec(format!("{}: {e}", path.display())))?;
    DistSpec::from_json(&text)
        .and_then(|s| s.build())
        .map_err(|e| Error::Spec(format!("{}: {e}", path.display())))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawReal {
    Num(f64),
    Text(String),
}

fn parse_real<E: serde::de::Error>(r: RawReal) -> std::result::Result<f64, E> {
    match r {
        RawReal::Num(v) => Ok(v),
        RawReal::Text(s) => match s.as_str() {
            "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
            "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
            "nan" | "NaN" => Ok(f64::NAN),
            other => Err(E::custom(format!("expected a number, `inf` or `-inf`, got `{other}`"))),
        },
    }
}

fn write_real<S: Serializer>(v: f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    crate::analysis::Real(v).serialize(s)
}

mod reals {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| crate::analysis::Real(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        Vec::<RawReal>::deserialize(d)?.into_iter().map(parse_real).collect()
    }
}

mod opt_reals {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(v) => reals::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<f64>>, D::Error> {
        reals::deserialize(d).map(Some)
    }
}

mod opt_real {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(v) => write_real(*v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        parse_real(RawReal::deserialize(d)?).map(Some)
    }
}
