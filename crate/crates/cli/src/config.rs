//! System declaration files and candidate open-set files.
//!
//! Every error names the offending field as a JSON pointer.

use std::fmt;
use std::path::Path;

use moran_core::family::parse_ratio_literal;
use moran_core::geometry::rotation_2d;
use moran_core::separation::BoxSequence;
use moran_core::{Aabb, ContractionMap, Error, Family, LayerSystem, WeightSequence};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "invalid configuration at {at}: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(pointer: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError { pointer: pointer.into(), message: message.into() }
}

/// Prefixes library field names with the pointer of the object they came from.
fn rebase(base: &str, e: Error) -> ConfigError {
    match e {
        Error::InvalidParameter { field, reason } if field.starts_with('/') => err(field, reason),
        Error::InvalidParameter { field, reason } => err(format!("{base}/{field}"), reason),
        other => err(base, other.to_string()),
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { .. } | Segment::Unknown => {}
        }
    }
    out
}

fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        let inner = e.into_inner();
        let message = inner.to_string();
        // serde_json appends its own location; the pointer is more useful.
        let message = message.split(" at line ").next().unwrap_or(&message).to_string();
        err(pointer, message)
    })
}

/// A number, or a string such as `"1/3"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Real {
    Number(f64),
    Literal(String),
}

impl Real {
    fn value(&self, pointer: &str) -> Result<f64, ConfigError> {
        match self {
            Real::Number(x) => Ok(*x),
            Real::Literal(s) => parse_ratio_literal(s).ok_or_else(|| err(pointer, format!("not a number: {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKindDecl {
    Similarity,
    Diagonal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDecl {
    pub kind: MapKindDecl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag: Option<Vec<Real>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orthogonal: Option<Vec<Vec<f64>>>,
    pub translation: Vec<Real>,
}

impl MapDecl {
    fn build(&self, dim: usize, at: &str) -> Result<ContractionMap, ConfigError> {
        if self.translation.len() != dim {
            return Err(err(
                format!("{at}/translation"),
                format!("expected {dim} components, got {}", self.translation.len()),
            ));
        }
        let t = self
            .translation
            .iter()
            .enumerate()
            .map(|(i, r)| r.value(&format!("{at}/translation/{i}")))
            .collect::<Result<Vec<f64>, _>>()?;
        match self.kind {
            MapKindDecl::Similarity => {
                if self.diag.is_some() {
                    return Err(err(format!("{at}/diag"), "only allowed for diagonal maps"));
                }
                let ratio = self
                    .ratio
                    .as_ref()
                    .ok_or_else(|| err(format!("{at}/ratio"), "missing"))?
                    .value(&format!("{at}/ratio"))?;
                let orthogonal = match (&self.angle, &self.orthogonal) {
                    (Some(_), Some(_)) => {
                        return Err(err(format!("{at}/angle"), "give either angle or orthogonal, not both"));
                    }
                    (Some(a), None) => {
                        if dim != 2 {
                            return Err(err(format!("{at}/angle"), "only meaningful in dimension 2"));
                        }
                        Some(rotation_2d(*a))
                    }
                    (None, Some(rows)) => Some(matrix(rows, dim, &format!("{at}/orthogonal"))?),
                    (None, None) => None,
                };
                ContractionMap::similarity_with(ratio, orthogonal, &t).map_err(|e| rebase(at, e))
            }
            MapKindDecl::Diagonal => {
                if self.ratio.is_some() || self.angle.is_some() || self.orthogonal.is_some() {
                    return Err(err(at, "diagonal maps take only diag and translation"));
                }
                let diag = self.diag.as_ref().ok_or_else(|| err(format!("{at}/diag"), "missing"))?;
                if diag.len() != dim {
                    return Err(err(format!("{at}/diag"), format!("expected {dim} components, got {}", diag.len())));
                }
                let d = diag
                    .iter()
                    .enumerate()
                    .map(|(i, r)| r.value(&format!("{at}/diag/{i}")))
                    .collect::<Result<Vec<f64>, _>>()?;
                ContractionMap::diagonal(&d, &t).map_err(|e| rebase(at, e))
            }
        }
    }
}

fn matrix(rows: &[Vec<f64>], dim: usize, at: &str) -> Result<moran_core::geometry::Matrix, ConfigError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(err(at, format!("expected a {dim}x{dim} matrix")));
    }
    let mut m = moran_core::geometry::identity();
    for (i, r) in rows.iter().enumerate() {
        for (j, &x) in r.iter().enumerate() {
            m[i][j] = x;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDecl {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDecl {
    fn build(&self, dim: usize, at: &str) -> Result<Aabb, ConfigError> {
        if self.lo.len() != dim {
            return Err(err(format!("{at}/lo"), format!("expected {dim} components, got {}", self.lo.len())));
        }
        if self.hi.len() != dim {
            return Err(err(format!("{at}/hi"), format!("expected {dim} components, got {}", self.hi.len())));
        }
        Aabb::new(&self.lo, &self.hi).map_err(|e| rebase(at, e))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ProviderDecl {
    Explicit,
    Family,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDecl {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightsDecl {
    Uniform,
    Explicit {
        #[serde(default)]
        prefix: Vec<Vec<f64>>,
        cycle: Vec<Vec<f64>>,
    },
    RatioPower {
        s: f64,
    },
}

/// The declaration file as written.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDecl {
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient: Option<BoxDecl>,
    pub provider: ProviderDecl,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<Vec<MapDecl>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cycle: Vec<Vec<MapDecl>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsDecl>,
}

/// A validated system with its sampling weights.
#[derive(Debug, Clone)]
pub struct LoadedSystem {
    pub decl: SystemDecl,
    pub system: LayerSystem,
    pub weights: WeightSequence,
}

impl SystemDecl {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        from_json(text)
    }

    pub fn build(self) -> Result<LoadedSystem, ConfigError> {
        let dim = self.dimension;
        if !(1..=3).contains(&dim) {
            return Err(err("/dimension", format!("must be 1, 2 or 3, got {dim}")));
        }
        let ambient = self.ambient.as_ref().map(|b| b.build(dim, "/ambient")).transpose()?;
        let system = match self.provider {
            ProviderDecl::Explicit => {
                if self.family.is_some() {
                    return Err(err("/family", "not allowed with the explicit provider"));
                }
                let ambient = ambient.ok_or_else(|| err("/ambient", "required with the explicit provider"))?;
                let build_list = |list: &[Vec<MapDecl>], name: &str| {
                    list.iter()
                        .enumerate()
                        .map(|(n, maps)| {
                            if maps.len() < 2 {
                                return Err(err(format!("/{name}/{n}"), "a layer needs at least two maps"));
                            }
                            maps.iter()
                                .enumerate()
                                .map(|(j, m)| m.build(dim, &format!("/{name}/{n}/{j}")))
                                .collect::<Result<Vec<_>, _>>()
                        })
                        .collect::<Result<Vec<_>, ConfigError>>()
                };
                let prefix = build_list(&self.layers, "layers")?;
                let cycle = build_list(&self.cycle, "cycle")?;
                if prefix.is_empty() && cycle.is_empty() {
                    return Err(err("/layers", "give at least one layer in layers or cycle"));
                }
                LayerSystem::explicit(ambient, prefix, cycle).map_err(|e| match e {
                    Error::AmbientViolation { layer, map } => {
                        let at = locate(layer, self.layers.len(), self.cycle.len(), map);
                        err(at, e.to_string())
                    }
                    other => rebase("", other),
                })?
            }
            ProviderDecl::Family => {
                if !self.layers.is_empty() || !self.cycle.is_empty() {
                    return Err(err("/layers", "not allowed with the family provider"));
                }
                let f = self.family.as_ref().ok_or_else(|| err("/family", "required with the family provider"))?;
                let family = Family::from_params(&f.name, &f.params).map_err(|e| rebase("/family", e))?;
                if family.dimension() != dim {
                    return Err(err(
                        "/dimension",
                        format!("family {} has dimension {}, got {dim}", f.name, family.dimension()),
                    ));
                }
                LayerSystem::from_family(family, ambient).map_err(|e| rebase("/ambient", e))?
            }
        };
        let weights = match &self.weights {
            None | Some(WeightsDecl::Uniform) => WeightSequence::Uniform,
            Some(WeightsDecl::RatioPower { s }) => WeightSequence::RatioPower { s: *s },
            Some(WeightsDecl::Explicit { prefix, cycle }) => {
                WeightSequence::Explicit { prefix: prefix.clone(), cycle: cycle.clone() }
            }
        };
        weights.validate().map_err(|e| rebase("/weights", e))?;
        Ok(LoadedSystem { decl: self, system, weights })
    }
}

/// Pointer of map `map` (1-based) of layer `layer` in a prefix/cycle declaration.
fn locate(layer: usize, prefix: usize, cycle: usize, map: usize) -> String {
    if layer <= prefix {
        format!("/layers/{}/{}", layer - 1, map - 1)
    } else {
        format!("/cycle/{}/{}", (layer - prefix - 1) % cycle.max(1), map - 1)
    }
}

pub fn load_system(path: &Path) -> anyhow::Result<LoadedSystem> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(SystemDecl::parse(&text)?.build()?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoxSequenceDecl {
    Constant {
        boxes: Vec<BoxDecl>,
    },
    Explicit {
        #[serde(default)]
        prefix: Vec<Vec<BoxDecl>>,
        cycle: Vec<Vec<BoxDecl>>,
    },
    Family,
}

impl BoxSequenceDecl {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        from_json(text)
    }

    pub fn build(&self, dim: usize) -> Result<BoxSequence, ConfigError> {
        let boxes = |list: &[BoxDecl], at: &str| {
            if list.is_empty() {
                return Err(err(at, "needs at least one box"));
            }
            list.iter().enumerate().map(|(i, b)| b.build(dim, &format!("{at}/{i}"))).collect()
        };
        Ok(match self {
            BoxSequenceDecl::Constant { boxes: b } => BoxSequence::Constant(boxes(b, "/boxes")?),
            BoxSequenceDecl::Explicit { prefix, cycle } => {
                if cycle.is_empty() {
                    return Err(err("/cycle", "must not be empty"));
                }
                BoxSequence::Explicit {
                    prefix: prefix
                        .iter()
                        .enumerate()
                        .map(|(n, l)| boxes(l, &format!("/prefix/{n}")))
                        .collect::<Result<_, _>>()?,
                    cycle: cycle
                        .iter()
                        .enumerate()
                        .map(|(n, l)| boxes(l, &format!("/cycle/{n}")))
                        .collect::<Result<_, _>>()?,
                }
            }
            BoxSequenceDecl::Family => BoxSequence::Family,
        })
    }
}

pub fn load_box_sequence(path: &Path, dim: usize) -> anyhow::Result<BoxSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(BoxSequenceDecl::parse(&text)?.build(dim)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(text: &str) -> Result<LoadedSystem, ConfigError> {
        SystemDecl::parse(text)?.build()
    }

    #[test]
    fn cantor_declaration() {
        let s = build(
            r#"{"dimension":1,"ambient":{"lo":[0],"hi":[1]},"provider":"explicit",
                "cycle":[[{"kind":"similarity","ratio":"1/3","translation":[0]},
                          {"kind":"similarity","ratio":"1/3","translation":[2]}]]}"#,
        )
        .unwrap();
        assert_eq!(s.system.layer(7).unwrap().len(), 2);
        assert!((s.system.layer(1).unwrap().c2() - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn bad_ratio_is_located() {
        let e = build(
            r#"{"dimension":1,"ambient":{"lo":[0],"hi":[1]},"provider":"explicit",
                "cycle":[[{"kind":"similarity","ratio":0.5,"translation":[0]},
                          {"kind":"similarity","ratio":1.2,"translation":[0]}]]}"#,
        )
        .unwrap_err();
        assert_eq!(e.pointer, "/cycle/0/1/ratio");
    }

    #[test]
    fn type_errors_carry_pointers() {
        let e = build(r#"{"dimension":1,"provider":"family","family":{"name":"ex55","params":{}},"ambient":{"lo":["x"],"hi":[1]}}"#)
            .unwrap_err();
        assert_eq!(e.pointer, "/ambient/lo/0");
        let e = build(r#"{"dimension":1,"provider":"family","famliy":{}}"#).unwrap_err();
        assert!(e.message.contains("famliy"), "{e}");
    }

    #[test]
    fn family_parameter_errors_point_into_params() {
        let e = build(r#"{"dimension":1,"provider":"family","family":{"name":"ex53","params":{"rho":2}}}"#).unwrap_err();
        assert_eq!(e.pointer, "/family/params/rho");
    }

    #[test]
    fn ambient_violation_names_the_map() {
        let e = build(
            r#"{"dimension":1,"ambient":{"lo":[0],"hi":[1]},"provider":"explicit",
                "cycle":[[{"kind":"similarity","ratio":0.5,"translation":[0]},
                          {"kind":"similarity","ratio":0.5,"translation":[1.5]}]]}"#,
        )
        .unwrap_err();
        assert_eq!(e.pointer, "/cycle/0/1");
    }

    #[test]
    fn box_sequences() {
        let v = BoxSequenceDecl::parse(r#"{"kind":"constant","boxes":[{"lo":[0],"hi":[1]}]}"#).unwrap();
        assert!(matches!(v.build(1).unwrap(), BoxSequence::Constant(b) if b.len() == 1));
        let e = BoxSequenceDecl::parse(r#"{"kind":"constant","boxes":[{"lo":[0,0],"hi":[1,1]}]}"#)
            .unwrap()
            .build(1)
            .unwrap_err();
        assert_eq!(e.pointer, "/boxes/0/lo");
    }
}
