use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One protected attribute and its ordered values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, values: &[&str]) -> Self {
        Attribute {
            name: name.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

/// Ordered protected attributes of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct AttributeSchema {
    pub attributes: Vec<Attribute>,
}

/// Separator of intersectional attribute names and values.
pub const PRODUCT_SEPARATOR: char = '*';

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let s = AttributeSchema { attributes };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field: String, message: String| Error::Schema {
            record: "schema".into(),
            field,
            message,
        };
        let mut names = BTreeSet::new();
        for a in &self.attributes {
            if a.name.is_empty() {
                return Err(err("name".into(), "attribute name is empty".into()));
            }
            if !names.insert(a.name.as_str()) {
                return Err(err(a.name.clone(), "duplicate attribute name".into()));
            }
            if a.values.len() < 2 {
                return Err(err(a.name.clone(), format!("needs at least 2 values, has {}", a.values.len())));
            }
            let mut seen = BTreeSet::new();
            for v in &a.values {
                if v.is_empty() {
                    return Err(err(a.name.clone(), "empty value".into()));
                }
                if !seen.insert(v.as_str()) {
                    return Err(err(a.name.clone(), format!("duplicate value `{v}`")));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Attribute> {
        self.attributes
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Cartesian product `a*b` with values `x*y`, `a`'s values varying slowest.
    pub fn product(&self, a: &str, b: &str) -> Result<Attribute> {
        let (aa, bb) = (self.get(a)?, self.get(b)?);
        if aa.name == bb.name {
            return Err(Error::Invalid(format!("cannot intersect `{a}` with itself")));
        }
        Ok(Attribute {
            name: format!("{a}{PRODUCT_SEPARATOR}{b}"),
            values: aa
                .values
                .iter()
                .flat_map(|x| bb.values.iter().map(move |y| format!("{x}{PRODUCT_SEPARATOR}{y}")))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One sample: image locator (relative to the manifest's directory),
/// expression label, and attribute values by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub path: String,
    pub expression: usize,
    pub attrs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema: AttributeSchema,
    pub resolution: [usize; 3],
    pub num_classes: usize,
    pub split: Split,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    /// Sort records by locator, then check every invariant.
    pub fn new(
        schema: AttributeSchema,
        resolution: [usize; 3],
        num_classes: usize,
        split: Split,
        mut records: Vec<Record>,
    ) -> Result<Self> {
        records.sort_by(|a, b| a.path.cmp(&b.path));
        let m = DatasetManifest {
            schema,
            resolution,
            num_classes,
            split,
            records,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let top = |field: &str, message: String| Error::Schema {
            record: "manifest".into(),
            field: field.into(),
            message,
        };
        if self.resolution.contains(&0) {
            return Err(top("resolution", format!("{:?} has a zero dimension", self.resolution)));
        }
        if self.num_classes < 2 {
            return Err(top("num_classes", format!("{} < 2", self.num_classes)));
        }
        for (i, r) in self.records.iter().enumerate() {
            let id = if r.path.is_empty() { format!("record {i}") } else { r.path.clone() };
            if r.path.is_empty() {
                return Err(Error::Schema {
                    record: id,
                    field: "path".into(),
                    message: "empty locator".into(),
                });
            }
            if i > 0 && self.records[i - 1].path >= r.path {
                return Err(Error::Schema {
                    record: id,
                    field: "path".into(),
                    message: "records must be unique and sorted by path".into(),
                });
            }
            if r.expression >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    record: id,
                    label: r.expression,
                    num_classes: self.num_classes,
                });
            }
            for a in &self.schema.attributes {
                match r.attrs.get(&a.name) {
                    None => {
                        return Err(Error::Schema {
                            record: id,
                            field: format!("attrs.{}", a.name),
                            message: "missing".into(),
                        })
                    }
                    Some(v) if a.value_index(v).is_none() => {
                        return Err(Error::Schema {
                            record: id,
                            field: format!("attrs.{}", a.name),
                            message: format!("`{v}` is not one of {:?}", a.values),
                        })
                    }
                    Some(_) => {}
                }
            }
            if let Some(extra) = r.attrs.keys().find(|k| self.schema.get(k).is_err()) {
                return Err(Error::Schema {
                    record: id,
                    field: format!("attrs.{extra}"),
                    message: "not declared in the schema".into(),
                });
            }
        }
        Ok(())
    }

    /// Canonical text form: pretty JSON with fixed field order and a trailing newline.
    pub fn to_canonical_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Parse and validate; records are sorted by locator.
    pub fn from_str_at(text: &str, origin: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        DatasetManifest::new(m.schema, m.resolution, m.num_classes, m.split, m.records)
    }

    /// Value index of `attribute` for every record, in record order. Product
    /// attributes (`a*b`) are derived from their components.
    pub fn attribute_indices(&self, attribute: &str) -> Result<Vec<usize>> {
        let attr = self.resolve_attribute(attribute)?;
        let parts: Vec<&str> = attribute.split(PRODUCT_SEPARATOR).collect();
        self.records
            .iter()
            .map(|r| {
                let joined = parts
                    .iter()
                    .map(|p| r.attrs.get(*p).map(String::as_str).unwrap_or(""))
                    .collect::<Vec<_>>()
                    .join(&PRODUCT_SEPARATOR.to_string());
                attr.value_index(&joined).ok_or_else(|| Error::Schema {
                    record: r.path.clone(),
                    field: format!("attrs.{attribute}"),
                    message: format!("`{joined}` not a value"),
                })
            })
            .collect()
    }

    /// Declared attribute, or the product of two declared ones for `a*b`.
    pub fn resolve_attribute(&self, attribute: &str) -> Result<Attribute> {
        if let Ok(a) = self.schema.get(attribute) {
            return Ok(a.clone());
        }
        match attribute.split_once(PRODUCT_SEPARATOR) {
            Some((a, b)) if !b.contains(PRODUCT_SEPARATOR) => self.schema.product(a, b),
            _ => Err(Error::UnknownAttribute(attribute.to_string())),
        }
    }

    /// One sub-manifest per value of `attribute`, in value order.
    pub fn partition_by_attribute(&self, attribute: &str) -> Result<Vec<DatasetManifest>> {
        let attr = self.resolve_attribute(attribute)?;
        let idx = self.attribute_indices(attribute)?;
        let mut parts: Vec<Vec<Record>> = vec![Vec::new(); attr.values.len()];
        for (r, &v) in self.records.iter().zip(&idx) {
            parts[v].push(r.clone());
        }
        Ok(parts
            .into_iter()
            .map(|records| DatasetManifest {
                records,
                ..self.clone_header()
            })
            .collect())
    }

    fn clone_header(&self) -> DatasetManifest {
        DatasetManifest {
            schema: self.schema.clone(),
            resolution: self.resolution,
            num_classes: self.num_classes,
            split: self.split,
            records: Vec::new(),
        }
    }

    /// Records at `rows`, keeping order.
    pub fn subset(&self, rows: &[usize]) -> DatasetManifest {
        let mut rows = rows.to_vec();
        rows.sort_unstable();
        rows.dedup();
        DatasetManifest {
            records: rows.iter().map(|&i| self.records[i].clone()).collect(),
            ..self.clone_header()
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::from_str_at(&text, &path.display().to_string())
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    std::fs::write(path, manifest.to_canonical_string()).map_err(|e| Error::io(path, e))
}
