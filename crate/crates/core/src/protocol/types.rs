use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Named input values of an execution request.
pub type Inputs = BTreeMap<String, Value>;

/// Named output values produced by a process.
pub type Outputs = BTreeMap<String, Value>;

/// Execution modes a process supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobControl {
    SyncExecute,
    AsyncExecute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessSummary {
    pub id: String,
    pub version: String,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    pub job_control_options: BTreeSet<JobControl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessDescription {
    pub summary: ProcessSummary,
    pub inputs: BTreeMap<String, InputDescription>,
    pub outputs: BTreeMap<String, OutputDescription>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum DataKind {
    Number,
    Integer,
    Boolean,
    String,
    Enumeration,
    NumberGrid,
    GeoPointList,
}

impl DataKind {
    pub const ALL: [DataKind; 7] = [
        DataKind::Number,
        DataKind::Integer,
        DataKind::Boolean,
        DataKind::String,
        DataKind::Enumeration,
        DataKind::NumberGrid,
        DataKind::GeoPointList,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DataKind::Number => "number",
            DataKind::Integer => "integer",
            DataKind::Boolean => "boolean",
            DataKind::String => "string",
            DataKind::Enumeration => "enumeration",
            DataKind::NumberGrid => "numberGrid",
            DataKind::GeoPointList => "geoPointList",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum OutputKind {
    Number,
    NumberGrid,
    GeoPointList,
    Table,
}

/// Upper occurrence limit of an input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxOccurs {
    Bounded(u32),
    Unbounded,
}

impl MaxOccurs {
    pub fn admits(self, count: usize) -> bool {
        match self {
            MaxOccurs::Bounded(max) => count <= max as usize,
            MaxOccurs::Unbounded => true,
        }
    }
}

impl Default for MaxOccurs {
    fn default() -> Self {
        MaxOccurs::Bounded(1)
    }
}

impl Serialize for MaxOccurs {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            MaxOccurs::Bounded(n) => serializer.serialize_u32(*n),
            MaxOccurs::Unbounded => serializer.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for MaxOccurs {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u32),
            Word(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Count(0) => Err(serde::de::Error::custom("maxOccurs must be positive")),
            Raw::Count(n) => Ok(MaxOccurs::Bounded(n)),
            Raw::Word(w) if w == "unbounded" => Ok(MaxOccurs::Unbounded),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("invalid maxOccurs {w:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InputDescription {
    pub title: String,
    pub data_kind: DataKind,
    pub min_occurs: u32,
    #[serde(default)]
    pub max_occurs: MaxOccurs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_values: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_value: Option<Value>,
}

impl InputDescription {
    /// A single-occurrence input of `kind`, required.
    pub fn required(title: impl Into<String>, kind: DataKind) -> Self {
        Self {
            title: title.into(),
            data_kind: kind,
            min_occurs: 1,
            max_occurs: MaxOccurs::Bounded(1),
            bounds: None,
            allowed_values: None,
            default_value: None,
        }
    }

    /// A single-occurrence optional input of `kind` with a default.
    pub fn optional(title: impl Into<String>, kind: DataKind, default: Value) -> Self {
        Self {
            min_occurs: 0,
            default_value: Some(default),
            ..Self::required(title, kind)
        }
    }

    pub fn with_bounds(mut self, min: f64, max: f64) -> Self {
        self.bounds = Some([min, max]);
        self
    }

    pub fn is_required(&self) -> bool {
        self.min_occurs >= 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OutputDescription {
    pub title: String,
    pub data_kind: OutputKind,
}

/// Named inputs plus execution-mode preference.
///
/// `preferAsync` is normally carried by the `Prefer: respond-async` header;
/// it is only serialized into the body when set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecuteRequest {
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub prefer_async: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_outputs: Option<Vec<String>>,
}

impl ExecuteRequest {
    pub fn new(inputs: Inputs) -> Self {
        Self {
            inputs,
            ..Default::default()
        }
    }

    pub fn asynchronous(mut self) -> Self {
        self.prefer_async = true;
        self
    }
}

/// Row-major grid payload: `values[row * width + col]`, rows along +y.
///
/// `origin` is the lower-left corner of cell (0, 0); cell centers sit at
/// `origin + ((col + 0.5) * cellSize, (row + 0.5) * cellSize)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NumberGrid {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub values: Vec<f64>,
}

impl NumberGrid {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            cell_size: 1.0,
            origin: [0.0, 0.0],
            values: vec![value; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin[0] + (col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Same width, height, cell size and origin.
    pub fn is_congruent(&self, other: &NumberGrid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.cell_size == other.cell_size
            && self.origin == other.origin
    }

    /// Describes why the grid is malformed, if it is.
    pub fn check(&self) -> Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err("width and height must be positive".into());
        }
        let expected = self.width.checked_mul(self.height).ok_or("grid too large")?;
        if self.values.len() != expected {
            return Err(format!(
                "values has {} entries, expected {}",
                self.values.len(),
                expected
            ));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err("cellSize must be positive and finite".into());
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err("origin must be finite".into());
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err("values must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConformanceDeclaration {
    pub conforms_to: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub href: String,
    pub rel: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub media_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandingPage {
    pub title: String,
    pub description: String,
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessList {
    pub processes: Vec<ProcessSummary>,
    pub total: usize,
}
