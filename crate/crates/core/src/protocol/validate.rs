//! Request and description validation.
//!
//! Violations are data: validation never fails, it returns the full list of
//! rule breaches, each naming the offending input.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ids::is_valid_process_id;
use super::types::{
    DataKind, ExecuteRequest, GeoPoint, InputDescription, MaxOccurs, NumberGrid, ProcessDescription,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Rule {
    RequiredAbsent,
    NotDeclared,
    WrongKind,
    OutOfBounds,
    NotAllowed,
    TooFewOccurrences,
    TooManyOccurrences,
    MalformedValue,
    UnknownOutput,
}

impl Rule {
    fn text(&self) -> &'static str {
        match self {
            Rule::RequiredAbsent => "required, absent",
            Rule::NotDeclared => "not declared",
            Rule::WrongKind => "wrong kind",
            Rule::OutOfBounds => "out of bounds",
            Rule::NotAllowed => "not an allowed value",
            Rule::TooFewOccurrences => "too few occurrences",
            Rule::TooManyOccurrences => "too many occurrences",
            Rule::MalformedValue => "malformed value",
            Rule::UnknownOutput => "unknown output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub input: String,
    pub rule: Rule,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Violation {
    fn new(input: &str, rule: Rule) -> Self {
        Self {
            input: input.to_string(),
            rule,
            detail: String::new(),
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.input, self.rule.text())?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Checks a single (non-repeated) value against its input description.
fn check_value(name: &str, value: &Value, desc: &InputDescription) -> Option<Violation> {
    let wrong_kind = || {
        Some(Violation::new(name, Rule::WrongKind).with_detail(format!("expected {}", desc.data_kind.as_str())))
    };
    let in_bounds = |x: f64| match desc.bounds {
        Some([lo, hi]) => lo <= x && x <= hi,
        None => true,
    };
    match desc.data_kind {
        DataKind::Number => match value.as_f64() {
            Some(x) if !in_bounds(x) => Some(Violation::new(name, Rule::OutOfBounds)),
            Some(_) => None,
            None => wrong_kind(),
        },
        DataKind::Integer => match value.as_i64() {
            Some(n) if !in_bounds(n as f64) => Some(Violation::new(name, Rule::OutOfBounds)),
            Some(_) => None,
            None => wrong_kind(),
        },
        DataKind::Boolean => (!value.is_boolean()).then(wrong_kind).flatten(),
        DataKind::String => (!value.is_string()).then(wrong_kind).flatten(),
        DataKind::Enumeration => {
            let allowed = desc.allowed_values.as_deref().unwrap_or_default();
            (!allowed.contains(value)).then(|| Violation::new(name, Rule::NotAllowed))
        }
        DataKind::NumberGrid => match serde_json::from_value::<NumberGrid>(value.clone()) {
            Ok(grid) => grid
                .check()
                .err()
                .map(|why| Violation::new(name, Rule::MalformedValue).with_detail(why)),
            Err(_) => wrong_kind(),
        },
        DataKind::GeoPointList => match serde_json::from_value::<Vec<GeoPoint>>(value.clone()) {
            Ok(points) if points.iter().all(|p| p.x.is_finite() && p.y.is_finite()) => None,
            Ok(_) => Some(Violation::new(name, Rule::MalformedValue).with_detail("coordinates must be finite")),
            Err(_) => wrong_kind(),
        },
    }
}

/// Splits a provided value into its occurrences.
///
/// A JSON array counts as repeated occurrences for scalar and grid kinds.
/// A geoPointList is itself an array; it only counts as repeated when every
/// element is an array.
fn occurrences(value: &Value, kind: DataKind) -> Vec<&Value> {
    match (value, kind) {
        (Value::Array(items), DataKind::GeoPointList) if !items.is_empty() && items.iter().all(Value::is_array) => {
            items.iter().collect()
        }
        (_, DataKind::GeoPointList) => vec![value],
        (Value::Array(items), _) => items.iter().collect(),
        _ => vec![value],
    }
}

fn check_input(name: &str, value: &Value, desc: &InputDescription, out: &mut Vec<Violation>) {
    let items = occurrences(value, desc.data_kind);
    if items.len() < desc.min_occurs as usize {
        out.push(Violation::new(name, Rule::TooFewOccurrences));
    }
    if !desc.max_occurs.admits(items.len()) {
        out.push(Violation::new(name, Rule::TooManyOccurrences));
    }
    // Report at most one value-level violation per input.
    if let Some(v) = items.iter().find_map(|item| check_value(name, item, desc)) {
        out.push(v);
    }
}

/// Validates `req` against `desc`. An empty list means the request is valid.
pub fn validate_execute_request(req: &ExecuteRequest, desc: &ProcessDescription) -> Vec<Violation> {
    let mut out = Vec::new();
    for (name, input) in &desc.inputs {
        match req.inputs.get(name) {
            None if input.is_required() => out.push(Violation::new(name, Rule::RequiredAbsent)),
            None => {}
            Some(value) => check_input(name, value, input, &mut out),
        }
    }
    for name in req.inputs.keys() {
        if !desc.inputs.contains_key(name) {
            out.push(Violation::new(name, Rule::NotDeclared));
        }
    }
    if let Some(requested) = &req.requested_outputs {
        for name in requested {
            if !desc.outputs.contains_key(name) {
                out.push(Violation::new(name, Rule::UnknownOutput));
            }
        }
    }
    out
}

/// Fills every absent input that has a default. Provided values are kept.
pub fn apply_defaults(mut req: ExecuteRequest, desc: &ProcessDescription) -> ExecuteRequest {
    for (name, input) in &desc.inputs {
        if let Some(default) = &input.default_value {
            req.inputs.entry(name.clone()).or_insert_with(|| default.clone());
        }
    }
    req
}

/// Checks the internal consistency of a process description.
pub fn check_description(desc: &ProcessDescription) -> Result<(), String> {
    let summary = &desc.summary;
    if !is_valid_process_id(&summary.id) {
        return Err(format!("invalid process id {:?}", summary.id));
    }
    if summary.job_control_options.is_empty() {
        return Err(format!("{}: jobControlOptions is empty", summary.id));
    }
    for (name, input) in &desc.inputs {
        if let MaxOccurs::Bounded(max) = input.max_occurs {
            if input.min_occurs > max {
                return Err(format!("{name}: minOccurs exceeds maxOccurs"));
            }
        }
        if let Some([lo, hi]) = input.bounds {
            if !(lo <= hi) {
                return Err(format!("{name}: bounds are inverted or NaN"));
            }
        }
        let is_enum = input.data_kind == DataKind::Enumeration;
        match (&input.allowed_values, is_enum) {
            (None, true) => return Err(format!("{name}: enumeration without allowedValues")),
            (Some(_), false) => return Err(format!("{name}: allowedValues on non-enumeration")),
            _ => {}
        }
        if let Some(default) = &input.default_value {
            if let Some(v) = check_value(name, default, input) {
                return Err(format!("default value invalid: {v}"));
            }
        }
    }
    Ok(())
}
