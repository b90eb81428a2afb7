//! Canonical JSON encoding for protocol values.
//!
//! Struct fields serialize in declaration order and every map is a
//! `BTreeMap`, so the same value always yields the same bytes.

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::problem::ProblemDetail;

pub const JSON_MEDIA_TYPE: &str = "application/json";

pub fn to_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("protocol values always serialize")
}

/// Parses a protocol value; malformed input becomes a 400 problem.
pub fn from_bytes<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ProblemDetail> {
    serde_json::from_slice(bytes).map_err(|e| ProblemDetail::bad_request(format!("malformed document: {e}")))
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use proptest::prelude::*;
    use serde_json::{json, Value};

    use super::*;
    use crate::protocol::types::*;

    fn summary(id: &str) -> ProcessSummary {
        ProcessSummary {
            id: id.into(),
            version: "1.0.0".into(),
            title: "T".into(),
            description: String::new(),
            keywords: vec![],
            job_control_options: BTreeSet::from([JobControl::SyncExecute]),
        }
    }

    #[test]
    fn minimal_summary_round_trips() {
        let s = summary("a");
        assert_eq!(from_bytes::<ProcessSummary>(&to_bytes(&s)).unwrap(), s);
    }

    #[test]
    fn grid_request_round_trips_exactly() {
        let grid = NumberGrid {
            width: 2,
            height: 2,
            cell_size: 10.0,
            origin: [0.1, -3.3],
            values: vec![0.1, 1.0 / 3.0, 1e-300, -7.25],
        };
        let req = ExecuteRequest::new(BTreeMap::from([("grid".to_string(), serde_json::to_value(&grid).unwrap())]));
        let back: ExecuteRequest = from_bytes(&to_bytes(&req)).unwrap();
        assert_eq!(back, req);
        let back_grid: NumberGrid = serde_json::from_value(back.inputs["grid"].clone()).unwrap();
        assert_eq!(back_grid.values, grid.values);
    }

    #[test]
    fn truncated_document_is_400() {
        let bytes = to_bytes(&summary("a"));
        let err = from_bytes::<ProcessSummary>(&bytes[..bytes.len() / 2]).unwrap_err();
        assert_eq!(err.status, 400);
    }

    #[test]
    fn serialization_is_stable() {
        let mut a = ExecuteRequest::default();
        a.inputs.insert("z".into(), json!(1));
        a.inputs.insert("a".into(), json!({"y": 1, "b": 2}));
        let mut b = ExecuteRequest::default();
        b.inputs.insert("a".into(), json!({"b": 2, "y": 1}));
        b.inputs.insert("z".into(), json!(1));
        assert_eq!(to_bytes(&a), to_bytes(&b));
        assert_eq!(String::from_utf8(to_bytes(&a)).unwrap(), r#"{"inputs":{"a":{"b":2,"y":1},"z":1}}"#);
    }

    #[test]
    fn max_occurs_wire_forms() {
        assert_eq!(serde_json::to_string(&MaxOccurs::Unbounded).unwrap(), "\"unbounded\"");
        assert_eq!(serde_json::from_str::<MaxOccurs>("3").unwrap(), MaxOccurs::Bounded(3));
        assert!(serde_json::from_str::<MaxOccurs>("0").is_err());
        assert!(serde_json::from_str::<MaxOccurs>("\"many\"").is_err());
    }

    fn arb_json_leaf() -> impl Strategy<Value = Value> {
        prop_oneof![
            any::<bool>().prop_map(Value::from),
            any::<i64>().prop_map(Value::from),
            any::<f64>().prop_filter("finite", |f| f.is_finite()).prop_map(Value::from),
            "[ -~]{0,10}".prop_map(Value::from),
        ]
    }

    fn arb_input() -> impl Strategy<Value = InputDescription> {
        (
            "[ -~]{0,10}",
            proptest::sample::select(DataKind::ALL.to_vec()),
            0u32..3,
            prop_oneof![Just(MaxOccurs::Unbounded), (3u32..9).prop_map(MaxOccurs::Bounded)],
            proptest::option::of((-1e6f64..0.0, 0.0f64..1e6)),
            proptest::option::of(arb_json_leaf()),
        )
            .prop_map(|(title, kind, min, max, bounds, default)| InputDescription {
                title,
                data_kind: kind,
                min_occurs: min,
                max_occurs: max,
                bounds: bounds.map(|(a, b)| [a, b]),
                allowed_values: (kind == DataKind::Enumeration).then(|| vec![json!("a"), json!(2)]),
                default_value: default,
            })
    }

    fn arb_description() -> impl Strategy<Value = ProcessDescription> {
        (
            "[a-z0-9_-]{1,8}(:[a-z0-9_-]{1,8})?",
            proptest::collection::vec("[a-z]{1,6}", 0..3),
            proptest::collection::btree_map("[a-z]{1,6}", arb_input(), 0..4),
            proptest::collection::btree_map(
                "[a-z]{1,6}",
                proptest::sample::select(vec![OutputKind::Number, OutputKind::NumberGrid, OutputKind::GeoPointList, OutputKind::Table]),
                0..3,
            ),
            any::<bool>(),
        )
            .prop_map(|(id, keywords, inputs, outputs, both)| {
                let mut s = summary(&id);
                s.keywords = keywords;
                if both {
                    s.job_control_options.insert(JobControl::AsyncExecute);
                }
                ProcessDescription {
                    summary: s,
                    inputs,
                    outputs: outputs
                        .into_iter()
                        .map(|(k, kind)| (k.clone(), OutputDescription { title: k, data_kind: kind }))
                        .collect(),
                }
            })
    }

    proptest! {
        #[test]
        fn description_round_trip(d in arb_description()) {
            let bytes = to_bytes(&d);
            let back: ProcessDescription = from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(to_bytes(&back), bytes);
        }

        #[test]
        fn request_round_trip(
            inputs in proptest::collection::btree_map("[a-z]{1,6}", arb_json_leaf(), 0..6),
            prefer_async in any::<bool>(),
            outputs in proptest::option::of(proptest::collection::vec("[a-z]{1,4}", 0..3)),
        ) {
            let req = ExecuteRequest { inputs, prefer_async, requested_outputs: outputs };
            prop_assert_eq!(from_bytes::<ExecuteRequest>(&to_bytes(&req)).unwrap(), req);
        }

        #[test]
        fn problem_round_trip(status in proptest::sample::select(crate::protocol::problem::ALLOWED_STATUSES.to_vec()), detail in "[ -~]{0,20}") {
            let p = ProblemDetail::new(status, "kind", "Title", detail);
            prop_assert_eq!(from_bytes::<ProblemDetail>(&to_bytes(&p)).unwrap(), p);
        }
    }
}
