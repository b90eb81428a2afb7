//! Wire-level data model shared by model servers, platforms and clients.

mod codec;
mod ids;
mod problem;
mod types;
mod validate;

pub use codec::{from_bytes, to_bytes, JSON_MEDIA_TYPE};
pub use ids::{is_valid_process_id, is_valid_token, namespaced, split_namespaced, NAMESPACE_SEPARATOR};
pub use problem::{ProblemDetail, ALLOWED_STATUSES, PROBLEM_MEDIA_TYPE};
pub use types::*;
pub use validate::{apply_defaults, check_description, validate_execute_request, Rule, Violation};

/// Conformance classes this implementation declares.
pub const CONFORMANCE_CLASSES: [&str; 5] = [
    "http://www.opengis.net/spec/ogcapi-processes-1/1.0/conf/core",
    "http://www.opengis.net/spec/ogcapi-processes-1/1.0/conf/json",
    "http://www.opengis.net/spec/ogcapi-processes-1/1.0/conf/ogc-process-description",
    "http://www.opengis.net/spec/ogcapi-processes-1/1.0/conf/job-list",
    "http://www.opengis.net/spec/ogcapi-processes-1/1.0/conf/dismiss",
];

pub fn conformance() -> ConformanceDeclaration {
    ConformanceDeclaration {
        conforms_to: CONFORMANCE_CLASSES.iter().map(|s| s.to_string()).collect(),
    }
}

pub mod rel {
    pub const SELF: &str = "self";
    pub const CONFORMANCE: &str = "http://www.opengis.net/def/rel/ogc/1.0/conformance";
    pub const PROCESSES: &str = "http://www.opengis.net/def/rel/ogc/1.0/processes";
    pub const JOB_LIST: &str = "http://www.opengis.net/def/rel/ogc/1.0/job-list";
}

pub fn landing_page(title: &str, description: &str) -> LandingPage {
    let link = |href: &str, rel: &str, title: &str| Link {
        href: href.into(),
        rel: rel.into(),
        media_type: Some(JSON_MEDIA_TYPE.into()),
        title: Some(title.into()),
    };
    LandingPage {
        title: title.into(),
        description: description.into(),
        links: vec![
            link("/", rel::SELF, "This document"),
            link("/conformance", rel::CONFORMANCE, "Conformance classes"),
            link("/processes", rel::PROCESSES, "Available processes"),
            link("/jobs", rel::JOB_LIST, "Jobs"),
        ],
    }
}
