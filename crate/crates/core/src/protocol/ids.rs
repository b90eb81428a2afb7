//! Process identifiers and the federation namespace.
//!
//! A local process ID is a non-empty token of `[A-Za-z0-9_-]`. A platform
//! republishes upstream processes as `providerId:localId`; the colon is
//! reserved for that purpose and may appear at most once.

/// Separator between a provider namespace and a local process ID.
pub const NAMESPACE_SEPARATOR: char = ':';

fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

/// True if `s` is a non-empty `[A-Za-z0-9_-]+` token (no namespace).
pub fn is_valid_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_token_char)
}

/// True if `id` matches `[A-Za-z0-9_-]+(:[A-Za-z0-9_-]+)?`.
pub fn is_valid_process_id(id: &str) -> bool {
    match id.split_once(NAMESPACE_SEPARATOR) {
        None => is_valid_token(id),
        Some((prefix, local)) => is_valid_token(prefix) && is_valid_token(local),
    }
}

/// Splits a namespaced ID on its first colon. Un-namespaced IDs yield `None`.
pub fn split_namespaced(id: &str) -> Option<(&str, &str)> {
    id.split_once(NAMESPACE_SEPARATOR)
}

/// Builds `prefix:local`.
pub fn namespaced(prefix: &str, local: &str) -> String {
    format!("{prefix}{NAMESPACE_SEPARATOR}{local}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accepts_plain_and_namespaced() {
        assert!(is_valid_process_id("heat-diffusion"));
        assert!(is_valid_process_id("alpha:heat_diffusion"));
        assert!(is_valid_process_id("A9"));
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", ":", "a:", ":b", "a:b:c", "a b", "a/b", "ü", "a:b c"] {
            assert!(!is_valid_process_id(bad), "{bad:?} should be rejected");
        }
    }

    proptest! {
        #[test]
        fn split_then_join_is_identity(prefix in "[A-Za-z0-9_-]{1,12}", local in "[A-Za-z0-9_-]{1,12}") {
            let id = namespaced(&prefix, &local);
            prop_assert!(is_valid_process_id(&id));
            let (p, l) = split_namespaced(&id).unwrap();
            prop_assert_eq!(&namespaced(p, l), &id);
            prop_assert_eq!(p, prefix.as_str());
            prop_assert_eq!(l, local.as_str());
        }
    }
}
