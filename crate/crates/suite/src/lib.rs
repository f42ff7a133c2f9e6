//! Acceptance suite for `swingcert`; see `tests/acceptance.rs`.
