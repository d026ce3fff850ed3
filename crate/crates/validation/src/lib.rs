//! Acceptance experiments for `pathogenx`: independent oracles for the
//! statistics and the five-seed method comparison on synthetic cohorts.
//! The `acceptance` test target runs everything and prints one line per
//! criterion.

pub mod oracles;
pub mod protocol;
