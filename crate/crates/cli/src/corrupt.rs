//! `federl corrupt`: materializes the corruption suite of a test set.

use std::path::Path;

use anyhow::Result;
use federl_core::data::io::{materialize_suite, SuiteCacheReport};
use federl_core::data::CorruptionSpec;

pub fn parse_specs(filters: &[String], severities: &[u8]) -> Result<Vec<CorruptionSpec>> {
    let mut specs = Vec::new();
    for f in filters {
        for &s in severities {
            specs.push(CorruptionSpec::parse(f, s)?);
        }
    }
    Ok(specs)
}

pub fn cmd_corrupt(dataset: &Path, specs: &[CorruptionSpec], seed: u64) -> Result<SuiteCacheReport> {
    Ok(materialize_suite(dataset, specs, seed)?)
}
