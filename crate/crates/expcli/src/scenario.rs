//! Flat key-value scenario files for the personalisation-strategy commands.

use std::path::Path;

use demlab::pse::PseScenario;

use crate::data::DataError;

/// Parses `n0 = 1000`, `mu_C0 = 0.5`, ..., `alpha = 0.05`, `power = 0.8` and validates it.
pub fn parse_scenario(text: &str) -> Result<PseScenario, DataError> {
    let s: PseScenario = toml::from_str(text)
        .map_err(|e| DataError::Invalid(format!("scenario: {}", e.message())))?;
    s.validate()
        .map_err(|e| DataError::Invalid(format!("scenario: {e}")))?;
    Ok(s)
}

pub fn read_scenario(path: &Path) -> Result<PseScenario, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Inverse of [`parse_scenario`].
pub fn write_scenario(s: &PseScenario) -> String {
    toml::to_string(s).expect("a scenario of plain floats always serialises")
}
