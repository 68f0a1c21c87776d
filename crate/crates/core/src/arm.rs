//! Arm identifiers.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Maximum accepted identifier length.
pub const MAX_ARM_ID_LEN: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArmIdError {
    #[error("arm id must not be empty")]
    Empty,
    #[error("arm id `{0}` is longer than {MAX_ARM_ID_LEN} characters")]
    TooLong(String),
    #[error("arm id `{0}` contains invalid characters (allowed: alphanumeric, `-`, `_`, `.`)")]
    InvalidChar(String),
}

/// Identifier of one candidate arm (one model within the campaign's strategy).
///
/// Ids are short opaque strings, unique within a campaign. The character set
/// is restricted so ids can appear verbatim in file names, CSV cells, and log
/// lines.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArmId(String);

impl ArmId {
    pub fn new(id: impl Into<String>) -> Result<Self, ArmIdError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ArmIdError::Empty);
        }
        if id.len() > MAX_ARM_ID_LEN {
            return Err(ArmIdError::TooLong(id));
        }
        if !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(ArmIdError::InvalidChar(id));
        }
        Ok(ArmId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for ArmId {
    type Error = ArmIdError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        ArmId::new(value)
    }
}

impl From<ArmId> for String {
    fn from(id: ArmId) -> String {
        id.0
    }
}
