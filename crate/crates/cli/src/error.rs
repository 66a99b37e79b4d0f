use std::fmt;

use racs_core::Error;

pub const USAGE: u8 = 1;
pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: DATA,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) => CONFIG,
            Error::Io { .. } | Error::Format(_) | Error::Dimension(_) => DATA,
            Error::Numeric { .. } | Error::Singular(_) | Error::Diverged { .. } | Error::Contract(_) => {
                NUMERIC
            }
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}
