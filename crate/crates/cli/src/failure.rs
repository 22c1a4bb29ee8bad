use std::fmt;

/// Exit status 2 for bad input or configuration, 3 for everything else.
#[derive(Debug)]
pub enum Failure {
    User(String),
    Internal(String),
}

impl Failure {
    pub fn user(message: impl Into<String>) -> Self {
        Failure::User(message.into())
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Failure::Internal(message.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::User(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::User(m) => write!(f, "error: {m}"),
            Failure::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<regent::Error> for Failure {
    fn from(e: regent::Error) -> Self {
        if e.is_user_error() {
            Failure::User(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}
