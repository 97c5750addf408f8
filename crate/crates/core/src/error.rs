use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Inconsistent or invalid configuration.
    Config(String),
    /// Argument outside the domain of an operation (non-finite input, bad probability).
    Domain(String),
    /// Requested window is not covered by recorded data.
    Range { requested: u64, available_from: u64, available_to: u64 },
    /// Every past density underflowed for the sample taken at time `t`.
    Degenerate { t: u64 },
    /// Variational parameters violate their marginal constraints.
    Constraint(String),
    /// A bound has no finite value for the given parameters.
    Undefined(String),
    /// History records out of order or with gaps.
    History(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Range { requested, available_from, available_to } => write!(
                f,
                "range error: time {requested} outside recorded window [{available_from}, {available_to}]"
            ),
            Error::Degenerate { t } => {
                write!(f, "numerical degeneracy: importance denominator underflows for sample at t={t}")
            }
            Error::Constraint(m) => write!(f, "constraint violated: {m}"),
            Error::Undefined(m) => write!(f, "bound undefined: {m}"),
            Error::History(m) => write!(f, "history error: {m}"),
        }
    }
}

impl core::error::Error for Error {}
