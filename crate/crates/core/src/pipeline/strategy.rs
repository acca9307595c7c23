use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error};

/// How the sinusoidal (S), noise (N) and transient (T) branches are mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixingStrategy {
    /// `S`
    S,
    /// `S + N`
    SPlusN,
    /// `T(S)`
    TOfS,
    /// `T(S + N)`
    TOfSPlusN,
    /// `T(S) + N`
    TOfSPlusParallelN,
    /// `T(S) + S + N`
    TOfSPlusSPlusN,
}

impl MixingStrategy {
    pub const ALL: [MixingStrategy; 6] = [
        MixingStrategy::S,
        MixingStrategy::SPlusN,
        MixingStrategy::TOfS,
        MixingStrategy::TOfSPlusN,
        MixingStrategy::TOfSPlusParallelN,
        MixingStrategy::TOfSPlusSPlusN,
    ];

    /// Lower-case command-line spelling, e.g. `t(s)+n`.
    pub fn as_str(self) -> &'static str {
        match self {
            MixingStrategy::S => "s",
            MixingStrategy::SPlusN => "s+n",
            MixingStrategy::TOfS => "t(s)",
            MixingStrategy::TOfSPlusN => "t(s+n)",
            MixingStrategy::TOfSPlusParallelN => "t(s)+n",
            MixingStrategy::TOfSPlusSPlusN => "t(s)+s+n",
        }
    }

    /// Method name as printed in result tables, e.g. `T(S)+N`.
    pub fn label(self) -> String {
        self.as_str().to_uppercase()
    }

    pub fn uses_noise(self) -> bool {
        !matches!(self, MixingStrategy::S | MixingStrategy::TOfS)
    }

    pub fn uses_tcn(self) -> bool {
        !matches!(self, MixingStrategy::S | MixingStrategy::SPlusN)
    }

    /// Whether anything in the output depends on trainable weights.
    pub fn is_trainable(self) -> bool {
        self != MixingStrategy::S
    }

    pub fn valid_names() -> String {
        Self::ALL.map(|s| s.as_str()).join(", ")
    }
}

impl fmt::Display for MixingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MixingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let key: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase();
        Self::ALL.into_iter().find(|m| m.as_str() == key).ok_or_else(|| {
            invalid(format!(
                "unknown strategy {s:?}; expected one of {}",
                Self::valid_names()
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in MixingStrategy::ALL {
            assert_eq!(m.as_str().parse::<MixingStrategy>().unwrap(), m);
            assert_eq!(m.label().parse::<MixingStrategy>().unwrap(), m);
        }
        assert_eq!(" T(S) + N ".parse::<MixingStrategy>().unwrap(), MixingStrategy::TOfSPlusParallelN);
    }

    #[test]
    fn unknown_name_lists_the_choices() {
        let err = "q".parse::<MixingStrategy>().unwrap_err().to_string();
        assert!(err.contains("t(s)+s+n") && err.contains("s+n"), "{err}");
    }

    #[test]
    fn branch_usage() {
        use MixingStrategy::*;
        let noise: Vec<_> = MixingStrategy::ALL.into_iter().filter(|m| m.uses_noise()).collect();
        assert_eq!(noise, [SPlusN, TOfSPlusN, TOfSPlusParallelN, TOfSPlusSPlusN]);
        let tcn: Vec<_> = MixingStrategy::ALL.into_iter().filter(|m| m.uses_tcn()).collect();
        assert_eq!(tcn, [TOfS, TOfSPlusN, TOfSPlusParallelN, TOfSPlusSPlusN]);
    }
}
