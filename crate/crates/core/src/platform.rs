use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Hardware profile a chain is compiled for, or the plain path sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Platform {
    Loihi,
    TrueNorth,
    Reference,
}

impl Platform {
    /// Largest initial walker count a single count neuron may hold.
    pub fn walker_cap(self) -> u64 {
        match self {
            Platform::Loihi => 1000,
            Platform::TrueNorth => 393_215,
            Platform::Reference => u64::MAX,
        }
    }

    /// Largest number of exits one mesh node may have.
    pub fn max_fanout(self) -> usize {
        match self {
            Platform::Loihi => 64,
            Platform::TrueNorth => 4,
            Platform::Reference => usize::MAX,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Platform::Loihi => "LOIHI",
            Platform::TrueNorth => "TRUENORTH",
            Platform::Reference => "REFERENCE",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Platform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LOIHI" => Ok(Platform::Loihi),
            "TRUENORTH" => Ok(Platform::TrueNorth),
            "REFERENCE" => Ok(Platform::Reference),
            _ => Err(format!("unknown platform '{s}' (expected LOIHI, TRUENORTH or REFERENCE)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        for p in [Platform::Loihi, Platform::TrueNorth, Platform::Reference] {
            assert_eq!(p.name().parse::<Platform>().unwrap(), p);
        }
        assert_eq!("loihi".parse::<Platform>().unwrap(), Platform::Loihi);
        assert!("gpu".parse::<Platform>().is_err());
    }
}
