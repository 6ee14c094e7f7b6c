use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::TopologyError;

/// Longest prefix that survives operator filtering on the public Internet.
pub const MAX_ROUTABLE_LEN: u8 = 24;

/// An IPv4 prefix with zeroed host bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prefix {
    base: u32,
    len: u8,
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len))
    }
}

impl Prefix {
    pub fn new(base: Ipv4Addr, len: u8) -> Result<Self, TopologyError> {
        if len > 32 {
            return Err(TopologyError::InvalidPrefix(format!("{base}/{len}: length above 32")));
        }
        let raw = u32::from(base);
        if raw & !mask(len) != 0 {
            return Err(TopologyError::InvalidPrefix(format!(
                "{base}/{len}: host bits set below the mask"
            )));
        }
        Ok(Prefix { base: raw, len })
    }

    /// Like [`Prefix::new`] but also rejects anything more specific than /24.
    pub fn routable(base: Ipv4Addr, len: u8) -> Result<Self, TopologyError> {
        let p = Prefix::new(base, len)?;
        if len > MAX_ROUTABLE_LEN {
            return Err(TopologyError::PrefixTooSpecific(p));
        }
        Ok(p)
    }

    pub fn base(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.base)
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & mask(self.len) == self.base
    }

    /// True when `other` lies inside (or equals) this prefix.
    pub fn covers(&self, other: &Prefix) -> bool {
        other.len >= self.len && other.base & mask(self.len) == self.base
    }

    pub fn overlaps(&self, other: &Prefix) -> bool {
        self.covers(other) || other.covers(self)
    }

    /// The two more-specific halves, or `None` for a /32.
    pub fn halves(&self) -> Option<(Prefix, Prefix)> {
        if self.len >= 32 {
            return None;
        }
        let len = self.len + 1;
        let hi = self.base | (1u32 << (32 - u32::from(len)));
        Some((Prefix { base: self.base, len }, Prefix { base: hi, len }))
    }

    /// The prefix of length `len` that contains `ip`.
    pub fn enclosing(ip: Ipv4Addr, len: u8) -> Prefix {
        let len = len.min(32);
        Prefix { base: u32::from(ip) & mask(len), len }
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base(), self.len)
    }
}

impl FromStr for Prefix {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| TopologyError::InvalidPrefix(format!("{s}: missing '/len'")))?;
        let base: Ipv4Addr = addr
            .trim()
            .parse()
            .map_err(|_| TopologyError::InvalidPrefix(format!("{s}: bad address")))?;
        let len: u8 = len
            .trim()
            .parse()
            .map_err(|_| TopologyError::InvalidPrefix(format!("{s}: bad length")))?;
        Prefix::new(base, len)
    }
}

impl Serialize for Prefix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
