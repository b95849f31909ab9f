use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side of the deck a cable is anchored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Line {
    Upriver,
    Downriver,
}

impl Line {
    /// Letter used in rendered ids: `S` upriver, `X` downriver.
    pub fn letter(self) -> char {
        match self {
            Line::Upriver => 'S',
            Line::Downriver => 'X',
        }
    }

    /// Accepts `S`/`U` for upriver and `X`/`D` for downriver.
    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'S' | 'U' => Some(Line::Upriver),
            'X' | 'D' => Some(Line::Downriver),
            _ => None,
        }
    }

    pub fn partner(self) -> Self {
        match self {
            Line::Upriver => Line::Downriver,
            Line::Downriver => Line::Upriver,
        }
    }
}

/// A cable pair: both cables at one longitudinal position, e.g. `SJ11`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PairId {
    pub group: String,
    pub pair_index: u32,
}

/// One cable, e.g. `SJS11` = group `SJ`, pair 11, upriver line.
///
/// Ordering is (group, line, pair index) so that a sorted list reads like
/// the accuracy tables: all upriver cables, then all downriver ones.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CableId {
    pub group: String,
    pub pair_index: u32,
    pub line: Line,
}

impl Ord for CableId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.group, self.line, self.pair_index).cmp(&(&other.group, other.line, other.pair_index))
    }
}

impl PartialOrd for CableId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl CableId {
    pub fn new(group: impl Into<String>, pair_index: u32, line: Line) -> Result<Self> {
        let group = group.into();
        check_group(&group)?;
        if pair_index == 0 {
            return Err(Error::UnknownCable(format!("{group}{}0", line.letter())));
        }
        Ok(Self {
            group,
            pair_index,
            line,
        })
    }

    pub fn pair(&self) -> PairId {
        PairId {
            group: self.group.clone(),
            pair_index: self.pair_index,
        }
    }

    pub fn partner(&self) -> CableId {
        CableId {
            line: self.line.partner(),
            ..self.clone()
        }
    }
}

impl PairId {
    pub fn new(group: impl Into<String>, pair_index: u32) -> Result<Self> {
        let group = group.into();
        check_group(&group)?;
        if pair_index == 0 {
            return Err(Error::UnknownCable(format!("{group}0")));
        }
        Ok(Self { group, pair_index })
    }

    pub fn cable(&self, line: Line) -> CableId {
        CableId {
            group: self.group.clone(),
            pair_index: self.pair_index,
            line,
        }
    }
}

fn check_group(group: &str) -> Result<()> {
    if group.is_empty() || !group.chars().all(|c| c.is_ascii_uppercase()) {
        return Err(Error::UnknownCable(group.to_string()));
    }
    Ok(())
}

/// Splits `"SJS11"` into (`"SJS"`, 11).
fn split_digits(s: &str) -> Option<(&str, u32)> {
    let pos = s.find(|c: char| c.is_ascii_digit())?;
    let (letters, digits) = s.split_at(pos);
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some((letters, digits.parse().ok()?))
}

impl FromStr for CableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownCable(s.to_string());
        let (letters, index) = split_digits(s.trim()).ok_or_else(bad)?;
        let mut chars = letters.chars();
        let line = chars.next_back().and_then(Line::from_letter).ok_or_else(bad)?;
        CableId::new(chars.as_str(), index, line).map_err(|_| bad())
    }
}

impl FromStr for PairId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownCable(s.to_string());
        let (letters, index) = split_digits(s.trim()).ok_or_else(bad)?;
        PairId::new(letters, index).map_err(|_| bad())
    }
}

impl fmt::Display for CableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{:02}", self.group, self.line.letter(), self.pair_index)
    }
}

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02}", self.group, self.pair_index)
    }
}

impl TryFrom<String> for CableId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CableId> for String {
    fn from(c: CableId) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for PairId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PairId> for String {
    fn from(p: PairId) -> String {
        p.to_string()
    }
}

/// What a series or class refers to: a single cable or a cable pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceId {
    Cable(CableId),
    Pair(PairId),
}

impl SourceId {
    pub fn as_cable(&self) -> Option<&CableId> {
        match self {
            SourceId::Cable(c) => Some(c),
            SourceId::Pair(_) => None,
        }
    }

    pub fn as_pair(&self) -> Option<&PairId> {
        match self {
            SourceId::Pair(p) => Some(p),
            SourceId::Cable(_) => None,
        }
    }

    /// The pair this source belongs to (itself for a pair).
    pub fn pair(&self) -> PairId {
        match self {
            SourceId::Cable(c) => c.pair(),
            SourceId::Pair(p) => p.clone(),
        }
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceId::Cable(c) => c.fmt(f),
            SourceId::Pair(p) => p.fmt(f),
        }
    }
}

impl FromStr for SourceId {
    type Err = Error;

    /// Cable ids carry a line letter before the digits; pair ids do not.
    /// `SJ11` is a pair, `SJS11` a cable.
    fn from_str(s: &str) -> Result<Self> {
        let cable = s.parse::<CableId>();
        let pair = s.parse::<PairId>();
        match (cable, pair) {
            // "SJS11" also parses as pair group "SJS"; prefer the cable
            // reading whenever the remaining group is non-empty.
            (Ok(c), _) => Ok(SourceId::Cable(c)),
            (Err(_), Ok(p)) => Ok(SourceId::Pair(p)),
            (Err(e), Err(_)) => Err(e),
        }
    }
}

impl From<CableId> for SourceId {
    fn from(c: CableId) -> Self {
        SourceId::Cable(c)
    }
}

impl From<PairId> for SourceId {
    fn from(p: PairId) -> Self {
        SourceId::Pair(p)
    }
}
