use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn from_index(idx: usize) -> Option<Phase> {
        Phase::ALL.get(idx).copied()
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Subset of {a, b, c}, stored as a 3-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const EMPTY: PhaseSet = PhaseSet(0);
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn single(phase: Phase) -> Self {
        PhaseSet(1 << phase.index())
    }

    pub fn from_phases(phases: impl IntoIterator<Item = Phase>) -> Self {
        phases
            .into_iter()
            .fold(PhaseSet::EMPTY, |acc, p| acc.with(p))
    }

    pub fn with(self, phase: Phase) -> Self {
        PhaseSet(self.0 | (1 << phase.index()))
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.0 & (1 << phase.index()) != 0
    }

    pub fn contains_index(self, idx: usize) -> bool {
        idx < 3 && self.0 & (1 << idx) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersect(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 & other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn indices(self) -> impl Iterator<Item = usize> {
        self.iter().map(Phase::index)
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseSet({self})")
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid phase set `{0}`: expected a non-repeating combination of a, b, c")]
pub struct ParsePhaseError(String);

impl FromStr for PhaseSet {
    type Err = ParsePhaseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = PhaseSet::EMPTY;
        for ch in s.chars() {
            let phase = match ch.to_ascii_lowercase() {
                'a' => Phase::A,
                'b' => Phase::B,
                'c' => Phase::C,
                _ => return Err(ParsePhaseError(s.to_string())),
            };
            if set.contains(phase) {
                return Err(ParsePhaseError(s.to_string()));
            }
            set = set.with(phase);
        }
        Ok(set)
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
