//! Linear board-state probes and their label grammar.
//!
//! Labels read `(mine|yours)_(pawn|knight|bishop|rook|queen|king)_on_<file><rank>`
//! with files `a`–`h` and ranks `1`–`8`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::ensure_finite_vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Mine,
    Yours,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Piece {
    Pawn,
    Knight,
    Bishop,
    Rook,
    Queen,
    King,
}

impl Side {
    pub const ALL: [Side; 2] = [Side::Mine, Side::Yours];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Mine => "mine",
            Side::Yours => "yours",
        }
    }
}

impl Piece {
    pub const ALL: [Piece; 6] = [Piece::Pawn, Piece::Knight, Piece::Bishop, Piece::Rook, Piece::Queen, Piece::King];

    pub fn as_str(self) -> &'static str {
        match self {
            Piece::Pawn => "pawn",
            Piece::Knight => "knight",
            Piece::Bishop => "bishop",
            Piece::Rook => "rook",
            Piece::Queen => "queen",
            Piece::King => "king",
        }
    }

    /// Material value in pawns; the king has none.
    pub fn value(self) -> Option<f64> {
        match self {
            Piece::Pawn => Some(1.0),
            Piece::Knight => Some(3.0),
            Piece::Bishop => Some(3.5),
            Piece::Rook => Some(5.0),
            Piece::Queen => Some(9.0),
            Piece::King => None,
        }
    }
}

/// A board square; `file` 0 is `a`, `rank` 0 is `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Square {
    pub file: u8,
    pub rank: u8,
}

impl Square {
    pub fn new(file: u8, rank: u8) -> Option<Self> {
        (file < 8 && rank < 8).then_some(Self { file, rank })
    }

    pub fn file_char(self) -> char {
        (b'a' + self.file) as char
    }
}

impl fmt::Display for Square {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.file_char(), self.rank + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProbeLabel {
    pub side: Side,
    pub piece: Piece,
    pub square: Square,
}

impl fmt::Display for ProbeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}_on_{}", self.side.as_str(), self.piece.as_str(), self.square)
    }
}

impl FromStr for ProbeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidProbeLabel(s.to_string());
        let mut parts = s.split('_');
        let side = match parts.next() {
            Some("mine") => Side::Mine,
            Some("yours") => Side::Yours,
            _ => return Err(bad()),
        };
        let piece = parts
            .next()
            .and_then(|p| Piece::ALL.into_iter().find(|x| x.as_str() == p))
            .ok_or_else(bad)?;
        if parts.next() != Some("on") {
            return Err(bad());
        }
        let sq = parts.next().ok_or_else(bad)?.as_bytes();
        if parts.next().is_some() || sq.len() != 2 {
            return Err(bad());
        }
        let square = Square::new(sq[0].wrapping_sub(b'a'), sq[1].wrapping_sub(b'1')).ok_or_else(bad)?;
        Ok(Self { side, piece, square })
    }
}

/// Every label in a fixed order: the 736 placements that can occur in a
/// legal game first (pawns never stand on the first or last rank), then the
/// 32 back-rank pawn labels. Taking a prefix therefore never repeats a label.
pub fn probe_family() -> Vec<ProbeLabel> {
    let all = Side::ALL.into_iter().flat_map(|side| {
        Piece::ALL.into_iter().flat_map(move |piece| {
            (0..8u8).flat_map(move |file| (0..8u8).map(move |rank| ProbeLabel { side, piece, square: Square { file, rank } }))
        })
    });
    let back_rank_pawn = |l: &ProbeLabel| l.piece == Piece::Pawn && (l.square.rank == 0 || l.square.rank == 7);
    let (odd, legal): (Vec<_>, Vec<_>) = all.partition(back_rank_pawn);
    legal.into_iter().chain(odd).collect()
}

/// A linear probe `l(x) = w·x + b` with its held-out metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub label: ProbeLabel,
    pub w: DVector<f64>,
    pub b: f64,
    pub accuracy: f64,
    pub f1: f64,
}

impl Probe {
    pub fn new(label: &str, w: DVector<f64>, b: f64, accuracy: f64, f1: f64) -> Result<Self> {
        let label: ProbeLabel = label.parse()?;
        ensure_finite_vec(&w, "probe world vector")?;
        if w.norm() == 0.0 {
            return Err(Error::ZeroVector("probe world vector"));
        }
        for (name, x) in [("accuracy", accuracy), ("f1", f1)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("probe {label} has {name} {x} outside [0, 1]")));
            }
        }
        if !b.is_finite() {
            return Err(Error::NonFinite("probe bias"));
        }
        Ok(Self { label, w, b, accuracy, f1 })
    }

    pub fn logit(&self, x: &DVector<f64>) -> f64 {
        self.w.dot(x) + self.b
    }
}
