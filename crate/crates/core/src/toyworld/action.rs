use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keyboard-style movement part of an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
    Stay,
}

impl Direction {
    pub const ALL: [Direction; 5] = [Direction::Left, Direction::Right, Direction::Up, Direction::Down, Direction::Stay];

    pub fn word(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Stay => "stay",
        }
    }

    /// Cell delta `(dx, dy)`; y grows downwards.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
            Direction::Stay => (0, 0),
        }
    }

    pub fn from_delta(delta: (i32, i32)) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.delta() == delta)
    }
}

/// Event part of an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Event {
    Jump,
    Flash,
}

impl Event {
    pub fn word(self) -> &'static str {
        match self {
            Event::Jump => "jump",
            Event::Flash => "flash",
        }
    }
}

/// One chunk's worth of controller input, printed as `"(right)."` or
/// `"(stay). jump."`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionString {
    pub direction: Direction,
    pub event: Option<Event>,
}

impl ActionString {
    pub const NOOP: ActionString = ActionString {
        direction: Direction::Stay,
        event: None,
    };

    pub fn new(direction: Direction, event: Option<Event>) -> Self {
        ActionString { direction, event }
    }

    /// Every string of the grammar, in a fixed order (direction-major).
    pub fn all() -> Vec<ActionString> {
        let mut out = Vec::with_capacity(15);
        for d in Direction::ALL {
            for e in [None, Some(Event::Jump), Some(Event::Flash)] {
                out.push(ActionString::new(d, e));
            }
        }
        out
    }

    pub fn parse(s: &str) -> Result<ActionString> {
        s.parse()
    }
}

impl fmt::Display for ActionString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}).", self.direction.word())?;
        if let Some(e) = self.event {
            write!(f, " {}.", e.word())?;
        }
        Ok(())
    }
}

impl FromStr for ActionString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fail = |reason: &str| Error::Grammar {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let rest = s.strip_prefix('(').ok_or_else(|| fail("expected '('"))?;
        let close = rest.find(')').ok_or_else(|| fail("expected ')'"))?;
        let key = &rest[..close];
        let direction = match key {
            "" => Direction::Stay,
            _ => Direction::ALL.into_iter().find(|d| d.word() == key).ok_or_else(|| fail("unknown key"))?,
        };
        let rest = rest[close + 1..].strip_prefix('.').ok_or_else(|| fail("expected '.' after key group"))?;
        if rest.is_empty() {
            return Ok(ActionString::new(direction, None));
        }
        let word = rest
            .strip_prefix(' ')
            .and_then(|r| r.strip_suffix('.'))
            .ok_or_else(|| fail("expected ' <event>.'"))?;
        let event = match word {
            "jump" => Event::Jump,
            "flash" => Event::Flash,
            _ => return Err(fail("unknown event")),
        };
        Ok(ActionString::new(direction, Some(event)))
    }
}

impl Serialize for ActionString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActionString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
