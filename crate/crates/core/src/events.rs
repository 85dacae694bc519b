//! Simulator event codes and the event-log record shared by the server,
//! the metrics pipeline and the sensor aligner.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Event code as carried on the wire (EVENT.code) and in the logs.
///
/// Named codes serialize as their snake_case name; any other value
/// serializes as a bare number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventCode(pub u16);

macro_rules! codes {
    ($($name:ident = $val:expr, $text:expr;)*) => {
        impl EventCode {
            $(pub const $name: EventCode = EventCode($val);)*

            pub const NAMED: &'static [EventCode] = &[$(EventCode::$name),*];

            pub fn name(self) -> Option<&'static str> {
                match self.0 {
                    $($val => Some($text),)*
                    _ => None,
                }
            }

            pub fn from_name(name: &str) -> Option<Self> {
                match name {
                    $($text => Some(EventCode::$name),)*
                    _ => None,
                }
            }
        }
    };
}

codes! {
    EHMI_CHANGE = 1, "ehmi_change";
    TAKEOVER_REQUEST = 2, "takeover_request";
    TAKEOVER_ENGAGE = 3, "takeover_engage";
    TRIGGER_FIRED = 4, "trigger_fired";
    CONFLICT_ENTER = 5, "conflict_enter";
    CONFLICT_EXIT = 6, "conflict_exit";
    SIGNAL_PHASE = 7, "signal_phase";
    QRESPONSE = 8, "qresponse";
    NBACK_STIM = 9, "nback_stim";
    NBACK_RESP = 10, "nback_resp";
    SYNC_MARK = 11, "sync_mark";
    JOIN_REJECTED = 12, "join_rejected";
    WARNING = 13, "warning";
    DOOR_OPEN = 14, "door_open";
    DOOR_CLOSE = 15, "door_close";
    HAZARD = 16, "hazard";
    CROSSING_CUE = 17, "crossing_cue";
    QUESTIONNAIRE_START = 18, "questionnaire_start";
    NBACK_START = 19, "nback_start";
    ACTION_DROPPED = 20, "action_dropped";
    JOIN = 21, "join";
    LEAVE = 22, "leave";
    DESPAWN = 23, "despawn";
    AV_STATE = 24, "av_state";
    BOARD = 25, "board";
    ALIGHT = 26, "alight";
}

/// Subcodes carried in the `object` field of WARNING events.
pub mod warning {
    pub const SEAT_REQUEST_IGNORED: u32 = 1;
    pub const INPUT_REJECTED: u32 = 2;
    pub const DECODE_ERROR: u32 = 3;
}

impl fmt::Display for EventCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => f.write_str(n),
            None => write!(f, "{}", self.0),
        }
    }
}

impl Serialize for EventCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.name() {
            Some(n) => s.serialize_str(n),
            None => s.serialize_u16(self.0),
        }
    }
}

impl<'de> Deserialize<'de> for EventCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = EventCode;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an event name or a u16 code")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<EventCode, E> {
                EventCode::from_name(v).ok_or_else(|| E::custom(format!("unknown event code {v:?}")))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<EventCode, E> {
                u16::try_from(v)
                    .map(EventCode)
                    .map_err(|_| E::custom(format!("event code {v} exceeds u16")))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<EventCode, E> {
                u16::try_from(v)
                    .map(EventCode)
                    .map_err(|_| E::custom(format!("event code {v} out of range")))
            }
        }
        d.deserialize_any(V)
    }
}

/// One event-log entry. Ordered by (tick, emission order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub tick: u64,
    pub sim_time_us: u64,
    pub code: EventCode,
    pub subject: u32,
    pub object: u32,
    pub value: f64,
}

impl EventRecord {
    pub fn sim_time_s(&self) -> f64 {
        self.sim_time_us as f64 / 1e6
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for &c in EventCode::NAMED {
            assert_eq!(EventCode::from_name(c.name().unwrap()), Some(c));
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<EventCode>(&json).unwrap(), c);
        }
    }

    #[test]
    fn custom_codes_are_numbers() {
        let c = EventCode(900);
        assert_eq!(serde_json::to_string(&c).unwrap(), "900");
        assert_eq!(serde_json::from_str::<EventCode>("900").unwrap(), c);
        assert!(serde_json::from_str::<EventCode>("\"nope\"").is_err());
        assert!(serde_json::from_str::<EventCode>("70000").is_err());
    }
}
