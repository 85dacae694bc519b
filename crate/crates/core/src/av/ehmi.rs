use serde::{Deserialize, Serialize};

use super::AvState;
use crate::protocol::LightBand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum AudioCue {
    #[default]
    None,
    Chime,
}

/// The AV's four outward communication channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct EhmiState {
    pub projection_on: bool,
    pub light_band: LightBand,
    pub audio_cue: AudioCue,
    pub phone_alert: bool,
}

impl EhmiState {
    /// Channel bitfield carried as the value of an EHMI_CHANGE event:
    /// bit 0 projection, bits 1–2 light band, bit 3 chime, bit 4 phone.
    pub fn to_bits(self) -> u8 {
        (self.projection_on as u8)
            | (self.light_band.code() << 1)
            | ((self.audio_cue == AudioCue::Chime) as u8) << 3
            | (self.phone_alert as u8) << 4
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        if bits >> 5 != 0 {
            return None;
        }
        Some(Self {
            projection_on: bits & 1 != 0,
            light_band: LightBand::from_code((bits >> 1) & 0b11)?,
            audio_cue: if bits & 0b1000 != 0 { AudioCue::Chime } else { AudioCue::None },
            phone_alert: bits & 0b1_0000 != 0,
        })
    }
}

/// Per-condition channel enables, in the order projection, light band,
/// audio, phone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EhmiMask(pub [bool; 4]);

impl Default for EhmiMask {
    fn default() -> Self {
        Self([true; 4])
    }
}

impl EhmiMask {
    pub fn apply(&self, e: EhmiState) -> EhmiState {
        let [projection, light, audio, phone] = self.0;
        EhmiState {
            projection_on: e.projection_on && projection,
            light_band: if light { e.light_band } else { LightBand::Off },
            audio_cue: if audio { e.audio_cue } else { AudioCue::None },
            phone_alert: e.phone_alert && phone,
        }
    }
}

pub fn set_ehmi(state: AvState) -> EhmiState {
    match state {
        AvState::Cruising => EhmiState::default(),
        AvState::Approaching => EhmiState {
            light_band: LightBand::Aware,
            phone_alert: true,
            ..Default::default()
        },
        AvState::Yielding => EhmiState {
            projection_on: true,
            light_band: LightBand::Yielding,
            audio_cue: AudioCue::Chime,
            phone_alert: true,
        },
        AvState::Stopped => EhmiState {
            projection_on: true,
            light_band: LightBand::Yielding,
            ..Default::default()
        },
        AvState::Resuming => EhmiState {
            light_band: LightBand::Aware,
            ..Default::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table() {
        use AudioCue::*;
        use LightBand as L;
        let rows = [
            (AvState::Cruising, (false, L::Off, None, false)),
            (AvState::Approaching, (false, L::Aware, None, true)),
            (AvState::Yielding, (true, L::Yielding, Chime, true)),
            (AvState::Stopped, (true, L::Yielding, None, false)),
            (AvState::Resuming, (false, L::Aware, None, false)),
        ];
        for (s, (p, l, a, ph)) in rows {
            let e = set_ehmi(s);
            assert_eq!((e.projection_on, e.light_band, e.audio_cue, e.phone_alert), (p, l, a, ph), "{s:?}");
        }
    }

    #[test]
    fn bits_round_trip_and_mask() {
        for s in AvState::ALL {
            let e = set_ehmi(s);
            assert_eq!(EhmiState::from_bits(e.to_bits()), Some(e));
        }
        let masked = EhmiMask([true, false, true, false]).apply(set_ehmi(AvState::Yielding));
        assert_eq!(
            masked,
            EhmiState {
                projection_on: true,
                light_band: LightBand::Off,
                audio_cue: AudioCue::Chime,
                phone_alert: false
            }
        );
    }
}
