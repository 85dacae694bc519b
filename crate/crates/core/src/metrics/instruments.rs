//! Scoring for the in-session questionnaires.
//!
//! Item numbering is 1-based throughout. TLX items 1–6 are mental, physical
//! and temporal demand, performance, effort and frustration, each 0–100.
//! PANAS follows the standard 20-item schedule, 1–5 per item. VA item 1 is
//! valence and item 2 arousal, each in [−1, 1]. STRESS has one item, 0–10.
//! TIMEPERC item 1 is the perceived duration and item 2 the actual one, both
//! in seconds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Instrument {
    Tlx,
    Panas,
    Va,
    Stress,
    #[serde(rename = "TIMEPERC")]
    TimePerc,
}

/// PANAS positive-affect items; the remaining ten are negative affect.
pub const PANAS_POSITIVE: [u8; 10] = [1, 3, 5, 9, 10, 12, 14, 16, 17, 19];

impl Instrument {
    pub const ALL: [Instrument; 5] = [
        Instrument::Tlx,
        Instrument::Panas,
        Instrument::Va,
        Instrument::Stress,
        Instrument::TimePerc,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn item_count(self) -> u8 {
        match self {
            Instrument::Tlx => 6,
            Instrument::Panas => 20,
            Instrument::Va => 2,
            Instrument::Stress => 1,
            Instrument::TimePerc => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Instrument::Tlx => "TLX",
            Instrument::Panas => "PANAS",
            Instrument::Va => "VA",
            Instrument::Stress => "STRESS",
            Instrument::TimePerc => "TIMEPERC",
        }
    }

    /// Whether `value` is admissible for `item`.
    pub fn accepts(self, item: u8, value: f64) -> bool {
        if item == 0 || item > self.item_count() || !value.is_finite() {
            return false;
        }
        match self {
            Instrument::Tlx => (0.0..=100.0).contains(&value),
            Instrument::Panas => value.fract() == 0.0 && (1.0..=5.0).contains(&value),
            Instrument::Va => (-1.0..=1.0).contains(&value),
            Instrument::Stress => (0.0..=10.0).contains(&value),
            Instrument::TimePerc => value > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstrumentResponse {
    pub instrument: Instrument,
    pub item: u8,
    pub value: f64,
    pub sim_time_us: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InstrumentScores {
    /// Unweighted mean of the six subscales.
    pub raw_tlx: Option<f64>,
    pub panas_positive: Option<u32>,
    pub panas_negative: Option<u32>,
    pub valence: Option<f64>,
    pub arousal: Option<f64>,
    pub stress: Option<f64>,
    /// Perceived over actual duration.
    pub time_ratio: Option<f64>,
    /// Instruments with at least one answer but missing items.
    pub partial: Vec<Instrument>,
    /// Responses dropped for being out of range.
    pub rejected: usize,
}

/// Score one administration of each instrument.
///
/// Repeated answers to an item keep the latest by sim time (ties broken by
/// value), so the result does not depend on arrival order. Incomplete
/// instruments are flagged and left unscored.
pub fn score_instruments(responses: &[InstrumentResponse]) -> InstrumentScores {
    let mut latest: BTreeMap<(Instrument, u8), (u64, f64)> = BTreeMap::new();
    let mut out = InstrumentScores::default();
    for r in responses {
        if !r.instrument.accepts(r.item, r.value) {
            out.rejected += 1;
            continue;
        }
        let entry = latest.entry((r.instrument, r.item)).or_insert((r.sim_time_us, r.value));
        if (r.sim_time_us, r.value.to_bits()) > (entry.0, entry.1.to_bits()) {
            *entry = (r.sim_time_us, r.value);
        }
    }
    let items = |inst: Instrument| -> Option<Vec<f64>> {
        let v: Vec<f64> = (1..=inst.item_count())
            .filter_map(|i| latest.get(&(inst, i)).map(|e| e.1))
            .collect();
        (v.len() == inst.item_count() as usize).then_some(v)
    };
    for inst in Instrument::ALL {
        let answered = latest.keys().any(|k| k.0 == inst);
        if answered && items(inst).is_none() {
            out.partial.push(inst);
        }
    }
    if let Some(tlx) = items(Instrument::Tlx) {
        out.raw_tlx = Some(tlx.iter().sum::<f64>() / 6.0);
    }
    if let Some(p) = items(Instrument::Panas) {
        let (mut pa, mut na) = (0u32, 0u32);
        for (i, v) in p.iter().enumerate() {
            if PANAS_POSITIVE.contains(&(i as u8 + 1)) {
                pa += *v as u32;
            } else {
                na += *v as u32;
            }
        }
        out.panas_positive = Some(pa);
        out.panas_negative = Some(na);
    }
    if let Some(va) = items(Instrument::Va) {
        out.valence = Some(va[0]);
        out.arousal = Some(va[1]);
    }
    if let Some(s) = items(Instrument::Stress) {
        out.stress = Some(s[0]);
    }
    if let Some(t) = items(Instrument::TimePerc) {
        out.time_ratio = Some(t[0] / t[1]);
    }
    out
}
