//! Attack workloads, their placement within a day, and the stealth table.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::duty::{Archetype, AuxCatalog, AuxKind, DailyProfile, SegmentKind, PROFILE_START};
use crate::num::SECONDS_PER_DAY;
use crate::pack::RowhammerTarget;

/// Longest hold at elevated voltage accepted after a charge (s).
const MAX_DURATION: f64 = SECONDS_PER_DAY;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttackError {
    #[error("invalid attack spec: {0}")]
    InvalidSpec(String),
    #[error("day {day} has no {needed} for the attack trigger")]
    WindowUnavailable { day: u32, needed: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    AuxDrain,
    Overcharge,
    Overdischarge,
    Rowhammer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Trigger {
    /// When the charger's CV phase terminates (or the window closes first).
    AfterFullCharge,
    /// At the scheduled end of the charge window.
    AfterCharge,
    /// Local clock time, seconds since midnight.
    ClockTime(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Repeat {
    Daily,
    Once,
}

fn one() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Components switched on (AuxDrain, Overdischarge) or whose load is routed (Rowhammer).
    #[serde(default)]
    pub components: BTreeSet<AuxKind>,
    /// V per cell (Overcharge).
    #[serde(default)]
    pub overcharge_offset: f64,
    #[serde(default)]
    pub target: Option<RowhammerTarget>,
    pub start: Trigger,
    /// s; for Overcharge, the hold at elevated voltage after the charge.
    pub duration: f64,
    pub repeat: Repeat,
    #[serde(default = "one")]
    pub attacks_per_day: u8,
}

impl AttackSpec {
    pub fn validate(&self, archetype: Archetype) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::InvalidSpec(m));
        if !(self.duration > 0.0 && self.duration <= MAX_DURATION) {
            return bad(format!("duration {} s outside (0, {MAX_DURATION}]", self.duration));
        }
        if !matches!(self.attacks_per_day, 1 | 2) {
            return bad(format!("attacks_per_day must be 1 or 2, got {}", self.attacks_per_day));
        }
        if self.attacks_per_day == 2 && archetype != Archetype::HomeWork {
            return bad("two attacks per day need the HomeWork archetype (two charge windows)".into());
        }
        if let Trigger::ClockTime(s) = self.start {
            if !(0.0..SECONDS_PER_DAY).contains(&s) {
                return bad(format!("clock time {s} s outside one day"));
            }
            if self.attacks_per_day == 2 {
                return bad("two attacks per day need a charge-anchored trigger".into());
            }
        }
        match self.kind {
            AttackKind::Overcharge => {
                if !(self.overcharge_offset > 0.0 && self.overcharge_offset <= 0.5) {
                    return bad(format!(
                        "overcharge_offset {} V outside (0, 0.5]",
                        self.overcharge_offset
                    ));
                }
                if matches!(self.start, Trigger::ClockTime(_)) {
                    return bad("overcharge attacks are anchored to a charge window".into());
                }
            }
            AttackKind::AuxDrain | AttackKind::Overdischarge | AttackKind::Rowhammer => {
                if self.components.is_empty() {
                    return bad(format!("{:?} needs at least one component", self.kind));
                }
            }
        }
        if self.kind == AttackKind::Rowhammer && self.target.is_none() {
            return bad("rowhammer attack needs a target".into());
        }
        if self.kind != AttackKind::Overcharge && self.overcharge_offset != 0.0 {
            return bad("overcharge_offset only applies to Overcharge".into());
        }
        Ok(())
    }

    /// Summed draw of the attacked components (W).
    pub fn aggregate_power(&self, catalog: &AuxCatalog) -> f64 {
        self.components.iter().map(|&k| catalog.power(k)).sum()
    }
}

/// When an injection begins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Anchor {
    /// Seconds after the profile start.
    At(f64),
    /// When CV charging in segment `segment` terminates; the segment end if it never does.
    ChargeComplete { segment: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    /// Extra constant power drawn from the pack (W).
    AuxLoad { power: f64 },
    /// Lower cutoff override armed while drawing `power` (W).
    Overdischarge { power: f64 },
    /// `power` (W) routed through the targeted strings/cells only.
    Rowhammer { power: f64, target: RowhammerTarget },
    /// CV target and BMS charge limit raised by `offset` (V per cell) for the charge window.
    ElevateCv { offset: f64 },
    /// Charger keeps holding the elevated CV target regardless of the termination current.
    HoldCv { offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub anchor: Anchor,
    /// s.
    pub duration: f64,
    pub action: Action,
}

impl Injection {
    /// Load power (W) the injection adds while active.
    pub fn power(&self) -> f64 {
        match &self.action {
            Action::AuxLoad { power } | Action::Overdischarge { power } | Action::Rowhammer { power, .. } => *power,
            Action::ElevateCv { .. } | Action::HoldCv { .. } => 0.0,
        }
    }
}

/// Places the attack on day `day_index` of a run (0-based) with profile `day`.
pub fn schedule_attack(
    spec: &AttackSpec,
    day: &DailyProfile,
    day_index: u32,
    catalog: &AuxCatalog,
) -> Result<Vec<Injection>, AttackError> {
    if spec.repeat == Repeat::Once && day_index > 0 {
        return Ok(Vec::new());
    }
    let charges: Vec<usize> = day
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == SegmentKind::Charge)
        .map(|(i, _)| i)
        .collect();
    let windows: Vec<usize> = match (spec.start, spec.attacks_per_day) {
        (Trigger::ClockTime(_), _) => Vec::new(),
        (_, 2) if charges.len() >= 2 => charges.clone(),
        (_, 2) => {
            return Err(AttackError::WindowUnavailable {
                day: day_index,
                needed: "second charge window",
            })
        }
        // One attack per day uses the overnight (last) window.
        _ => charges.last().copied().into_iter().collect(),
    };
    if !matches!(spec.start, Trigger::ClockTime(_)) && windows.is_empty() {
        return Err(AttackError::WindowUnavailable {
            day: day_index,
            needed: "charge window",
        });
    }
    let anchor_for = |segment: usize| match spec.start {
        Trigger::AfterFullCharge => Anchor::ChargeComplete { segment },
        Trigger::AfterCharge => Anchor::At(day.segments[segment].end()),
        Trigger::ClockTime(_) => unreachable!("clock triggers have no window"),
    };
    let anchors: Vec<Anchor> = match spec.start {
        Trigger::ClockTime(s) => vec![Anchor::At((s - PROFILE_START).rem_euclid(SECONDS_PER_DAY))],
        _ => windows.iter().map(|&w| anchor_for(w)).collect(),
    };

    let power = spec.aggregate_power(catalog);
    let mut out = Vec::new();
    match spec.kind {
        AttackKind::Overcharge => {
            let offset = spec.overcharge_offset;
            for &w in &windows {
                let seg = &day.segments[w];
                out.push(Injection {
                    anchor: Anchor::At(seg.start),
                    duration: seg.duration,
                    action: Action::ElevateCv { offset },
                });
                let hold_anchor = match spec.start {
                    Trigger::AfterCharge => Anchor::At(seg.end()),
                    _ => Anchor::ChargeComplete { segment: w },
                };
                out.push(Injection {
                    anchor: hold_anchor,
                    duration: spec.duration,
                    action: Action::HoldCv { offset },
                });
            }
        }
        AttackKind::AuxDrain => out.extend(anchors.into_iter().map(|anchor| Injection {
            anchor,
            duration: spec.duration,
            action: Action::AuxLoad { power },
        })),
        AttackKind::Overdischarge => out.extend(anchors.into_iter().map(|anchor| Injection {
            anchor,
            duration: spec.duration,
            action: Action::Overdischarge { power },
        })),
        AttackKind::Rowhammer => {
            let target = spec.target.clone().expect("validated rowhammer target");
            out.extend(anchors.into_iter().map(|anchor| Injection {
                anchor,
                duration: spec.duration,
                action: Action::Rowhammer {
                    power,
                    target: target.clone(),
                },
            }))
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VehicleState {
    Parked,
    /// At rest within a driving session.
    Stationary,
    Driving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StealthLevel {
    NA,
    VeryLow,
    Low,
    Medium,
    High,
}

impl StealthLevel {
    pub fn label(self) -> &'static str {
        match self {
            StealthLevel::NA => "N/A",
            StealthLevel::VeryLow => "Very Low",
            StealthLevel::Low => "Low",
            StealthLevel::Medium => "Medium",
            StealthLevel::High => "High",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StealthScore {
    pub per_state: BTreeMap<VehicleState, StealthLevel>,
}

impl StealthScore {
    fn row(parked: StealthLevel, stationary: StealthLevel, driving: StealthLevel) -> Self {
        Self {
            per_state: BTreeMap::from([
                (VehicleState::Parked, parked),
                (VehicleState::Stationary, stationary),
                (VehicleState::Driving, driving),
            ]),
        }
    }

    pub fn get(&self, state: VehicleState) -> StealthLevel {
        self.per_state[&state]
    }
}

/// How unlikely the driver is to notice the attack, per vehicle state.
/// Multi-component attacks share one row.
pub fn stealth_score(components: &BTreeSet<AuxKind>) -> Result<StealthScore, AttackError> {
    use StealthLevel::*;
    let mut it = components.iter();
    let (Some(&only), None) = (it.next(), it.next()) else {
        if components.is_empty() {
            return Err(AttackError::InvalidSpec("stealth needs at least one component".into()));
        }
        return Ok(StealthScore::row(High, Low, Low));
    };
    Ok(match only {
        AuxKind::AcHigh => StealthScore::row(High, Low, Medium),
        AuxKind::AcLow => StealthScore::row(High, High, High),
        AuxKind::PowerSteering => StealthScore::row(NA, High, High),
        AuxKind::Lights => StealthScore::row(High, Low, Medium),
        AuxKind::Fan => StealthScore::row(High, Low, Medium),
        AuxKind::Wipers => StealthScore::row(Medium, VeryLow, VeryLow),
    })
}
