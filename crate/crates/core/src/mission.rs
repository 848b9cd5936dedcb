//! Mission bookkeeping: the event log, its ordering invariants and the
//! end-of-mission summary.

use crate::docking::{maneuver_durations, DockPhase};
use crate::powertrain::SwitchCommand;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    /// Primary pack ran out with no secondary carrying the load.
    PrimaryDepleted,
    /// Simulated time reached the scenario duration.
    WallClock,
}

impl EndReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EndReason::PrimaryDepleted => "primary_depleted",
            EndReason::WallClock => "wall_clock",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Dispatch { unit: usize },
    Phase { unit: usize, from: DockPhase, to: DockPhase },
    Docked { unit: usize },
    ElectricalContact { unit: usize },
    ContactFailure { unit: usize },
    BounceOff { unit: usize, lateral: f64 },
    Switch { to: SwitchCommand },
    UndockCommand { unit: usize },
    Undocked { unit: usize },
    SecondaryDepleted { unit: usize },
    FbPackDepleted { unit: usize },
    Landed { unit: usize },
    Recharged { unit: usize },
    PlatformAccelWarning { unit: usize, accel: f64 },
    PrimaryDepleted,
    End { reason: EndReason },
}

impl EventKind {
    /// Compact label for the telemetry events column.
    pub fn label(&self) -> String {
        use EventKind::*;
        match self {
            Dispatch { unit } => format!("dispatch:{unit}"),
            Phase { unit, from, to } => format!("phase:{unit}:{from}>{to}"),
            Docked { unit } => format!("dock:{unit}"),
            ElectricalContact { unit } => format!("contact:{unit}"),
            ContactFailure { unit } => format!("contact_failure:{unit}"),
            BounceOff { unit, .. } => format!("bounce:{unit}"),
            Switch { to: SwitchCommand::UsePrimary } => "switch:primary".into(),
            Switch { to: SwitchCommand::UseSecondary } => "switch:secondary".into(),
            UndockCommand { unit } => format!("undock_cmd:{unit}"),
            Undocked { unit } => format!("undock:{unit}"),
            SecondaryDepleted { unit } => format!("secondary_depleted:{unit}"),
            FbPackDepleted { unit } => format!("fb_pack_depleted:{unit}"),
            Landed { unit } => format!("landed:{unit}"),
            Recharged { unit } => format!("recharged:{unit}"),
            PlatformAccelWarning { unit, .. } => format!("accel_warning:{unit}"),
            PrimaryDepleted => "primary_depleted".into(),
            End { reason } => format!("end:{}", reason.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionEvent {
    pub seq: u64,
    pub step: u64,
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MissionLog {
    pub events: Vec<MissionEvent>,
}

impl MissionLog {
    pub fn push(&mut self, step: u64, time: f64, kind: EventKind) {
        let seq = self.events.len() as u64;
        self.events.push(MissionEvent { seq, step, time, kind });
    }

    pub fn count(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }

    /// Phase transitions of one unit as `(time, from, to)`.
    pub fn phase_trace(&self, unit: usize) -> Vec<(f64, DockPhase, DockPhase)> {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Phase { unit: u, from, to } if u == unit => Some((e.time, from, to)),
                _ => None,
            })
            .collect()
    }

    /// Checks ordering and causality:
    /// events are ordered by (time, sequence); every switch to the secondary
    /// follows an electrical contact of the currently docked unit; every
    /// undock follows a dock of the same unit.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut docked: Option<usize> = None;
        let mut contact = false;
        for (i, w) in self.events.windows(2).enumerate() {
            let (a, b) = (&w[0], &w[1]);
            if !(b.time > a.time || (b.time == a.time && b.seq > a.seq && b.step == a.step)) {
                return Err(format!("events {i} and {} out of order", i + 1));
            }
        }
        for e in &self.events {
            match e.kind {
                EventKind::Docked { unit } => {
                    if docked.is_some() {
                        return Err(format!("unit {unit} docked at {} onto an occupied platform", e.time));
                    }
                    docked = Some(unit);
                    contact = false;
                }
                EventKind::ElectricalContact { unit } => {
                    if docked != Some(unit) {
                        return Err(format!("contact of unit {unit} at {} while not docked", e.time));
                    }
                    contact = true;
                }
                EventKind::Switch { to: SwitchCommand::UseSecondary } => {
                    if !contact {
                        return Err(format!("switch to secondary at {} without electrical contact", e.time));
                    }
                }
                EventKind::Undocked { unit } => {
                    if docked != Some(unit) {
                        return Err(format!("unit {unit} undocked at {} without being docked", e.time));
                    }
                    docked = None;
                    contact = false;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Energy and time accounting kept by the world while it runs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Ledger {
    pub primary_wh: f64,
    pub secondary_wh: f64,
    pub fb_own_wh: f64,
    pub time_on_primary: f64,
    pub time_on_secondary: f64,
    pub time_on_both: f64,
    /// Largest distance of the main vehicle's altitude from its setpoint, m.
    pub max_altitude_error: f64,
    /// Smallest contact normal force seen while docked with contact, N.
    pub min_docked_normal_force: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionSummary {
    pub total_time: f64,
    pub solo_time: f64,
    pub extension_factor: f64,
    pub end_reason: EndReason,
    pub switches: usize,
    pub contact_failures: usize,
    pub bounces: usize,
    pub docks: usize,
    pub secondary_depletions: usize,
    pub ledger: Ledger,
    pub mean_dock_duration: Option<f64>,
    pub mean_undock_duration: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Dock and undock durations of every completed cycle in a unit's trace.
pub fn cycle_durations(trace: &[(f64, DockPhase, DockPhase)]) -> (Vec<f64>, Vec<f64>) {
    let (mut docks, mut undocks) = (Vec::new(), Vec::new());
    let mut start = 0;
    for (i, &(_, _, to)) in trace.iter().enumerate() {
        if to == DockPhase::Grounded || i + 1 == trace.len() {
            let d = maneuver_durations(&trace[start..=i]);
            docks.extend(d.dock);
            undocks.extend(d.undock);
            start = i + 1;
        }
    }
    (docks, undocks)
}

pub fn summarize(log: &MissionLog, ledger: &Ledger, fleet: usize, total_time: f64, solo_time: f64, end_reason: EndReason) -> MissionSummary {
    let (mut docks, mut undocks) = (Vec::new(), Vec::new());
    for unit in 0..fleet {
        let (d, u) = cycle_durations(&log.phase_trace(unit));
        docks.extend(d);
        undocks.extend(u);
    }
    MissionSummary {
        total_time,
        solo_time,
        extension_factor: total_time / solo_time,
        end_reason,
        switches: log.count(|k| matches!(k, EventKind::Switch { to: SwitchCommand::UseSecondary })),
        contact_failures: log.count(|k| matches!(k, EventKind::ContactFailure { .. })),
        bounces: log.count(|k| matches!(k, EventKind::BounceOff { .. })),
        docks: log.count(|k| matches!(k, EventKind::Docked { .. })),
        secondary_depletions: log.count(|k| matches!(k, EventKind::SecondaryDepleted { .. })),
        ledger: *ledger,
        mean_dock_duration: mean(&docks),
        mean_undock_duration: mean(&undocks),
    }
}

impl MissionSummary {
    fn rows(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        let l = &self.ledger;
        vec![
            ("total_time_s", format!("{:.3}", self.total_time)),
            ("solo_time_s", format!("{:.3}", self.solo_time)),
            ("extension_factor", format!("{:.4}", self.extension_factor)),
            ("end_reason", self.end_reason.as_str().to_string()),
            ("switches", self.switches.to_string()),
            ("contact_failures", self.contact_failures.to_string()),
            ("bounces", self.bounces.to_string()),
            ("docks", self.docks.to_string()),
            ("secondary_depletions", self.secondary_depletions.to_string()),
            ("primary_energy_wh", format!("{:.4}", l.primary_wh)),
            ("secondary_energy_wh", format!("{:.4}", l.secondary_wh)),
            ("fb_own_energy_wh", format!("{:.4}", l.fb_own_wh)),
            ("time_on_primary_s", format!("{:.3}", l.time_on_primary)),
            ("time_on_secondary_s", format!("{:.3}", l.time_on_secondary)),
            ("time_on_both_s", format!("{:.3}", l.time_on_both)),
            ("max_altitude_error_m", format!("{:.4}", l.max_altitude_error)),
            ("min_docked_normal_force_n", opt(l.min_docked_normal_force)),
            ("mean_dock_duration_s", opt(self.mean_dock_duration)),
            ("mean_undock_duration_s", opt(self.mean_undock_duration)),
        ]
    }

    /// Aligned two-column table for people.
    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
    }

    /// `metric,value` CSV for machines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.rows() {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }

    pub const CSV_COLUMNS: [&'static str; 8] = [
        "total_time_s",
        "solo_time_s",
        "extension_factor",
        "switches",
        "contact_failures",
        "docks",
        "primary_energy_wh",
        "secondary_energy_wh",
    ];

    /// Values matching [`MissionSummary::CSV_COLUMNS`], for sweep rows.
    pub fn csv_values(&self) -> Vec<String> {
        vec![
            format!("{:.3}", self.total_time),
            format!("{:.3}", self.solo_time),
            format!("{:.6}", self.extension_factor),
            self.switches.to_string(),
            self.contact_failures.to_string(),
            self.docks.to_string(),
            format!("{:.4}", self.ledger.primary_wh),
            format!("{:.4}", self.ledger.secondary_wh),
        ]
    }
}
