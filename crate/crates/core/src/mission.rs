//! Drill, heat, extract and filter cycle with power accounting.
//!
//! Volumes are in cc, rates in cc/hr, power in W, time in s and energy in J.
//! Each logged sample is computed from the snapshot at the start of its
//! phase in a single step, so a one-hour phase yields the configured hourly
//! rate exactly rather than a sum of small increments.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Latent heat of fusion of water ice, J/kg.
pub const LATENT_HEAT_FUSION: f64 = 334_000.0;
/// Mechanical horsepower, W.
pub const HORSEPOWER: f64 = 745.699_871_582_270_2;
pub const HEATER_MIN_POWER: f64 = 200.0;
pub const HEATER_MAX_POWER: f64 = 600.0;

const AS_DESIGNED: &str = include_str!("../profiles/as-designed.json");
const AS_TESTED: &str = include_str!("../profiles/as-tested.json");

/// Names of the bundled configuration profiles.
pub const PROFILES: [&str; 2] = ["as-designed", "as-tested"];

/// Upper bound on melt rate (cc/hr) for a heater power: all heat goes into
/// the phase change, none into warming the ice or the melt.
pub fn thermo_ceiling(power: f64) -> f64 {
    // kg/s → g/hr, 1 g/cc
    power / LATENT_HEAT_FUSION * 3600.0 * 1000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    pub name: String,
    pub heater_power: f64,
    /// Power at which `melt_rate` was measured.
    pub reference_power: f64,
    /// cc/hr at `reference_power`.
    pub melt_rate: f64,
    /// Melt rate scales as `(heater_power / reference_power)^power_exponent`.
    pub power_exponent: f64,
    /// cc/hr
    pub filtration_rate: f64,
    pub pump_voltage: f64,
    pub pump_current: f64,
    /// Volumetric pump rate, cc/hr; unlimited when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pump_rate: Option<f64>,
    pub top_drive_power: f64,
    pub stepper_power: f64,
    pub grid_cap: f64,
    pub drilling_duration: f64,
    pub heating_duration: f64,
    pub extracting_duration: f64,
    pub filtering_duration: f64,
    /// Filter while extracting.
    pub concurrent_filtering: bool,
    /// Keep the heater on while extracting.
    pub simultaneous_heating: bool,
    /// Logging interval within a phase, s.
    pub sample_interval: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            name: "as-designed".into(),
            heater_power: 200.0,
            reference_power: 200.0,
            melt_rate: 1570.0,
            power_exponent: 1.0,
            filtration_rate: 750.0,
            pump_voltage: 12.0,
            pump_current: 1.4,
            pump_rate: None,
            top_drive_power: 363.0,
            stepper_power: 140.0,
            grid_cap: 25.0 * HORSEPOWER,
            drilling_duration: 0.0,
            heating_duration: 3600.0,
            extracting_duration: 3600.0,
            filtering_duration: 0.0,
            concurrent_filtering: true,
            simultaneous_heating: false,
            sample_interval: 60.0,
        }
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

impl MissionConfig {
    /// A bundled profile by name, validated.
    pub fn profile(name: &str) -> Result<Self> {
        let text = match name {
            "as-designed" => AS_DESIGNED,
            "as-tested" => AS_TESTED,
            other => {
                return Err(Error::Config(format!(
                    "unknown profile {other:?}; expected one of {PROFILES:?}"
                )))
            }
        };
        Self::from_json_str(text)
    }

    /// Parses and validates a config; missing fields take built-in defaults.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    /// Applies the fields present in `overlay` on top of `self`.
    pub fn overlay_json_str(&self, overlay: &str) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, serde_json::from_str(overlay)?);
        let c: Self = serde_json::from_value(base)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Melt rate at the configured heater power, cc/hr.
    pub fn effective_melt_rate(&self) -> f64 {
        let ratio = self.heater_power / self.reference_power;
        if self.power_exponent == 1.0 {
            self.melt_rate * ratio
        } else {
            self.melt_rate * ratio.powf(self.power_exponent)
        }
    }

    pub fn pump_power(&self) -> f64 {
        self.pump_voltage * self.pump_current
    }

    /// Fraction of the latent-heat ceiling reached at the heater power.
    pub fn melt_efficiency(&self) -> f64 {
        self.effective_melt_rate() / thermo_ceiling(self.heater_power)
    }

    pub fn cycle_length(&self) -> f64 {
        self.drilling_duration
            + self.heating_duration
            + self.extracting_duration
            + self.filtering_duration
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("melt_rate", self.melt_rate),
            ("power_exponent", self.power_exponent),
            ("filtration_rate", self.filtration_rate),
            ("pump_voltage", self.pump_voltage),
            ("pump_current", self.pump_current),
            ("top_drive_power", self.top_drive_power),
            ("stepper_power", self.stepper_power),
            ("grid_cap", self.grid_cap),
            ("drilling_duration", self.drilling_duration),
            ("heating_duration", self.heating_duration),
            ("extracting_duration", self.extracting_duration),
            ("filtering_duration", self.filtering_duration),
            ("pump_rate", self.pump_rate.unwrap_or(0.0)),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(HEATER_MIN_POWER..=HEATER_MAX_POWER).contains(&self.heater_power) {
            return Err(Error::Config(format!(
                "heater_power {} W outside {HEATER_MIN_POWER}-{HEATER_MAX_POWER} W",
                self.heater_power
            )));
        }
        if !(self.reference_power > 0.0 && self.reference_power.is_finite()) {
            return Err(Error::Config("reference_power must be > 0".into()));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return Err(Error::Config("sample_interval must be > 0".into()));
        }
        if self.cycle_length() <= 0.0 {
            return Err(Error::Config(
                "at least one phase must have a positive duration".into(),
            ));
        }
        let rate = self.effective_melt_rate();
        let ceiling = thermo_ceiling(self.heater_power);
        if rate > ceiling {
            return Err(Error::Config(format!(
                "melt rate {rate} cc/hr at {} W exceeds the latent-heat ceiling {ceiling:.1} cc/hr",
                self.heater_power
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Drilling,
    Heating,
    Extracting,
    Filtering,
    Idle,
}

impl Phase {
    pub const CYCLE: [Phase; 4] = [
        Phase::Drilling,
        Phase::Heating,
        Phase::Extracting,
        Phase::Filtering,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Drilling => "drilling",
            Phase::Heating => "heating",
            Phase::Extracting => "extracting",
            Phase::Filtering => "filtering",
            Phase::Idle => "idle",
        }
    }

    fn duration(self, c: &MissionConfig) -> f64 {
        match self {
            Phase::Drilling => c.drilling_duration,
            Phase::Heating => c.heating_duration,
            Phase::Extracting => c.extracting_duration,
            Phase::Filtering => c.filtering_duration,
            Phase::Idle => 0.0,
        }
    }

    fn melts(self, c: &MissionConfig) -> bool {
        self == Phase::Heating || (self == Phase::Extracting && c.simultaneous_heating)
    }

    fn filters(self, c: &MissionConfig) -> bool {
        self == Phase::Filtering || (self == Phase::Extracting && c.concurrent_filtering)
    }

    /// Devices drawing power during this phase.
    pub fn devices(self, c: &MissionConfig) -> Vec<Device> {
        let mut d = Vec::new();
        if self == Phase::Drilling {
            d.extend([Device::TopDrive, Device::Stepper]);
        }
        if self.melts(c) {
            d.push(Device::Heater);
        }
        if self == Phase::Extracting {
            d.push(Device::Pump);
        }
        d
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    Heater,
    TopDrive,
    Stepper,
    Pump,
}

impl Device {
    pub fn power(self, c: &MissionConfig) -> f64 {
        match self {
            Device::Heater => c.heater_power,
            Device::TopDrive => c.top_drive_power,
            Device::Stepper => c.stepper_power,
            Device::Pump => c.pump_power(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Device::Heater => "heater",
            Device::TopDrive => "top_drive",
            Device::Stepper => "stepper",
            Device::Pump => "pump",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    /// (device, W) for each active device.
    pub contributors: Vec<(Device, f64)>,
    pub total: f64,
    pub cap: f64,
}

impl PowerReport {
    pub fn ok(&self) -> bool {
        self.total <= self.cap
    }
}

impl fmt::Display for PowerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "draw {} W vs cap {} W", self.total, self.cap)?;
        if !self.contributors.is_empty() {
            let parts: Vec<String> = self
                .contributors
                .iter()
                .map(|(d, w)| format!("{} {w} W", d.as_str()))
                .collect();
            write!(f, " [{}]", parts.join(", "))?;
        }
        Ok(())
    }
}

/// Sums the draw of `active` devices and compares it to the grid cap.
pub fn power_check(config: &MissionConfig, active: &[Device]) -> PowerReport {
    let contributors: Vec<(Device, f64)> = active.iter().map(|d| (*d, d.power(config))).collect();
    PowerReport {
        total: contributors.iter().map(|(_, w)| w).sum(),
        contributors,
        cap: config.grid_cap,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionState {
    pub phase: Phase,
    pub melted: f64,
    pub extracted: f64,
    pub filtered: f64,
    pub elapsed: f64,
    pub energy: f64,
    /// Draw during the interval ending at this sample, W.
    pub power: f64,
}

impl Default for MissionState {
    fn default() -> Self {
        Self {
            phase: Phase::Idle,
            melted: 0.0,
            extracted: 0.0,
            filtered: 0.0,
            elapsed: 0.0,
            energy: 0.0,
            power: 0.0,
        }
    }
}

fn hours(dt: f64) -> f64 {
    dt / 3600.0
}

/// Melts at the effective rate for `dt` seconds, charging heater energy.
pub fn melt_step(state: &MissionState, config: &MissionConfig, dt: f64) -> MissionState {
    let mut s = state.clone();
    if dt > 0.0 {
        s.melted += config.effective_melt_rate() * dt / 3600.0;
        s.energy += config.heater_power * dt;
    }
    s
}

/// Pumps melt to the surface, limited by the pump rate and available melt.
pub fn extract_step(state: &MissionState, config: &MissionConfig, dt: f64) -> MissionState {
    let mut s = state.clone();
    if dt > 0.0 {
        let available = s.melted - s.extracted;
        let moved = match config.pump_rate {
            Some(r) => (r * hours(dt)).min(available),
            None => available,
        };
        // Clamp so rounding never lifts a total above its source.
        s.extracted = (s.extracted + moved.max(0.0)).min(s.melted);
        s.energy += config.pump_power() * dt;
    }
    s
}

/// Filters extracted water, limited by the filtration rate and the backlog.
pub fn filter_step(state: &MissionState, config: &MissionConfig, dt: f64) -> MissionState {
    let mut s = state.clone();
    if dt > 0.0 {
        let backlog = s.extracted - s.filtered;
        s.filtered = (s.filtered + (config.filtration_rate * dt / 3600.0).min(backlog).max(0.0))
            .min(s.extracted);
    }
    s
}

/// Runs the drill motors for `dt` seconds.
pub fn drill_step(state: &MissionState, config: &MissionConfig, dt: f64) -> MissionState {
    let mut s = state.clone();
    if dt > 0.0 {
        s.energy += (config.top_drive_power + config.stepper_power) * dt;
    }
    s
}

/// State `tau` seconds into `phase`, starting from `start`.
fn advance(start: &MissionState, phase: Phase, config: &MissionConfig, tau: f64) -> MissionState {
    let mut s = start.clone();
    if phase == Phase::Drilling {
        s = drill_step(&s, config, tau);
    }
    if phase.melts(config) {
        s = melt_step(&s, config, tau);
    }
    if phase == Phase::Extracting {
        s = extract_step(&s, config, tau);
    }
    if phase.filters(config) {
        s = filter_step(&s, config, tau);
    }
    s.phase = phase;
    s.elapsed = start.elapsed + tau;
    s.power = Phase::devices(phase, config)
        .iter()
        .map(|d| d.power(config))
        .sum();
    s
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MissionLog {
    pub samples: Vec<MissionState>,
    /// Energy per phase, J.
    pub phase_energy: BTreeMap<Phase, f64>,
}

impl MissionLog {
    pub fn last(&self) -> Option<&MissionState> {
        self.samples.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "time",
            "phase",
            "melted",
            "extracted",
            "filtered",
            "power",
            "energy",
        ])?;
        for s in &self.samples {
            w.write_record([
                s.elapsed.to_string(),
                s.phase.to_string(),
                s.melted.to_string(),
                s.extracted.to_string(),
                s.filtered.to_string(),
                s.power.to_string(),
                s.energy.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Repeats drill → heat → extract → filter until `duration` seconds have
/// elapsed, skipping phases with zero duration.
pub fn run_cycle(config: &MissionConfig, duration: f64) -> Result<MissionLog> {
    config.validate()?;
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::Argument(format!(
            "duration must be >= 0, got {duration}"
        )));
    }
    let mut log = MissionLog {
        samples: vec![MissionState::default()],
        phase_energy: BTreeMap::new(),
    };
    let mut snap = MissionState::default();
    let mut t = 0.0;
    let mut cycle = Phase::CYCLE.iter().cycle();
    while t < duration {
        let phase = *cycle.next().expect("cycle is infinite");
        let d = phase.duration(config);
        if d <= 0.0 {
            continue;
        }
        let report = power_check(config, &phase.devices(config));
        if !report.ok() {
            return Err(Error::PowerBudget {
                time: t,
                report,
                partial: Box::new(log),
            });
        }
        let span = d.min(duration - t);
        let mut k = 1.0;
        loop {
            let tau = k * config.sample_interval;
            if tau >= span {
                break;
            }
            log.samples.push(advance(&snap, phase, config, tau));
            k += 1.0;
        }
        let end = advance(&snap, phase, config, span);
        *log.phase_energy.entry(phase).or_insert(0.0) += end.energy - snap.energy;
        log.samples.push(end.clone());
        snap = end;
        t = if span == d { t + d } else { duration };
    }
    Ok(log)
}
