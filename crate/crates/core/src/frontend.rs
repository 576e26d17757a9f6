//! Driver and TxRx-switch models.
//!
//! Two front-end variants are covered: a class-D amplifier behind a DPDT
//! electromechanical relay (type 1), and a pulsed full H-bridge whose fifth
//! switch forms the receive path (type 2). The module also owns the series RL
//! solver for the coil current and the varistor hot-switch model.

use crate::error::{Result, SimError};
use crate::magnetics::CoilChannel;
use crate::sequencer::FrameSchedule;
use crate::trace::Trace;

/// Class-D amplifier plus DPDT relay switch (type 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDRelayConfig {
    /// Drive amplitude [V].
    pub drive_amplitude: f64,
    /// Drive frequency [Hz].
    pub drive_frequency: f64,
    /// Drive phase [rad].
    pub drive_phase: f64,
    /// Amplifier startup delay before the sinusoid appears [s]
    /// (the amplifier needs about one period for internal control).
    pub startup_delay: f64,
    /// Relay operate time [s].
    pub relay_operate_time: f64,
    /// Relay release time [s].
    pub relay_release_time: f64,
    /// Varistor clamping voltage [V].
    pub varistor_clamp_voltage: f64,
    /// Break at the nominal window end even if coil current is nonzero.
    /// When false, relay actuation is synchronized to a drive-current
    /// zero crossing.
    pub hot_switch_allowed: bool,
}

impl ClassDRelayConfig {
    pub fn new(drive_amplitude: f64, drive_frequency: f64) -> Self {
        ClassDRelayConfig {
            drive_amplitude,
            drive_frequency,
            drive_phase: 0.0,
            startup_delay: 1.0 / drive_frequency,
            relay_operate_time: 10e-3,
            relay_release_time: 8e-3,
            varistor_clamp_voltage: 2.0 * drive_amplitude.max(0.5),
            hot_switch_allowed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.drive_amplitude < 0.0 {
            return Err(SimError::invalid_field("frontend.drive_amplitude", "must be >= 0"));
        }
        if !(self.drive_frequency > 0.0) {
            return Err(SimError::invalid_field("frontend.drive_frequency", "must be > 0"));
        }
        if self.relay_operate_time < 0.0 || self.relay_release_time < 0.0 {
            return Err(SimError::invalid_field(
                "frontend.relay_times",
                "operate/release times must be >= 0",
            ));
        }
        if !(self.varistor_clamp_voltage > 0.0) {
            return Err(SimError::invalid_field(
                "frontend.varistor_clamp_voltage",
                "must be > 0",
            ));
        }
        if self.startup_delay < 0.0 {
            return Err(SimError::invalid_field("frontend.startup_delay", "must be >= 0"));
        }
        Ok(())
    }
}

/// Full H-bridge with MOSFET receive path (type 2).
#[derive(Debug, Clone, PartialEq)]
pub struct HBridgeConfig {
    /// Bridge supply voltage [V].
    pub v_dc: f64,
    /// Drive frequency [Hz].
    pub drive_frequency: f64,
    /// Fraction of each half-period the bridge conducts, in [0, 1].
    pub duty_cycle: f64,
    /// Drain-source on resistance per conducting switch [ohm].
    pub rds_on: f64,
    /// Gate dead time at window boundaries [s].
    pub gate_dead_time: f64,
    /// Receive sense/termination resistor [ohm].
    pub r_rx: f64,
}

impl HBridgeConfig {
    pub fn new(v_dc: f64, drive_frequency: f64, duty_cycle: f64) -> Self {
        HBridgeConfig {
            v_dc,
            drive_frequency,
            duty_cycle,
            rds_on: 3.4e-3,
            gate_dead_time: 1e-6,
            r_rx: 1e3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_dc > 0.0) {
            return Err(SimError::invalid_field("frontend.v_dc", "must be > 0"));
        }
        if !(self.drive_frequency > 0.0) {
            return Err(SimError::invalid_field("frontend.drive_frequency", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.duty_cycle) {
            return Err(SimError::invalid_field("frontend.duty_cycle", "must be in [0, 1]"));
        }
        if self.rds_on < 0.0 {
            return Err(SimError::invalid_field("frontend.rds_on", "must be >= 0"));
        }
        if !(self.r_rx > 0.0) {
            return Err(SimError::invalid_field("frontend.r_rx", "must be > 0"));
        }
        if self.gate_dead_time < 0.0 {
            return Err(SimError::invalid_field("frontend.gate_dead_time", "must be >= 0"));
        }
        Ok(())
    }
}

/// Driver variant.
#[derive(Debug, Clone, PartialEq)]
pub enum DriverConfig {
    ClassDRelay(ClassDRelayConfig),
    HBridge(HBridgeConfig),
}

impl DriverConfig {
    pub fn drive_frequency(&self) -> f64 {
        match self {
            DriverConfig::ClassDRelay(c) => c.drive_frequency,
            DriverConfig::HBridge(c) => c.drive_frequency,
        }
    }

    /// Extra series resistance in the transmit loop (two conducting bridge
    /// switches for type 2, none for the relay).
    pub fn series_resistance(&self) -> f64 {
        match self {
            DriverConfig::ClassDRelay(_) => 0.0,
            DriverConfig::HBridge(c) => 2.0 * c.rds_on,
        }
    }
}

/// Front-end configuration: the driver plus the shared current-sense path.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub driver: DriverConfig,
    /// Current sensor transfer gain [V/A].
    pub current_sense_gain: f64,
    /// Upper drive-frequency bound (class-D cutoff region) [Hz].
    pub max_drive_frequency: f64,
}

impl FrontendConfig {
    pub fn new(driver: DriverConfig) -> Self {
        FrontendConfig {
            driver,
            current_sense_gain: 1.0,
            max_drive_frequency: 20e3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.driver {
            DriverConfig::ClassDRelay(c) => c.validate()?,
            DriverConfig::HBridge(c) => c.validate()?,
        }
        if !(self.current_sense_gain > 0.0) {
            return Err(SimError::invalid_field("frontend.current_sense_gain", "must be > 0"));
        }
        if self.driver.drive_frequency() > self.max_drive_frequency {
            return Err(SimError::invalid_field(
                "frontend.drive_frequency",
                format!(
                    "exceeds the {} Hz amplifier limit",
                    self.max_drive_frequency
                ),
            ));
        }
        Ok(())
    }
}

/// Switch position of the TxRx path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchMode {
    Tx,
    Rx,
    Transition,
}

/// Switch position plus the time the position was entered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchState {
    pub mode: SwitchMode,
    /// Frame time at which `mode` began [s].
    pub since: f64,
}

/// Shape of the transmit terminal voltage.
#[derive(Debug, Clone, PartialEq)]
enum DriveShape {
    /// A sin(2 pi f (t - t_start) + phase).
    Sine { amplitude: f64, frequency: f64, phase: f64 },
    /// Alternating-sign pulse train, pulses centered in each half-period;
    /// fundamental component = (4 V/pi) sin(pi duty/2) sin(2 pi f t' + phase).
    PulseTrain { v_dc: f64, frequency: f64, duty: f64, phase: f64 },
    /// Constant level (step drives in tests and calibration).
    Constant { level: f64 },
}

/// Transmit terminal voltage over a window: zero outside [start, stop).
#[derive(Debug, Clone, PartialEq)]
pub struct DriveSignal {
    start: f64,
    stop: f64,
    shape: DriveShape,
}

impl DriveSignal {
    pub fn sine(amplitude: f64, frequency: f64, phase: f64, start: f64, stop: f64) -> Self {
        DriveSignal {
            start,
            stop,
            shape: DriveShape::Sine { amplitude, frequency, phase },
        }
    }

    pub fn pulse_train(v_dc: f64, frequency: f64, duty: f64, phase: f64, start: f64, stop: f64) -> Self {
        DriveSignal {
            start,
            stop,
            shape: DriveShape::PulseTrain { v_dc, frequency, duty, phase },
        }
    }

    pub fn constant(level: f64, start: f64, stop: f64) -> Self {
        DriveSignal {
            start,
            stop,
            shape: DriveShape::Constant { level },
        }
    }

    pub fn off() -> Self {
        DriveSignal {
            start: 0.0,
            stop: 0.0,
            shape: DriveShape::Constant { level: 0.0 },
        }
    }

    /// Terminal voltage at time `t` (right-continuous at edges).
    pub fn voltage(&self, t: f64) -> f64 {
        if t < self.start || t >= self.stop {
            return 0.0;
        }
        self.shape_value(t)
    }

    fn shape_value(&self, t: f64) -> f64 {
        match &self.shape {
            DriveShape::Sine { amplitude, frequency, phase } => {
                amplitude * (2.0 * std::f64::consts::PI * frequency * (t - self.start) + phase).sin()
            }
            DriveShape::PulseTrain { v_dc, frequency, duty, phase } => {
                let half = 0.5 / frequency;
                let tt = (t - self.start) + phase / (2.0 * std::f64::consts::PI * frequency);
                let k = (tt / half).floor();
                let frac = tt - k * half;
                let on = (frac - 0.5 * half).abs() < 0.5 * duty * half;
                if !on {
                    0.0
                } else if (k as i64).rem_euclid(2) == 0 {
                    *v_dc
                } else {
                    -*v_dc
                }
            }
            DriveShape::Constant { level } => *level,
        }
    }

    /// Voltage on a smooth segment (a, b), sampled anywhere inside it.
    /// `t` may land exactly on a discontinuity; `mid` decides which side.
    fn segment_voltage(&self, t: f64, mid: f64) -> f64 {
        if mid < self.start || mid >= self.stop {
            return 0.0;
        }
        match &self.shape {
            DriveShape::Sine { .. } => self.shape_value(t),
            // piecewise-constant shapes: the segment value is the mid value
            _ => self.shape_value(mid),
        }
    }

    /// Discontinuity times strictly inside (t0, t1), sorted ascending.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut pts = Vec::new();
        let mut push = |t: f64| {
            if t > t0 && t < t1 {
                pts.push(t);
            }
        };
        push(self.start);
        push(self.stop);
        if let DriveShape::PulseTrain { frequency, duty, phase, .. } = &self.shape {
            let half = 0.5 / frequency;
            let shift = self.start - phase / (2.0 * std::f64::consts::PI * frequency);
            // pulse edges at k*half + half/2 -/+ duty*half/2 in shifted time
            let lo = ((t0 - shift) / half).floor() as i64 - 1;
            let hi = ((t1 - shift) / half).ceil() as i64 + 1;
            for k in lo..=hi {
                let center = (k as f64 + 0.5) * half + shift;
                let w = 0.5 * duty * half;
                push(center - w);
                push(center + w);
            }
        }
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        pts
    }

    /// Characteristic time scale of smooth variation, if any.
    fn smooth_scale(&self) -> Option<f64> {
        match &self.shape {
            DriveShape::Sine { frequency, .. } => Some(1.0 / frequency),
            _ => None,
        }
    }

    pub fn stop_time(&self) -> f64 {
        self.stop
    }
}

/// Class-D output voltage at `t_in_window` seconds into the transmit window:
/// zero during the startup delay, the programmed sinusoid afterwards.
pub fn classd_output_voltage(cfg: &ClassDRelayConfig, t_in_window: f64) -> f64 {
    DriveSignal::sine(
        cfg.drive_amplitude,
        cfg.drive_frequency,
        cfg.drive_phase,
        cfg.startup_delay,
        f64::INFINITY,
    )
    .voltage(t_in_window)
}

/// H-bridge terminal voltage at `t_in_window`: alternating-sign centered
/// pulse train, +/-v_dc for `duty_cycle` of each half-period.
pub fn hbridge_terminal_voltage(cfg: &HBridgeConfig, t_in_window: f64) -> f64 {
    DriveSignal::pulse_train(
        cfg.v_dc,
        cfg.drive_frequency,
        cfg.duty_cycle,
        0.0,
        0.0,
        f64::INFINITY,
    )
    .voltage(t_in_window)
}

fn rk4_rl(i: f64, t: f64, h: f64, v: &impl Fn(f64) -> f64, l: f64, r: f64) -> f64 {
    let f = |t: f64, i: f64| (v(t) - r * i) / l;
    let k1 = f(t, i);
    let k2 = f(t + 0.5 * h, i + 0.5 * h * k1);
    let k3 = f(t + 0.5 * h, i + 0.5 * h * k2);
    let k4 = f(t + h, i + h * k3);
    i + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Coil current for a drive signal applied to the series RL load, integrated
/// with RK4 on segments split at the drive discontinuities.
///
/// `extra_resistance` adds the conducting-switch resistance (2 rds_on for the
/// bridge). Samples are returned at `k * dt` for k = 0..=round(window/dt),
/// starting from zero current.
pub fn simulate_coil_current(
    signal: &DriveSignal,
    coil: &CoilChannel,
    extra_resistance: f64,
    window_length: f64,
    dt: f64,
) -> Result<Trace> {
    let l = coil.inductance;
    let r = coil.resistance + extra_resistance;
    let tau = l / r;
    if dt > tau / 20.0 {
        return Err(SimError::TimeStep {
            dt,
            limit: tau / 20.0,
            context: "coil-current step must resolve the RL time constant (dt <= tau/20)",
        });
    }
    if !(window_length > 0.0) {
        return Err(SimError::invalid_field("window_length", "must be > 0"));
    }
    let n = (window_length / dt).round().max(1.0) as usize;
    // substep bound: RL time constant and, for smooth drives, the drive period
    let h_max = (tau / 20.0).min(signal.smooth_scale().map_or(f64::INFINITY, |p| p / 50.0));

    let mut values = Vec::with_capacity(n + 1);
    let mut i = 0.0;
    values.push(i);
    for k in 0..n {
        let t0 = k as f64 * dt;
        let t1 = (k + 1) as f64 * dt;
        let mut edges = signal.breakpoints(t0, t1);
        edges.push(t1);
        let mut a = t0;
        for b in edges {
            let len = b - a;
            if len <= 0.0 {
                continue;
            }
            let mid = 0.5 * (a + b);
            let m = (len / h_max).ceil().max(1.0) as usize;
            let h = len / m as f64;
            let v = |t: f64| signal.segment_voltage(t, mid);
            for j in 0..m {
                i = rk4_rl(i, a + j as f64 * h, h, &v, l, r);
            }
            a = b;
        }
        values.push(i);
    }
    Ok(Trace::new(0.0, dt, values))
}

/// Relay (type 1) switch position at `t_in_frame`.
///
/// The relay is energized at the frame start and releases at the end of the
/// transmit window; both poles are open while it travels (break-before-make).
pub fn relay_contact_state(
    cfg: &ClassDRelayConfig,
    schedule: &FrameSchedule,
    t_in_frame: f64,
) -> Result<SwitchState> {
    if schedule.t_tx <= cfg.relay_operate_time {
        return Err(SimError::invalid_field(
            "schedule.t_tx",
            "transmit window shorter than the relay operate time",
        ));
    }
    if schedule.t_rx <= cfg.relay_release_time {
        return Err(SimError::invalid_field(
            "schedule.t_rx",
            "receive window shorter than the relay release time",
        ));
    }
    let t_tx = schedule.t_tx;
    let state = if t_in_frame < cfg.relay_operate_time {
        SwitchState { mode: SwitchMode::Transition, since: 0.0 }
    } else if t_in_frame < t_tx {
        SwitchState { mode: SwitchMode::Tx, since: cfg.relay_operate_time }
    } else if t_in_frame < t_tx + cfg.relay_release_time {
        SwitchState { mode: SwitchMode::Transition, since: t_tx }
    } else {
        SwitchState { mode: SwitchMode::Rx, since: t_tx + cfg.relay_release_time }
    };
    Ok(state)
}

/// H-bridge (type 2) switch position at `t_in_frame`: transitions last only
/// one gate dead time; Q3/Q5 conduct through r_rx during the receive window.
pub fn hbridge_switch_state(
    cfg: &HBridgeConfig,
    schedule: &FrameSchedule,
    t_in_frame: f64,
) -> SwitchState {
    let t_tx = schedule.t_tx;
    let dead = cfg.gate_dead_time;
    if t_in_frame < dead {
        SwitchState { mode: SwitchMode::Transition, since: 0.0 }
    } else if t_in_frame < t_tx {
        SwitchState { mode: SwitchMode::Tx, since: dead }
    } else if t_in_frame < t_tx + dead {
        SwitchState { mode: SwitchMode::Transition, since: t_tx }
    } else {
        SwitchState { mode: SwitchMode::Rx, since: t_tx + dead }
    }
}

/// Result of interrupting nonzero coil current: the varistor conducts until
/// the inductive energy is gone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotSwitchEvent {
    /// Clamp conduction time L |i| / V_clamp [s].
    pub spike_duration: f64,
    /// Dissipated energy 0.5 L i^2 [J].
    pub dissipated_energy: f64,
}

/// Varistor clamp model for breaking `i_at_break` amperes in the coil.
pub fn hot_switch_event(
    coil: &CoilChannel,
    i_at_break: f64,
    clamp_voltage: f64,
) -> Result<HotSwitchEvent> {
    if !(clamp_voltage > 0.0) {
        return Err(SimError::invalid_field("clamp_voltage", "must be > 0"));
    }
    Ok(HotSwitchEvent {
        spike_duration: coil.inductance * i_at_break.abs() / clamp_voltage,
        dissipated_energy: 0.5 * coil.inductance * i_at_break * i_at_break,
    })
}

/// Current-sensor output: gain * i while transmitting, silenced otherwise.
pub fn current_sensor_output(
    i_trace: &Trace,
    gain: f64,
    mode_at: impl Fn(f64) -> SwitchMode,
) -> Trace {
    let values = i_trace
        .iter_timed()
        .map(|(t, i)| match mode_at(t) {
            SwitchMode::Tx => gain * i,
            _ => 0.0,
        })
        .collect();
    Trace::new(i_trace.t0(), i_trace.dt(), values)
}
