//! Co-simulation harness: a vehicle bus with the ECU and background
//! traffic, an OBD2 bus with the tester, a gateway between them, and an
//! optional recorder on the OBD2 side. Everything runs on one injected
//! clock that advances in fixed ticks.

use std::sync::Arc;
use std::time::Duration;

use crate::canbus::{Bus, BusError, BusPort, CanFrame, CanId};
use crate::ecu::{EcuConfig, EcuEvent, EcuNode, Gateway};
use crate::time::SimTime;
use crate::trace::{Annotator, Recording};

pub const DEFAULT_TICK: Duration = Duration::from_millis(1);

/// Upper bound on settle passes per tick; a pass only repeats when some
/// node transmitted, so this is never reached by well-formed traffic.
const MAX_SETTLE_PASSES: usize = 16;

/// The tester's view of the network.
pub trait Link {
    fn now(&self) -> SimTime;
    /// Queue a frame for transmission at the current instant.
    fn send(&mut self, frame: CanFrame);
    /// Transmit everything queued at the current instant, let the network
    /// react, then move the clock one tick. Returns the frames delivered to
    /// the tester, all at the pre-advance instant.
    fn advance(&mut self) -> Vec<CanFrame>;
}

/// Periodic non-diagnostic frame source on the vehicle bus.
#[derive(Debug)]
pub struct TrafficGenerator {
    port: BusPort,
    id: CanId,
    period: Duration,
    next: SimTime,
    counter: u8,
}

impl TrafficGenerator {
    pub fn new(bus: &Bus, id: CanId, period: Duration) -> Self {
        TrafficGenerator {
            port: bus.attach(|_| false),
            id,
            period: period.max(Duration::from_millis(1)),
            next: SimTime::ZERO,
            counter: 0,
        }
    }

    pub fn step(&mut self, now: SimTime) {
        while self.next <= now {
            let c = self.counter;
            let data = [c, c.wrapping_mul(3), 0x55, 0xAA, 0, 0, 0, c ^ 0xFF];
            self.port.send(CanFrame::new(self.id, &data).expect("eight bytes"));
            self.counter = self.counter.wrapping_add(1);
            self.next += self.period;
        }
    }
}

/// Default background traffic: wheel speeds, BMS status, body frames.
pub fn default_traffic() -> Vec<(CanId, Duration)> {
    vec![
        (CanId::standard(0x0C0), Duration::from_millis(10)),
        (CanId::standard(0x1A0), Duration::from_millis(20)),
        (CanId::standard(0x3B0), Duration::from_millis(100)),
    ]
}

#[derive(Debug)]
struct Recorder {
    annotator: Annotator,
    recording: Recording,
}

pub struct Workbench {
    now: SimTime,
    tick: Duration,
    vehicle: Bus,
    obd: Bus,
    gateway: Gateway,
    ecu: EcuNode,
    traffic: Vec<TrafficGenerator>,
    tester: BusPort,
    recorder: Option<Recorder>,
    obd_frames: u64,
    realtime: bool,
    events: Vec<EcuEvent>,
    errors: Vec<String>,
}

impl std::fmt::Debug for Workbench {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workbench")
            .field("now", &self.now)
            .field("gateway_mode", &self.gateway.gateway_mode())
            .finish_non_exhaustive()
    }
}

impl Workbench {
    pub fn new(cfg: EcuConfig) -> Self {
        let cfg = Arc::new(cfg);
        let vehicle = Bus::new();
        let obd = Bus::new();
        let gateway = Gateway::new((*cfg).clone(), &vehicle, &obd);
        let ecu = EcuNode::new(Arc::clone(&cfg), &vehicle);
        let tester = obd.attach_promiscuous();
        Workbench {
            now: SimTime::ZERO,
            tick: DEFAULT_TICK,
            vehicle,
            obd,
            gateway,
            ecu,
            traffic: Vec::new(),
            tester,
            recorder: None,
            obd_frames: 0,
            realtime: false,
            events: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn shipped() -> Self {
        Workbench::new(EcuConfig::shipped())
    }

    pub fn with_traffic(mut self, traffic: &[(CanId, Duration)]) -> Self {
        for (id, period) in traffic {
            self.traffic.push(TrafficGenerator::new(&self.vehicle, *id, *period));
        }
        self
    }

    /// Start recording everything seen on the OBD2 bus.
    pub fn with_recording(mut self, capacity: usize) -> Self {
        let cfg = self.ecu.ecu().config();
        self.recorder = Some(Recorder {
            annotator: Annotator::new(cfg.request_can_id(), cfg.response_can_id()),
            recording: Recording::with_capacity(capacity),
        });
        self
    }

    /// Sleep one tick of wall time per simulated tick.
    pub fn set_realtime(&mut self, on: bool) {
        self.realtime = on;
    }

    pub fn set_gateway_mode(&mut self, on: bool) {
        self.gateway.set_gateway_mode(on);
    }

    pub fn gateway_mode(&self) -> bool {
        self.gateway.gateway_mode()
    }

    pub fn gateway_dropped(&self) -> u64 {
        self.gateway.dropped()
    }

    pub fn tick(&self) -> Duration {
        self.tick
    }

    pub fn ecu(&self) -> &EcuNode {
        &self.ecu
    }

    pub fn ecu_mut(&mut self) -> &mut EcuNode {
        &mut self.ecu
    }

    pub fn recording(&self) -> Option<&Recording> {
        self.recorder.as_ref().map(|r| &r.recording)
    }

    pub fn take_recording(&mut self) -> Option<Recording> {
        self.recorder.take().map(|r| r.recording)
    }

    /// Frames that crossed the OBD2 bus so far.
    pub fn obd_frame_count(&self) -> u64 {
        self.obd_frames
    }

    pub fn take_events(&mut self) -> Vec<EcuEvent> {
        std::mem::take(&mut self.events)
    }

    /// Bus and recorder faults; these indicate harness bugs, not protocol
    /// failures.
    pub fn take_errors(&mut self) -> Vec<String> {
        std::mem::take(&mut self.errors)
    }

    fn step_bus(&mut self, which: Which) -> bool {
        let bus = match which {
            Which::Vehicle => &self.vehicle,
            Which::Obd => &self.obd,
        };
        if let Err(BusError::ClockWentBackwards { last, now }) = bus.step(self.now) {
            self.errors.push(format!("bus clock went backwards: {last} -> {now}"));
        }
        let tap = bus.take_tap();
        let any = !tap.is_empty();
        if which == Which::Obd {
            self.obd_frames += tap.len() as u64;
            if let Some(rec) = &mut self.recorder {
                for ev in tap {
                    let record = rec.annotator.annotate(ev.t, ev.frame);
                    if let Err(e) = rec.recording.append(record) {
                        self.errors.push(e.to_string());
                    }
                }
            }
        }
        any
    }

    /// One instant: settle the network until nothing more is sent.
    fn settle(&mut self) {
        let now = self.now;
        for g in &mut self.traffic {
            g.step(now);
        }
        for _ in 0..MAX_SETTLE_PASSES {
            let mut active = self.step_bus(Which::Obd);
            self.gateway.forward(now);
            active |= self.step_bus(Which::Vehicle);
            active |= self.ecu.step(now);
            active |= self.step_bus(Which::Vehicle);
            self.gateway.forward(now);
            active |= self.step_bus(Which::Obd);
            if !active {
                break;
            }
        }
        self.events.extend(self.ecu.take_events());
    }

    /// Advance without a tester attached.
    pub fn run_for(&mut self, d: Duration) -> Vec<CanFrame> {
        let end = self.now + d;
        let mut seen = Vec::new();
        while self.now < end {
            seen.extend(self.advance());
        }
        seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Which {
    Vehicle,
    Obd,
}

impl Link for Workbench {
    fn now(&self) -> SimTime {
        self.now
    }

    fn send(&mut self, frame: CanFrame) {
        self.tester.send(frame);
    }

    fn advance(&mut self) -> Vec<CanFrame> {
        self.settle();
        let delivered = self.tester.drain();
        self.now += self.tick;
        if self.realtime {
            std::thread::sleep(self.tick);
        }
        delivered
    }
}

/// Record-on-construct helper: a full bench with the given recording
/// capacity and the default traffic.
pub fn recording_bench(cfg: EcuConfig, capacity: usize) -> Workbench {
    Workbench::new(cfg)
        .with_traffic(&default_traffic())
        .with_recording(capacity)
}
