//! In-process CAN bus.
//!
//! Nodes attach to a [`Bus`] and get a [`BusPort`]. Frames sent on a port sit
//! in that port's outbound queue until the coordinator calls [`Bus::step`],
//! which arbitrates everything pending and broadcasts it to every other port
//! whose filter accepts the identifier. The bus is lossless; arbitration is
//! modelled only as the per-step delivery order.

use std::collections::VecDeque;
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

pub const STANDARD_ID_LIMIT: u32 = 1 << 11;
pub const EXTENDED_ID_LIMIT: u32 = 1 << 29;
pub const MAX_DLC: u8 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanError {
    #[error("identifier {value:#x} does not fit a {} frame", if *.extended { "29-bit" } else { "11-bit" })]
    IdOutOfRange { value: u32, extended: bool },
    #[error("DLC {0} exceeds 8")]
    DlcOutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("bus stepped at {now} after {last}")]
    ClockWentBackwards { last: SimTime, now: SimTime },
}

/// An 11-bit or 29-bit CAN identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanId {
    value: u32,
    extended: bool,
}

impl CanId {
    pub fn new(value: u32, extended: bool) -> Result<Self, CanError> {
        validate_id(value, extended)
    }

    /// 11-bit identifier; panics when out of range. Intended for constants.
    pub const fn standard(value: u16) -> Self {
        assert!((value as u32) < STANDARD_ID_LIMIT);
        CanId {
            value: value as u32,
            extended: false,
        }
    }

    pub fn value(self) -> u32 {
        self.value
    }

    pub fn is_extended(self) -> bool {
        self.extended
    }

    /// Arbitration key: lower wins, standard beats extended on equal value.
    pub fn priority_key(self) -> (u32, bool) {
        (self.value, self.extended)
    }
}

impl fmt::Debug for CanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.extended {
            write!(f, "CanId({:08X}x)", self.value)
        } else {
            write!(f, "CanId({:03X})", self.value)
        }
    }
}

impl fmt::Display for CanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.extended {
            write!(f, "{:08x}", self.value)
        } else {
            write!(f, "{:03x}", self.value)
        }
    }
}

/// Returns a [`CanId`] iff `value` fits the addressed space.
pub fn validate_id(value: u32, extended: bool) -> Result<CanId, CanError> {
    let limit = if extended {
        EXTENDED_ID_LIMIT
    } else {
        STANDARD_ID_LIMIT
    };
    if value < limit {
        Ok(CanId { value, extended })
    } else {
        Err(CanError::IdOutOfRange { value, extended })
    }
}

/// One classic CAN frame.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct CanFrame {
    id: CanId,
    rtr: bool,
    dlc: u8,
    data: [u8; 8],
}

impl CanFrame {
    pub fn new(id: CanId, data: &[u8]) -> Result<Self, CanError> {
        if data.len() > MAX_DLC as usize {
            return Err(CanError::DlcOutOfRange(data.len()));
        }
        let mut buf = [0u8; 8];
        buf[..data.len()].copy_from_slice(data);
        Ok(CanFrame {
            id,
            rtr: false,
            dlc: data.len() as u8,
            data: buf,
        })
    }

    /// Remote frame: carries no data, `dlc` encodes the requested length.
    pub fn remote(id: CanId, dlc: u8) -> Result<Self, CanError> {
        if dlc > MAX_DLC {
            return Err(CanError::DlcOutOfRange(dlc as usize));
        }
        Ok(CanFrame {
            id,
            rtr: true,
            dlc,
            data: [0; 8],
        })
    }

    pub fn id(&self) -> CanId {
        self.id
    }

    pub fn is_remote(&self) -> bool {
        self.rtr
    }

    pub fn dlc(&self) -> u8 {
        self.dlc
    }

    /// Payload bytes; empty for remote frames.
    pub fn data(&self) -> &[u8] {
        if self.rtr {
            &[]
        } else {
            &self.data[..self.dlc as usize]
        }
    }

    /// Same identifier and leading bytes, different length. Bytes past the
    /// original DLC are zero.
    pub fn with_dlc(&self, dlc: u8) -> Result<Self, CanError> {
        if dlc > MAX_DLC {
            return Err(CanError::DlcOutOfRange(dlc as usize));
        }
        let mut out = *self;
        out.dlc = dlc;
        if !self.rtr {
            for b in out.data.iter_mut().skip(self.dlc as usize) {
                *b = 0;
            }
        }
        Ok(out)
    }
}

impl fmt::Debug for CanFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.id)?;
        if self.rtr {
            write!(f, " RTR[{}]", self.dlc)
        } else {
            write!(f, " [")?;
            for (i, b) in self.data().iter().enumerate() {
                if i > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{b:02X}")?;
            }
            write!(f, "]")
        }
    }
}

/// Orders a set of frames queued in the same step for delivery.
///
/// Ascending identifier value, standard before extended on equal value, and
/// enqueue order among equal keys.
pub fn arbitrate(pending: &[CanFrame]) -> Vec<CanFrame> {
    let mut out = pending.to_vec();
    // sort_by_key is stable
    out.sort_by_key(|f| f.id().priority_key());
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortId(pub usize);

pub type IdFilter = Arc<dyn Fn(CanId) -> bool + Send + Sync>;

/// One frame handed to one receiving port.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub port: PortId,
    pub from: PortId,
    pub t: SimTime,
    pub frame: CanFrame,
}

/// Observation of one frame on the wire, recorded once regardless of how
/// many ports received it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TapEvent {
    pub t: SimTime,
    pub from: PortId,
    pub frame: CanFrame,
}

struct PortSlot {
    filter: IdFilter,
    outbound: VecDeque<(u64, CanFrame)>,
    inbound: VecDeque<CanFrame>,
}

#[derive(Default)]
struct BusInner {
    ports: Vec<PortSlot>,
    enqueue_seq: u64,
    last_step: Option<SimTime>,
    tap: Vec<TapEvent>,
}

/// A single shared bus segment.
#[derive(Clone, Default)]
pub struct Bus {
    inner: Arc<Mutex<BusInner>>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, BusInner> {
        self.inner.lock().expect("bus mutex poisoned")
    }

    /// Attach a new port that receives frames accepted by `filter`.
    pub fn attach<F>(&self, filter: F) -> BusPort
    where
        F: Fn(CanId) -> bool + Send + Sync + 'static,
    {
        let mut inner = self.lock();
        let id = PortId(inner.ports.len());
        inner.ports.push(PortSlot {
            filter: Arc::new(filter),
            outbound: VecDeque::new(),
            inbound: VecDeque::new(),
        });
        BusPort {
            id,
            bus: self.clone(),
        }
    }

    /// Attach a port that accepts every identifier.
    pub fn attach_promiscuous(&self) -> BusPort {
        self.attach(|_| true)
    }

    /// Drain all pending outbound queues in arbitration order.
    pub fn step(&self, now: SimTime) -> Result<Vec<Delivery>, BusError> {
        let mut inner = self.lock();
        if let Some(last) = inner.last_step {
            if now < last {
                return Err(BusError::ClockWentBackwards { last, now });
            }
        }
        inner.last_step = Some(now);

        let mut pending: Vec<(u64, PortId, CanFrame)> = Vec::new();
        for (idx, port) in inner.ports.iter_mut().enumerate() {
            pending.extend(port.outbound.drain(..).map(|(seq, f)| (seq, PortId(idx), f)));
        }
        pending.sort_by_key(|(seq, _, f)| (f.id().priority_key(), *seq));

        let mut deliveries = Vec::new();
        for (_, from, frame) in pending {
            inner.tap.push(TapEvent { t: now, from, frame });
            for (idx, port) in inner.ports.iter_mut().enumerate() {
                if idx == from.0 || !(port.filter)(frame.id()) {
                    continue;
                }
                port.inbound.push_back(frame);
                deliveries.push(Delivery {
                    port: PortId(idx),
                    from,
                    t: now,
                    frame,
                });
            }
        }
        Ok(deliveries)
    }

    /// Everything observed on the wire since the last call.
    pub fn take_tap(&self) -> Vec<TapEvent> {
        std::mem::take(&mut self.lock().tap)
    }

    pub fn has_pending(&self) -> bool {
        self.lock().ports.iter().any(|p| !p.outbound.is_empty())
    }

    pub fn port_count(&self) -> usize {
        self.lock().ports.len()
    }
}

/// A node's handle onto a [`Bus`]. Send and receive are safe from any thread.
#[derive(Clone)]
pub struct BusPort {
    id: PortId,
    bus: Bus,
}

impl BusPort {
    pub fn id(&self) -> PortId {
        self.id
    }

    pub fn send(&self, frame: CanFrame) {
        let mut inner = self.bus.lock();
        let seq = inner.enqueue_seq;
        inner.enqueue_seq += 1;
        inner.ports[self.id.0].outbound.push_back((seq, frame));
    }

    pub fn recv(&self) -> Option<CanFrame> {
        self.bus.lock().ports[self.id.0].inbound.pop_front()
    }

    pub fn drain(&self) -> Vec<CanFrame> {
        self.bus.lock().ports[self.id.0].inbound.drain(..).collect()
    }
}

impl fmt::Debug for BusPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BusPort").field("id", &self.id).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(id: u16) -> CanFrame {
        CanFrame::new(CanId::standard(id), &[id as u8]).unwrap()
    }

    #[test]
    fn id_ranges() {
        assert!(validate_id(2047, false).is_ok());
        assert_eq!(
            validate_id(2048, false),
            Err(CanError::IdOutOfRange {
                value: 2048,
                extended: false
            })
        );
        assert!(validate_id(536_870_911, true).is_ok());
        assert!(validate_id(536_870_912, true).is_err());
        assert!(validate_id(2048, true).is_ok());
    }

    #[test]
    fn remote_frame_has_no_data() {
        let f = CanFrame::remote(CanId::standard(0x123), 4).unwrap();
        assert!(f.data().is_empty());
        assert_eq!(f.dlc(), 4);
        assert!(CanFrame::remote(CanId::standard(0x123), 9).is_err());
        assert!(CanFrame::new(CanId::standard(1), &[0; 9]).is_err());
    }

    #[test]
    fn with_dlc_truncates_and_zero_extends() {
        let f = CanFrame::new(CanId::standard(1), &[1, 2, 3]).unwrap();
        assert_eq!(f.with_dlc(1).unwrap().data(), &[1]);
        assert_eq!(f.with_dlc(1).unwrap().with_dlc(3).unwrap().data(), &[1, 0, 0]);
    }

    #[test]
    fn arbitration_order() {
        let out = arbitrate(&[frame(0x7E0), frame(0x123)]);
        assert_eq!(out[0].id().value(), 0x123);

        let std100 = frame(0x100);
        let ext100 = CanFrame::new(CanId::new(0x100, true).unwrap(), &[]).unwrap();
        assert_eq!(arbitrate(&[ext100, std100])[0], std100);

        assert_eq!(arbitrate(&[frame(5)]), vec![frame(5)]);
    }

    #[test]
    fn broadcast_filter_and_no_loopback() {
        let bus = Bus::new();
        let a = bus.attach_promiscuous();
        let b = bus.attach_promiscuous();
        let picky = bus.attach(|id| id.value() != 0x100);

        b.send(frame(0x7E8));
        a.send(frame(0x100));
        let d = bus.step(SimTime::ZERO).unwrap();
        // 0x100 to b only; 0x7E8 to a and picky
        assert_eq!(d.len(), 3);
        assert_eq!(a.drain(), vec![frame(0x7E8)]);
        assert_eq!(b.drain(), vec![frame(0x100)]);
        assert_eq!(picky.drain(), vec![frame(0x7E8)]);
    }

    #[test]
    fn step_orders_and_taps() {
        let bus = Bus::new();
        let a = bus.attach_promiscuous();
        let _b = bus.attach_promiscuous();
        assert!(bus.step(SimTime::ZERO).unwrap().is_empty());

        a.send(frame(0x7E0));
        a.send(frame(0x123));
        let t = SimTime::from_millis(3);
        let d = bus.step(t).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].frame.id().value(), 0x123);
        assert!(d.iter().all(|x| x.t == t));
        let tap = bus.take_tap();
        assert_eq!(tap.len(), 2);
        assert_eq!(tap[1].frame.id().value(), 0x7E0);

        assert!(matches!(
            bus.step(SimTime::from_millis(2)),
            Err(BusError::ClockWentBackwards { .. })
        ));
    }

    #[test]
    fn equal_ids_keep_enqueue_order_across_ports() {
        let bus = Bus::new();
        let a = bus.attach_promiscuous();
        let b = bus.attach_promiscuous();
        let c = bus.attach_promiscuous();
        let f1 = CanFrame::new(CanId::standard(0x10), &[1]).unwrap();
        let f2 = CanFrame::new(CanId::standard(0x10), &[2]).unwrap();
        b.send(f1);
        a.send(f2);
        bus.step(SimTime::ZERO).unwrap();
        assert_eq!(c.drain(), vec![f1, f2]);
    }
}
