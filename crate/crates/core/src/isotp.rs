//! ISO-TP (ISO 15765-2) segmentation and reassembly, normal addressing,
//! classic 8-byte CAN frames.
//!
//! Framing:
//!
//! | frame | PCI bytes            |
//! |-------|----------------------|
//! | SF    | `0x0L`               |
//! | FF    | `0x1H 0xLL` (12-bit) |
//! | CF    | `0x2N`               |
//! | FC    | `0x3S BS STmin`      |
//!
//! All transmitted frames are padded to 8 bytes. Received frames may be
//! shorter than 8 as long as they carry every byte their PCI announces.

use std::collections::VecDeque;
use std::time::Duration;

use thiserror::Error;

use crate::canbus::{CanFrame, CanId};
use crate::time::SimTime;

pub const DEFAULT_PADDING: u8 = 0xAA;
pub const MAX_PAYLOAD: usize = 4095;
pub const SF_MAX: usize = 7;
const FF_DATA: usize = 6;
const CF_DATA: usize = 7;
/// Consecutive FC(Wait) frames tolerated before a transfer is aborted.
pub const MAX_CONSECUTIVE_WAITS: u8 = 3;

pub type FramePayload = [u8; 8];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsoTpError {
    #[error("empty payload")]
    EmptyPayload,
    #[error("payload of {0} bytes exceeds 4095")]
    PayloadTooLarge(usize),
    #[error("tx and rx identifiers must differ")]
    SameIds,
    #[error("reserved STmin value {0:#04x}")]
    ReservedStMin(u8),
    #[error("consecutive frame sequence {got:#x}, expected {expected:#x}")]
    WrongSequenceNumber { expected: u8, got: u8 },
    #[error("no consecutive frame within N_Cr")]
    NCrTimeout,
    #[error("no flow control within N_Bs")]
    NBsTimeout,
    #[error("unexpected PCI {0:#04x}")]
    UnexpectedPci(u8),
    #[error("frame too short for its PCI")]
    ShortFrame,
    #[error("invalid length field {0}")]
    InvalidLength(usize),
    #[error("receiver reported overflow")]
    Overflow,
    #[error("more than {MAX_CONSECUTIVE_WAITS} consecutive FC(Wait)")]
    TooManyWaits,
    #[error("a transfer is already in progress")]
    Busy,
}

/// Identifier pair for one side of a point-to-point link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TpEndpoint {
    pub tx_id: CanId,
    pub rx_id: CanId,
    pub padding: u8,
}

impl TpEndpoint {
    pub fn new(tx_id: CanId, rx_id: CanId) -> Result<Self, IsoTpError> {
        if tx_id == rx_id {
            return Err(IsoTpError::SameIds);
        }
        Ok(TpEndpoint {
            tx_id,
            rx_id,
            padding: DEFAULT_PADDING,
        })
    }

    pub fn with_padding(mut self, padding: u8) -> Self {
        self.padding = padding;
        self
    }

    /// The mirrored endpoint for the peer.
    pub fn peer(&self) -> TpEndpoint {
        TpEndpoint {
            tx_id: self.rx_id,
            rx_id: self.tx_id,
            padding: self.padding,
        }
    }
}

/// A diagnostic payload of 1..=4095 bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsoTpMessage(Vec<u8>);

impl IsoTpMessage {
    pub fn new(payload: impl Into<Vec<u8>>) -> Result<Self, IsoTpError> {
        let payload = payload.into();
        match payload.len() {
            0 => Err(IsoTpError::EmptyPayload),
            n if n > MAX_PAYLOAD => Err(IsoTpError::PayloadTooLarge(n)),
            _ => Ok(IsoTpMessage(payload)),
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FlowStatus {
    ContinueToSend = 0,
    Wait = 1,
    Overflow = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowControlParams {
    pub status: FlowStatus,
    /// 0 = unlimited.
    pub block_size: u8,
    pub stmin_raw: u8,
}

impl FlowControlParams {
    pub const fn cts(block_size: u8, stmin_raw: u8) -> Self {
        FlowControlParams {
            status: FlowStatus::ContinueToSend,
            block_size,
            stmin_raw,
        }
    }
}

impl Default for FlowControlParams {
    fn default() -> Self {
        FlowControlParams::cts(0, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TpTimers {
    pub n_bs: Duration,
    pub n_cr: Duration,
}

impl Default for TpTimers {
    fn default() -> Self {
        TpTimers {
            n_bs: Duration::from_millis(1000),
            n_cr: Duration::from_millis(1000),
        }
    }
}

/// Decoded protocol control information of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pci {
    Single { len: usize },
    First { len: usize },
    Consecutive { sn: u8 },
    FlowControl(FlowControlParams),
}

impl Pci {
    pub fn kind(&self) -> &'static str {
        match self {
            Pci::Single { .. } => "SF",
            Pci::First { .. } => "FF",
            Pci::Consecutive { .. } => "CF",
            Pci::FlowControl(_) => "FC",
        }
    }
}

/// Parse and validate the PCI at the start of `data`, including the check
/// that the frame carries every byte the PCI implies.
pub fn parse_pci(data: &[u8]) -> Result<Pci, IsoTpError> {
    let first = *data.first().ok_or(IsoTpError::ShortFrame)?;
    match first >> 4 {
        0x0 => {
            let len = (first & 0x0F) as usize;
            if len == 0 || len > SF_MAX {
                return Err(IsoTpError::InvalidLength(len));
            }
            if data.len() < 1 + len {
                return Err(IsoTpError::ShortFrame);
            }
            Ok(Pci::Single { len })
        }
        0x1 => {
            if data.len() < 8 {
                return Err(IsoTpError::ShortFrame);
            }
            let len = (((first & 0x0F) as usize) << 8) | data[1] as usize;
            if len <= SF_MAX {
                return Err(IsoTpError::InvalidLength(len));
            }
            Ok(Pci::First { len })
        }
        0x2 => {
            if data.len() < 2 {
                return Err(IsoTpError::ShortFrame);
            }
            Ok(Pci::Consecutive { sn: first & 0x0F })
        }
        0x3 => {
            if data.len() < 3 {
                return Err(IsoTpError::ShortFrame);
            }
            let status = match first & 0x0F {
                0 => FlowStatus::ContinueToSend,
                1 => FlowStatus::Wait,
                2 => FlowStatus::Overflow,
                _ => return Err(IsoTpError::UnexpectedPci(first)),
            };
            stmin_duration(data[2])?;
            Ok(Pci::FlowControl(FlowControlParams {
                status,
                block_size: data[1],
                stmin_raw: data[2],
            }))
        }
        _ => Err(IsoTpError::UnexpectedPci(first)),
    }
}

/// Split a message into padded 8-byte frame payloads.
pub fn segment(msg: &IsoTpMessage, pad: u8) -> Vec<FramePayload> {
    let data = msg.as_bytes();
    let len = data.len();
    if len <= SF_MAX {
        let mut f = [pad; 8];
        f[0] = len as u8;
        f[1..=len].copy_from_slice(data);
        return vec![f];
    }
    let mut frames = Vec::with_capacity(frame_count(len));
    let mut ff = [pad; 8];
    ff[0] = 0x10 | ((len >> 8) as u8 & 0x0F);
    ff[1] = len as u8;
    ff[2..8].copy_from_slice(&data[..FF_DATA]);
    frames.push(ff);
    for (i, chunk) in data[FF_DATA..].chunks(CF_DATA).enumerate() {
        let mut cf = [pad; 8];
        cf[0] = 0x20 | ((i + 1) as u8 & 0x0F);
        cf[1..=chunk.len()].copy_from_slice(chunk);
        frames.push(cf);
    }
    frames
}

/// Validate and segment raw bytes.
pub fn segment_bytes(payload: &[u8], pad: u8) -> Result<Vec<FramePayload>, IsoTpError> {
    Ok(segment(&IsoTpMessage::new(payload.to_vec())?, pad))
}

/// Number of frames [`segment`] produces for a payload of `len` bytes.
pub fn frame_count(len: usize) -> usize {
    if len <= SF_MAX {
        1
    } else {
        1 + (len - FF_DATA).div_ceil(CF_DATA)
    }
}

pub fn make_flow_control(p: FlowControlParams, pad: u8) -> Result<FramePayload, IsoTpError> {
    stmin_duration(p.stmin_raw)?;
    let mut f = [pad; 8];
    f[0] = 0x30 | p.status as u8;
    f[1] = p.block_size;
    f[2] = p.stmin_raw;
    Ok(f)
}

/// Minimum separation time encoded by an STmin byte.
pub fn stmin_duration(raw: u8) -> Result<Duration, IsoTpError> {
    match raw {
        0x00..=0x7F => Ok(Duration::from_millis(raw as u64)),
        0xF1..=0xF9 => Ok(Duration::from_micros((raw - 0xF0) as u64 * 100)),
        _ => Err(IsoTpError::ReservedStMin(raw)),
    }
}

/// Outcome of feeding one frame to a [`Reassembler`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RxProgress {
    Progress,
    Complete(IsoTpMessage),
    /// A FF arrived or a block finished; the caller must send flow control.
    NeedFlowControl,
}

#[derive(Debug)]
enum RxState {
    Idle,
    Receiving {
        expected_len: usize,
        buf: Vec<u8>,
        next_sn: u8,
        deadline: SimTime,
        block_count: u8,
    },
}

/// Receive-side state machine for one peer.
#[derive(Debug)]
pub struct Reassembler {
    timers: TpTimers,
    block_size: u8,
    state: RxState,
}

impl Reassembler {
    pub fn new(timers: TpTimers, block_size: u8) -> Self {
        Reassembler {
            timers,
            block_size,
            state: RxState::Idle,
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.state, RxState::Idle)
    }

    pub fn reset(&mut self) {
        self.state = RxState::Idle;
    }

    /// Feed one received frame. Any error aborts the transfer in progress.
    pub fn on_frame(&mut self, data: &[u8], now: SimTime) -> Result<RxProgress, IsoTpError> {
        self.check_timeout(now)?;
        let pci = match parse_pci(data) {
            Ok(p) => p,
            Err(e) => {
                self.reset();
                return Err(e);
            }
        };
        match pci {
            Pci::Single { len } => {
                self.reset();
                Ok(RxProgress::Complete(IsoTpMessage(data[1..=len].to_vec())))
            }
            Pci::First { len } => {
                let mut buf = Vec::with_capacity(len);
                buf.extend_from_slice(&data[2..8]);
                self.state = RxState::Receiving {
                    expected_len: len,
                    buf,
                    next_sn: 1,
                    deadline: now + self.timers.n_cr,
                    block_count: 0,
                };
                Ok(RxProgress::NeedFlowControl)
            }
            Pci::Consecutive { sn } => {
                let block_size = self.block_size;
                let n_cr = self.timers.n_cr;
                let RxState::Receiving {
                    expected_len,
                    buf,
                    next_sn,
                    deadline,
                    block_count,
                } = &mut self.state
                else {
                    return Err(IsoTpError::UnexpectedPci(data[0]));
                };
                if sn != *next_sn {
                    let expected = *next_sn;
                    self.reset();
                    return Err(IsoTpError::WrongSequenceNumber { expected, got: sn });
                }
                let take = (*expected_len - buf.len()).min(CF_DATA);
                if data.len() < 1 + take {
                    self.reset();
                    return Err(IsoTpError::ShortFrame);
                }
                buf.extend_from_slice(&data[1..=take]);
                *next_sn = (*next_sn + 1) & 0x0F;
                *deadline = now + n_cr;
                if buf.len() == *expected_len {
                    let RxState::Receiving { buf, .. } =
                        std::mem::replace(&mut self.state, RxState::Idle)
                    else {
                        unreachable!()
                    };
                    return Ok(RxProgress::Complete(IsoTpMessage(buf)));
                }
                *block_count = block_count.wrapping_add(1);
                if block_size != 0 && *block_count == block_size {
                    *block_count = 0;
                    return Ok(RxProgress::NeedFlowControl);
                }
                Ok(RxProgress::Progress)
            }
            Pci::FlowControl(_) => Err(IsoTpError::UnexpectedPci(data[0])),
        }
    }

    /// Abort with [`IsoTpError::NCrTimeout`] once the CF deadline has passed.
    pub fn check_timeout(&mut self, now: SimTime) -> Result<(), IsoTpError> {
        if let RxState::Receiving { deadline, .. } = self.state {
            if now > deadline {
                self.reset();
                return Err(IsoTpError::NCrTimeout);
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
enum TxState {
    Idle,
    AwaitFc {
        remaining: VecDeque<FramePayload>,
        deadline: SimTime,
        waits: u8,
    },
    Sending {
        remaining: VecDeque<FramePayload>,
        block_left: Option<u8>,
        stmin: Duration,
        next_allowed: SimTime,
    },
}

/// Send-side state machine.
#[derive(Debug)]
pub struct Transmitter {
    timers: TpTimers,
    pad: u8,
    state: TxState,
}

impl Transmitter {
    pub fn new(timers: TpTimers, pad: u8) -> Self {
        Transmitter {
            timers,
            pad,
            state: TxState::Idle,
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.state, TxState::Idle)
    }

    pub fn reset(&mut self) {
        self.state = TxState::Idle;
    }

    /// Begin a transfer, returning the SF or FF to put on the wire.
    pub fn start(&mut self, msg: &IsoTpMessage, now: SimTime) -> Result<FramePayload, IsoTpError> {
        if !self.is_idle() {
            return Err(IsoTpError::Busy);
        }
        let mut frames: VecDeque<_> = segment(msg, self.pad).into();
        let first = frames.pop_front().expect("segment yields at least one frame");
        if !frames.is_empty() {
            self.state = TxState::AwaitFc {
                remaining: frames,
                deadline: now + self.timers.n_bs,
                waits: 0,
            };
        }
        Ok(first)
    }

    pub fn on_flow_control(&mut self, data: &[u8], now: SimTime) -> Result<(), IsoTpError> {
        let fc = match parse_pci(data)? {
            Pci::FlowControl(fc) => fc,
            _ => return Err(IsoTpError::UnexpectedPci(data[0])),
        };
        let TxState::AwaitFc { remaining, waits, .. } = &mut self.state else {
            // stray FC, nothing outstanding
            return Ok(());
        };
        match fc.status {
            FlowStatus::Overflow => {
                self.reset();
                Err(IsoTpError::Overflow)
            }
            FlowStatus::Wait => {
                *waits += 1;
                if *waits > MAX_CONSECUTIVE_WAITS {
                    self.reset();
                    return Err(IsoTpError::TooManyWaits);
                }
                let remaining = std::mem::take(remaining);
                let waits = *waits;
                self.state = TxState::AwaitFc {
                    remaining,
                    deadline: now + self.timers.n_bs,
                    waits,
                };
                Ok(())
            }
            FlowStatus::ContinueToSend => {
                let remaining = std::mem::take(remaining);
                self.state = TxState::Sending {
                    remaining,
                    block_left: (fc.block_size != 0).then_some(fc.block_size),
                    stmin: stmin_duration(fc.stmin_raw)?,
                    next_allowed: now,
                };
                Ok(())
            }
        }
    }

    /// Consecutive frames that may go out at `now`. With STmin = 0 a whole
    /// block is released at once.
    pub fn poll(&mut self, now: SimTime) -> Result<Vec<FramePayload>, IsoTpError> {
        let n_bs = self.timers.n_bs;
        match &mut self.state {
            TxState::Idle => Ok(Vec::new()),
            TxState::AwaitFc { deadline, .. } => {
                if now > *deadline {
                    self.reset();
                    Err(IsoTpError::NBsTimeout)
                } else {
                    Ok(Vec::new())
                }
            }
            TxState::Sending {
                remaining,
                block_left,
                stmin,
                next_allowed,
            } => {
                let mut out = Vec::new();
                while now >= *next_allowed {
                    let Some(frame) = remaining.pop_front() else {
                        break;
                    };
                    out.push(frame);
                    *next_allowed = now + *stmin;
                    if let Some(left) = block_left {
                        *left -= 1;
                        if *left == 0 {
                            break;
                        }
                    }
                    if !stmin.is_zero() {
                        break;
                    }
                }
                if remaining.is_empty() {
                    self.state = TxState::Idle;
                } else if *block_left == Some(0) {
                    let remaining = std::mem::take(remaining);
                    self.state = TxState::AwaitFc {
                        remaining,
                        deadline: now + n_bs,
                        waits: 0,
                    };
                }
                Ok(out)
            }
        }
    }
}

/// Full-duplex ISO-TP link on one [`TpEndpoint`]: a transmitter, a
/// reassembler and the flow control this side advertises.
#[derive(Debug)]
pub struct IsoTpChannel {
    endpoint: TpEndpoint,
    fc: FlowControlParams,
    tx: Transmitter,
    rx: Reassembler,
    outbox: VecDeque<CanFrame>,
}

impl IsoTpChannel {
    pub fn new(endpoint: TpEndpoint, timers: TpTimers, fc: FlowControlParams) -> Self {
        IsoTpChannel {
            endpoint,
            fc,
            tx: Transmitter::new(timers, endpoint.padding),
            rx: Reassembler::new(timers, fc.block_size),
            outbox: VecDeque::new(),
        }
    }

    pub fn endpoint(&self) -> &TpEndpoint {
        &self.endpoint
    }

    pub fn is_tx_idle(&self) -> bool {
        self.tx.is_idle()
    }

    pub fn is_rx_idle(&self) -> bool {
        self.rx.is_idle()
    }

    fn frame(&self, payload: &[u8]) -> CanFrame {
        CanFrame::new(self.endpoint.tx_id, payload).expect("payload is at most 8 bytes")
    }

    /// Queue a message for transmission.
    pub fn send(&mut self, payload: &[u8], now: SimTime) -> Result<(), IsoTpError> {
        let msg = IsoTpMessage::new(payload.to_vec())?;
        let first = self.tx.start(&msg, now)?;
        let f = self.frame(&first);
        self.outbox.push_back(f);
        Ok(())
    }

    /// Feed a received frame; frames for other identifiers are ignored.
    pub fn on_frame(
        &mut self,
        frame: &CanFrame,
        now: SimTime,
    ) -> Result<Option<IsoTpMessage>, IsoTpError> {
        if frame.id() != self.endpoint.rx_id || frame.is_remote() {
            return Ok(None);
        }
        let data = frame.data();
        if data.first().map(|b| b >> 4) == Some(0x3) {
            self.tx.on_flow_control(data, now)?;
            return Ok(None);
        }
        match self.rx.on_frame(data, now)? {
            RxProgress::Progress => Ok(None),
            RxProgress::Complete(msg) => Ok(Some(msg)),
            RxProgress::NeedFlowControl => {
                let fc = make_flow_control(self.fc, self.endpoint.padding)?;
                let f = self.frame(&fc);
                self.outbox.push_back(f);
                Ok(None)
            }
        }
    }

    /// Frames to put on the bus now. Timeouts surface here as errors.
    pub fn poll(&mut self, now: SimTime) -> Result<Vec<CanFrame>, IsoTpError> {
        self.rx.check_timeout(now)?;
        let ready = self.tx.poll(now)?;
        let mut out: Vec<CanFrame> = self.outbox.drain(..).collect();
        out.extend(ready.iter().map(|p| self.frame(p)));
        Ok(out)
    }

    pub fn reset(&mut self) {
        self.tx.reset();
        self.rx.reset();
        self.outbox.clear();
    }
}
