use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use crate::canbus::{Bus, BusPort};
use crate::codec::{Nrc, Response};
use crate::isotp::{FlowControlParams, IsoTpChannel, IsoTpError, TpEndpoint, TpTimers};
use crate::time::{ms, SimTime};

use super::{Ecu, EcuConfig, EcuEvent};

#[derive(Debug)]
struct Scheduled {
    due: SimTime,
    pdu: Vec<u8>,
}

/// An [`Ecu`] attached to a bus through its own ISO-TP channel.
///
/// Responses whose processing delay exceeds P2 are preceded by NRC 0x78,
/// repeated every P2* minus a margin until the final response is due.
#[derive(Debug)]
pub struct EcuNode {
    ecu: Ecu,
    port: BusPort,
    tp: IsoTpChannel,
    scheduled: VecDeque<Scheduled>,
    transport_errors: Vec<(SimTime, IsoTpError)>,
}

impl EcuNode {
    pub fn new(cfg: impl Into<Arc<EcuConfig>>, bus: &Bus) -> Self {
        let cfg: Arc<EcuConfig> = cfg.into();
        let rx = cfg.request_can_id();
        let tx = cfg.response_can_id();
        let endpoint = TpEndpoint::new(tx, rx).expect("config validation rejects equal ids");
        let port = bus.attach(move |id| id == rx);
        EcuNode {
            ecu: Ecu::new(cfg),
            port,
            tp: IsoTpChannel::new(endpoint, TpTimers::default(), FlowControlParams::default()),
            scheduled: VecDeque::new(),
            transport_errors: Vec::new(),
        }
    }

    pub fn ecu(&self) -> &Ecu {
        &self.ecu
    }

    pub fn ecu_mut(&mut self) -> &mut Ecu {
        &mut self.ecu
    }

    pub fn take_events(&mut self) -> Vec<EcuEvent> {
        self.ecu.take_events()
    }

    /// Transport errors seen while receiving; the offending message is dropped.
    pub fn take_transport_errors(&mut self) -> Vec<(SimTime, IsoTpError)> {
        std::mem::take(&mut self.transport_errors)
    }

    /// Whether a response is still owed.
    pub fn is_busy(&self) -> bool {
        !self.scheduled.is_empty() || !self.tp.is_tx_idle()
    }

    /// Receive, process and transmit everything possible at `now`. Returns
    /// whether any frame was sent.
    pub fn step(&mut self, now: SimTime) -> bool {
        self.ecu.tick(now);
        for frame in self.port.drain() {
            match self.tp.on_frame(&frame, now) {
                Ok(Some(msg)) => self.on_request(msg.as_bytes(), now),
                Ok(None) => {}
                Err(e) => self.transport_errors.push((now, e)),
            }
        }
        self.release_due(now);
        let frames = match self.tp.poll(now) {
            Ok(f) => f,
            Err(e) => {
                self.transport_errors.push((now, e));
                self.tp.reset();
                Vec::new()
            }
        };
        let sent = !frames.is_empty();
        for f in frames {
            self.port.send(f);
        }
        sent
    }

    fn on_request(&mut self, pdu: &[u8], now: SimTime) {
        let reply = self.ecu.handle_request(pdu, now);
        let Some(response) = reply.response else { return };
        let p2 = self.ecu.p2();
        if reply.delay > p2 {
            let pending = Response::negative(pdu[0], Nrc::ResponsePending).encode();
            // re-announce well inside the tester's P2* window
            let p2_star = ms(self.ecu.config().timing.p2_star_ms);
            let every = p2_star.saturating_sub(p2_star / 5).max(Duration::from_millis(1));
            let mut t = now;
            while t < now + reply.delay {
                self.scheduled.push_back(Scheduled {
                    due: t,
                    pdu: pending.clone(),
                });
                t += every;
            }
        }
        self.scheduled.push_back(Scheduled {
            due: now + reply.delay,
            pdu: response.encode(),
        });
    }

    fn release_due(&mut self, now: SimTime) {
        while self.tp.is_tx_idle() {
            match self.scheduled.front() {
                Some(s) if s.due <= now => {
                    let s = self.scheduled.pop_front().expect("front exists");
                    if let Err(e) = self.tp.send(&s.pdu, now) {
                        self.transport_errors.push((now, e));
                    }
                }
                _ => break,
            }
        }
    }
}
