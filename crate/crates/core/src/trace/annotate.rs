use std::time::Duration;

use crate::canbus::{CanFrame, CanId};
use crate::codec::{describe_request, describe_response};
use crate::isotp::{parse_pci, FlowStatus, Pci, Reassembler, RxProgress, TpTimers};
use crate::time::SimTime;

use super::{Decode, Direction, TraceRecord};

/// Passive decoder for the diagnostic id pair: classifies direction and
/// reassembles ISO-TP traffic in each direction to label completed PDUs.
#[derive(Debug)]
pub struct Annotator {
    request_id: CanId,
    response_id: CanId,
    requests: Reassembler,
    responses: Reassembler,
}

impl Annotator {
    pub fn new(request_id: CanId, response_id: CanId) -> Self {
        // a passive observer never times out on its own
        let timers = TpTimers {
            n_bs: Duration::from_secs(3600),
            n_cr: Duration::from_secs(3600),
        };
        Annotator {
            request_id,
            response_id,
            requests: Reassembler::new(timers, 0),
            responses: Reassembler::new(timers, 0),
        }
    }

    pub fn direction(&self, id: CanId) -> Direction {
        if id == self.request_id {
            Direction::TesterToEcu
        } else if id == self.response_id {
            Direction::EcuToTester
        } else {
            Direction::Other
        }
    }

    pub fn annotate(&mut self, t: SimTime, frame: CanFrame) -> TraceRecord {
        let direction = self.direction(frame.id());
        let decode = match direction {
            Direction::Other => None,
            Direction::TesterToEcu => Some(Self::decode(&mut self.requests, frame.data(), t, true)),
            Direction::EcuToTester => Some(Self::decode(&mut self.responses, frame.data(), t, false)),
        };
        TraceRecord::new(t, direction, frame, decode)
    }

    fn decode(rx: &mut Reassembler, data: &[u8], t: SimTime, request: bool) -> Decode {
        let pci = match parse_pci(data) {
            Ok(p) => p,
            Err(e) => {
                rx.reset();
                return Decode::Isotp {
                    text: format!("invalid: {e}"),
                };
            }
        };
        if let Pci::FlowControl(fc) = pci {
            let status = match fc.status {
                FlowStatus::ContinueToSend => "CTS",
                FlowStatus::Wait => "WAIT",
                FlowStatus::Overflow => "OVFLW",
            };
            return Decode::Isotp {
                text: format!("FC {status} bs={} stmin={:#04x}", fc.block_size, fc.stmin_raw),
            };
        }
        match rx.on_frame(data, t) {
            Ok(RxProgress::Complete(msg)) => {
                let pdu = msg.into_bytes();
                if request {
                    Decode::UdsRequest {
                        text: describe_request(&pdu),
                        pdu,
                    }
                } else {
                    Decode::UdsResponse {
                        text: describe_response(&pdu),
                        pdu,
                    }
                }
            }
            Ok(_) => match pci {
                Pci::First { len } => Decode::Isotp {
                    text: format!("FF len={len}"),
                },
                Pci::Consecutive { sn } => Decode::Isotp {
                    text: format!("CF sn={sn}"),
                },
                _ => Decode::Isotp {
                    text: pci.kind().to_string(),
                },
            },
            Err(e) => Decode::Isotp {
                text: format!("{} error: {e}", pci.kind()),
            },
        }
    }
}
