#![allow(dead_code)]

use std::time::Duration;

use udsbench::canbus::CanId;
use udsbench::isotp::{FlowControlParams, IsoTpChannel, TpEndpoint, TpTimers};
use udsbench::SimTime;

/// Push `payload` from one channel to a peer with the given flow control,
/// stepping a 100 µs clock. Returns the received message and the number of
/// data frames the sender put on the wire.
pub fn transfer(payload: &[u8], fc: FlowControlParams) -> (Vec<u8>, usize) {
    let ep = TpEndpoint::new(CanId::standard(0x7E0), CanId::standard(0x7E8)).unwrap();
    let mut a = IsoTpChannel::new(ep, TpTimers::default(), FlowControlParams::default());
    let mut b = IsoTpChannel::new(ep.peer(), TpTimers::default(), fc);
    let mut now = SimTime::ZERO;
    a.send(payload, now).unwrap();
    let mut data_frames = 0;
    loop {
        let out_a = a.poll(now).unwrap();
        data_frames += out_a.len();
        for f in &out_a {
            if let Some(m) = b.on_frame(f, now).unwrap() {
                return (m.into_bytes(), data_frames);
            }
        }
        for f in b.poll(now).unwrap() {
            assert!(a.on_frame(&f, now).unwrap().is_none());
        }
        now += Duration::from_micros(100);
        assert!(now < SimTime::from_millis(600_000), "transfer stalled");
    }
}
