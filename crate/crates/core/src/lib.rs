//! Desk-scale vehicle diagnostics: UDS over ISO-TP over a simulated CAN bus.
//!
//! Layers, bottom up: [`canbus`] (frames, arbitration, buses), [`isotp`]
//! (segmentation and flow control), [`codec`] (UDS PDUs and the service
//! table), [`ecu`] (a simulated diagnostic server and the OBD2 gateway),
//! [`tester`] (client with keep-alive, security unlock and DID polling),
//! [`conformance`] (mutation matrix and oracle), and [`trace`] (recording,
//! triggers, computed channels, export). [`bench`] wires them onto one
//! simulated clock.
//!
//! Physical values are generic over [`Scalar`]; the aliases below fix the
//! type to `f64`, which is what the service and CLI use.

pub mod bench;
pub mod canbus;
pub mod codec;
pub mod conformance;
pub mod ecu;
pub(crate) mod hexnum;
pub mod isotp;
pub mod sample;
pub mod scalar;
pub mod signal;
pub mod tester;
pub mod time;
pub mod trace;

pub use scalar::Scalar;
pub use time::SimTime;

pub type Sample = sample::Sample<f64>;
pub type SignalModel = signal::SignalModel<f64>;
pub type Scaling = signal::Scaling<f64>;
pub type ChannelSet = trace::ChannelSet<f64>;
pub type Channel = trace::Channel<f64>;
pub type Expr = trace::Expr<f64>;
pub type DidCatalog = tester::DidCatalog<f64>;
pub type Tester<L> = tester::Tester<L, f64>;
