//! OBD2 gateway: blocks raw vehicle traffic at the diagnostic connector but
//! forwards the diagnostic request/response pair.

use crate::canbus::{Bus, BusPort, CanFrame, CanId};
use crate::time::SimTime;

use super::EcuConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayDirection {
    /// Vehicle network towards the OBD2 connector.
    ToObd,
    /// OBD2 connector towards the vehicle network.
    ToVehicle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayVerdict {
    Pass,
    Drop,
}

pub fn gateway_filter(cfg: &EcuConfig, frame: &CanFrame, direction: GatewayDirection) -> GatewayVerdict {
    if !cfg.gateway_mode {
        return GatewayVerdict::Pass;
    }
    let allowed: CanId = match direction {
        GatewayDirection::ToObd => cfg.response_can_id(),
        GatewayDirection::ToVehicle => cfg.request_can_id(),
    };
    if frame.id() == allowed {
        GatewayVerdict::Pass
    } else {
        GatewayVerdict::Drop
    }
}

/// Bridges a vehicle bus and an OBD2 bus through [`gateway_filter`].
#[derive(Debug)]
pub struct Gateway {
    cfg: EcuConfig,
    vehicle: BusPort,
    obd: BusPort,
    dropped: u64,
}

impl Gateway {
    pub fn new(cfg: EcuConfig, vehicle_bus: &Bus, obd_bus: &Bus) -> Self {
        Gateway {
            cfg,
            vehicle: vehicle_bus.attach_promiscuous(),
            obd: obd_bus.attach_promiscuous(),
            dropped: 0,
        }
    }

    pub fn set_gateway_mode(&mut self, on: bool) {
        self.cfg.gateway_mode = on;
    }

    pub fn gateway_mode(&self) -> bool {
        self.cfg.gateway_mode
    }

    /// Frames dropped so far.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Forward whatever arrived on either side since the last call.
    pub fn forward(&mut self, _now: SimTime) {
        for f in self.vehicle.drain() {
            match gateway_filter(&self.cfg, &f, GatewayDirection::ToObd) {
                GatewayVerdict::Pass => self.obd.send(f),
                GatewayVerdict::Drop => self.dropped += 1,
            }
        }
        for f in self.obd.drain() {
            match gateway_filter(&self.cfg, &f, GatewayDirection::ToVehicle) {
                GatewayVerdict::Pass => self.vehicle.send(f),
                GatewayVerdict::Drop => self.dropped += 1,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(id: u16) -> CanFrame {
        CanFrame::new(CanId::standard(id), &[0; 8]).unwrap()
    }

    #[test]
    fn filter_rules() {
        let mut cfg = EcuConfig::shipped();
        assert_eq!(
            gateway_filter(&cfg, &frame(0x100), GatewayDirection::ToObd),
            GatewayVerdict::Pass
        );
        cfg.gateway_mode = true;
        assert_eq!(
            gateway_filter(&cfg, &frame(0x100), GatewayDirection::ToObd),
            GatewayVerdict::Drop
        );
        assert_eq!(
            gateway_filter(&cfg, &frame(0x7E8), GatewayDirection::ToObd),
            GatewayVerdict::Pass
        );
        assert_eq!(
            gateway_filter(&cfg, &frame(0x7E0), GatewayDirection::ToVehicle),
            GatewayVerdict::Pass
        );
        // the request id never leaks back out, nor the response id in
        assert_eq!(
            gateway_filter(&cfg, &frame(0x7E0), GatewayDirection::ToObd),
            GatewayVerdict::Drop
        );
        assert_eq!(
            gateway_filter(&cfg, &frame(0x7E8), GatewayDirection::ToVehicle),
            GatewayVerdict::Drop
        );
    }

    #[test]
    fn bridge_forwards_only_diagnostics() {
        let mut cfg = EcuConfig::shipped();
        cfg.gateway_mode = true;
        let vehicle = Bus::new();
        let obd = Bus::new();
        let mut gw = Gateway::new(cfg, &vehicle, &obd);
        let ecu = vehicle.attach_promiscuous();
        let tester = obd.attach_promiscuous();

        ecu.send(frame(0x100));
        ecu.send(frame(0x7E8));
        vehicle.step(SimTime::ZERO).unwrap();
        gw.forward(SimTime::ZERO);
        obd.step(SimTime::ZERO).unwrap();
        assert_eq!(tester.drain(), vec![frame(0x7E8)]);
        assert_eq!(gw.dropped(), 1);
    }
}
