use super::*;
use crate::codec::DtcCode;

const T0: SimTime = SimTime::ZERO;

fn t(ms_: u64) -> SimTime {
    SimTime::from_millis(ms_)
}

fn shipped() -> Ecu {
    Ecu::new(EcuConfig::shipped())
}

fn respond(ecu: &mut Ecu, pdu: &[u8], now: SimTime) -> Option<Vec<u8>> {
    ecu.handle_request(pdu, now).response.map(|r| r.encode())
}

fn extended(now: SimTime) -> Ecu {
    let mut ecu = shipped();
    respond(&mut ecu, &[0x10, 0x03], now).unwrap();
    ecu
}

fn seed(ecu: &mut Ecu, level: u8, now: SimTime) -> [u8; 4] {
    let r = respond(ecu, &[0x27, level], now).unwrap();
    assert_eq!(r[..2], [0x67, level]);
    r[2..6].try_into().unwrap()
}

#[test]
fn tester_present_refreshes_s3() {
    let mut ecu = extended(T0);
    assert_eq!(respond(&mut ecu, &[0x3E, 0x00], t(1000)), Some(vec![0x7E, 0x00]));
    assert_eq!(ecu.state().s3_deadline, Some(t(6000)));
}

#[test]
fn suppressed_tester_present_still_refreshes() {
    let mut ecu = extended(T0);
    assert_eq!(respond(&mut ecu, &[0x3E, 0x80], t(1000)), None);
    assert_eq!(ecu.state().s3_deadline, Some(t(6000)));
}

#[test]
fn negative_despite_suppress() {
    let mut ecu = extended(T0);
    assert_eq!(
        respond(&mut ecu, &[0x3E, 0x80, 0x00], t(1)),
        Some(vec![0x7F, 0x3E, 0x13])
    );
}

#[test]
fn session_control_positive_layout() {
    let mut ecu = shipped();
    let r = respond(&mut ecu, &[0x10, 0x03], T0).unwrap();
    // P2 = 50 ms, P2* = 5000 ms in 10 ms units
    assert_eq!(r, vec![0x50, 0x03, 0x00, 0x32, 0x01, 0xF4]);
    assert_eq!(ecu.state().active_session, session::EXTENDED);
    assert_eq!(ecu.state().s3_deadline, Some(t(5000)));
}

#[test]
fn return_to_default_relocks() {
    let mut ecu = extended(T0);
    let s = seed(&mut ecu, 1, t(1));
    let key = KeyFunction::Complement.derive(&s);
    let mut pdu = vec![0x27, 0x02];
    pdu.extend(key);
    assert_eq!(respond(&mut ecu, &pdu, t(2)), Some(vec![0x67, 0x02]));
    assert!(ecu.state().unlocked_levels.contains(&1));
    assert_eq!(respond(&mut ecu, &[0x10, 0x01], t(3)).unwrap()[..2], [0x50, 0x01]);
    assert!(ecu.state().unlocked_levels.is_empty());
    assert_eq!(ecu.state().s3_deadline, None);
}

#[test]
fn unsupported_target_session() {
    let mut cfg = EcuConfig::shipped();
    cfg.sessions.retain(|s| s.id != session::PROGRAMMING);
    let mut ecu = Ecu::new(cfg);
    respond(&mut ecu, &[0x10, 0x03], T0).unwrap();
    assert_eq!(respond(&mut ecu, &[0x10, 0x02], t(1)), Some(vec![0x7F, 0x10, 0x12]));
}

#[test]
fn programming_needs_level_one() {
    let mut ecu = extended(T0);
    assert_eq!(respond(&mut ecu, &[0x10, 0x02], t(1)), Some(vec![0x7F, 0x10, 0x33]));
    // listed but not reachable from default
    let mut fresh = shipped();
    assert_eq!(respond(&mut fresh, &[0x10, 0x02], T0), Some(vec![0x7F, 0x10, 0x7E]));
}

#[test]
fn complement_key_unlocks() {
    let mut ecu = extended(T0);
    let s = seed(&mut ecu, 1, t(1));
    assert_ne!(s, [0; 4]);
    let mut pdu = vec![0x27, 0x02];
    pdu.extend(s.iter().map(|b| !b));
    assert_eq!(respond(&mut ecu, &pdu, t(2)), Some(vec![0x67, 0x02]));
    assert_eq!(ecu.state().pending_seed, None);
    // second requestSeed at an unlocked level
    assert_eq!(respond(&mut ecu, &[0x27, 0x01], t(3)), Some(vec![0x67, 0x01, 0, 0, 0, 0]));
}

#[test]
fn xor_level_uses_its_own_function() {
    let mut ecu = extended(T0);
    let s = seed(&mut ecu, 3, t(1));
    let mut pdu = vec![0x27, 0x04];
    pdu.extend(KeyFunction::Xor5a.derive(&s));
    assert_eq!(respond(&mut ecu, &pdu, t(2)), Some(vec![0x67, 0x04]));
}

#[test]
fn lockout_sequence() {
    let mut ecu = extended(T0);
    let mut now = t(1);
    let mut nrcs = Vec::new();
    for _ in 0..3 {
        seed(&mut ecu, 1, now);
        let r = respond(&mut ecu, &[0x27, 0x02, 0, 0, 0, 0], now).unwrap();
        nrcs.push(r[2]);
        now += ms(10);
    }
    assert_eq!(nrcs, vec![0x35, 0x35, 0x36]);
    let armed_at = now - ms(10);
    assert_eq!(respond(&mut ecu, &[0x27, 0x01], now), Some(vec![0x7F, 0x27, 0x37]));
    // keep the session alive across the delay
    let mut k = now;
    while k < armed_at + ms(10_000) {
        respond(&mut ecu, &[0x3E, 0x80], k);
        k += ms(1000);
    }
    assert_eq!(
        respond(&mut ecu, &[0x27, 0x01], armed_at + ms(9_999)),
        Some(vec![0x7F, 0x27, 0x37])
    );
    let s = seed(&mut ecu, 1, armed_at + ms(10_000));
    let mut pdu = vec![0x27, 0x02];
    pdu.extend(s.iter().map(|b| !b));
    assert_eq!(respond(&mut ecu, &pdu, armed_at + ms(10_001)), Some(vec![0x67, 0x02]));
}

#[test]
fn send_key_without_seed() {
    let mut ecu = extended(T0);
    assert_eq!(
        respond(&mut ecu, &[0x27, 0x02, 1, 2, 3, 4], t(1)),
        Some(vec![0x7F, 0x27, 0x24])
    );
}

#[test]
fn seed_is_cleared_by_a_wrong_key() {
    let mut ecu = extended(T0);
    let s = seed(&mut ecu, 1, t(1));
    respond(&mut ecu, &[0x27, 0x02, 0, 0, 0, 0], t(2));
    let mut pdu = vec![0x27, 0x02];
    pdu.extend(s.iter().map(|b| !b));
    assert_eq!(respond(&mut ecu, &pdu, t(3)), Some(vec![0x7F, 0x27, 0x24]));
}

#[test]
fn dtc_by_status_mask() {
    let mut ecu = shipped();
    let r = respond(&mut ecu, &[0x19, 0x02, 0x08], T0).unwrap();
    // P0123-45 (0x09) and U0100-00 (0x08) both carry the confirmed bit
    assert_eq!(
        r,
        vec![0x59, 0x02, 0x09, 0x01, 0x23, 0x45, 0x09, 0xC1, 0x00, 0x00, 0x08]
    );
    let only_first = respond(&mut ecu, &[0x19, 0x02, 0x01], T0).unwrap();
    assert_eq!(only_first, vec![0x59, 0x02, 0x09, 0x01, 0x23, 0x45, 0x09]);
    assert_eq!(respond(&mut ecu, &[0x19, 0x02, 0x00], T0), Some(vec![0x59, 0x02, 0x09]));
}

#[test]
fn snapshot_matches_fixture() {
    let cfg = EcuConfig::shipped();
    let fixture = cfg.dtcs.iter().find(|d| !d.snapshot.is_empty()).unwrap().clone();
    let mut ecu = Ecu::new(cfg);
    let mut pdu = vec![0x19, 0x04];
    pdu.extend_from_slice(&fixture.code.0);
    pdu.push(0x01);
    let r = respond(&mut ecu, &pdu, T0).unwrap();
    let mut expected = vec![0x59, 0x04];
    expected.extend_from_slice(&fixture.code.0);
    expected.push(fixture.status);
    expected.push(0x01);
    expected.push(fixture.snapshot.len() as u8);
    for s in &fixture.snapshot {
        expected.extend_from_slice(&s.did.to_be_bytes());
        expected.extend_from_slice(&s.value);
    }
    assert_eq!(r, expected);
    assert_eq!(
        respond(&mut ecu, &[0x19, 0x04, 0x00, 0x00, 0x01, 0x01], T0),
        Some(vec![0x7F, 0x19, 0x31])
    );
}

#[test]
fn read_vin_and_constants() {
    let mut ecu = shipped();
    let r = respond(&mut ecu, &[0x22, 0xF1, 0x90], T0).unwrap();
    assert_eq!(&r[..3], &[0x62, 0xF1, 0x90]);
    assert_eq!(&r[3..], b"WVWZZZ1KZAW000001");
    let a = respond(&mut ecu, &[0x22, 0x0D, 0x04], t(3)).unwrap();
    let b = respond(&mut ecu, &[0x22, 0x0D, 0x04], t(99_999)).unwrap();
    assert_eq!(a, b);
    // 85 degC with offset -40
    assert_eq!(a, vec![0x62, 0x0D, 0x04, 125]);
}

#[test]
fn read_unknown_did() {
    let mut ecu = shipped();
    assert_eq!(respond(&mut ecu, &[0x22, 0xBE, 0xEF], T0), Some(vec![0x7F, 0x22, 0x31]));
}

#[test]
fn write_vin_locked_then_unlocked() {
    let mut ecu = extended(T0);
    let mut pdu = vec![0x2E, 0xF1, 0x90];
    pdu.extend_from_slice(b"WVWZZZ1KZAW999999");
    assert_eq!(respond(&mut ecu, &pdu, t(1)), Some(vec![0x7F, 0x2E, 0x33]));
    let s = seed(&mut ecu, 1, t(2));
    let mut key = vec![0x27, 0x02];
    key.extend(s.iter().map(|b| !b));
    respond(&mut ecu, &key, t(3)).unwrap();
    assert_eq!(respond(&mut ecu, &pdu, t(4)), Some(vec![0x6E, 0xF1, 0x90]));
    let r = respond(&mut ecu, &[0x22, 0xF1, 0x90], t(5)).unwrap();
    assert_eq!(&r[3..], b"WVWZZZ1KZAW999999");
    // wrong value length
    assert_eq!(
        respond(&mut ecu, &[0x2E, 0xF1, 0x90, 0x41], t(6)),
        Some(vec![0x7F, 0x2E, 0x13])
    );
}

#[test]
fn security_services_blocked_in_default() {
    let mut ecu = shipped();
    assert_eq!(respond(&mut ecu, &[0x27, 0x01], T0), Some(vec![0x7F, 0x27, 0x7F]));
    assert_eq!(
        respond(&mut ecu, &[0x2E, 0x01, 0x00, 0x00, 0x01], T0),
        Some(vec![0x7F, 0x2E, 0x7F])
    );
}

#[test]
fn clear_all_then_read_supported() {
    let mut ecu = shipped();
    assert_eq!(ecu.state().dtc_store.len(), 3);
    let reply = ecu.handle_request(&[0x14, 0xFF, 0xFF, 0xFF], T0);
    assert_eq!(reply.response.unwrap().encode(), vec![0x54]);
    assert_eq!(reply.delay, ms(200));
    assert!(ecu.state().dtc_store.is_empty());
    assert_eq!(respond(&mut ecu, &[0x19, 0x0A], T0), Some(vec![0x59, 0x0A, 0x09]));
}

#[test]
fn clear_family_and_unknown_group() {
    let mut ecu = shipped();
    assert_eq!(respond(&mut ecu, &[0x14, 0x00, 0x00, 0x00], T0), Some(vec![0x7F, 0x14, 0x31]));
    // chassis family 0x41 holds C0100-11
    respond(&mut ecu, &[0x14, 0x41, 0x00, 0x00], T0).unwrap();
    let left: Vec<String> = ecu.state().dtc_store.iter().map(|r| r.dtc.code.to_string()).collect();
    assert_eq!(left, vec!["P0123-45", "U0100-00"]);
}

#[test]
fn s3_expires_exactly_at_deadline() {
    let mut ecu = extended(T0);
    ecu.tick(t(4999));
    assert_eq!(ecu.state().active_session, session::EXTENDED);
    ecu.tick(t(5000));
    assert_eq!(ecu.state().active_session, session::DEFAULT);
    assert_eq!(ecu.state().s3_deadline, None);
    let ev = ecu.take_events();
    assert!(ev.iter().any(|e| matches!(
        e,
        EcuEvent::SessionChanged {
            reason: SessionChangeReason::S3Timeout,
            ..
        }
    )));
}

#[test]
fn keep_alive_holds_session() {
    let mut ecu = extended(T0);
    let mut now = T0;
    for _ in 0..100 {
        now += ms(2000);
        ecu.tick(now);
        respond(&mut ecu, &[0x3E, 0x80], now);
    }
    assert_eq!(ecu.state().active_session, session::EXTENDED);
}

#[test]
fn default_tick_is_identity() {
    let mut ecu = shipped();
    ecu.tick(t(1_000_000));
    assert_eq!(ecu.state().active_session, session::DEFAULT);
    assert!(ecu.take_events().is_empty());
}

#[test]
fn check_order() {
    let mut ecu = shipped();
    assert_eq!(respond(&mut ecu, &[0x31, 0x01], T0), Some(vec![0x7F, 0x31, 0x11]));
    assert_eq!(respond(&mut ecu, &[0x10], T0), Some(vec![0x7F, 0x10, 0x13]));
    assert_eq!(respond(&mut ecu, &[0x10, 0x05], T0), Some(vec![0x7F, 0x10, 0x12]));
    assert_eq!(respond(&mut ecu, &[0x3E, 0x01], T0), Some(vec![0x7F, 0x3E, 0x12]));
    assert_eq!(respond(&mut ecu, &[0x10, 0x01, 0x00], T0), Some(vec![0x7F, 0x10, 0x13]));
    // unknown sub-function wins over a bad length
    assert_eq!(respond(&mut ecu, &[0x3E, 0x01, 0x00], T0), Some(vec![0x7F, 0x3E, 0x12]));
}

#[test]
fn lenient_mode_never_reports_length() {
    let mut cfg = EcuConfig::shipped();
    cfg.length_check = false;
    let mut ecu = Ecu::new(cfg);
    assert_eq!(respond(&mut ecu, &[0x3E, 0x00, 0x00], T0), Some(vec![0x7E, 0x00]));
    // a missing sub-function byte reads as 0x00, which no service defines
    assert_eq!(respond(&mut ecu, &[0x10], T0), Some(vec![0x7F, 0x10, 0x12]));
    assert_eq!(respond(&mut ecu, &[0x22, 0xF1, 0x90, 0x00], T0).unwrap()[..3], [0x62, 0xF1, 0x90]);
}

#[test]
fn fault_injection_snapshots_tagged_dids() {
    let mut ecu = shipped();
    let code: DtcCode = "P0A80-00".parse().unwrap();
    let rec = ecu.inject_fault(code, 0x09, t(2500)).clone();
    let tagged: Vec<u16> = ecu.config().dids.iter().filter(|d| d.snapshot).map(|d| d.did).collect();
    assert_eq!(rec.snapshot.iter().map(|s| s.did).collect::<Vec<_>>(), tagged);
    for s in &rec.snapshot {
        assert_eq!(Some(s.value.clone()), ecu.did_value(s.did, t(2500)));
    }
    assert_eq!(ecu.state().dtc_store.len(), 4);
}

#[test]
fn replay_is_deterministic() {
    let script: Vec<(u64, Vec<u8>)> = vec![
        (0, vec![0x10, 0x03]),
        (5, vec![0x27, 0x01]),
        (6, vec![0x27, 0x02, 1, 2, 3, 4]),
        (7, vec![0x27, 0x01]),
        (8, vec![0x22, 0x0D, 0x00, 0x0D, 0x02]),
        (9, vec![0x19, 0x02, 0xFF]),
    ];
    let run = || {
        let mut ecu = shipped();
        script
            .iter()
            .map(|(at, pdu)| respond(&mut ecu, pdu, t(*at)))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
