use std::time::Duration;

use proptest::prelude::*;
use udsbench::bench::{recording_bench, Workbench};
use udsbench::canbus::{CanFrame, CanId};
use udsbench::ecu::EcuConfig;
use udsbench::tester::TesterConfig;
use udsbench::trace::{
    capture, export, write_csv, Direction, ExportFormat, Recording, TraceError, TraceRecord, TriggerPredicate,
    TriggerSpec, CSV_HEADER,
};
use udsbench::{ChannelSet, Expr, SimTime, Tester};

fn rec_at(ms: &[u64]) -> Recording {
    let mut rec = Recording::with_capacity(10_000);
    for (i, t) in ms.iter().enumerate() {
        let f = CanFrame::new(CanId::standard(0x100), &[i as u8]).unwrap();
        rec.append(TraceRecord::new(SimTime::from_millis(*t), Direction::Other, f, None)).unwrap();
    }
    rec
}

/// A short scripted session on a recording bench: TesterPresent, then a
/// request that draws NRC 0x7F at a known time, then more traffic.
fn scripted() -> (Workbench, SimTime) {
    let cfg = EcuConfig::shipped();
    let mut t = Tester::new(recording_bench(cfg.clone(), 100_000), &cfg, TesterConfig::default());
    t.idle(Duration::from_millis(300)).unwrap();
    t.request_raw(&[0x3E, 0x00]).unwrap();
    t.idle(Duration::from_millis(120)).unwrap();
    let ex = t.request_raw(&[0x27, 0x01]).unwrap();
    assert_eq!(ex.nrc().map(|n| n.code()), Some(0x7F));
    t.idle(Duration::from_millis(400)).unwrap();
    t.request_raw(&[0x22, 0xF1, 0x90]).unwrap();
    (t.into_link(), ex.t_done)
}

#[test]
fn equal_timestamps_are_kept_in_sequence() {
    let rec = rec_at(&[5, 5, 5]);
    let seqs: Vec<u64> = rec.iter().map(|r| r.seq).collect();
    assert_eq!(seqs, vec![0, 1, 2]);
}

#[test]
fn backwards_timestamp_rejected() {
    let mut rec = rec_at(&[10]);
    let f = CanFrame::new(CanId::standard(1), &[]).unwrap();
    let err = rec.append(TraceRecord::new(SimTime::from_millis(9), Direction::Other, f, None)).unwrap_err();
    assert!(matches!(err, TraceError::NonMonotonicTimestamp { .. }));
}

#[test]
fn ring_evicts_oldest() {
    let mut rec = Recording::with_capacity(1000);
    for i in 0..1001u64 {
        let f = CanFrame::new(CanId::standard(1), &[]).unwrap();
        rec.append(TraceRecord::new(SimTime::from_millis(i), Direction::Other, f, None)).unwrap();
    }
    assert_eq!(rec.len(), 1000);
    assert_eq!(rec.iter().next().unwrap().seq, 1);
    assert_eq!(rec.evicted(), 1);
}

#[test]
fn degenerate_window_is_the_firing_record() {
    let rec = rec_at(&[0, 10, 20, 20, 30]);
    let spec = TriggerSpec::new(TriggerPredicate::CanId { id: CanId::standard(0x100) }, 0, 0);
    let (t, win) = capture::<f64>(&rec, &spec, None).unwrap();
    assert_eq!(t, SimTime::ZERO);
    assert_eq!(win.len(), 1);
}

#[test]
fn never_fired() {
    let rec = rec_at(&[0, 10]);
    let spec = TriggerSpec::new(TriggerPredicate::NrcObserved { nrc: None }, 10, 10);
    assert!(matches!(capture::<f64>(&rec, &spec, None), Err(TraceError::NeverFired)));
}

#[test]
fn nrc_trigger_includes_the_offending_request() {
    let (mut wb, t_nrc) = scripted();
    let rec = wb.take_recording().unwrap();
    let spec = TriggerSpec::new(TriggerPredicate::NrcObserved { nrc: None }, 100, 250);
    let (t_fire, win) = capture::<f64>(&rec, &spec, None).unwrap();
    assert_eq!(t_fire, t_nrc);
    let lo = t_fire.as_nanos() - 100_000_000;
    let hi = t_fire.as_nanos() + 250_000_000;
    let expected: Vec<u64> = rec.iter().filter(|r| (lo..=hi).contains(&r.t.as_nanos())).map(|r| r.seq).collect();
    let got: Vec<u64> = win.iter().map(|r| r.seq).collect();
    assert_eq!(got, expected);
    assert!(win.iter().any(|r| r.direction == Direction::TesterToEcu && r.frame.data()[1] == 0x27));
}

#[test]
fn recording_is_lossless() {
    let (wb, _) = scripted();
    let rec = wb.recording().unwrap();
    assert_eq!(rec.len() as u64, wb.obd_frame_count());
    assert_eq!(rec.evicted(), 0);
}

#[test]
fn csv_rows_and_empty_export() {
    let rec = rec_at(&[1, 2, 3]);
    let mut buf = Vec::new();
    write_csv(&mut buf, rec.iter()).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], CSV_HEADER.join(","));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    let err = export(&Recording::with_capacity(10), ExportFormat::Csv, &path).unwrap_err();
    assert!(matches!(err, TraceError::EmptyRecording));
    assert!(!path.exists());
}

#[test]
fn jsonl_mirrors_csv_fields() {
    let (wb, _) = scripted();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    export(wb.recording().unwrap(), ExportFormat::Jsonl, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for col in CSV_HEADER {
        assert!(first.get(col).is_some(), "missing {col}");
    }
    assert_eq!(text.lines().count(), wb.recording().unwrap().len());
}

#[test]
fn computed_channel_rules() {
    let mut set = ChannelSet::new();
    set.define_did("u", "V", 0x0D02).unwrap();
    set.define_did("i", "A", 0x0D03).unwrap();
    set.define_computed("p", "W", Expr::Product { inputs: vec!["u".into(), "i".into()] }).unwrap();
    assert!(set.eval_computed("p", SimTime::ZERO).is_err());
    set.push("u", SimTime::ZERO, 400.0).unwrap();
    set.push("i", SimTime::ZERO, 2.5).unwrap();
    assert_eq!(set.eval_computed("p", SimTime::from_millis(3)).unwrap(), 1000.0);
    assert!(set.define_computed("loop", "", Expr::Sum { inputs: vec!["loop".into()] }).is_err());
}

proptest! {
    #[test]
    fn sequence_numbers_strictly_increase(steps in proptest::collection::vec(0u64..5, 1..200)) {
        let mut t = 0;
        let times: Vec<u64> = steps.iter().map(|d| { t += d; t }).collect();
        let rec = rec_at(&times);
        for w in rec.snapshot().windows(2) {
            prop_assert!(w[0].seq < w[1].seq);
            prop_assert!(w[0].t <= w[1].t);
        }
    }

    /// The captured window equals a brute-force filter over the closed
    /// interval, boundaries included.
    #[test]
    fn capture_is_exact(
        steps in proptest::collection::vec(0u64..30, 1..150),
        fire_idx in any::<proptest::sample::Index>(),
        pre in 0u64..100,
        post in 0u64..100,
    ) {
        let mut t = 0;
        let times: Vec<u64> = steps.iter().map(|d| { t += d; t }).collect();
        let mut rec = Recording::with_capacity(10_000);
        let k = fire_idx.index(times.len());
        for (i, ms) in times.iter().enumerate() {
            let id = if i == k { 0x7E8 } else { 0x100 };
            let f = CanFrame::new(CanId::standard(id), &[]).unwrap();
            rec.append(TraceRecord::new(SimTime::from_millis(*ms), Direction::Other, f, None)).unwrap();
        }
        let spec = TriggerSpec::new(TriggerPredicate::CanId { id: CanId::standard(0x7E8) }, pre, post);
        let (tf, win) = capture::<f64>(&rec, &spec, None).unwrap();
        prop_assert_eq!(tf.as_millis(), times[k]);
        let lo = times[k].saturating_sub(pre);
        let hi = times[k] + post;
        let expected: Vec<usize> = (0..times.len()).filter(|i| times[*i] >= lo && times[*i] <= hi).collect();
        let got: Vec<usize> = win.iter().map(|r| r.seq as usize).collect();
        prop_assert_eq!(got, expected);
    }
}
