use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::bench::Workbench;
use crate::codec::services::session;
use crate::codec::to_hex;
use crate::ecu::EcuConfig;
use crate::tester::{Outcome, Tester, TesterConfig, TesterError, Wire};

use super::oracle::{expected_verdict, Expected};
use super::{session_name, Mutation, TestCase};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("case {case}: could not enter session {session:#04x}: {detail}")]
    SessionSetup { case: usize, session: u8, detail: String },
    #[error("case {case}: {source}")]
    Transport { case: usize, source: TesterError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseResult {
    pub id: usize,
    #[serde(with = "crate::hexnum::u8")]
    pub service: u8,
    pub session: &'static str,
    pub kind: String,
    pub mutations: Vec<Mutation>,
    pub request: String,
    pub expected: Expected,
    pub observed: Expected,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SummaryRow {
    #[serde(with = "crate::hexnum::u8")]
    pub service: u8,
    pub kind: String,
    pub session: &'static str,
    pub passed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Report {
    pub results: Vec<CaseResult>,
}

impl Report {
    pub fn total(&self) -> usize {
        self.results.len()
    }

    pub fn passed(&self) -> usize {
        self.results.iter().filter(|r| r.pass).count()
    }

    pub fn failed(&self) -> impl Iterator<Item = &CaseResult> {
        self.results.iter().filter(|r| !r.pass)
    }

    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    /// Pass counts per (service, mutation kind, session).
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(u8, String, u8), (usize, usize)> = BTreeMap::new();
        for r in &self.results {
            let sess = if r.session == "default" { session::DEFAULT } else { session::EXTENDED };
            let e = groups.entry((r.service, r.kind.clone(), sess)).or_default();
            e.1 += 1;
            if r.pass {
                e.0 += 1;
            }
        }
        groups
            .into_iter()
            .map(|((service, kind, sess), (passed, total))| SummaryRow {
                service,
                kind,
                session: session_name(sess),
                passed,
                total,
            })
            .collect()
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:<22} {:<9} {:>6} {:>6}\n",
            "service", "mutation", "session", "pass", "total"
        );
        for row in self.summary() {
            out.push_str(&format!(
                "{:<8} {:<22} {:<9} {:>6} {:>6}\n",
                format!("{:#04x}", row.service),
                row.kind,
                row.session,
                row.passed,
                row.total
            ));
        }
        out.push_str(&format!("total {} / {} passed\n", self.passed(), self.total()));
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.results {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

/// Run one case against a fresh ECU built from `cfg`.
pub fn run_case(cfg: &EcuConfig, case: &TestCase) -> Result<CaseResult, HarnessError> {
    let bench = Workbench::new(cfg.clone());
    let tcfg = TesterConfig {
        keep_alive: false,
        ..TesterConfig::default()
    };
    let mut tester: Tester<Workbench, f64> = Tester::new(bench, cfg, tcfg);
    if case.session != session::DEFAULT {
        let ex = tester
            .session_control(case.session)
            .map_err(|e| HarnessError::SessionSetup {
                case: case.id,
                session: case.session,
                detail: e.to_string(),
            })?;
        if !ex.is_positive() {
            return Err(HarnessError::SessionSetup {
                case: case.id,
                session: case.session,
                detail: format!("{:?}", ex.outcome),
            });
        }
    }

    let (expected, reason) = expected_verdict(cfg, case);
    let frames_before = tester.rx_frames();
    let frames = case.frames(cfg.request_can_id());
    let (observed, response) = match tester.exchange(Wire::Frames(frames)) {
        Ok(ex) => match ex.outcome {
            Outcome::SuppressedOk if ex.response_frames == 0 => (Expected::Silence, None),
            Outcome::SuppressedOk => {
                return Err(HarnessError::Transport {
                    case: case.id,
                    source: TesterError::Timeout,
                })
            }
            Outcome::Response(r) => {
                let obs = match r.nrc() {
                    Some(n) => Expected::Negative { nrc: n.code() },
                    None => Expected::Positive,
                };
                (obs, Some(to_hex(&r.encode())))
            }
        },
        Err(TesterError::Timeout) if tester.rx_frames() == frames_before => (Expected::Silence, None),
        Err(e) => {
            return Err(HarnessError::Transport {
                case: case.id,
                source: e,
            })
        }
    };
    Ok(CaseResult {
        id: case.id,
        service: case.service,
        session: session_name(case.session),
        kind: case.kind(),
        mutations: case.mutations.clone(),
        request: case.request_hex(),
        pass: expected == observed,
        expected,
        observed,
        reason,
        response,
    })
}

/// Run every case, each against its own freshly initialised ECU.
pub fn run(cases: &[TestCase], cfg: &EcuConfig) -> Result<Report, HarnessError> {
    let results = cases
        .iter()
        .map(|c| run_case(cfg, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Report { results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_case_list() {
        let r = run(&[], &EcuConfig::shipped()).unwrap();
        assert_eq!(r.total(), 0);
        assert!(r.summary().is_empty());
    }

    #[test]
    fn suppressed_tester_present_is_silent() {
        let cfg = EcuConfig::shipped();
        let case = TestCase {
            id: 0,
            service: 0x3E,
            session: session::EXTENDED,
            base: vec![0x3E, 0x00],
            mutations: vec![Mutation::SprBit { set: true }],
        };
        let r = run_case(&cfg, &case).unwrap();
        assert_eq!(r.observed, Expected::Silence);
        assert!(r.pass);
    }
}
