use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::Sample;
use crate::scalar::Scalar;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("no channel named {0:?}")]
    UnknownChannel(String),
    #[error("channel {0:?} has no sample at or before the requested time")]
    MissingInput(String),
    #[error("defining {0:?} would create a cycle")]
    CycleDetected(String),
    #[error("channel {0:?} already exists")]
    Duplicate(String),
    #[error("expression for {0:?} has no inputs")]
    EmptyExpression(String),
}

/// Shipped computed-channel expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Expr<T> {
    Product { inputs: Vec<String> },
    Sum { inputs: Vec<String> },
    /// `input * factor + offset`
    Scale { input: String, factor: T, offset: T },
}

impl<T> Expr<T> {
    pub fn inputs(&self) -> Vec<&str> {
        match self {
            Expr::Product { inputs } | Expr::Sum { inputs } => inputs.iter().map(String::as_str).collect(),
            Expr::Scale { input, .. } => vec![input.as_str()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChannelSource<T> {
    Did {
        #[serde(with = "crate::hexnum::u16")]
        did: u16,
    },
    Computed { expr: Expr<T> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel<T> {
    pub name: String,
    pub unit: String,
    pub source: ChannelSource<T>,
}

/// Named channels fed by polled samples, plus computed channels over them.
#[derive(Debug, Clone)]
pub struct ChannelSet<T> {
    channels: BTreeMap<String, Channel<T>>,
    series: BTreeMap<String, Vec<(SimTime, T)>>,
}

impl<T: Scalar> Default for ChannelSet<T> {
    fn default() -> Self {
        ChannelSet {
            channels: BTreeMap::new(),
            series: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ChannelSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn define_did(&mut self, name: &str, unit: &str, did: u16) -> Result<(), ChannelError> {
        self.insert(Channel {
            name: name.into(),
            unit: unit.into(),
            source: ChannelSource::Did { did },
        })
    }

    pub fn define_computed(&mut self, name: &str, unit: &str, expr: Expr<T>) -> Result<(), ChannelError> {
        if expr.inputs().is_empty() {
            return Err(ChannelError::EmptyExpression(name.into()));
        }
        self.insert(Channel {
            name: name.into(),
            unit: unit.into(),
            source: ChannelSource::Computed { expr },
        })
    }

    fn insert(&mut self, ch: Channel<T>) -> Result<(), ChannelError> {
        if self.channels.contains_key(&ch.name) {
            return Err(ChannelError::Duplicate(ch.name));
        }
        let name = ch.name.clone();
        if let ChannelSource::Computed { expr } = &ch.source {
            for input in expr.inputs() {
                if input != name && !self.channels.contains_key(input) {
                    return Err(ChannelError::UnknownChannel(input.into()));
                }
            }
        }
        self.channels.insert(name.clone(), ch);
        if self.has_cycle_from(&name) {
            self.channels.remove(&name);
            return Err(ChannelError::CycleDetected(name));
        }
        Ok(())
    }

    fn has_cycle_from(&self, start: &str) -> bool {
        fn visit<T>(
            set: &BTreeMap<String, Channel<T>>,
            name: &str,
            path: &mut BTreeSet<String>,
        ) -> bool {
            if !path.insert(name.to_string()) {
                return true;
            }
            if let Some(Channel {
                source: ChannelSource::Computed { expr },
                ..
            }) = set.get(name)
            {
                for input in expr.inputs() {
                    if visit(set, input, path) {
                        return true;
                    }
                }
            }
            path.remove(name);
            false
        }
        visit(&self.channels, start, &mut BTreeSet::new())
    }

    pub fn channel(&self, name: &str) -> Option<&Channel<T>> {
        self.channels.get(name)
    }

    pub fn channels(&self) -> impl Iterator<Item = &Channel<T>> {
        self.channels.values()
    }

    /// Route a polled sample to every DID channel it feeds. Error samples
    /// are not stored; the latest good value stays in effect.
    pub fn push_sample(&mut self, sample: &Sample<T>) {
        let Some(v) = sample.value else { return };
        for ch in self.channels.values() {
            if let ChannelSource::Did { did } = ch.source {
                if did == sample.did {
                    self.series.entry(ch.name.clone()).or_default().push((sample.t, v));
                }
            }
        }
    }

    /// Record a value directly on a DID channel.
    pub fn push(&mut self, name: &str, t: SimTime, v: T) -> Result<(), ChannelError> {
        match self.channels.get(name) {
            Some(Channel {
                source: ChannelSource::Did { .. },
                ..
            }) => {
                self.series.entry(name.into()).or_default().push((t, v));
                Ok(())
            }
            _ => Err(ChannelError::UnknownChannel(name.into())),
        }
    }

    /// Stored samples of a DID channel, in arrival order.
    pub fn samples(&self, name: &str) -> &[(SimTime, T)] {
        self.series.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Value of any channel at `t`: the latest sample at or before `t` for
    /// DID channels, the expression over such samples for computed ones.
    pub fn value_at(&self, name: &str, t: SimTime) -> Result<T, ChannelError> {
        let ch = self
            .channels
            .get(name)
            .ok_or_else(|| ChannelError::UnknownChannel(name.into()))?;
        match &ch.source {
            ChannelSource::Did { .. } => {
                let s = self.samples(name);
                let idx = s.partition_point(|(st, _)| *st <= t);
                if idx == 0 {
                    Err(ChannelError::MissingInput(name.into()))
                } else {
                    Ok(s[idx - 1].1)
                }
            }
            ChannelSource::Computed { expr } => self.eval(expr, t),
        }
    }

    pub fn eval_computed(&self, name: &str, t: SimTime) -> Result<T, ChannelError> {
        self.value_at(name, t)
    }

    fn eval(&self, expr: &Expr<T>, t: SimTime) -> Result<T, ChannelError> {
        match expr {
            Expr::Product { inputs } => inputs
                .iter()
                .try_fold(T::one(), |acc, n| Ok(acc * self.value_at(n, t)?)),
            Expr::Sum { inputs } => inputs
                .iter()
                .try_fold(T::zero(), |acc, n| Ok(acc + self.value_at(n, t)?)),
            Expr::Scale { input, factor, offset } => Ok(self.value_at(input, t)? * *factor + *offset),
        }
    }

    /// Union of sample timestamps across the DID channels a channel depends
    /// on, ascending and deduplicated.
    pub fn sample_times(&self, name: &str) -> Vec<SimTime> {
        let mut out = BTreeSet::new();
        let mut stack = vec![name.to_string()];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if !seen.insert(n.clone()) {
                continue;
            }
            match self.channels.get(&n).map(|c| &c.source) {
                Some(ChannelSource::Did { .. }) => out.extend(self.samples(&n).iter().map(|(t, _)| *t)),
                Some(ChannelSource::Computed { expr }) => {
                    stack.extend(expr.inputs().into_iter().map(String::from))
                }
                None => {}
            }
        }
        out.into_iter().collect()
    }
}
