//! Lossy wireless path simulation.
//!
//! Each path drops packets i.i.d. Bernoulli at its configured loss
//! probability. Per-path generators are derived from (master seed, path id),
//! so adding a path leaves the other paths' draws untouched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, SimRng};
use crate::{Error, Result};

/// One step of a piecewise-constant loss schedule: from `at_s` seconds of
/// simulated time onward the path drops packets with probability
/// `loss_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub at_s: f64,
    pub loss_prob: f64,
}

/// Static description of one path. The optional schedule overrides the base
/// loss probability as simulated time advances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub loss_prob: f64,
    #[serde(default)]
    pub schedule: Vec<ScheduleStep>,
}

impl PathSpec {
    pub fn constant(loss_prob: f64) -> Self {
        Self { loss_prob, schedule: Vec::new() }
    }
}

/// Cumulative and per-window transmission counters for one path.
///
/// `sent`/`lost` grow for the whole run; the `window_*` pair is reset at
/// every report interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PathCounters {
    pub sent: u64,
    pub lost: u64,
    pub window_sent: u64,
    pub window_lost: u64,
}

impl PathCounters {
    /// Zero the window counters; cumulative counters are untouched.
    pub fn reset_window(&mut self) {
        self.window_sent = 0;
        self.window_lost = 0;
    }
}

/// Information-packet bookkeeping for the current report window: how many
/// rounds were transmitted and how many lost every replica.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InfoWindow {
    pub packets: u64,
    pub lost: u64,
}

/// Delivery outcome of one transmission round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundOutcome {
    /// `(path_id, delivered)` for every replica sent this round.
    pub delivered: Vec<(usize, bool)>,
    /// True iff every replica of the round's information packet was lost.
    pub e2e_lost: bool,
}

struct Path {
    base_loss: f64,
    schedule: Vec<ScheduleStep>,
    counters: PathCounters,
    rng: SimRng,
}

impl Path {
    fn loss_at(&self, now_s: f64) -> f64 {
        let mut p = self.base_loss;
        for step in &self.schedule {
            if step.at_s <= now_s {
                p = step.loss_prob;
            }
        }
        p
    }
}

/// The set of `m` independent lossy paths owned by one simulation run.
pub struct ChannelSet {
    paths: Vec<Path>,
    now_s: f64,
    info_window: InfoWindow,
}

impl ChannelSet {
    /// Build the path set. Per-path streams are keyed by
    /// `(master_seed, "path", path_id)`.
    pub fn new(specs: &[PathSpec], master_seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("at least one path is required".into()));
        }
        let mut paths = Vec::with_capacity(specs.len());
        for (id, spec) in specs.iter().enumerate() {
            check_prob(spec.loss_prob, &format!("path {id} loss_prob"))?;
            let mut last = f64::NEG_INFINITY;
            for step in &spec.schedule {
                check_prob(step.loss_prob, &format!("path {id} schedule loss_prob"))?;
                if !step.at_s.is_finite() || step.at_s < last {
                    return Err(Error::Config(format!(
                        "path {id} schedule times must be finite and non-decreasing"
                    )));
                }
                last = step.at_s;
            }
            paths.push(Path {
                base_loss: spec.loss_prob,
                schedule: spec.schedule.clone(),
                counters: PathCounters::default(),
                rng: stream(master_seed, "path", id as u64),
            });
        }
        Ok(Self { paths, now_s: 0.0, info_window: InfoWindow::default() })
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    /// Advance the simulated clock; loss schedules key off this value.
    pub fn set_time(&mut self, now_s: f64) {
        self.now_s = now_s;
    }

    pub fn now(&self) -> f64 {
        self.now_s
    }

    /// Loss probability currently in force on `path_id`.
    pub fn current_loss(&self, path_id: usize) -> Result<f64> {
        let path = self
            .paths
            .get(path_id)
            .ok_or_else(|| Error::Config(format!("unknown path id {path_id}")))?;
        Ok(path.loss_at(self.now_s))
    }

    /// Transmit one information packet and its replicas over `path_ids`.
    ///
    /// Every listed path draws an independent Bernoulli loss and updates its
    /// counters; the packet is end-to-end lost iff all replicas are lost.
    pub fn transmit_round(&mut self, path_ids: &[usize]) -> Result<RoundOutcome> {
        if path_ids.is_empty() {
            return Err(Error::Config("transmit_round needs at least one path".into()));
        }
        for (i, &id) in path_ids.iter().enumerate() {
            if id >= self.paths.len() {
                return Err(Error::Config(format!("unknown path id {id}")));
            }
            if path_ids[..i].contains(&id) {
                return Err(Error::Config(format!("duplicate path id {id} in round")));
            }
        }
        let now = self.now_s;
        let mut delivered = Vec::with_capacity(path_ids.len());
        let mut all_lost = true;
        for &id in path_ids {
            let path = &mut self.paths[id];
            let p = path.loss_at(now);
            let lost = path.rng.gen::<f64>() < p;
            path.counters.sent += 1;
            path.counters.window_sent += 1;
            if lost {
                path.counters.lost += 1;
                path.counters.window_lost += 1;
            } else {
                all_lost = false;
            }
            delivered.push((id, !lost));
        }
        self.info_window.packets += 1;
        if all_lost {
            self.info_window.lost += 1;
        }
        Ok(RoundOutcome { delivered, e2e_lost: all_lost })
    }

    /// Snapshot of every path's counters, indexed by path id.
    pub fn counters(&self) -> Vec<PathCounters> {
        self.paths.iter().map(|p| p.counters).collect()
    }

    pub fn info_window(&self) -> InfoWindow {
        self.info_window
    }

    /// Reset all window counters (per-path and information-packet) for the
    /// next report interval.
    pub fn reset_windows(&mut self) {
        for path in &mut self.paths {
            path.counters.reset_window();
        }
        self.info_window = InfoWindow::default();
    }
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::Config(format!("{what} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(plrs: &[f64], seed: u64) -> ChannelSet {
        let specs: Vec<PathSpec> = plrs.iter().map(|&p| PathSpec::constant(p)).collect();
        ChannelSet::new(&specs, seed).unwrap()
    }

    #[test]
    fn zero_loss_delivers_everything() {
        let mut ch = set(&[0.0, 0.0, 0.0], 1);
        for _ in 0..100 {
            let out = ch.transmit_round(&[0, 1, 2]).unwrap();
            assert!(out.delivered.iter().all(|&(_, ok)| ok));
            assert!(!out.e2e_lost);
        }
        assert_eq!(ch.info_window(), InfoWindow { packets: 100, lost: 0 });
    }

    #[test]
    fn certain_loss_drops_everything() {
        let mut ch = set(&[1.0, 1.0, 1.0], 1);
        let out = ch.transmit_round(&[0, 1, 2]).unwrap();
        assert!(out.delivered.iter().all(|&(_, ok)| !ok));
        assert!(out.e2e_lost);
        assert_eq!(ch.info_window(), InfoWindow { packets: 1, lost: 1 });
    }

    #[test]
    fn unknown_path_is_a_config_error() {
        let mut ch = set(&[0.1], 1);
        assert!(matches!(ch.transmit_round(&[3]), Err(Error::Config(_))));
        assert!(matches!(ch.transmit_round(&[]), Err(Error::Config(_))));
        assert!(matches!(ch.transmit_round(&[0, 0]), Err(Error::Config(_))));
    }

    #[test]
    fn reset_window_keeps_cumulative_counters() {
        let mut ch = set(&[1.0], 9);
        for _ in 0..10 {
            ch.transmit_round(&[0]).unwrap();
        }
        // Force a known counter state, then reset.
        let before = ch.counters()[0];
        assert_eq!(before, PathCounters { sent: 10, lost: 10, window_sent: 10, window_lost: 10 });
        ch.reset_windows();
        let after = ch.counters()[0];
        assert_eq!(after, PathCounters { sent: 10, lost: 10, window_sent: 0, window_lost: 0 });
        // Idempotent.
        ch.reset_windows();
        assert_eq!(ch.counters()[0], after);
        // Window counters restart from zero, cumulative keep growing.
        ch.transmit_round(&[0]).unwrap();
        assert_eq!(
            ch.counters()[0],
            PathCounters { sent: 11, lost: 11, window_sent: 1, window_lost: 1 }
        );
    }

    #[test]
    fn duplicated_transmission_halves_the_loss_exponent() {
        // Two paths at 10%: the packet dies only when both replicas die.
        let mut ch = set(&[0.1, 0.1], 42);
        let rounds = 100_000u64;
        for _ in 0..rounds {
            ch.transmit_round(&[0, 1]).unwrap();
        }
        let info = ch.info_window();
        let expected = 0.01;
        let sigma = (expected * (1.0 - expected) / rounds as f64).sqrt();
        let observed = info.lost as f64 / info.packets as f64;
        assert!(
            (observed - expected).abs() <= 3.0 * sigma,
            "observed {observed}, expected {expected} +- {}",
            3.0 * sigma
        );
    }

    #[test]
    fn window_rate_converges_to_loss_prob() {
        let mut ch = set(&[0.137], 7);
        let draws = 100_000u64;
        for _ in 0..draws {
            ch.transmit_round(&[0]).unwrap();
        }
        let c = ch.counters()[0];
        let observed = c.window_lost as f64 / c.window_sent as f64;
        let sigma = (0.137 * (1.0 - 0.137) / draws as f64).sqrt();
        assert!((observed - 0.137).abs() <= 3.0 * sigma);
    }

    #[test]
    fn losses_are_independent_across_paths() {
        let mut ch = set(&[0.3, 0.4], 13);
        let rounds = 100_000u64;
        let mut joint = 0u64;
        for _ in 0..rounds {
            let out = ch.transmit_round(&[0, 1]).unwrap();
            if out.e2e_lost {
                joint += 1;
            }
        }
        let expected = 0.3 * 0.4;
        let sigma = (expected * (1.0 - expected) / rounds as f64).sqrt();
        let observed = joint as f64 / rounds as f64;
        assert!((observed - expected).abs() <= 3.0 * sigma);
    }

    #[test]
    fn identical_seeds_replay_identically() {
        let mut a = set(&[0.5, 0.2], 99);
        let mut b = set(&[0.5, 0.2], 99);
        for _ in 0..1000 {
            let oa = a.transmit_round(&[0, 1]).unwrap();
            let ob = b.transmit_round(&[0, 1]).unwrap();
            assert_eq!(oa, ob);
        }
        assert_eq!(a.counters(), b.counters());
    }

    #[test]
    fn adding_a_path_does_not_perturb_existing_streams() {
        let mut two = set(&[0.5, 0.5], 4);
        let mut three = set(&[0.5, 0.5, 0.5], 4);
        let mut seq_two = Vec::new();
        let mut seq_three = Vec::new();
        for _ in 0..500 {
            seq_two.push(two.transmit_round(&[0, 1]).unwrap().delivered);
            let out = three.transmit_round(&[0, 1, 2]).unwrap();
            seq_three.push(out.delivered[..2].to_vec());
        }
        assert_eq!(seq_two, seq_three);
    }

    #[test]
    fn schedule_switches_loss_probability() {
        let spec = PathSpec {
            loss_prob: 0.0,
            schedule: vec![ScheduleStep { at_s: 30.0, loss_prob: 1.0 }],
        };
        let mut ch = ChannelSet::new(&[spec], 5).unwrap();
        ch.set_time(0.0);
        assert!(!ch.transmit_round(&[0]).unwrap().e2e_lost);
        ch.set_time(29.9);
        assert!(!ch.transmit_round(&[0]).unwrap().e2e_lost);
        ch.set_time(30.0);
        assert!(ch.transmit_round(&[0]).unwrap().e2e_lost);
        assert_eq!(ch.current_loss(0).unwrap(), 1.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ChannelSet::new(&[PathSpec::constant(1.5)], 0).is_err());
        assert!(ChannelSet::new(&[], 0).is_err());
        let bad = PathSpec {
            loss_prob: 0.1,
            schedule: vec![
                ScheduleStep { at_s: 10.0, loss_prob: 0.2 },
                ScheduleStep { at_s: 5.0, loss_prob: 0.3 },
            ],
        };
        assert!(ChannelSet::new(&[bad], 0).is_err());
    }
}
