//! Loss statistics and per-interval reports.
//!
//! Reports package the per-path loss rates, the aggregate replica-level
//! loss rate and the information-packet loss rate observed during one
//! report interval. They play the role of receiver feedback in the
//! simulator: everything downstream (state, reward) reads them.

use crate::channels::{InfoWindow, PathCounters};

/// Per-path loss rate over the current window: lost / sent, with an idle
/// path (0 / 0) reported as 0.
pub fn path_plr(counters: &PathCounters) -> f64 {
    if counters.window_sent == 0 {
        0.0
    } else {
        counters.window_lost as f64 / counters.window_sent as f64
    }
}

/// Replica-level end-to-end loss rate: all losses over all transmissions,
/// summed across paths. 0 when nothing was transmitted.
pub fn e2e_plr(counters: &[PathCounters]) -> f64 {
    let sent: u64 = counters.iter().map(|c| c.window_sent).sum();
    let lost: u64 = counters.iter().map(|c| c.window_lost).sum();
    if sent == 0 {
        0.0
    } else {
        lost as f64 / sent as f64
    }
}

/// Fraction of information packets whose every replica was lost.
pub fn info_loss_rate(info: InfoWindow) -> f64 {
    if info.packets == 0 {
        0.0
    } else {
        info.lost as f64 / info.packets as f64
    }
}

/// Receiver-side statistics for one report interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PathReport {
    pub interval_index: usize,
    /// Per-path loss rates, `lost_i / sent_i` over the window.
    pub per_path_plr: Vec<f64>,
    /// Aggregate replica-level loss rate over all paths.
    pub e2e_plr: f64,
    pub per_path_sent: Vec<u64>,
    pub per_path_lost: Vec<u64>,
    /// Information packets transmitted during the interval.
    pub info_packets: u64,
    /// Information packets that lost every replica.
    pub info_lost: u64,
    /// `info_lost / info_packets`, the rate the reward thresholds.
    pub info_loss_rate: f64,
    /// Total replica transmissions during the interval.
    pub transmitted: u64,
}

/// Build the report for one interval from counter snapshots. Pure: the
/// caller resets the window counters afterwards.
pub fn make_report(
    interval_index: usize,
    counters: &[PathCounters],
    info: InfoWindow,
) -> PathReport {
    PathReport {
        interval_index,
        per_path_plr: counters.iter().map(path_plr).collect(),
        e2e_plr: e2e_plr(counters),
        per_path_sent: counters.iter().map(|c| c.window_sent).collect(),
        per_path_lost: counters.iter().map(|c| c.window_lost).collect(),
        info_packets: info.packets,
        info_lost: info.lost,
        info_loss_rate: info_loss_rate(info),
        transmitted: counters.iter().map(|c| c.window_sent).sum(),
    }
}

impl PathReport {
    /// The leading trace columns: interval, per-path loss rates, aggregate
    /// loss rate, information loss rate.
    pub fn csv_fields(&self) -> String {
        let mut out = self.interval_index.to_string();
        for plr in &self.per_path_plr {
            out.push(',');
            out.push_str(&plr.to_string());
        }
        out.push(',');
        out.push_str(&self.e2e_plr.to_string());
        out.push(',');
        out.push_str(&self.info_loss_rate.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{ChannelSet, PathSpec};
    use proptest::prelude::*;

    fn counters(pairs: &[(u64, u64)]) -> Vec<PathCounters> {
        pairs
            .iter()
            .map(|&(sent, lost)| PathCounters {
                sent,
                lost,
                window_sent: sent,
                window_lost: lost,
            })
            .collect()
    }

    #[test]
    fn path_plr_basic_cases() {
        assert_eq!(path_plr(&counters(&[(500, 0)])[0]), 0.0);
        assert_eq!(path_plr(&counters(&[(500, 5)])[0]), 0.01);
        assert_eq!(path_plr(&counters(&[(0, 0)])[0]), 0.0);
    }

    #[test]
    fn e2e_plr_sums_over_paths() {
        assert_eq!(e2e_plr(&counters(&[(100, 2), (100, 3), (100, 1)])), 0.02);
        assert_eq!(e2e_plr(&counters(&[(0, 0), (0, 0)])), 0.0);
        assert_eq!(e2e_plr(&[]), 0.0);
    }

    #[test]
    fn zero_traffic_interval_reports_all_zero() {
        let report = make_report(3, &counters(&[(0, 0), (0, 0), (0, 0)]), InfoWindow::default());
        assert_eq!(report.per_path_plr, vec![0.0, 0.0, 0.0]);
        assert_eq!(report.e2e_plr, 0.0);
        assert_eq!(report.info_loss_rate, 0.0);
        assert_eq!(report.transmitted, 0);
    }

    #[test]
    fn report_fields_follow_the_counters() {
        let report = make_report(
            1,
            &counters(&[(100, 1), (100, 2), (100, 3)]),
            InfoWindow { packets: 150, lost: 2 },
        );
        assert_eq!(report.per_path_plr, vec![0.01, 0.02, 0.03]);
        assert_eq!(report.e2e_plr, 0.02);
        assert_eq!(report.info_packets, 150);
        assert!((report.info_loss_rate - 2.0 / 150.0).abs() < 1e-15);
        assert_eq!(report.transmitted, 300);
        assert_eq!(report.csv_fields(), format!("1,0.01,0.02,0.03,0.02,{}", 2.0 / 150.0));
    }

    #[test]
    fn reports_are_a_pure_function_of_counters() {
        let snap = counters(&[(12, 4), (9, 0)]);
        let info = InfoWindow { packets: 10, lost: 1 };
        assert_eq!(make_report(7, &snap, info), make_report(7, &snap, info));
    }

    #[test]
    fn duplicated_rounds_hit_the_product_loss_rate() {
        // 1000 information packets, each sent over two paths at 10% loss:
        // the expected information loss rate is 0.01.
        let specs = [PathSpec::constant(0.1), PathSpec::constant(0.1)];
        let mut ch = ChannelSet::new(&specs, 21).unwrap();
        for _ in 0..1000 {
            ch.transmit_round(&[0, 1]).unwrap();
        }
        let report = make_report(0, &ch.counters(), ch.info_window());
        let sigma = (0.01f64 * 0.99 / 1000.0).sqrt();
        assert!((report.info_loss_rate - 0.01).abs() <= 3.0 * sigma);
    }

    proptest! {
        #[test]
        fn e2e_plr_is_a_weighted_mean_of_path_plrs(
            pairs in proptest::collection::vec((0u64..10_000, 0u64..10_000), 1..6)
        ) {
            let snap: Vec<PathCounters> = pairs
                .iter()
                .map(|&(sent, lost)| {
                    let lost = lost.min(sent);
                    PathCounters { sent, lost, window_sent: sent, window_lost: lost }
                })
                .collect();
            let rates: Vec<f64> = snap.iter().map(path_plr).collect();
            let total = e2e_plr(&snap);
            let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(total >= lo - 1e-12 && total <= hi + 1e-12);
            // Exact weighted-mean identity.
            let sent: u64 = snap.iter().map(|c| c.window_sent).sum();
            if sent > 0 {
                let weighted: f64 = snap
                    .iter()
                    .map(|c| path_plr(c) * c.window_sent as f64 / sent as f64)
                    .sum();
                prop_assert!((total - weighted).abs() < 1e-12);
            }
        }
    }
}
