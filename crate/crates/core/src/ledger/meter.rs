use serde::{Deserialize, Serialize};

/// Bytes charged per transmitted item. Computation stays in 64-bit floats;
/// the wire charges the transmitted precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub bytes_per_scalar: u64,
    /// Seeds derive from a shared root, so they are free unless configured.
    pub bytes_per_seed: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            bytes_per_scalar: 4,
            bytes_per_seed: 0,
        }
    }
}

/// Bytes moved in one round, summed over the sampled clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundTraffic {
    pub uplink: u64,
    pub downlink: u64,
    pub participants: u64,
}

impl RoundTraffic {
    pub fn total(&self) -> u64 {
        self.uplink + self.downlink
    }
}

/// Monotone uplink/downlink byte counters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommMeter {
    cost: CostModel,
    uplink_bytes: u64,
    downlink_bytes: u64,
    rounds: u64,
    per_client_bytes: f64,
}

impl CommMeter {
    pub fn new(cost: CostModel) -> Self {
        Self {
            cost,
            ..Self::default()
        }
    }

    pub fn cost(&self) -> CostModel {
        self.cost
    }

    pub fn uplink_bytes(&self) -> u64 {
        self.uplink_bytes
    }

    pub fn downlink_bytes(&self) -> u64 {
        self.downlink_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.uplink_bytes + self.downlink_bytes
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Bytes sent and received by one participating client, summed over rounds.
    pub fn per_client_bytes(&self) -> f64 {
        self.per_client_bytes
    }

    /// Charges one round. `fetched_rounds[i]` is the number of round logs the
    /// i-th sampled client downloads (1 for a client that was also sampled in
    /// the previous round).
    ///
    /// Each client uploads `steps * perturbations` scalars, downloads
    /// `fetched * steps * perturbations` scalars, and receives seeds for the
    /// fetched rounds plus the current one.
    pub fn meter_round(&mut self, steps: usize, perturbations: usize, fetched_rounds: &[u64]) -> RoundTraffic {
        let cells = (steps * perturbations) as u64;
        let m = fetched_rounds.len() as u64;
        let uplink = m * cells * self.cost.bytes_per_scalar;
        let downlink: u64 = fetched_rounds
            .iter()
            .map(|&f| f * cells * self.cost.bytes_per_scalar + (f + 1) * cells * self.cost.bytes_per_seed)
            .sum();
        self.uplink_bytes += uplink;
        self.downlink_bytes += downlink;
        self.rounds += 1;
        if m > 0 {
            self.per_client_bytes += (uplink + downlink) as f64 / m as f64;
        }
        RoundTraffic {
            uplink,
            downlink,
            participants: m,
        }
    }
}

/// `"22000 B (22.000 KB, 21.484 KiB)"`; KB is 1000 bytes and KiB is 1024.
pub fn format_bytes(bytes: f64) -> String {
    format!("{bytes:.0} B ({:.3} KB, {:.3} KiB)", bytes / 1000.0, bytes / 1024.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_clients_five_perturbations() {
        let mut m = CommMeter::new(CostModel::default());
        let t = m.meter_round(1, 5, &[1, 1]);
        assert_eq!((t.uplink, t.downlink), (40, 40));
        // one participating client: 20 bytes up, 20 bytes down
        assert_eq!(m.per_client_bytes(), 40.0);
    }

    #[test]
    fn smallest_case() {
        let mut m = CommMeter::new(CostModel::default());
        m.meter_round(1, 1, &[1]);
        assert_eq!(m.total_bytes(), 8);
    }

    #[test]
    fn absent_clients_download_more() {
        let mut m = CommMeter::new(CostModel::default());
        let t = m.meter_round(2, 3, &[4, 0]);
        assert_eq!(t.uplink, 2 * 6 * 4);
        assert_eq!(t.downlink, 4 * 6 * 4);
    }

    #[test]
    fn seed_costs_are_charged_when_configured() {
        let mut m = CommMeter::new(CostModel {
            bytes_per_scalar: 4,
            bytes_per_seed: 8,
        });
        let t = m.meter_round(1, 5, &[1]);
        assert_eq!(t.downlink, 20 + 2 * 5 * 8);
    }

    #[test]
    fn counters_are_monotone() {
        let mut m = CommMeter::new(CostModel::default());
        let mut last = 0;
        for r in 0..50u64 {
            m.meter_round(1 + (r % 3) as usize, 2, &[r % 4, 0, 1]);
            assert!(m.total_bytes() >= last);
            last = m.total_bytes();
        }
        assert_eq!(m.rounds(), 50);
    }

    #[test]
    fn unit_formatting() {
        assert_eq!(format_bytes(22000.0), "22000 B (22.000 KB, 21.484 KiB)");
    }
}
