//! Byte-exact communication accounting: every payload movement lands here
//! the moment it happens, and totals fall out as exact integer sums.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::PayloadKind;

/// Bytes on the wire per transmitted element (parameter or logit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WirePrecision {
    pub bytes_per_element: u64,
}

impl Default for WirePrecision {
    fn default() -> Self {
        WirePrecision { bytes_per_element: 4 }
    }
}

impl WirePrecision {
    pub fn validate(&self) -> Result<()> {
        if self.bytes_per_element == 0 {
            return Err(Error::invalid("wire precision must be a positive byte count"));
        }
        Ok(())
    }
}

/// Transfer direction, seen from the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

/// One recorded payload movement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: usize,
    pub client: usize,
    pub direction: Direction,
    pub kind: PayloadKind,
    pub elements: u64,
    pub bytes: u64,
}

/// Append-only traffic log for one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    wire: WirePrecision,
    entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn new(wire: WirePrecision) -> Result<Self> {
        wire.validate()?;
        Ok(CommLedger {
            wire,
            entries: Vec::new(),
        })
    }

    pub fn wire(&self) -> WirePrecision {
        self.wire
    }

    /// Append one movement; bytes = elements x wire bytes-per-element.
    pub fn record(
        &mut self,
        round: usize,
        client: usize,
        direction: Direction,
        kind: PayloadKind,
        elements: u64,
    ) {
        self.entries.push(LedgerEntry {
            round,
            client,
            direction,
            kind,
            elements,
            bytes: elements * self.wire.bytes_per_element,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn last_round(&self) -> Option<usize> {
        self.entries.iter().map(|e| e.round).max()
    }

    /// Entries sorted by (round, client, kind, direction) so serialized
    /// output is deterministic regardless of append interleaving.
    pub fn canonical_entries(&self) -> Vec<LedgerEntry> {
        let mut out = self.entries.clone();
        out.sort_by_key(|e| (e.round, e.client, e.kind, e.direction));
        out
    }

    /// (bytes up, bytes down) accumulated through the given round, inclusive.
    pub fn cumulative_through(&self, round: usize) -> (u64, u64) {
        let mut up = 0u64;
        let mut down = 0u64;
        for e in &self.entries {
            if e.round <= round {
                match e.direction {
                    Direction::Up => up += e.bytes,
                    Direction::Down => down += e.bytes,
                }
            }
        }
        (up, down)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,client,direction,kind,elements,bytes\n");
        for e in self.canonical_entries() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.round,
                e.client,
                e.direction.as_str(),
                e.kind.as_str(),
                e.elements,
                e.bytes
            );
        }
        out
    }
}

/// Exact totals for one (kind, direction) bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TotalRow {
    pub kind: PayloadKind,
    pub direction: Direction,
    pub elements: u64,
    pub bytes: u64,
}

/// Ledger totals through a round, grouped by payload kind and direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub through_round: usize,
    pub rows: Vec<TotalRow>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub bytes_total: u64,
    /// Decimal rendering: 1 MB = 10^6 bytes.
    pub megabytes_total: f64,
}

/// 1 MB = 10^6 bytes.
pub fn megabytes(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

/// Sum the ledger through `through_round` (inclusive), grouped by
/// (kind, direction) in canonical order.
pub fn ledger_totals(ledger: &CommLedger, through_round: usize) -> LedgerTotals {
    let mut rows: Vec<TotalRow> = Vec::new();
    let mut bytes_up = 0u64;
    let mut bytes_down = 0u64;
    for e in ledger.canonical_entries() {
        if e.round > through_round {
            continue;
        }
        match e.direction {
            Direction::Up => bytes_up += e.bytes,
            Direction::Down => bytes_down += e.bytes,
        }
        match rows
            .iter_mut()
            .find(|r| r.kind == e.kind && r.direction == e.direction)
        {
            Some(row) => {
                row.elements += e.elements;
                row.bytes += e.bytes;
            }
            None => rows.push(TotalRow {
                kind: e.kind,
                direction: e.direction,
                elements: e.elements,
                bytes: e.bytes,
            }),
        }
    }
    rows.sort_by_key(|r| (r.kind, r.direction));
    let bytes_total = bytes_up + bytes_down;
    LedgerTotals {
        through_round,
        rows,
        bytes_up,
        bytes_down,
        bytes_total,
        megabytes_total: megabytes(bytes_total),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ledger_totals_are_zero() {
        let ledger = CommLedger::new(WirePrecision::default()).unwrap();
        let totals = ledger_totals(&ledger, 10);
        assert!(totals.rows.is_empty());
        assert_eq!(totals.bytes_total, 0);
        assert_eq!(totals.megabytes_total, 0.0);
    }

    #[test]
    fn parameter_averaging_closed_form() {
        // 3 clients, 10 rounds, 5000-parameter model, 4-byte wire:
        // 3 * 10 * 2 * 5000 * 4 = 1_200_000 bytes
        let mut ledger = CommLedger::new(WirePrecision { bytes_per_element: 4 }).unwrap();
        for round in 0..10 {
            for client in 0..3 {
                ledger.record(round, client, Direction::Down, PayloadKind::FullModel, 5000);
                ledger.record(round, client, Direction::Up, PayloadKind::FullModel, 5000);
            }
        }
        let totals = ledger_totals(&ledger, 9);
        assert_eq!(totals.bytes_total, 1_200_000);
        assert_eq!(totals.bytes_up, 600_000);
        assert_eq!(totals.bytes_down, 600_000);
        assert_eq!(totals.megabytes_total, 1.2);
        assert_eq!(totals.rows.len(), 2);
        for row in &totals.rows {
            assert_eq!(row.kind, PayloadKind::FullModel);
            assert_eq!(row.bytes, row.elements * 4);
        }
    }

    #[test]
    fn through_round_filters() {
        let mut ledger = CommLedger::new(WirePrecision::default()).unwrap();
        ledger.record(0, 0, Direction::Up, PayloadKind::LogitMatrix, 100);
        ledger.record(1, 0, Direction::Up, PayloadKind::LogitMatrix, 100);
        ledger.record(2, 0, Direction::Up, PayloadKind::LogitMatrix, 100);
        assert_eq!(ledger.cumulative_through(1), (800, 0));
        assert_eq!(ledger_totals(&ledger, 0).bytes_total, 400);
        assert_eq!(ledger_totals(&ledger, 2).bytes_total, 1200);
        assert_eq!(ledger.last_round(), Some(2));
    }

    #[test]
    fn canonical_order_is_stable() {
        let mut ledger = CommLedger::new(WirePrecision::default()).unwrap();
        // append out of order on purpose
        ledger.record(1, 2, Direction::Up, PayloadKind::PredictorOnly, 10);
        ledger.record(0, 1, Direction::Down, PayloadKind::LabelHistogram, 8);
        ledger.record(0, 0, Direction::Up, PayloadKind::PredictorOnly, 10);
        ledger.record(1, 0, Direction::Down, PayloadKind::PredictorOnly, 10);
        let canon = ledger.canonical_entries();
        let keys: Vec<(usize, usize)> = canon.iter().map(|e| (e.round, e.client)).collect();
        assert_eq!(keys, vec![(0, 0), (0, 1), (1, 0), (1, 2)]);

        let csv = ledger.to_csv();
        assert!(csv.starts_with("round,client,direction,kind,elements,bytes\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn zero_wire_precision_rejected() {
        assert!(CommLedger::new(WirePrecision { bytes_per_element: 0 }).is_err());
    }
}
