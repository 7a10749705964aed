//! Walker counts per state per walk step.

use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensitySeries {
    pub dt: f64,
    /// Total number of walkers placed at step 0.
    pub total: u64,
    /// `snapshots[k][s]` is the count at state `s` after `k` steps.
    pub snapshots: Vec<Vec<u64>>,
}

impl DensitySeries {
    pub fn steps(&self) -> usize {
        self.snapshots.len().saturating_sub(1)
    }

    pub fn totals(&self) -> Vec<u64> {
        self.snapshots.iter().map(|s| s.iter().sum()).collect()
    }

    /// CSV with header `step,state_id,count`, one row per (step, state).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,state_id,count")?;
        for (k, snap) in self.snapshots.iter().enumerate() {
            for (s, c) in snap.iter().enumerate() {
                writeln!(out, "{k},{s},{c}")?;
            }
        }
        Ok(())
    }

    /// Parses the output of [`write_csv`](Self::write_csv).
    pub fn read_csv(text: &str, dt: f64) -> Result<Self, String> {
        let mut snapshots: Vec<Vec<u64>> = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(format!("line {}: expected 3 fields", n + 1));
            }
            let parse = |s: &str| s.trim().parse::<u64>().map_err(|e| format!("line {}: {e}", n + 1));
            let (k, s, c) = (parse(f[0])? as usize, parse(f[1])? as usize, parse(f[2])?);
            if snapshots.len() <= k {
                snapshots.resize(k + 1, Vec::new());
            }
            let snap = &mut snapshots[k];
            if snap.len() <= s {
                snap.resize(s + 1, 0);
            }
            snap[s] = c;
        }
        let total = snapshots.first().map_or(0, |s| s.iter().sum());
        Ok(DensitySeries { dt, total, snapshots })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let d = DensitySeries { dt: 0.5, total: 3, snapshots: vec![vec![3, 0], vec![1, 2]] };
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "step,state_id,count\n0,0,3\n0,1,0\n1,0,1\n1,1,2\n");
        assert_eq!(DensitySeries::read_csv(&text, 0.5).unwrap(), d);
    }
}
