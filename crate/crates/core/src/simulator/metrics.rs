use std::fmt;

use serde::{Serialize, Serializer};

use super::run::SimulationResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    /// Population standard deviation.
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// `None` for an empty sample.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            count: samples.len(),
            mean_ms: mean,
            std_ms: var.sqrt(),
            min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

fn or_na<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("n/a"),
    }
}

/// Simulated-time performance summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub submitted: usize,
    pub committed: usize,
    pub dropped: usize,
    pub rejected: usize,
    pub minutes: usize,
    pub tx_per_minute_mean: f64,
    pub tx_per_minute_peak: u32,
    pub latency: Option<LatencyStats>,
    #[serde(serialize_with = "or_na")]
    pub throughput: Option<f64>,
    pub rounds: usize,
}

impl MetricsReport {
    pub fn from_series(latency_ms: &[f64], tx_per_minute: &[u32], submitted: usize) -> Self {
        let committed: usize = tx_per_minute.iter().map(|&c| c as usize).sum();
        let minutes = tx_per_minute.len();
        Self {
            submitted,
            committed,
            dropped: 0,
            rejected: 0,
            minutes,
            tx_per_minute_mean: if minutes == 0 { 0.0 } else { committed as f64 / minutes as f64 },
            tx_per_minute_peak: tx_per_minute.iter().copied().max().unwrap_or(0),
            latency: LatencyStats::from_samples(latency_ms),
            throughput: (submitted > 0).then(|| committed as f64 / submitted as f64),
            rounds: 0,
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} tx/min", self.tx_per_minute_mean)?;
        match &self.latency {
            Some(l) => write!(f, ", latency {:.1} ± {:.1} ms", l.mean_ms, l.std_ms)?,
            None => write!(f, ", latency n/a")?,
        }
        match self.throughput {
            Some(t) => write!(f, ", throughput {t:.2}"),
            None => write!(f, ", throughput n/a"),
        }
    }
}

pub fn collect_metrics(result: &SimulationResult) -> MetricsReport {
    let mut m = MetricsReport::from_series(&result.latency_ms, &result.tx_per_minute, result.submitted);
    m.dropped = result.dropped;
    m.rejected = result.rejected;
    m.rounds = result.rounds.len();
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_per_minute() {
        let series = vec![6u32; 1440];
        let m = MetricsReport::from_series(&[], &series, 8640);
        assert_eq!(m.committed, 8640);
        assert_eq!(m.tx_per_minute_mean, 6.0);
        assert_eq!(m.throughput, Some(1.0));
    }

    #[test]
    fn hand_computed_latency() {
        let l = LatencyStats::from_samples(&[30.0, 40.0, 40.0, 38.0]).unwrap();
        assert_eq!(l.mean_ms, 37.0);
        // deviations −7, 3, 3, 1 → variance 68/4
        assert!((l.std_ms - 17f64.sqrt()).abs() < 1e-12);
        assert_eq!((l.min_ms, l.max_ms), (30.0, 40.0));
    }

    #[test]
    fn empty_run_is_not_applicable() {
        let m = MetricsReport::from_series(&[], &vec![0; 1440], 0);
        assert_eq!(m.latency, None);
        assert_eq!(m.throughput, None);
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["throughput"], "n/a");
        assert!(m.to_string().contains("throughput n/a"));
    }
}
