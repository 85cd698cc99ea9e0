//! Packetized transfer over a C-V2X link reduced to an analytic channel:
//! serialization at the link throughput, a per-packet overhead, a one-way
//! base latency and an independent per-packet loss ratio (UDP, no
//! retransmission).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-normal draw `exp(N(mu, sigma))` for the per-packet latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub mu: f64,
    pub sigma: f64,
}

impl Jitter {
    /// Parameters whose mean is `mean_ms`.
    pub fn with_mean(mean_ms: f64, sigma: f64) -> Result<Self> {
        if !(mean_ms > 0.0 && sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidChannel(format!(
                "log-normal jitter needs mean > 0 and sigma >= 0 (got {mean_ms}, {sigma})"
            )));
        }
        Ok(Self {
            mu: mean_ms.ln() - sigma * sigma / 2.0,
            sigma,
        })
    }

    pub fn mean(&self) -> f64 {
        (self.mu + self.sigma * self.sigma / 2.0).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub throughput_mbps: f64,
    pub packet_payload_bytes: u64,
    pub per_packet_overhead_ms: f64,
    pub base_latency_up_ms: f64,
    pub base_latency_down_ms: f64,
    pub loss_ratio: f64,
    pub jitter: Option<Jitter>,
    /// Add one packet's serialization to the single-packet downlink.
    pub strict_downlink: bool,
}

impl Default for ChannelParams {
    /// Stationary vehicle-to-edge link.
    fn default() -> Self {
        Self {
            throughput_mbps: 113.94,
            packet_payload_bytes: 4096,
            per_packet_overhead_ms: 0.0,
            base_latency_up_ms: 0.43,
            base_latency_down_ms: 0.43,
            loss_ratio: 1e-4,
            jitter: None,
            strict_downlink: false,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidChannel(m.to_string()));
        if !(self.throughput_mbps > 0.0 && self.throughput_mbps.is_finite()) {
            return bad("throughput must be positive");
        }
        if self.packet_payload_bytes == 0 {
            return bad("packet payload must be positive");
        }
        if !(self.per_packet_overhead_ms >= 0.0) {
            return bad("per-packet overhead must be non-negative");
        }
        if !(self.base_latency_up_ms >= 0.0 && self.base_latency_down_ms >= 0.0) {
            return bad("base latencies must be non-negative");
        }
        if !(0.0..1.0).contains(&self.loss_ratio) {
            return bad("loss ratio must lie in [0, 1)");
        }
        if let Some(j) = self.jitter {
            if !(j.sigma >= 0.0 && j.sigma.is_finite() && j.mu.is_finite()) {
                return bad("jitter needs finite mu and sigma >= 0");
            }
        }
        Ok(())
    }

    /// Time to clock `bytes` onto the link, in milliseconds.
    pub fn serialization_ms(&self, bytes: f64) -> f64 {
        bytes * 8.0 / (self.throughput_mbps * 1e3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferEstimate {
    pub packet_count: u64,
    pub serialization_ms: f64,
    pub overhead_ms: f64,
    pub base_ms: f64,
    pub total_ms: f64,
    pub delivery_probability: f64,
}

pub fn packetize(size_bytes: u64, payload_bytes: u64) -> u64 {
    assert!(payload_bytes > 0, "packet payload must be positive");
    size_bytes.div_ceil(payload_bytes)
}

fn packets_for(size_bytes: f64, payload: u64) -> u64 {
    packetize(size_bytes.max(0.0).ceil() as u64, payload)
}

fn transfer(size_bytes: f64, ch: &ChannelParams, base_ms: f64) -> TransferEstimate {
    let packet_count = packets_for(size_bytes, ch.packet_payload_bytes);
    let serialization_ms = ch.serialization_ms(size_bytes.max(0.0));
    let overhead_ms = packet_count as f64 * ch.per_packet_overhead_ms;
    TransferEstimate {
        packet_count,
        serialization_ms,
        overhead_ms,
        base_ms,
        total_ms: serialization_ms + overhead_ms + base_ms,
        delivery_probability: delivery_probability(packet_count, ch.loss_ratio),
    }
}

/// Vehicle-to-host transfer of one frame payload.
pub fn uplink_delay(size_bytes: f64, ch: &ChannelParams) -> TransferEstimate {
    transfer(size_bytes, ch, ch.base_latency_up_ms)
}

/// Return of detection results. A result that fits one packet costs the
/// base downlink latency; larger results fall back to the packetized
/// formula with the downlink base.
pub fn downlink_delay(result_bytes: f64, ch: &ChannelParams) -> f64 {
    if result_bytes <= ch.packet_payload_bytes as f64 {
        let ser = if ch.strict_downlink {
            ch.serialization_ms(result_bytes.max(0.0))
        } else {
            0.0
        };
        ch.base_latency_down_ms + ser
    } else {
        transfer(result_bytes, ch, ch.base_latency_down_ms).total_ms
    }
}

/// Probability that all `packet_count` packets arrive.
pub fn delivery_probability(packet_count: u64, loss_ratio: f64) -> f64 {
    if packet_count == 0 {
        return 1.0;
    }
    (packet_count as f64 * (-loss_ratio).ln_1p()).exp()
}

/// One observed frame transfer: payload size, measured end-to-end total and
/// the part of it known not to be uplink transfer (inference, codec, return
/// trip, base uplink latency).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub size_bytes: f64,
    pub measured_ms: f64,
    pub known_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationMode {
    /// Fit both inverse throughput and per-packet overhead.
    Free,
    /// Keep this throughput (Mbit/s) and fit only the overhead.
    PinnedThroughput(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub throughput_mbps: f64,
    pub per_packet_overhead_ms: f64,
    /// Observed minus fitted total, per observation.
    pub residuals_ms: Vec<f64>,
}

impl Calibration {
    pub fn apply(&self, base: &ChannelParams) -> ChannelParams {
        ChannelParams {
            throughput_mbps: self.throughput_mbps,
            per_packet_overhead_ms: self.per_packet_overhead_ms,
            ..*base
        }
    }
}

/// Least-squares fit of `measured − known = bits / throughput + packets · overhead`.
pub fn calibrate(
    observations: &[Observation],
    packet_payload_bytes: u64,
    mode: CalibrationMode,
) -> Result<Calibration> {
    let mut sizes: Vec<f64> = observations.iter().map(|o| o.size_bytes).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    if observations.len() < 2 || sizes.len() < 2 {
        return Err(Error::TooFewObservations(sizes.len().min(observations.len())));
    }
    if observations
        .iter()
        .any(|o| !(o.size_bytes >= 0.0 && o.measured_ms.is_finite() && o.known_ms.is_finite()))
    {
        return Err(Error::InvalidChannel("non-finite observation".into()));
    }

    let rows: Vec<(f64, f64, f64)> = observations
        .iter()
        .map(|o| {
            (
                o.size_bytes * 8.0,
                packets_for(o.size_bytes, packet_payload_bytes) as f64,
                o.measured_ms - o.known_ms,
            )
        })
        .collect();

    let (ms_per_bit, overhead, pinned) = match mode {
        CalibrationMode::Free => {
            // Columns are scaled to unit norm so the rank test is relative.
            let n1 = rows.iter().map(|r| r.0 * r.0).sum::<f64>().sqrt();
            let n2 = rows.iter().map(|r| r.1 * r.1).sum::<f64>().sqrt();
            if n1 == 0.0 || n2 == 0.0 {
                return Err(Error::RankDeficient);
            }
            let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &(x1, x2, y) in &rows {
                let (u, v) = (x1 / n1, x2 / n2);
                s11 += u * u;
                s12 += u * v;
                s22 += v * v;
                b1 += u * y;
                b2 += v * y;
            }
            let det = s11 * s22 - s12 * s12;
            if det.abs() < 1e-12 {
                return Err(Error::RankDeficient);
            }
            let a = (b1 * s22 - b2 * s12) / det;
            let o = (s11 * b2 - s12 * b1) / det;
            (a / n1, o / n2, None)
        }
        CalibrationMode::PinnedThroughput(mbps) => {
            if !(mbps > 0.0) {
                return Err(Error::InvalidChannel("pinned throughput must be positive".into()));
            }
            let a = 1.0 / (mbps * 1e3);
            let num: f64 = rows.iter().map(|&(x1, x2, y)| x2 * (y - a * x1)).sum();
            let den: f64 = rows.iter().map(|r| r.1 * r.1).sum();
            (a, num / den, Some(mbps))
        }
    };

    let overhead = if overhead.abs() < 1e-12 { 0.0 } else { overhead };
    if !(ms_per_bit > 0.0) || overhead < 0.0 {
        return Err(Error::NonPhysicalFit {
            throughput_mbps: 1.0 / (ms_per_bit * 1e3),
            overhead_ms: overhead,
        });
    }
    let residuals_ms = rows
        .iter()
        .map(|&(x1, x2, y)| y - (ms_per_bit * x1 + overhead * x2))
        .collect();
    Ok(Calibration {
        throughput_mbps: pinned.unwrap_or(1.0 / (ms_per_bit * 1e3)),
        per_packet_overhead_ms: overhead,
        residuals_ms,
    })
}

/// Seeded sampler of stochastic uplink delays. The per-packet latency of a
/// frame is drawn once from the channel's log-normal and applied to every
/// packet of that frame.
pub struct UplinkSampler {
    channel: ChannelParams,
    dist: LogNormal<f64>,
    rng: ChaCha8Rng,
}

impl UplinkSampler {
    pub fn new(channel: ChannelParams, seed: u64) -> Result<Self> {
        let jitter = channel.jitter.ok_or(Error::JitterNotConfigured)?;
        let dist = LogNormal::new(jitter.mu, jitter.sigma)
            .map_err(|e| Error::InvalidChannel(e.to_string()))?;
        Ok(Self {
            channel,
            dist,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn sample(&mut self, size_bytes: f64) -> f64 {
        let ch = &self.channel;
        let packets = packets_for(size_bytes, ch.packet_payload_bytes) as f64;
        let per_packet = self.dist.sample(&mut self.rng);
        ch.serialization_ms(size_bytes.max(0.0)) + packets * per_packet + ch.base_latency_up_ms
    }
}

/// `count` uplink delay samples for one payload size under a fixed seed.
pub fn sample_uplink(size_bytes: f64, ch: &ChannelParams, seed: u64, count: usize) -> Result<Vec<f64>> {
    let mut s = UplinkSampler::new(*ch, seed)?;
    Ok((0..count).map(|_| s.sample(size_bytes)).collect())
}
