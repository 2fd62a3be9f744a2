//! Geometry, path loss, block fading and FDMA uplink rates.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the network square, in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Uniform draw over `[-half_width, half_width]^2`.
    pub fn random<R: Rng + ?Sized>(half_width: f64, rng: &mut R) -> Self {
        Position {
            x: rng.random_range(-half_width..=half_width),
            y: rng.random_range(-half_width..=half_width),
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

/// Uplink parameters shared by every server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    /// Total bandwidth per server, Hz.
    pub bandwidth_hz: f64,
    /// Number of orthogonal sub-band channels per server.
    pub channels: usize,
    pub tx_power_w: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_density: f64,
    pub path_loss_exponent: f64,
    /// Distances below this are clamped, km.
    pub min_distance_km: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            bandwidth_hz: 20e6,
            channels: 10,
            tx_power_w: dbm_to_watts(23.0),
            noise_density: dbm_to_watts(-174.0),
            path_loss_exponent: 3.8,
            min_distance_km: 0.01,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("network.bandwidth_hz", self.bandwidth_hz),
            ("network.tx_power_dbm", self.tx_power_w),
            ("network.noise_dbm_per_hz", self.noise_density),
            ("network.min_distance_km", self.min_distance_km),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        if self.channels == 0 {
            return Err(Error::config("network.channels", "must be >= 1"));
        }
        if !(self.path_loss_exponent >= 2.0) {
            return Err(Error::config("network.path_loss_exponent", "must be >= 2"));
        }
        Ok(())
    }
}

/// Circularly symmetric complex Gaussian draw with unit variance.
pub fn draw_fading<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `h = g / d^(gamma/2)` with the distance clamped below at `min_distance`.
pub fn channel_coefficient(
    server: Position,
    user: Position,
    gamma: f64,
    fading: Complex64,
    min_distance: f64,
) -> Complex64 {
    let d = server.distance(&user).max(min_distance);
    fading / d.powf(gamma / 2.0)
}

/// Shannon rate of one sub-band, bits/s.
pub fn achievable_rate(
    h: Complex64,
    power_w: f64,
    bandwidth_hz: f64,
    channels: usize,
    noise_density: f64,
) -> f64 {
    let sub_band = bandwidth_hz / channels as f64;
    let snr = h.norm_sqr() * power_w / (sub_band * noise_density);
    sub_band * snr.ln_1p() / std::f64::consts::LN_2
}

/// `M x N` rates of one user towards every server/channel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    channels: usize,
    data: Vec<f64>,
}

impl RateMatrix {
    pub fn servers(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, server: usize, channel: usize) -> f64 {
        self.data[server * self.channels + channel]
    }

    pub fn row(&self, server: usize) -> &[f64] {
        &self.data[server * self.channels..(server + 1) * self.channels]
    }
}

/// Draws one independent fading coefficient per (server, channel) and
/// converts it to a rate. The matrix is fixed for the whole upload.
pub fn rate_matrix<R: Rng + ?Sized>(
    user: Position,
    servers: &[Position],
    params: &RadioParams,
    rng: &mut R,
) -> RateMatrix {
    let mut data = Vec::with_capacity(servers.len() * params.channels);
    for &server in servers {
        for _ in 0..params.channels {
            let h = channel_coefficient(
                server,
                user,
                params.path_loss_exponent,
                draw_fading(rng),
                params.min_distance_km,
            );
            data.push(achievable_rate(
                h,
                params.tx_power_w,
                params.bandwidth_hz,
                params.channels,
                params.noise_density,
            ));
        }
    }
    RateMatrix {
        channels: params.channels,
        data,
    }
}

/// Highest-rate channel among the free ones; lowest index wins ties.
pub fn best_free_channel(busy: &[bool], rates: &[f64]) -> Option<usize> {
    debug_assert_eq!(busy.len(), rates.len());
    let mut best: Option<usize> = None;
    for (n, (&b, &r)) in busy.iter().zip(rates).enumerate() {
        if b {
            continue;
        }
        if best.is_none_or(|i| r > rates[i]) {
            best = Some(n);
        }
    }
    best
}

/// The `l` servers closest to `user`, ascending by distance, ties by id.
pub fn nearest_servers(
    user: Position,
    servers: &[Position],
    l: usize,
    min_distance: f64,
) -> Result<Vec<usize>> {
    if l == 0 || l > servers.len() {
        return Err(Error::invalid(format!(
            "candidate count must be in [1, {}], got {l}",
            servers.len()
        )));
    }
    let mut ids: Vec<(f64, usize)> = servers
        .iter()
        .enumerate()
        .map(|(m, s)| (s.distance(&user).max(min_distance), m))
        .collect();
    ids.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ids.into_iter().take(l).map(|(_, m)| m).collect())
}

/// Per-server channel busy flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOccupancy {
    busy: Vec<Vec<bool>>,
}

impl ChannelOccupancy {
    pub fn new(servers: usize, channels: usize) -> Self {
        ChannelOccupancy {
            busy: vec![vec![false; channels]; servers],
        }
    }

    pub fn flags(&self, server: usize) -> &[bool] {
        &self.busy[server]
    }

    pub fn is_busy(&self, server: usize, channel: usize) -> bool {
        self.busy[server][channel]
    }

    pub fn has_free(&self, server: usize) -> bool {
        self.busy[server].iter().any(|b| !b)
    }

    pub fn occupy(&mut self, server: usize, channel: usize) -> Result<()> {
        let slot = &mut self.busy[server][channel];
        if *slot {
            return Err(Error::Integrity(format!(
                "channel {channel} of server {server} is already in use"
            )));
        }
        *slot = true;
        Ok(())
    }

    pub fn release(&mut self, server: usize, channel: usize) {
        self.busy[server][channel] = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ONE: Complex64 = Complex64::new(1.0, 0.0);

    #[test]
    fn coefficient_examples() {
        let o = Position::new(0.0, 0.0);
        let h = channel_coefficient(o, Position::new(1.0, 0.0), 3.8, ONE, 0.01);
        assert!((h - ONE).norm() < 1e-15);
        let h = channel_coefficient(o, Position::new(0.0, 4.0), 2.0, ONE, 0.01);
        assert!((h.re - 0.25).abs() < 1e-15);
        // coincident positions use the clamp
        let h = channel_coefficient(o, o, 2.0, ONE, 0.01);
        assert!((h.re - 100.0).abs() < 1e-9);
    }

    #[test]
    fn fading_has_unit_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| draw_fading(&mut rng).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean |g|^2 = {mean}");
    }

    #[test]
    fn rate_examples() {
        // SNR term 3 on a 2 MHz sub-band: 2e6 * log2(4)
        let noise: f64 = 1e-12;
        let h = Complex64::new((3.0 * 2e6 * noise).sqrt(), 0.0);
        let r = achievable_rate(h, 1.0, 20e6, 10, noise);
        assert!((r - 4e6).abs() < 1e-6);
        assert_eq!(
            achievable_rate(Complex64::new(0.0, 0.0), 1.0, 20e6, 10, noise),
            0.0
        );
    }

    #[test]
    fn rate_matches_hand_calculation_at_one_km() {
        // P = 23 dBm = 0.19952623149688797 W, N0 = -174 dBm/Hz,
        // SNR = 0.199526 / (2e6 * 3.981072e-21) = 2.50593617e13,
        // r = 2e6 * log2(1 + SNR) = 89_020_829.7999 bits/s (computed independently).
        let p = RadioParams::default();
        let h = channel_coefficient(
            Position::new(0.0, 0.0),
            Position::new(1.0, 0.0),
            p.path_loss_exponent,
            ONE,
            p.min_distance_km,
        );
        let r = achievable_rate(h, p.tx_power_w, p.bandwidth_hz, p.channels, p.noise_density);
        assert!((r - HAND_RATE_1KM).abs() / HAND_RATE_1KM < 1e-9, "rate {r}");
    }

    const HAND_RATE_1KM: f64 = 89_020_829.799_913_84;

    #[test]
    fn rate_matrix_shapes_and_determinism() {
        let p = RadioParams {
            channels: 1,
            ..RadioParams::default()
        };
        let server = [Position::new(1.0, 1.0)];
        let user = Position::new(0.0, 0.0);
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let m = rate_matrix(user, &server, &p, &mut a);
        assert_eq!((m.servers(), m.channels()), (1, 1));
        let g = draw_fading(&mut b);
        let h = channel_coefficient(server[0], user, p.path_loss_exponent, g, p.min_distance_km);
        assert_eq!(
            m.get(0, 0),
            achievable_rate(h, p.tx_power_w, p.bandwidth_hz, 1, p.noise_density)
        );

        let p = RadioParams::default();
        let servers: Vec<Position> = (0..15).map(|_| Position::random(5.0, &mut a)).collect();
        let m1 = rate_matrix(user, &servers, &p, &mut ChaCha8Rng::seed_from_u64(9));
        let m2 = rate_matrix(user, &servers, &p, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(m1, m2);
        for _ in 0..1000 {
            let u = Position::random(5.0, &mut a);
            let m = rate_matrix(u, &servers, &p, &mut a);
            assert!(m.data.iter().all(|r| r.is_finite() && *r >= 0.0));
        }
    }

    #[test]
    fn best_free_channel_examples() {
        assert_eq!(
            best_free_channel(&[false, true, false], &[1.0, 5.0, 3.0]),
            Some(2)
        );
        assert_eq!(best_free_channel(&[false; 3], &[1.0, 5.0, 3.0]), Some(1));
        assert_eq!(best_free_channel(&[true; 3], &[1.0, 5.0, 3.0]), None);
        assert_eq!(best_free_channel(&[false; 3], &[2.0, 2.0, 1.0]), Some(0));
    }

    #[test]
    fn nearest_examples() {
        let servers = [
            Position::new(3.0, 0.0),
            Position::new(1.0, 0.0),
            Position::new(0.0, 2.0),
        ];
        let user = Position::new(0.0, 0.0);
        assert_eq!(
            nearest_servers(user, &servers, 2, 0.01).unwrap(),
            vec![1, 2]
        );
        assert_eq!(
            nearest_servers(user, &servers, 3, 0.01).unwrap(),
            vec![1, 2, 0]
        );
        assert!(nearest_servers(user, &servers, 4, 0.01).is_err());
        assert_eq!(
            nearest_servers(Position::new(3.0, 0.0), &servers, 1, 0.01).unwrap(),
            vec![0]
        );
        // equal distances tie-break on id
        let twins = [Position::new(1.0, 0.0), Position::new(-1.0, 0.0)];
        assert_eq!(nearest_servers(user, &twins, 2, 0.01).unwrap(), vec![0, 1]);
    }

    #[test]
    fn occupancy_detects_double_booking() {
        let mut occ = ChannelOccupancy::new(2, 2);
        occ.occupy(1, 0).unwrap();
        assert!(occ.is_busy(1, 0));
        assert!(occ.occupy(1, 0).is_err());
        occ.occupy(1, 1).unwrap();
        assert!(!occ.has_free(1));
        occ.release(1, 0);
        assert!(occ.has_free(1));
    }
}
