//! Seeded synthetic building data from a first-order RC zone model.
//!
//! Zone temperature follows `T[k+1] = a·T[k] + b·T_out[k] + c·u[k] + σ·η[k]`
//! with `η ~ N(0, 1)`. Outdoor temperature is a daily sinusoid plus a
//! persistent AR(1) weather drift, and `u` is an HVAC schedule: a random
//! per-day level during weekday occupied hours, a fixed setback otherwise.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesTable;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

pub const OUTDOOR_TEMP: &str = "outdoor_temp";
pub const HVAC: &str = "hvac";
pub const DAY_OF_WEEK: &str = "day_of_week";
pub const TIME_OF_DAY: &str = "time_of_day";
pub const INDOOR_TEMP: &str = "indoor_temp";
pub const ENERGY: &str = "energy";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTarget {
    /// Predict zone temperature.
    #[default]
    Temperature,
    /// Predict per-interval energy use.
    Energy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Process noise standard deviation.
    pub noise: f64,
    pub t0: f64,
    pub outdoor_mean: f64,
    pub outdoor_amplitude: f64,
    /// Phase of the daily outdoor cycle, radians.
    pub outdoor_phase: f64,
    /// Innovation standard deviation of the outdoor weather drift.
    pub outdoor_noise: f64,
    /// AR(1) coefficient of the outdoor weather drift.
    pub outdoor_persistence: f64,
    pub occupied_start_hour: f64,
    pub occupied_end_hour: f64,
    /// HVAC level outside occupied hours.
    pub setback: f64,
    pub hvac_min: f64,
    pub hvac_max: f64,
    pub length: usize,
    pub period_secs: i64,
    pub start_epoch: i64,
    pub target: SynthTarget,
    pub energy_base: f64,
    pub energy_hvac: f64,
    pub energy_envelope: f64,
    pub energy_noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            a: 0.9,
            b: 0.04,
            c: 1.6,
            noise: 0.15,
            t0: 15.0,
            outdoor_mean: 10.0,
            outdoor_amplitude: 6.0,
            outdoor_phase: 2.0,
            outdoor_noise: 0.3,
            outdoor_persistence: 0.98,
            occupied_start_hour: 7.0,
            occupied_end_hour: 19.0,
            setback: 0.25,
            hvac_min: 0.4,
            hvac_max: 1.0,
            length: 2000,
            period_secs: 900,
            // 2019-01-01T00:00:00Z
            start_epoch: 1_546_300_800,
            target: SynthTarget::Temperature,
            energy_base: 20.0,
            energy_hvac: 40.0,
            energy_envelope: 0.5,
            energy_noise: 0.5,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.a.is_nan() || self.a.abs() >= 1.0 {
            return Err(Error::Config(format!(
                "unstable zone dynamics: |a| = {} must be < 1",
                self.a.abs()
            )));
        }
        if self.outdoor_persistence.is_nan() || self.outdoor_persistence.abs() >= 1.0 {
            return Err(Error::Config(format!(
                "outdoor_persistence must satisfy |φ| < 1, got {}",
                self.outdoor_persistence
            )));
        }
        if self.length == 0 {
            return Err(Error::Config("synthetic length must be >= 1".to_string()));
        }
        if self.period_secs <= 0 {
            return Err(Error::Config("period_secs must be > 0".to_string()));
        }
        if self.noise < 0.0 || self.outdoor_noise < 0.0 || self.energy_noise < 0.0 {
            return Err(Error::Config("noise levels must be >= 0".to_string()));
        }
        if self.hvac_min > self.hvac_max {
            return Err(Error::Config(
                "hvac_min must not exceed hvac_max".to_string(),
            ));
        }
        Ok(())
    }

    pub fn feature_names() -> Vec<String> {
        [OUTDOOR_TEMP, HVAC, DAY_OF_WEEK, TIME_OF_DAY]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    pub fn target_name(&self) -> &'static str {
        match self.target {
            SynthTarget::Temperature => INDOOR_TEMP,
            SynthTarget::Energy => ENERGY,
        }
    }
}

/// Monday = 0.
pub fn day_of_week(epoch_secs: i64) -> f64 {
    let day = epoch_secs.div_euclid(86_400);
    // 1970-01-01 was a Thursday
    ((day + 3).rem_euclid(7)) as f64
}

/// Hours since midnight UTC.
pub fn time_of_day(epoch_secs: i64) -> f64 {
    epoch_secs.rem_euclid(86_400) as f64 / 3600.0
}

/// Generates a synthetic building table. Features are outdoor temperature,
/// HVAC level, day of week and time of day; the target is zone temperature
/// or energy, per `params.target`.
pub fn synth_building(params: &SynthParams, seed: u64) -> Result<TimeSeriesTable> {
    params.validate()?;
    let n = params.length;
    let mut rng = stream(seed, Stream::Synth);

    let mut timestamps = Vec::with_capacity(n);
    let mut outdoor = Vec::with_capacity(n);
    let mut hvac = Vec::with_capacity(n);
    let mut dow = Vec::with_capacity(n);
    let mut tod = Vec::with_capacity(n);
    let mut indoor = Vec::with_capacity(n);
    let mut energy = Vec::with_capacity(n);

    let mut drift = 0.0;
    let mut day_level = 0.0;
    let mut current_day = i64::MIN;
    let mut temp = params.t0;
    for k in 0..n {
        let ts = params.start_epoch + k as i64 * params.period_secs;
        let day = ts.div_euclid(86_400);
        if day != current_day {
            current_day = day;
            day_level = rng.random_range(params.hvac_min..=params.hvac_max);
        }
        let hour = time_of_day(ts);
        let weekday = day_of_week(ts);
        let occupied =
            weekday < 5.0 && hour >= params.occupied_start_hour && hour < params.occupied_end_hour;
        let u = if occupied { day_level } else { params.setback };

        let cycle = libm::sin(2.0 * core::f64::consts::PI * hour / 24.0 - params.outdoor_phase);
        let t_out = params.outdoor_mean + params.outdoor_amplitude * cycle + drift;
        let drift_noise: f64 = rng.sample(StandardNormal);
        drift = params.outdoor_persistence * drift + params.outdoor_noise * drift_noise;

        timestamps.push(ts);
        outdoor.push(t_out);
        hvac.push(u);
        dow.push(weekday);
        tod.push(hour);
        indoor.push(temp);
        if params.target == SynthTarget::Energy {
            let e_noise: f64 = rng.sample(StandardNormal);
            energy.push(
                params.energy_base
                    + params.energy_hvac * u
                    + params.energy_envelope * libm::fabs(temp - t_out)
                    + params.energy_noise * e_noise,
            );
        }

        let eta: f64 = rng.sample(StandardNormal);
        temp = params.a * temp + params.b * t_out + params.c * u + params.noise * eta;
    }

    let mut names = SynthParams::feature_names();
    let mut columns = vec![outdoor, hvac, dow, tod];
    names.push(INDOOR_TEMP.to_string());
    columns.push(indoor);
    if params.target == SynthTarget::Energy {
        names.push(ENERGY.to_string());
        columns.push(energy);
    }
    TimeSeriesTable::new(
        timestamps,
        names,
        columns,
        SynthParams::feature_names(),
        vec![params.target_name().to_string()],
        params.period_secs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_decay_is_geometric() {
        let params = SynthParams {
            a: 0.8,
            b: 0.0,
            c: 0.0,
            noise: 0.0,
            t0: 3.0,
            length: 40,
            ..SynthParams::default()
        };
        let t = synth_building(&params, 1).unwrap();
        let temps = t.column(INDOOR_TEMP).unwrap();
        let mut expected = 3.0;
        for &v in temps {
            assert!((v - expected).abs() <= 1e-12 * expected.abs().max(1e-300));
            expected *= 0.8;
        }
    }

    #[test]
    fn same_seed_same_table() {
        let p = SynthParams {
            length: 500,
            ..SynthParams::default()
        };
        assert_eq!(
            synth_building(&p, 4).unwrap(),
            synth_building(&p, 4).unwrap()
        );
        assert_ne!(
            synth_building(&p, 4).unwrap(),
            synth_building(&p, 5).unwrap()
        );
    }

    #[test]
    fn unstable_dynamics_rejected() {
        let p = SynthParams {
            a: 1.0,
            ..SynthParams::default()
        };
        assert!(matches!(synth_building(&p, 0), Err(Error::Config(_))));
    }

    #[test]
    fn stays_within_steady_state_bound() {
        let p = SynthParams {
            noise: 0.0,
            length: 100_000,
            ..SynthParams::default()
        };
        let t = synth_building(&p, 9).unwrap();
        let max_out = t
            .column(OUTDOOR_TEMP)
            .unwrap()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let max_u = t
            .column(HVAC)
            .unwrap()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let bound =
            p.t0.abs()
                .max((p.b.abs() * max_out + p.c.abs() * max_u) / (1.0 - p.a.abs()));
        assert!(t
            .column(INDOOR_TEMP)
            .unwrap()
            .iter()
            .all(|v| v.abs() <= bound + 1e-9));
    }

    #[test]
    fn calendar_features() {
        // 2019-01-01 was a Tuesday
        assert_eq!(day_of_week(1_546_300_800), 1.0);
        assert_eq!(time_of_day(1_546_300_800 + 5400), 1.5);
    }

    #[test]
    fn energy_variant_has_energy_target() {
        let p = SynthParams {
            target: SynthTarget::Energy,
            length: 200,
            ..SynthParams::default()
        };
        let t = synth_building(&p, 2).unwrap();
        assert_eq!(t.target_names(), &[ENERGY]);
        assert_eq!(t.feature_names().len(), 4);
        assert!(t.column(ENERGY).unwrap().iter().all(|&e| e > 0.0));
    }
}
