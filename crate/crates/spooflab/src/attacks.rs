//! GPS measurement injections: the shared injection type and the six naive
//! spoofing baselines.
//!
//! All attacks considered here perturb only the north components of the
//! reported GPS fix — position, velocity, or both — and never touch the
//! reported accuracies. Injections are additive on top of the authentic
//! (noisy) measurement.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::GpsSample;

/// Additive perturbation of one GPS report.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Injection {
    /// Metres added to the reported north position.
    pub d_pos_n: f64,
    /// Metres/second added to the reported north velocity.
    pub d_vel_n: f64,
}

impl Injection {
    pub const ZERO: Injection = Injection { d_pos_n: 0.0, d_vel_n: 0.0 };

    pub fn is_zero(&self) -> bool {
        self.d_pos_n == 0.0 && self.d_vel_n == 0.0
    }
}

/// Apply an injection to a GPS report (accuracies untouched).
pub fn apply_injection(gps: &mut GpsSample, inj: Injection) {
    gps.pos[0] += inj.d_pos_n;
    gps.vel[0] += inj.d_vel_n;
}

/// The six hand-crafted baselines: {position, velocity} x {constant offset,
/// random offset, boiling-frog ramp}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveKind {
    /// Position constant offset: +1 m north from the first attacked tick.
    Pco,
    /// Position random offset: fresh U(-1, 1) m each GPS tick.
    Pro,
    /// Position boiling frog: linear ramp reaching 1 m after 60 s.
    Pbf,
    /// Velocity constant offset: +1 m/s north.
    Vco,
    /// Velocity random offset: fresh U(-1, 1) m/s each GPS tick.
    Vro,
    /// Velocity boiling frog: ramp reaching 1 m/s after 60 s.
    Vbf,
}

impl NaiveKind {
    pub const ALL: [NaiveKind; 6] =
        [NaiveKind::Pco, NaiveKind::Pro, NaiveKind::Pbf, NaiveKind::Vco, NaiveKind::Vro, NaiveKind::Vbf];

    /// True for the three position-channel variants.
    pub fn targets_position(&self) -> bool {
        matches!(self, NaiveKind::Pco | NaiveKind::Pro | NaiveKind::Pbf)
    }
}

impl std::fmt::Display for NaiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NaiveKind::Pco => "pco",
            NaiveKind::Pro => "pro",
            NaiveKind::Pbf => "pbf",
            NaiveKind::Vco => "vco",
            NaiveKind::Vro => "vro",
            NaiveKind::Vbf => "vbf",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for NaiveKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pco" => Ok(NaiveKind::Pco),
            "pro" => Ok(NaiveKind::Pro),
            "pbf" => Ok(NaiveKind::Pbf),
            "vco" => Ok(NaiveKind::Vco),
            "vro" => Ok(NaiveKind::Vro),
            "vbf" => Ok(NaiveKind::Vbf),
            other => Err(crate::error::Error::Config(format!("unknown naive attack '{other}'"))),
        }
    }
}

/// Ramp duration of the boiling-frog variants, seconds.
pub const BOILING_FROG_RAMP_S: f64 = 60.0;
/// Full-scale magnitude of every naive attack (m or m/s).
pub const NAIVE_MAGNITUDE: f64 = 1.0;

/// Injection for a naive attack at `t_rel` seconds after the attack began.
/// Random variants draw a fresh offset from `rng` on every call (one call
/// per GPS tick).
pub fn naive_injection(kind: NaiveKind, t_rel: f64, rng: &mut ChaCha8Rng) -> Injection {
    let magnitude = match kind {
        NaiveKind::Pco | NaiveKind::Vco => NAIVE_MAGNITUDE,
        NaiveKind::Pro | NaiveKind::Vro => rng.gen_range(-NAIVE_MAGNITUDE..=NAIVE_MAGNITUDE),
        NaiveKind::Pbf | NaiveKind::Vbf => {
            NAIVE_MAGNITUDE * (t_rel / BOILING_FROG_RAMP_S).clamp(0.0, 1.0)
        }
    };
    if kind.targets_position() {
        Injection { d_pos_n: magnitude, d_vel_n: 0.0 }
    } else {
        Injection { d_pos_n: 0.0, d_vel_n: magnitude }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn constant_offsets_are_full_scale_immediately() {
        let mut r = rng();
        assert_eq!(naive_injection(NaiveKind::Pco, 0.0, &mut r), Injection { d_pos_n: 1.0, d_vel_n: 0.0 });
        assert_eq!(naive_injection(NaiveKind::Vco, 123.0, &mut r), Injection { d_pos_n: 0.0, d_vel_n: 1.0 });
    }

    #[test]
    fn boiling_frog_ramps_linearly_and_saturates() {
        let mut r = rng();
        assert_eq!(naive_injection(NaiveKind::Pbf, 0.0, &mut r).d_pos_n, 0.0);
        assert_relative_eq!(naive_injection(NaiveKind::Pbf, 30.0, &mut r).d_pos_n, 0.5);
        assert_relative_eq!(naive_injection(NaiveKind::Pbf, 60.0, &mut r).d_pos_n, 1.0);
        assert_relative_eq!(naive_injection(NaiveKind::Vbf, 600.0, &mut r).d_vel_n, 1.0);
    }

    #[test]
    fn random_offsets_are_bounded_fresh_and_seeded() {
        let mut r = rng();
        let draws: Vec<f64> = (0..200).map(|_| naive_injection(NaiveKind::Pro, 0.0, &mut r).d_pos_n).collect();
        assert!(draws.iter().all(|d| (-1.0..=1.0).contains(d)));
        assert!(draws.windows(2).any(|w| w[0] != w[1]), "fresh draw per tick");
        let mut r2 = rng();
        let again: Vec<f64> = (0..200).map(|_| naive_injection(NaiveKind::Pro, 0.0, &mut r2).d_pos_n).collect();
        assert_eq!(draws, again, "same seed, same sequence");
    }

    #[test]
    fn injection_touches_only_its_channel_and_never_accuracies() {
        let base = GpsSample {
            pos: [1.0, 2.0, 3.0],
            vel: [0.1, 0.2, 0.3],
            h_acc: 0.55,
            v_acc: 0.7,
            s_acc: 0.55,
        };
        let mut gps = base.clone();
        apply_injection(&mut gps, Injection { d_pos_n: 0.4, d_vel_n: 0.0 });
        assert_relative_eq!(gps.pos[0], 1.4);
        assert_eq!(gps.pos[1..], base.pos[1..]);
        assert_eq!(gps.vel, base.vel);
        assert_eq!((gps.h_acc, gps.v_acc, gps.s_acc), (base.h_acc, base.v_acc, base.s_acc));

        let mut gps = base.clone();
        apply_injection(&mut gps, Injection { d_pos_n: 0.0, d_vel_n: -0.2 });
        assert_relative_eq!(gps.vel[0], -0.1);
        assert_eq!(gps.pos, base.pos);
    }

    #[test]
    fn kind_round_trips_through_display_and_parse() {
        for kind in NaiveKind::ALL {
            let s = kind.to_string();
            let back: NaiveKind = s.parse().unwrap();
            assert_eq!(kind, back);
        }
        assert!("xyz".parse::<NaiveKind>().is_err());
    }
}
