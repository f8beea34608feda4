//! Experiment configuration, derived constants, and deterministic geometry.
//!
//! Every physical quantity the rest of the toolkit consumes is derived here:
//!
//! * noise power `σ² [dBm] = N₀ + 10·log₁₀(B) + N_f`, converted to watts;
//! * the harvested-power floor `P^EH = Φ⁻¹(ρ)` of the nonlinear
//!   energy-harvesting model `Φ`, whose closed-form inverse is
//!   `Φ⁻¹(ρ) = (b − (ρ + b/c)·c) / (ρ + b/c − a)` with `a, b, c` and `ρ`
//!   on a common milliwatt scale (internal computation is in watts);
//! * uniform positions inside the user/tag/target disks via the
//!   area-uniform map `r = R·√u`, with one counter-derived RNG stream per
//!   `(seed, realization, purpose)` so draws are order-independent across
//!   blocks and processes.

use nalgebra::DMatrix;
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result, dbm_to_watts};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A sampling disk: entities are drawn uniformly over its area.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Rician K-factor in dB per link class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RicianMap {
    pub bs_user: f64,
    pub bs_tag: f64,
    pub bs_target: f64,
    pub bs_reader: f64,
    pub reader_tag: f64,
    pub reader_target: f64,
    pub user_tag: f64,
    pub tag_target: f64,
}

impl Default for RicianMap {
    fn default() -> Self {
        RicianMap {
            bs_user: 10.0,
            bs_tag: 6.0,
            bs_target: 6.0,
            bs_reader: 6.0,
            reader_tag: 5.0,
            reader_target: 5.0,
            user_tag: 3.0,
            tag_target: 3.0,
        }
    }
}

/// Path-loss exponent per link class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathlossMap {
    pub bs_user: f64,
    pub bs_tag: f64,
    pub bs_target: f64,
    pub bs_reader: f64,
    pub reader_tag: f64,
    pub reader_target: f64,
    pub user_tag: f64,
    pub tag_target: f64,
}

impl Default for PathlossMap {
    fn default() -> Self {
        PathlossMap {
            bs_user: 2.2,
            bs_tag: 2.2,
            bs_target: 2.2,
            bs_reader: 2.4,
            reader_tag: 2.2,
            reader_target: 2.2,
            user_tag: 2.2,
            tag_target: 2.2,
        }
    }
}

/// Full experiment configuration. Unspecified keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of fluid transmit antennas at the BS (M).
    pub m_tx: usize,
    /// Number of reader receive antennas (N).
    pub n_rx: usize,
    /// Number of communication users (K).
    pub k_users: usize,
    /// Number of backscatter tags (T).
    pub t_tags: usize,
    /// Number of sensing targets (Q).
    pub q_targets: usize,
    /// Carrier frequency in Hz.
    pub carrier_hz: f64,
    /// Signal bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Receiver noise figure in dB.
    pub noise_figure_db: f64,
    /// Thermal noise power spectral density in dBm/Hz.
    pub noise_psd_dbm_hz: f64,
    /// Rician factors per link class, in dB.
    pub rician_db: RicianMap,
    /// Path-loss exponents per link class.
    pub pathloss_exp: PathlossMap,
    /// Path loss at the reference distance, in dB.
    pub pl_ref_db: f64,
    /// Reference distance in m.
    pub d0_m: f64,
    /// Linear SINR threshold per communication user.
    pub gamma_comm: f64,
    /// Linear SINR threshold per backscatter stream at the reader.
    pub gamma_bcoms: f64,
    /// Linear SINR threshold per sensing stream at the reader.
    pub gamma_sens: f64,
    /// Nonlinear EH model constant a (milliwatt scale).
    pub eh_a: f64,
    /// Nonlinear EH model constant b (milliwatt scale).
    pub eh_b: f64,
    /// Nonlinear EH model constant c (milliwatt scale).
    pub eh_c: f64,
    /// Required harvested DC power in dBm.
    pub eh_rho_dbm: f64,
    /// Target radar-cross-section variance υ².
    pub rcs_var: f64,
    /// Fluid-antenna aperture D in m.
    pub aperture_m: f64,
    /// Minimum inter-antenna spacing δ in m.
    pub min_spacing_m: f64,
    /// BS position in the deployment plane, m.
    pub bs_pos: [f64; 2],
    /// Reader position in the deployment plane, m.
    pub reader_pos: [f64; 2],
    /// User placement disk.
    pub user_disk: Disk,
    /// Tag placement disk.
    pub tag_disk: Disk,
    /// Target placement disk.
    pub target_disk: Disk,
    /// Master RNG seed.
    pub seed: u64,
    /// Monte Carlo realizations per sweep point.
    pub mc_realizations: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let carrier_hz = 3.5e9;
        let lambda = SPEED_OF_LIGHT / carrier_hz;
        ScenarioConfig {
            m_tx: 16,
            n_rx: 4,
            k_users: 3,
            t_tags: 2,
            q_targets: 2,
            carrier_hz,
            bandwidth_hz: 1.0e7,
            noise_figure_db: 10.0,
            noise_psd_dbm_hz: -174.0,
            rician_db: RicianMap::default(),
            pathloss_exp: PathlossMap::default(),
            pl_ref_db: -30.0,
            d0_m: 1.0,
            gamma_comm: 1.0,
            gamma_bcoms: 1.0,
            gamma_sens: 1.0,
            eh_a: 2.463,
            eh_b: 1.635,
            eh_c: 0.826,
            eh_rho_dbm: -25.0,
            rcs_var: 1.0,
            aperture_m: 8.0 * lambda,
            min_spacing_m: 0.5 * lambda,
            bs_pos: [0.0, 0.0],
            reader_pos: [12.0, 0.0],
            user_disk: Disk { center: [55.0, 0.0], radius: 5.0 },
            tag_disk: Disk { center: [8.0, -4.0], radius: 3.0 },
            target_disk: Disk { center: [8.0, 4.0], radius: 3.0 },
            seed: 1,
            mc_realizations: 50,
        }
    }
}

impl ScenarioConfig {
    /// Parse a TOML document; unspecified keys take the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let msg = e.to_string();
            if msg.contains("unknown field") {
                Error::UnknownField(msg)
            } else {
                Error::InvalidConfig(msg)
            }
        })?;
        Ok(cfg)
    }

    /// Validate every documented invariant.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m_tx < 1 || self.n_rx < 1 || self.k_users < 1 {
            return fail(format!(
                "m_tx, n_rx, k_users must be >= 1 (got {}, {}, {})",
                self.m_tx, self.n_rx, self.k_users
            ));
        }
        if self.carrier_hz <= 0.0 || self.bandwidth_hz <= 0.0 || self.d0_m <= 0.0 {
            return fail("carrier_hz, bandwidth_hz, d0_m must be positive".into());
        }
        if self.gamma_comm <= 0.0 || self.gamma_bcoms <= 0.0 || self.gamma_sens <= 0.0 {
            return fail("SINR thresholds must be strictly positive".into());
        }
        if self.eh_a <= 0.0 || self.eh_b <= 0.0 || self.eh_c <= 0.0 {
            return fail("EH constants a, b, c must be strictly positive".into());
        }
        if self.rcs_var <= 0.0 {
            return fail("rcs_var must be strictly positive".into());
        }
        for (name, disk) in [
            ("user_disk", &self.user_disk),
            ("tag_disk", &self.tag_disk),
            ("target_disk", &self.target_disk),
        ] {
            if disk.radius <= 0.0 {
                return fail(format!("{name} radius must be strictly positive"));
            }
        }
        if self.min_spacing_m <= 0.0 || self.aperture_m <= 0.0 {
            return fail("aperture_m and min_spacing_m must be strictly positive".into());
        }
        if (self.m_tx as f64 - 1.0) * self.min_spacing_m > self.aperture_m {
            return Err(Error::GeometryInfeasible {
                m: self.m_tx,
                min_spacing_m: self.min_spacing_m,
                aperture_m: self.aperture_m,
            });
        }
        Ok(())
    }

    /// Set a scalar field by its config-file name. Integer fields accept
    /// values within 1e-9 of an integer. Nested tables are not addressable.
    pub fn set_field(&mut self, name: &str, value: f64) -> Result<()> {
        let as_count = |v: f64| -> Result<usize> {
            let r = v.round();
            if (v - r).abs() > 1e-9 || r < 0.0 {
                Err(Error::InvalidConfig(format!("{name} needs a nonnegative integer, got {v}")))
            } else {
                Ok(r as usize)
            }
        };
        match name {
            "m_tx" => self.m_tx = as_count(value)?,
            "n_rx" => self.n_rx = as_count(value)?,
            "k_users" => self.k_users = as_count(value)?,
            "t_tags" => self.t_tags = as_count(value)?,
            "q_targets" => self.q_targets = as_count(value)?,
            "carrier_hz" => self.carrier_hz = value,
            "bandwidth_hz" => self.bandwidth_hz = value,
            "noise_figure_db" => self.noise_figure_db = value,
            "noise_psd_dbm_hz" => self.noise_psd_dbm_hz = value,
            "pl_ref_db" => self.pl_ref_db = value,
            "d0_m" => self.d0_m = value,
            "gamma_comm" => self.gamma_comm = value,
            "gamma_bcoms" => self.gamma_bcoms = value,
            "gamma_sens" => self.gamma_sens = value,
            "eh_a" => self.eh_a = value,
            "eh_b" => self.eh_b = value,
            "eh_c" => self.eh_c = value,
            "eh_rho_dbm" => self.eh_rho_dbm = value,
            "rcs_var" => self.rcs_var = value,
            "aperture_m" => self.aperture_m = value,
            "min_spacing_m" => self.min_spacing_m = value,
            "seed" => self.seed = as_count(value)? as u64,
            "mc_realizations" => self.mc_realizations = as_count(value)?,
            other => return Err(Error::UnknownField(other.to_string())),
        }
        Ok(())
    }
}

/// Quantities derived once per configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedConstants {
    /// Carrier wavelength λ in m.
    pub wavelength_m: f64,
    /// User receiver noise power σ_k² in watts.
    pub noise_user_w: f64,
    /// Reader receiver noise power σ_R² in watts.
    pub noise_reader_w: f64,
    /// Required EH input power Φ⁻¹(ρ) in watts.
    pub eh_input_floor_w: f64,
}

/// Evaluate wavelength, noise powers, and the EH input floor.
pub fn derive_constants(cfg: &ScenarioConfig) -> Result<DerivedConstants> {
    let noise_dbm =
        cfg.noise_psd_dbm_hz + 10.0 * cfg.bandwidth_hz.log10() + cfg.noise_figure_db;
    let noise_w = dbm_to_watts(noise_dbm);

    // Closed-form inverse of the saturating EH model on the milliwatt scale.
    let rho_mw = 10f64.powf(cfg.eh_rho_dbm / 10.0);
    let shifted = rho_mw + cfg.eh_b / cfg.eh_c;
    let floor_mw = (cfg.eh_b - shifted * cfg.eh_c) / (shifted - cfg.eh_a);
    if !floor_mw.is_finite() || floor_mw <= 0.0 {
        return Err(Error::EhFloorNonPositive {
            a: cfg.eh_a,
            b: cfg.eh_b,
            c: cfg.eh_c,
            rho_dbm: cfg.eh_rho_dbm,
        });
    }

    Ok(DerivedConstants {
        wavelength_m: SPEED_OF_LIGHT / cfg.carrier_hz,
        noise_user_w: noise_w,
        noise_reader_w: noise_w,
        eh_input_floor_w: floor_mw * 1e-3,
    })
}

/// Positions and cached link geometry for one Monte Carlo realization.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub users: Vec<[f64; 2]>,
    pub tags: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
    /// BS→user distances, length K.
    pub d_bs_user: Vec<f64>,
    /// BS→tag distances, length T.
    pub d_bs_tag: Vec<f64>,
    /// BS→target distances, length Q.
    pub d_bs_target: Vec<f64>,
    /// BS→reader distance.
    pub d_bs_reader: f64,
    /// Reader→tag distances, length T.
    pub d_reader_tag: Vec<f64>,
    /// Reader→target distances, length Q.
    pub d_reader_target: Vec<f64>,
    /// Tag→user distances, T×K.
    pub d_tag_user: DMatrix<f64>,
    /// Tag→target distances, T×Q.
    pub d_tag_target: DMatrix<f64>,
    /// Departure angle at the BS toward each user (from the array axis), rad.
    pub aod_bs_user: Vec<f64>,
    /// Departure angle at the BS toward each tag.
    pub aod_bs_tag: Vec<f64>,
    /// Departure angle at the BS toward each target.
    pub aod_bs_target: Vec<f64>,
    /// Departure angle at the BS toward the reader.
    pub aod_bs_reader: f64,
    /// Arrival angle at the reader from each tag (from the reader array axis).
    pub aoa_reader_tag: Vec<f64>,
    /// Arrival angle at the reader from each target.
    pub aoa_reader_target: Vec<f64>,
}

impl Geometry {
    /// Smallest modeled link distance — must stay above the path-loss
    /// reference distance for the log-distance model to be meaningful.
    pub fn min_distance(&self) -> f64 {
        let mut d = self.d_bs_reader;
        for v in [&self.d_bs_user, &self.d_bs_tag, &self.d_bs_target, &self.d_reader_tag, &self.d_reader_target] {
            for &x in v.iter() {
                d = d.min(x);
            }
        }
        for &x in self.d_tag_user.iter().chain(self.d_tag_target.iter()) {
            d = d.min(x);
        }
        d
    }
}

/// One independent, reproducible RNG stream per (seed, realization, purpose).
pub fn stream(seed: u64, realization: usize, purpose: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((realization as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn angle(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

fn sample_disk(disk: &Disk, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let u: f64 = rng.random();
    let r = disk.radius * u.sqrt();
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    [disk.center[0] + r * phi.cos(), disk.center[1] + r * phi.sin()]
}

/// Draw one realization's entity placement, uniform over each disk,
/// deterministic in (cfg.seed, realization_index).
pub fn sample_geometry(cfg: &ScenarioConfig, realization_index: usize) -> Geometry {
    let mut rng = stream(cfg.seed, realization_index, "geometry");
    let users: Vec<[f64; 2]> = (0..cfg.k_users).map(|_| sample_disk(&cfg.user_disk, &mut rng)).collect();
    let tags: Vec<[f64; 2]> = (0..cfg.t_tags).map(|_| sample_disk(&cfg.tag_disk, &mut rng)).collect();
    let targets: Vec<[f64; 2]> =
        (0..cfg.q_targets).map(|_| sample_disk(&cfg.target_disk, &mut rng)).collect();

    let bs = cfg.bs_pos;
    let rd = cfg.reader_pos;
    Geometry {
        d_bs_user: users.iter().map(|&p| dist(bs, p)).collect(),
        d_bs_tag: tags.iter().map(|&p| dist(bs, p)).collect(),
        d_bs_target: targets.iter().map(|&p| dist(bs, p)).collect(),
        d_bs_reader: dist(bs, rd),
        d_reader_tag: tags.iter().map(|&p| dist(rd, p)).collect(),
        d_reader_target: targets.iter().map(|&p| dist(rd, p)).collect(),
        d_tag_user: DMatrix::from_fn(cfg.t_tags, cfg.k_users, |t, k| dist(tags[t], users[k])),
        d_tag_target: DMatrix::from_fn(cfg.t_tags, cfg.q_targets, |t, q| dist(tags[t], targets[q])),
        aod_bs_user: users.iter().map(|&p| angle(bs, p)).collect(),
        aod_bs_tag: tags.iter().map(|&p| angle(bs, p)).collect(),
        aod_bs_target: targets.iter().map(|&p| angle(bs, p)).collect(),
        aod_bs_reader: angle(bs, rd),
        aoa_reader_tag: tags.iter().map(|&p| angle(rd, p)).collect(),
        aoa_reader_target: targets.iter().map(|&p| angle(rd, p)).collect(),
        users,
        tags,
        targets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_noise_matches_hand_evaluation() {
        let dc = derive_constants(&ScenarioConfig::default()).unwrap();
        // -174 + 70 + 10 = -94 dBm
        let expect_w = dbm_to_watts(-94.0);
        assert!(
            (dc.noise_user_w - expect_w).abs() / expect_w < 1e-12,
            "noise {} W vs expected {} W",
            dc.noise_user_w,
            expect_w
        );
        assert!((dc.noise_user_w - 3.981e-13).abs() < 1e-15, "about 3.981e-13 W");
        assert_eq!(dc.noise_user_w, dc.noise_reader_w);
    }

    #[test]
    fn unit_bandwidth_zero_figure_reduces_to_psd() {
        let cfg = ScenarioConfig {
            bandwidth_hz: 1.0,
            noise_figure_db: 0.0,
            ..ScenarioConfig::default()
        };
        let dc = derive_constants(&cfg).unwrap();
        let expect = dbm_to_watts(-174.0);
        assert!((dc.noise_user_w - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn eh_floor_matches_independent_closed_form() {
        let cfg = ScenarioConfig::default();
        let dc = derive_constants(&cfg).unwrap();
        // Independent algebraic simplification of the same inverse:
        // (b - (rho + b/c)c)/(rho + b/c - a) = -rho*c/(rho + b/c - a).
        let rho = 10f64.powf(-2.5);
        let independent_mw = -rho * cfg.eh_c / (rho + cfg.eh_b / cfg.eh_c - cfg.eh_a);
        assert!((dc.eh_input_floor_w - independent_mw * 1e-3).abs() < 1e-18);
        // Printed-precision check: about 5.44e-3 mW.
        let floor_mw = dc.eh_input_floor_w * 1e3;
        assert!(
            (floor_mw - 5.44e-3).abs() < 5e-6,
            "floor {floor_mw} mW should round to 5.44e-3 mW"
        );
    }

    #[test]
    fn eh_floor_rejects_saturation_exceeding_demand() {
        let cfg = ScenarioConfig { eh_rho_dbm: 10.0, ..ScenarioConfig::default() };
        match derive_constants(&cfg) {
            Err(Error::EhFloorNonPositive { .. }) => {}
            other => panic!("expected EhFloorNonPositive, got {other:?}"),
        }
    }

    #[test]
    fn zero_radius_disks_collapse_to_centers() {
        let cfg = ScenarioConfig {
            user_disk: Disk { center: [55.0, 0.0], radius: 0.0 },
            tag_disk: Disk { center: [8.0, -4.0], radius: 0.0 },
            target_disk: Disk { center: [8.0, 4.0], radius: 0.0 },
            ..ScenarioConfig::default()
        };
        let geom = sample_geometry(&cfg, 3);
        for p in &geom.users {
            assert_eq!(*p, [55.0, 0.0]);
        }
        for p in &geom.tags {
            assert_eq!(*p, [8.0, -4.0]);
        }
        for p in &geom.targets {
            assert_eq!(*p, [8.0, 4.0]);
        }
    }

    #[test]
    fn geometry_is_deterministic_per_seed_and_index() {
        let cfg = ScenarioConfig::default();
        let a = sample_geometry(&cfg, 7);
        let b = sample_geometry(&cfg, 7);
        assert_eq!(a, b, "same (seed, index) must reproduce identical geometry");
        let c = sample_geometry(&cfg, 8);
        assert_ne!(a.users, c.users, "different index must change draws");
    }

    #[test]
    fn disk_sampling_is_area_uniform() {
        let disk = Disk { center: [55.0, 0.0], radius: 5.0 };
        let mut rng = stream(42, 0, "disk-uniformity");
        let n = 10_000;
        let (mut sx, mut sy, mut max_r, mut inner) = (0.0, 0.0, 0.0f64, 0usize);
        for _ in 0..n {
            let p = sample_disk(&disk, &mut rng);
            sx += p[0];
            sy += p[1];
            let r = ((p[0] - 55.0f64).powi(2) + p[1].powi(2)).sqrt();
            max_r = max_r.max(r);
            if r <= disk.radius / 2f64.sqrt() {
                inner += 1;
            }
        }
        let mean = [sx / n as f64, sy / n as f64];
        assert!(
            ((mean[0] - 55.0).powi(2) + mean[1].powi(2)).sqrt() <= 0.01 * disk.radius,
            "empirical mean {mean:?} should sit within 1% of the center"
        );
        assert!(max_r <= disk.radius, "no sample may leave the disk");
        // Area uniformity: the r <= R/sqrt(2) disk holds half the area.
        let frac = inner as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "half-area fraction {frac} should be near 0.5");
    }

    #[test]
    fn default_geometry_clears_the_reference_distance() {
        let cfg = ScenarioConfig::default();
        for idx in 0..20 {
            let g = sample_geometry(&cfg, idx);
            assert!(g.min_distance() > cfg.d0_m, "all link distances must exceed d0");
        }
    }

    #[test]
    fn validate_rejects_overfull_aperture() {
        let mut cfg = ScenarioConfig::default();
        cfg.m_tx = 64;
        match cfg.validate() {
            Err(Error::GeometryInfeasible { .. }) => {}
            other => panic!("expected GeometryInfeasible, got {other:?}"),
        }
        // Exactly-full aperture is allowed.
        let lambda = SPEED_OF_LIGHT / cfg.carrier_hz;
        cfg.m_tx = 17;
        cfg.aperture_m = 16.0 * 0.5 * lambda;
        cfg.validate().unwrap();
    }

    #[test]
    fn validate_rejects_nonpositive_thresholds() {
        let cfg = ScenarioConfig { gamma_comm: 0.0, ..ScenarioConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn toml_defaults_and_overrides() {
        let cfg = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        let cfg = ScenarioConfig::from_toml_str(
            "m_tx = 8\ngamma_comm = 2.5\n[rician_db]\nbs_user = 12.0\n",
        )
        .unwrap();
        assert_eq!(cfg.m_tx, 8);
        assert_eq!(cfg.gamma_comm, 2.5);
        assert_eq!(cfg.rician_db.bs_user, 12.0);
        assert_eq!(cfg.rician_db.bs_tag, 6.0, "unspecified nested keys keep defaults");
    }

    #[test]
    fn toml_rejects_unknown_keys() {
        match ScenarioConfig::from_toml_str("m_tX = 8\n") {
            Err(Error::UnknownField(_)) => {}
            other => panic!("expected UnknownField, got {other:?}"),
        }
    }

    #[test]
    fn set_field_covers_scalars_and_rejects_unknown() {
        let mut cfg = ScenarioConfig::default();
        cfg.set_field("m_tx", 10.0).unwrap();
        assert_eq!(cfg.m_tx, 10);
        cfg.set_field("gamma_comm", 2.0).unwrap();
        assert_eq!(cfg.gamma_comm, 2.0);
        cfg.set_field("eh_rho_dbm", -20.0).unwrap();
        assert_eq!(cfg.eh_rho_dbm, -20.0);
        assert!(matches!(cfg.set_field("m_tx", 9.5), Err(Error::InvalidConfig(_))));
        assert!(matches!(cfg.set_field("bogus", 1.0), Err(Error::UnknownField(_))));
    }

    #[test]
    fn derive_constants_is_pure() {
        let cfg = ScenarioConfig::default();
        let a = derive_constants(&cfg).unwrap();
        let b = derive_constants(&cfg).unwrap();
        assert_eq!(a, b);
    }
}
