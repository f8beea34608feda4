//! Position-dependent channel model.
//!
//! Every link that leaves the BS array is a *field-response* channel over the
//! transmit antenna positions `z ∈ [0, D]^M`:
//!
//! ```text
//! h(z) = ℓ̄ · a(θ, z) + ℓ̃ · h̃,      a(θ, z)_m = exp(j·θ̂·z_m),
//! θ̂ = −(2π/λ)·cos θ,
//! ```
//!
//! where `|ℓ̄|² = κ/(1+κ)·PL(d)` and `|ℓ̃|² = PL(d)/(1+κ)` split the
//! log-distance path loss `PL(d) [dB] = PL₀ − 10·α·log₁₀(d/d₀)` by the
//! Rician factor κ, the LoS propagation phase `e^{−j2πd/λ}` is folded into
//! the complex gain `ℓ̄`, and the scattered part `h̃ ~ CN(0, I)` does not
//! move with the antennas. Reader-side links use a fixed half-wavelength
//! N-element line array with steering `[a_R(φ)]_n = e^{−jπ·n·cos φ}`.
//!
//! The BS→reader matrix factors as `H = ℓ̄·a_R(φ)·a(θ, z)ᴴ + ℓ̃·H̃`, so for
//! any combiner `u` the compound `Hᴴu` is itself a field-response link with
//! gain `ℓ̄*·(a_Rᴴu)` — the reduction every receive-side power expression
//! in this crate relies on.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scenario::{DerivedConstants, Geometry, ScenarioConfig, stream};
use crate::{C64, CMat, CVec, RVec};

/// One CN(0, 1) draw: independent real/imag normals scaled by 1/√2.
pub fn cn01(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) / 2f64.sqrt()
}

/// BS-side steering vector `a(θ̂, z)_m = e^{j·θ̂·z_m}`.
pub fn steering_vector(theta_hat: f64, z: &RVec) -> CVec {
    CVec::from_iterator(z.len(), z.iter().map(|&zm| Complex64::from_polar(1.0, theta_hat * zm)))
}

/// Reader steering for a half-wavelength line array: `e^{−jπ·n·cos φ}`.
pub fn reader_steering(n_rx: usize, phi: f64) -> CVec {
    let psi = -std::f64::consts::PI * phi.cos();
    CVec::from_iterator(n_rx, (0..n_rx).map(|n| Complex64::from_polar(1.0, psi * n as f64)))
}

/// Linear path loss and Rician split for one link.
///
/// Returns `(los_gain, nlos_amp)` with `los_gain = √(κ/(1+κ)·PL)·e^{−j2πd/λ}`
/// and `nlos_amp = √(PL/(1+κ))`, so `|los_gain|² + nlos_amp² = PL(d)`.
pub fn link_gains(
    pl_ref_db: f64,
    d0_m: f64,
    alpha: f64,
    kappa_db: f64,
    d: f64,
    wavelength_m: f64,
) -> (C64, f64) {
    let pl_db = pl_ref_db - 10.0 * alpha * (d / d0_m).log10();
    let pl = 10f64.powf(pl_db / 10.0);
    let kappa = 10f64.powf(kappa_db / 10.0);
    let los_amp = (pl * kappa / (1.0 + kappa)).sqrt();
    let nlos_amp = (pl / (1.0 + kappa)).sqrt();
    let phase = -std::f64::consts::TAU * d / wavelength_m;
    (Complex64::from_polar(los_amp, phase), nlos_amp)
}

/// A z-dependent link out of the BS array.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldLink {
    /// Complex LoS gain (propagation phase folded in).
    pub los_gain: C64,
    /// Spatial frequency θ̂ of the LoS component.
    pub theta_hat: f64,
    /// Scattered component `ℓ̃·h̃`, fixed as the antennas move.
    pub nlos: CVec,
}

impl FieldLink {
    /// Evaluate the channel vector at antenna positions `z`.
    pub fn materialize(&self, z: &RVec) -> CVec {
        let mut h = steering_vector(self.theta_hat, z) * self.los_gain;
        h += &self.nlos;
        h
    }

    /// Number of BS antennas this link spans.
    pub fn dim(&self) -> usize {
        self.nlos.len()
    }
}

/// The BS→reader matrix in factored form: `H = g·a_R·a(θ̂, z)ᴴ + Ñ`.
#[derive(Clone, Debug, PartialEq)]
pub struct BsReaderLink {
    /// Complex LoS gain of the matrix factorization.
    pub los_gain: C64,
    /// BS-side spatial frequency.
    pub theta_hat: f64,
    /// Reader-side steering `a_R(φ)`, length N.
    pub reader_steer: CVec,
    /// Scattered part `ℓ̃·H̃`, N×M.
    pub nlos: CMat,
}

impl BsReaderLink {
    /// Evaluate the full N×M matrix at antenna positions `z`.
    pub fn materialize(&self, z: &RVec) -> CMat {
        let a_tx = steering_vector(self.theta_hat, z);
        &self.reader_steer * a_tx.adjoint() * self.los_gain + &self.nlos
    }

    /// Collapse `Hᴴu` into a single field-response link over `z`.
    pub fn effective(&self, u: &CVec) -> FieldLink {
        FieldLink {
            los_gain: self.los_gain.conj() * (self.reader_steer.dotc(u)),
            theta_hat: self.theta_hat,
            nlos: self.nlos.adjoint() * u,
        }
    }
}

/// All links of one Monte Carlo realization in decomposed (z-free) form.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDecomposition {
    /// BS→user links, length K.
    pub user: Vec<FieldLink>,
    /// BS→tag links, length T.
    pub tag: Vec<FieldLink>,
    /// BS→target links, length Q.
    pub target: Vec<FieldLink>,
    /// Tag→reader vectors (N), length T.
    pub tag_reader: Vec<CVec>,
    /// Target→reader vectors (N), length Q.
    pub target_reader: Vec<CVec>,
    /// Tag→user scalar channels, T×K.
    pub tag_user: DMatrix<C64>,
    /// Tag→target scalar channels, T×Q.
    pub tag_target: DMatrix<C64>,
    /// BS→reader matrix link.
    pub bs_reader: BsReaderLink,
}

/// Channel matrices evaluated at one antenna placement.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    /// BS→user vectors (M), length K.
    pub h_user: Vec<CVec>,
    /// BS→tag vectors (M), length T.
    pub h_tag: Vec<CVec>,
    /// BS→target vectors (M), length Q.
    pub h_target: Vec<CVec>,
    /// Tag→reader vectors (N), length T.
    pub g_tag: Vec<CVec>,
    /// Target→reader vectors (N), length Q.
    pub f_target: Vec<CVec>,
    /// Tag→user scalars, T×K.
    pub g_tag_user: DMatrix<C64>,
    /// Tag→target scalars, T×Q.
    pub g_tag_target: DMatrix<C64>,
    /// BS→reader matrix, N×M.
    pub h_br: CMat,
}

fn reader_side_vector(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    alpha: f64,
    kappa_db: f64,
    d: f64,
    phi: f64,
    rng: &mut ChaCha8Rng,
) -> CVec {
    let (los, nlos_amp) = link_gains(cfg.pl_ref_db, cfg.d0_m, alpha, kappa_db, d, dc.wavelength_m);
    let mut v = reader_steering(cfg.n_rx, phi) * los;
    for n in 0..cfg.n_rx {
        v[n] += nlos_amp * cn01(rng);
    }
    v
}

fn scalar_link(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    alpha: f64,
    kappa_db: f64,
    d: f64,
    rng: &mut ChaCha8Rng,
) -> C64 {
    let (los, nlos_amp) = link_gains(cfg.pl_ref_db, cfg.d0_m, alpha, kappa_db, d, dc.wavelength_m);
    los + nlos_amp * cn01(rng)
}

/// Draw every random component of one realization's channels.
///
/// All randomness comes from the `(seed, realization, "channels")` stream in
/// a fixed order, so the decomposition is reproducible and identical across
/// schemes evaluated on the same realization.
pub fn generate_decomposition(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    geom: &Geometry,
    realization: usize,
) -> ChannelDecomposition {
    let mut rng = stream(cfg.seed, realization, "channels");
    let m = cfg.m_tx;
    let lam = dc.wavelength_m;

    let bs_side = |alpha: f64, kappa_db: f64, d: f64, theta: f64, rng: &mut ChaCha8Rng| {
        let (los, nlos_amp) = link_gains(cfg.pl_ref_db, cfg.d0_m, alpha, kappa_db, d, lam);
        let theta_hat = -std::f64::consts::TAU / lam * theta.cos();
        let nlos = CVec::from_iterator(m, (0..m).map(|_| nlos_amp * cn01(rng)));
        FieldLink { los_gain: los, theta_hat, nlos }
    };

    let user: Vec<FieldLink> = (0..cfg.k_users)
        .map(|k| {
            bs_side(
                cfg.pathloss_exp.bs_user,
                cfg.rician_db.bs_user,
                geom.d_bs_user[k],
                geom.aod_bs_user[k],
                &mut rng,
            )
        })
        .collect();
    let tag: Vec<FieldLink> = (0..cfg.t_tags)
        .map(|t| {
            bs_side(
                cfg.pathloss_exp.bs_tag,
                cfg.rician_db.bs_tag,
                geom.d_bs_tag[t],
                geom.aod_bs_tag[t],
                &mut rng,
            )
        })
        .collect();
    let target: Vec<FieldLink> = (0..cfg.q_targets)
        .map(|q| {
            bs_side(
                cfg.pathloss_exp.bs_target,
                cfg.rician_db.bs_target,
                geom.d_bs_target[q],
                geom.aod_bs_target[q],
                &mut rng,
            )
        })
        .collect();

    let tag_reader: Vec<CVec> = (0..cfg.t_tags)
        .map(|t| {
            reader_side_vector(
                cfg,
                dc,
                cfg.pathloss_exp.reader_tag,
                cfg.rician_db.reader_tag,
                geom.d_reader_tag[t],
                geom.aoa_reader_tag[t],
                &mut rng,
            )
        })
        .collect();
    let target_reader: Vec<CVec> = (0..cfg.q_targets)
        .map(|q| {
            reader_side_vector(
                cfg,
                dc,
                cfg.pathloss_exp.reader_target,
                cfg.rician_db.reader_target,
                geom.d_reader_target[q],
                geom.aoa_reader_target[q],
                &mut rng,
            )
        })
        .collect();

    let mut tag_user = DMatrix::zeros(cfg.t_tags, cfg.k_users);
    for t in 0..cfg.t_tags {
        for k in 0..cfg.k_users {
            tag_user[(t, k)] = scalar_link(
                cfg,
                dc,
                cfg.pathloss_exp.user_tag,
                cfg.rician_db.user_tag,
                geom.d_tag_user[(t, k)],
                &mut rng,
            );
        }
    }
    let mut tag_target = DMatrix::zeros(cfg.t_tags, cfg.q_targets);
    for t in 0..cfg.t_tags {
        for q in 0..cfg.q_targets {
            tag_target[(t, q)] = scalar_link(
                cfg,
                dc,
                cfg.pathloss_exp.tag_target,
                cfg.rician_db.tag_target,
                geom.d_tag_target[(t, q)],
                &mut rng,
            );
        }
    }

    let (br_los, br_nlos_amp) = link_gains(
        cfg.pl_ref_db,
        cfg.d0_m,
        cfg.pathloss_exp.bs_reader,
        cfg.rician_db.bs_reader,
        geom.d_bs_reader,
        lam,
    );
    // Reader sees the BS under the angle of the reverse path.
    let phi_at_reader = angle_reverse(geom.aod_bs_reader);
    let bs_reader = BsReaderLink {
        los_gain: br_los,
        theta_hat: -std::f64::consts::TAU / lam * geom.aod_bs_reader.cos(),
        reader_steer: reader_steering(cfg.n_rx, phi_at_reader),
        nlos: CMat::from_fn(cfg.n_rx, m, |_, _| br_nlos_amp * cn01(&mut rng)),
    };

    ChannelDecomposition {
        user,
        tag,
        target,
        tag_reader,
        target_reader,
        tag_user,
        tag_target,
        bs_reader,
    }
}

fn angle_reverse(theta: f64) -> f64 {
    if theta > 0.0 { theta - std::f64::consts::PI } else { theta + std::f64::consts::PI }
}

impl ChannelDecomposition {
    /// Evaluate every channel at the antenna placement `z`.
    pub fn materialize(&self, z: &RVec) -> ChannelSet {
        ChannelSet {
            h_user: self.user.iter().map(|l| l.materialize(z)).collect(),
            h_tag: self.tag.iter().map(|l| l.materialize(z)).collect(),
            h_target: self.target.iter().map(|l| l.materialize(z)).collect(),
            g_tag: self.tag_reader.clone(),
            f_target: self.target_reader.clone(),
            g_tag_user: self.tag_user.clone(),
            g_tag_target: self.tag_target.clone(),
            h_br: self.bs_reader.materialize(z),
        }
    }

    /// Number of BS antennas.
    pub fn m_tx(&self) -> usize {
        self.bs_reader.nlos.ncols()
    }

    /// Number of reader antennas.
    pub fn n_rx(&self) -> usize {
        self.bs_reader.nlos.nrows()
    }
}
