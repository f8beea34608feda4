//! Ground-truth QoS evaluation: SINRs, harvested power, feasibility.
//!
//! Everything here is computed directly from materialized channels and the
//! current design state, with no surrogate or relaxation involved, so these
//! functions serve as the single source of truth that the optimization
//! blocks are verified against.
//!
//! Receive-side powers use the cascade collapse: for a reader combiner `a`
//! and a rank-one cascade `M = r·h_txᴴ` (reader-side vector `r`, BS-side
//! vector `h_tx`), the received power of the transmit covariance `X` is
//! `‖aᴴM·X^{1/2}‖² = |rᴴa|²·h_txᴴX h_tx`.

use crate::channel::ChannelSet;
use crate::reflection::Reflections;
use crate::rxdesign::RxCombiners;
use crate::scenario::{DerivedConstants, ScenarioConfig};
use crate::txdesign::TxDesign;
use crate::{CMat, CVec};

/// Relative feasibility slack: a constraint counts as met when its metric is
/// within this relative distance of the threshold.
pub const FEAS_TOL_REL: f64 = 1e-6;

/// Real quadratic form `Re(hᴴ X h)` of a Hermitian `X`.
pub fn quad_form(x: &CMat, h: &CVec) -> f64 {
    let mut acc = 0.0;
    for j in 0..x.ncols() {
        let mut col = num_complex::Complex64::new(0.0, 0.0);
        for i in 0..x.nrows() {
            col += h[i].conj() * x[(i, j)];
        }
        acc += (col * h[j]).re;
    }
    acc
}

/// Which reader stream a SINR refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReaderStream {
    /// Backscatter stream of tag `t`.
    Tag(usize),
    /// Sensing stream of target `q`.
    Target(usize),
}

/// Per-tag incident powers `h_tᴴ X h_t` and per-target analogues, shared by
/// several metrics.
struct IncidentPowers {
    tag: Vec<f64>,
    target: Vec<f64>,
}

fn incident_powers(set: &ChannelSet, x: &CMat) -> IncidentPowers {
    IncidentPowers {
        tag: set.h_tag.iter().map(|h| quad_form(x, h)).collect(),
        target: set.h_target.iter().map(|h| quad_form(x, h)).collect(),
    }
}

/// Downlink SINR of user `k`.
pub fn comm_sinr(
    set: &ChannelSet,
    tx: &TxDesign,
    refl: &Reflections,
    noise_user_w: f64,
    k: usize,
) -> f64 {
    let x = tx.x_total();
    let inc = incident_powers(set, &x);
    comm_sinr_inner(set, tx, refl, &inc, noise_user_w, k)
}

fn comm_sinr_inner(
    set: &ChannelSet,
    tx: &TxDesign,
    refl: &Reflections,
    inc: &IncidentPowers,
    noise_user_w: f64,
    k: usize,
) -> f64 {
    let h = &set.h_user[k];
    let signal = quad_form(&tx.w_cov[k], h);
    let mut interf = quad_form(&tx.r_s, h) + noise_user_w;
    for (i, w) in tx.w_cov.iter().enumerate() {
        if i != k {
            interf += quad_form(w, h);
        }
    }
    for t in 0..set.h_tag.len() {
        interf += refl.beta[t] * set.g_tag_user[(t, k)].norm_sqr() * inc.tag[t];
    }
    signal / interf
}

/// Reader-side SINR of one backscatter or sensing stream.
pub fn reader_sinr(
    set: &ChannelSet,
    tx: &TxDesign,
    refl: &Reflections,
    comb: &RxCombiners,
    rcs_var: f64,
    noise_reader_w: f64,
    stream: ReaderStream,
) -> f64 {
    let x = tx.x_total();
    let inc = incident_powers(set, &x);
    reader_sinr_inner(set, refl, comb, &x, &inc, rcs_var, noise_reader_w, stream)
}

/// Power of target `q`'s echo (direct bounce plus tag→target double bounce)
/// through combiner weight `|f_qᴴa|²`, without the RCS factor.
fn echo_power(set: &ChannelSet, refl: &Reflections, inc: &IncidentPowers, q: usize, fa2: f64) -> f64 {
    let mut p = inc.target[q];
    for t in 0..set.h_tag.len() {
        p += refl.beta[t] * set.g_tag_target[(t, q)].norm_sqr() * inc.tag[t];
    }
    fa2 * p
}

#[allow(clippy::too_many_arguments)]
fn reader_sinr_inner(
    set: &ChannelSet,
    refl: &Reflections,
    comb: &RxCombiners,
    x: &CMat,
    inc: &IncidentPowers,
    rcs_var: f64,
    noise_reader_w: f64,
    stream: ReaderStream,
) -> f64 {
    let a = match stream {
        ReaderStream::Tag(t) => &comb.u_tag[t],
        ReaderStream::Target(q) => &comb.v_target[q],
    };
    let tag_pow: Vec<f64> = (0..set.h_tag.len())
        .map(|i| refl.beta[i] * set.g_tag[i].dotc(a).norm_sqr() * inc.tag[i])
        .collect();
    let echo_pow: Vec<f64> = (0..set.h_target.len())
        .map(|j| rcs_var * echo_power(set, refl, inc, j, set.f_target[j].dotc(a).norm_sqr()))
        .collect();
    let leak = set.h_br.adjoint() * a;
    let floor = quad_form(x, &leak) + noise_reader_w * a.norm_squared();

    let (signal, mut interf) = match stream {
        ReaderStream::Tag(t) => {
            let s = tag_pow[t];
            let i: f64 = tag_pow.iter().enumerate().filter(|&(j, _)| j != t).map(|(_, &p)| p).sum::<f64>()
                + echo_pow.iter().sum::<f64>();
            (s, i)
        }
        ReaderStream::Target(q) => {
            let s = echo_pow[q];
            let i: f64 = tag_pow.iter().sum::<f64>()
                + echo_pow.iter().enumerate().filter(|&(j, _)| j != q).map(|(_, &p)| p).sum::<f64>();
            (s, i)
        }
    };
    interf += floor;
    signal / interf
}

/// Power delivered to tag `t`'s harvester: the absorbed share of the
/// incident beam, `(1 − β_t)·h_tᴴ X h_t`.
pub fn eh_input_power(set: &ChannelSet, tx: &TxDesign, refl: &Reflections, t: usize) -> f64 {
    let x = tx.x_total();
    (1.0 - refl.beta[t]) * quad_form(&x, &set.h_tag[t])
}

/// Every QoS metric of one design, with relative margins.
#[derive(Clone, Debug)]
pub struct QosReport {
    pub comm_sinr: Vec<f64>,
    pub bcom_sinr: Vec<f64>,
    pub sens_sinr: Vec<f64>,
    /// Harvester input power per tag, watts.
    pub eh_input_w: Vec<f64>,
    /// Smallest relative margin `metric/threshold − 1` over all constraints.
    pub worst_margin: f64,
    /// True when every margin clears `−FEAS_TOL_REL`.
    pub feasible: bool,
}

impl QosReport {
    /// Sum of sensing rates `Σ_q log₂(1 + SINR_q)` in bit/s/Hz.
    pub fn sens_sum_rate(&self) -> f64 {
        self.sens_sinr.iter().map(|&s| (1.0 + s).log2()).sum()
    }
}

/// Evaluate every constraint of the design `(tx, comb, refl)` on `set`.
pub fn check_all_qos(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    set: &ChannelSet,
    tx: &TxDesign,
    comb: &RxCombiners,
    refl: &Reflections,
) -> QosReport {
    let x = tx.x_total();
    let inc = incident_powers(set, &x);

    let comm: Vec<f64> = (0..set.h_user.len())
        .map(|k| comm_sinr_inner(set, tx, refl, &inc, dc.noise_user_w, k))
        .collect();
    let bcom: Vec<f64> = (0..set.h_tag.len())
        .map(|t| {
            reader_sinr_inner(
                set,
                refl,
                comb,
                &x,
                &inc,
                cfg.rcs_var,
                dc.noise_reader_w,
                ReaderStream::Tag(t),
            )
        })
        .collect();
    let sens: Vec<f64> = (0..set.h_target.len())
        .map(|q| {
            reader_sinr_inner(
                set,
                refl,
                comb,
                &x,
                &inc,
                cfg.rcs_var,
                dc.noise_reader_w,
                ReaderStream::Target(q),
            )
        })
        .collect();
    let eh: Vec<f64> =
        (0..set.h_tag.len()).map(|t| (1.0 - refl.beta[t]) * inc.tag[t]).collect();

    let mut worst = f64::INFINITY;
    for &s in &comm {
        worst = worst.min(s / cfg.gamma_comm - 1.0);
    }
    for &s in &bcom {
        worst = worst.min(s / cfg.gamma_bcoms - 1.0);
    }
    for &s in &sens {
        worst = worst.min(s / cfg.gamma_sens - 1.0);
    }
    for &p in &eh {
        worst = worst.min(p / dc.eh_input_floor_w - 1.0);
    }

    QosReport {
        comm_sinr: comm,
        bcom_sinr: bcom,
        sens_sinr: sens,
        eh_input_w: eh,
        worst_margin: worst,
        feasible: worst >= -FEAS_TOL_REL,
    }
}
