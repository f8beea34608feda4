//! Tag power-reflection coefficients and their feasibility update.
//!
//! Each tag splits its incident power: a share `β_t` is reflected into the
//! backscatter link, the rest feeds the energy harvester. With the transmit
//! covariances, reader combiners, and antenna positions held fixed, every
//! QoS constraint is *affine* in `β = (β_1, …, β_T)`:
//!
//! ```text
//! comm k:  Γ·(b₀ₖ + Σ_t β_t·|g_{t,k}|²·p_t) ≤ h_kᴴW_k h_k
//! bcom t:  Γ·I_t(β) ≤ β_t·|g_tᴴu_t|²·p_t
//! sens q:  Γ·I_q(β) ≤ υ²·|f_qᴴv_q|²·(p_q + Σ_t β_t·|g_{t,q}|²·p_t)
//! eh  t:   (1 − β_t)·p_t ≥ φ
//! ```
//!
//! where `p_t = h_tᴴX h_t` is tag `t`'s incident power and the reader-side
//! interference terms collapse through the cascade identity
//! `‖aᴴ(r·hᴴ)X^{1/2}‖² = |rᴴa|²·hᴴXh`. The block update therefore reduces
//! to a linear feasibility problem over the box `[0,1]^T`. Rather than any
//! boundary point, the update returns the Chebyshev center — the deepest
//! interior point — so the subsequent blocks inherit slack in every row
//! instead of starting pinned against a constraint.

use crate::channel::ChannelSet;
use crate::conic::solve_lp_feasibility;
use crate::metrics::quad_form;
use crate::rxdesign::RxCombiners;
use crate::scenario::{DerivedConstants, ScenarioConfig};
use crate::txdesign::{RowSet, TxDesign};
use crate::{CVec, RVec, Result};

/// Per-tag power reflection coefficients `β_t ∈ [0, 1]`: the reflected share
/// feeds backscatter modulation, the absorbed share `1 − β_t` feeds the
/// energy harvester.
#[derive(Clone, Debug, PartialEq)]
pub struct Reflections {
    pub beta: Vec<f64>,
}

impl Reflections {
    /// A uniform starting point.
    pub fn uniform(t_tags: usize, beta: f64) -> Self {
        Reflections { beta: vec![beta; t_tags] }
    }
}

/// Every selected QoS constraint as an affine row `aᵀβ ≤ b`, normalized so
/// at `slack = 0` the residual `aᵀβ − b` equals `Γ·interference − signal`
/// for SINR rows and `floor − harvested` for harvesting rows. Box rows
/// `0 ≤ β_t ≤ 1` are always included.
///
/// A positive `slack` relaxes each SINR row to `SINR ≥ Γ/(1 + slack)` and
/// the harvest row to `(1−β)·p ≥ (1 − slack)·floor` by inflating the
/// signal terms — a *signal-relative* allowance, matching how the
/// ground-truth check measures margins. (A coefficient-scale allowance
/// would be useless here: the sensing rows are near-cancellations whose
/// coefficients dwarf the attained signal.)
pub fn reflection_rows(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    set: &ChannelSet,
    tx: &TxDesign,
    comb: &RxCombiners,
    rows: RowSet,
    slack: f64,
) -> Vec<(RVec, f64)> {
    let gain = 1.0 + slack;
    let t_tags = set.h_tag.len();
    let q_targets = set.h_target.len();
    let rcs = cfg.rcs_var;
    let x = tx.x_total();

    let p_tag: Vec<f64> = set.h_tag.iter().map(|h| quad_form(&x, h)).collect();
    let p_target: Vec<f64> = set.h_target.iter().map(|h| quad_form(&x, h)).collect();
    // Leak power of the direct BS→reader path through a combiner `a`.
    let leak = |a: &CVec| -> f64 {
        let y = set.h_br.adjoint() * a;
        quad_form(&x, &y)
    };

    let mut out: Vec<(RVec, f64)> = Vec::new();

    if rows.comm {
        for k in 0..set.h_user.len() {
            let h = &set.h_user[k];
            let signal = quad_form(&tx.w_cov[k], h);
            let mut base = quad_form(&tx.r_s, h) + dc.noise_user_w;
            for (i, w) in tx.w_cov.iter().enumerate() {
                if i != k {
                    base += quad_form(w, h);
                }
            }
            let mut a = RVec::zeros(t_tags);
            for t in 0..t_tags {
                a[t] = cfg.gamma_comm * set.g_tag_user[(t, k)].norm_sqr() * p_tag[t];
            }
            out.push((a, gain * signal - cfg.gamma_comm * base));
        }
    }

    if rows.bcoms {
        for t in 0..t_tags {
            let u = &comb.u_tag[t];
            let gw: Vec<f64> = set.g_tag.iter().map(|g| g.dotc(u).norm_sqr()).collect();
            let fw: Vec<f64> = set.f_target.iter().map(|f| f.dotc(u).norm_sqr()).collect();
            let mut a = RVec::zeros(t_tags);
            for i in 0..t_tags {
                // Tag i's reflection reaches this stream directly and again
                // through every target echo (double bounce).
                let bounce: f64 =
                    (0..q_targets).map(|q| fw[q] * set.g_tag_target[(i, q)].norm_sqr()).sum();
                a[i] = cfg.gamma_bcoms * (rcs * bounce) * p_tag[i];
                if i == t {
                    a[i] -= gain * gw[t] * p_tag[t];
                } else {
                    a[i] += cfg.gamma_bcoms * gw[i] * p_tag[i];
                }
            }
            let floor: f64 = rcs * (0..q_targets).map(|q| fw[q] * p_target[q]).sum::<f64>()
                + leak(u)
                + dc.noise_reader_w * u.norm_squared();
            out.push((a, -cfg.gamma_bcoms * floor));
        }
    }

    if rows.sens {
        for q in 0..q_targets {
            let v = &comb.v_target[q];
            let gw: Vec<f64> = set.g_tag.iter().map(|g| g.dotc(v).norm_sqr()).collect();
            let fw: Vec<f64> = set.f_target.iter().map(|f| f.dotc(v).norm_sqr()).collect();
            let mut a = RVec::zeros(t_tags);
            for t in 0..t_tags {
                let cross: f64 = (0..q_targets)
                    .filter(|&j| j != q)
                    .map(|j| fw[j] * set.g_tag_target[(t, j)].norm_sqr())
                    .sum();
                a[t] = (cfg.gamma_sens * (gw[t] + rcs * cross)
                    - gain * rcs * fw[q] * set.g_tag_target[(t, q)].norm_sqr())
                    * p_tag[t];
            }
            let other_echo: f64 =
                (0..q_targets).filter(|&j| j != q).map(|j| fw[j] * p_target[j]).sum();
            let floor = rcs * other_echo + leak(v) + dc.noise_reader_w * v.norm_squared();
            out.push((a, gain * rcs * fw[q] * p_target[q] - cfg.gamma_sens * floor));
        }
    }

    if rows.eh {
        for t in 0..t_tags {
            let mut a = RVec::zeros(t_tags);
            a[t] = p_tag[t];
            out.push((a, p_tag[t] - (1.0 - slack) * dc.eh_input_floor_w));
        }
    }

    for t in 0..t_tags {
        let mut lo = RVec::zeros(t_tags);
        lo[t] = -1.0;
        out.push((lo, 0.0));
        let mut hi = RVec::zeros(t_tags);
        hi[t] = 1.0;
        out.push((hi, 1.0));
    }

    out
}

/// Deepest feasible reflection vector under the current design, or `None`
/// when no `β ∈ [0,1]^T` satisfies the selected rows (the caller keeps the
/// previous coefficients in that case).
pub fn optimize_reflections(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    set: &ChannelSet,
    tx: &TxDesign,
    comb: &RxCombiners,
    rows: RowSet,
) -> Result<Option<Reflections>> {
    let t_tags = set.h_tag.len();
    if t_tags == 0 {
        return Ok(Some(Reflections { beta: vec![] }));
    }
    // A tight incoming design sits exactly on its rows, so the exact system
    // can have empty interior; the ground-truth slack keeps the incumbent
    // inside while any returned center still clears the feasibility check.
    let lp_rows = reflection_rows(cfg, dc, set, tx, comb, rows, crate::metrics::FEAS_TOL_REL);
    Ok(solve_lp_feasibility(t_tags, &lp_rows)?.map(|(center, _radius)| Reflections {
        beta: center.iter().map(|b| b.clamp(0.0, 1.0)).collect(),
    }))
}
