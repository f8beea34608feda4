//! Transmit covariance design: minimum-power SDP with QoS rows.
//!
//! With combiners, reflection coefficients, and antenna positions held
//! fixed, every QoS constraint is linear in the transmit covariances
//! `{W_k}` and `R_s`, so the minimum-power design
//!
//! ```text
//! min Σ_k tr(W_k) + tr(R_s)   s.t.   SINR/EH rows,  W_k ⪰ 0,  R_s ⪰ 0
//! ```
//!
//! is a semidefinite program. Rows are assembled in `≤` trace form from the
//! materialized channels; the signs follow from clearing each SINR
//! denominator, e.g. the downlink row for user `k` reads
//! `Γ·(interference powers) − (signal power) ≤ −Γ·σ²`.
//!
//! **Subspace reduction.** Every row coefficient is a sum of outer products
//! of the K+T+Q BS-side channel vectors and the T+Q reader-leak vectors
//! `H_BRᴴu`, so all constraints live on a subspace of dimension at most
//! `K + 2(T+Q)`, independent of the antenna count M. Writing `W = V·Ŵ·Vᴴ`
//! for an orthonormal basis `V` of that span preserves every constraint
//! value and the trace, and projecting any feasible `W` onto the span never
//! increases the trace — the reduction is exact, not approximate. Solves
//! shrink from M×M to S×S blocks, which is what makes per-iteration SDPs
//! affordable when M grows.
//!
//! Rank-one beamformers are recovered only after the outer loop converges:
//! dominant eigenvectors when every `W_k` is numerically rank one, else
//! Gaussian randomization where each candidate set is rescaled by the
//! smallest common power factor that restores every row.

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelSet, cn01};
use crate::conic::{self, BlockSpec, SdpProblem, SdpRow, SolveStatus, SolveStatusKind};
use crate::metrics::{self, quad_form};
use crate::reflection::Reflections;
use crate::rxdesign::RxCombiners;
use crate::scenario::{DerivedConstants, ScenarioConfig};
use crate::{C64, CMat, CVec, Error, Result};

/// Which QoS row families a scheme enforces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowSet {
    pub comm: bool,
    pub bcoms: bool,
    pub sens: bool,
    pub eh: bool,
}

impl RowSet {
    /// Every constraint family.
    pub fn all() -> Self {
        RowSet { comm: true, bcoms: true, sens: true, eh: true }
    }

    /// Communication + backscatter + harvesting, no sensing.
    pub fn comm_bcom() -> Self {
        RowSet { comm: true, bcoms: true, sens: false, eh: true }
    }

    /// Sensing only.
    pub fn sens_only() -> Self {
        RowSet { comm: false, bcoms: false, sens: true, eh: false }
    }
}

/// Variable structure of the transmit design.
#[derive(Clone, Debug)]
pub enum TxStructure {
    /// One free covariance per user, optionally plus a sensing covariance.
    Covariances { with_rs: bool },
    /// Fixed unit beam directions (power-only per user) plus a free sensing
    /// covariance.
    FixedDirections { dirs: Vec<CVec> },
    /// A sensing covariance alone; user streams are absent.
    SensingOnly,
}

/// Zero-forcing beam directions: normalized columns of `H(HᴴH)⁻¹`, which
/// null all inter-user terms `h_kᴴ w_i, i ≠ k`.
pub fn zf_directions(set: &ChannelSet) -> Vec<CVec> {
    let k = set.h_user.len();
    let m = set.h_user[0].len();
    let mut h = CMat::zeros(m, k);
    for (j, hk) in set.h_user.iter().enumerate() {
        h.set_column(j, hk);
    }
    let gram = h.adjoint() * &h;
    let pinv_cols = match gram.clone().cholesky() {
        Some(chol) => &h * chol.inverse(),
        // Degenerate user geometry: fall back to matched filtering.
        None => h.clone(),
    };
    (0..k)
        .map(|j| {
            let col = pinv_cols.column(j).clone_owned();
            let n = col.norm();
            col / Complex64::new(n, 0.0)
        })
        .collect()
}

/// Orthonormal basis of the span of a vector family (modified Gram-Schmidt).
pub struct Subspace {
    /// None: reduction not worthwhile, operate in the full space.
    basis: Option<CMat>,
}

impl Subspace {
    /// Build from spanning vectors; falls back to the identity when the
    /// span is not strictly smaller than the ambient dimension.
    pub fn build(spanners: &[CVec], ambient: usize) -> Self {
        let mut basis: Vec<CVec> = Vec::new();
        for v in spanners {
            let scale = v.norm();
            if scale < 1e-300 {
                continue;
            }
            let mut w = v.clone();
            for b in &basis {
                let c = b.dotc(&w);
                w -= b * c;
            }
            // Re-orthogonalize once; classic fix for MGS cancellation.
            for b in &basis {
                let c = b.dotc(&w);
                w -= b * c;
            }
            let n = w.norm();
            if n > 1e-10 * scale {
                basis.push(w / Complex64::new(n, 0.0));
            }
        }
        if basis.len() >= ambient {
            return Subspace { basis: None };
        }
        let mut v = CMat::zeros(ambient, basis.len());
        for (j, b) in basis.iter().enumerate() {
            v.set_column(j, b);
        }
        Subspace { basis: Some(v) }
    }

    /// Dimension the covariance blocks are solved in.
    pub fn dim(&self, ambient: usize) -> usize {
        self.basis.as_ref().map_or(ambient, |v| v.ncols())
    }

    /// Coordinates of `x` in the basis (`x` itself when not reducing).
    pub fn reduce(&self, x: &CVec) -> CVec {
        match &self.basis {
            Some(v) => v.adjoint() * x,
            None => x.clone(),
        }
    }

    /// Lift a reduced covariance back to the ambient space.
    pub fn lift(&self, w: &CMat) -> CMat {
        match &self.basis {
            Some(v) => v * w * v.adjoint(),
            None => w.clone(),
        }
    }
}

/// Scalar couplings between reader combiners and the fixed reader-side
/// vectors, plus reduced BS-side vectors — everything row assembly needs.
struct Couplings {
    /// Reduced BS→user vectors.
    hu: Vec<CVec>,
    /// Reduced BS→tag vectors.
    ht: Vec<CVec>,
    /// Reduced BS→target vectors.
    hq: Vec<CVec>,
    /// Reduced reader-leak vectors `H_BRᴴu_t` per tag combiner.
    bu: Vec<CVec>,
    /// Reduced reader-leak vectors `H_BRᴴv_q` per sensing combiner.
    bv: Vec<CVec>,
    /// `|g_iᴴu_t|²` indexed `[t][i]`.
    gu: Vec<Vec<f64>>,
    /// `|f_qᴴu_t|²` indexed `[t][q]`.
    fu: Vec<Vec<f64>>,
    /// `|g_tᴴv_q|²` indexed `[q][t]`.
    gv: Vec<Vec<f64>>,
    /// `|f_jᴴv_q|²` indexed `[q][j]`.
    fv: Vec<Vec<f64>>,
    /// `‖u_t‖²`.
    u_norm2: Vec<f64>,
    /// `‖v_q‖²`.
    v_norm2: Vec<f64>,
}

fn couplings(set: &ChannelSet, comb: &RxCombiners, sub: &Subspace) -> Couplings {
    let t_tags = set.h_tag.len();
    let q_targets = set.h_target.len();
    Couplings {
        hu: set.h_user.iter().map(|h| sub.reduce(h)).collect(),
        ht: set.h_tag.iter().map(|h| sub.reduce(h)).collect(),
        hq: set.h_target.iter().map(|h| sub.reduce(h)).collect(),
        bu: comb.u_tag.iter().map(|u| sub.reduce(&(set.h_br.adjoint() * u))).collect(),
        bv: comb.v_target.iter().map(|v| sub.reduce(&(set.h_br.adjoint() * v))).collect(),
        gu: comb
            .u_tag
            .iter()
            .map(|u| (0..t_tags).map(|i| set.g_tag[i].dotc(u).norm_sqr()).collect())
            .collect(),
        fu: comb
            .u_tag
            .iter()
            .map(|u| (0..q_targets).map(|q| set.f_target[q].dotc(u).norm_sqr()).collect())
            .collect(),
        gv: comb
            .v_target
            .iter()
            .map(|v| (0..t_tags).map(|t| set.g_tag[t].dotc(v).norm_sqr()).collect())
            .collect(),
        fv: comb
            .v_target
            .iter()
            .map(|v| (0..q_targets).map(|j| set.f_target[j].dotc(v).norm_sqr()).collect())
            .collect(),
        u_norm2: comb.u_tag.iter().map(|u| u.norm_squared()).collect(),
        v_norm2: comb.v_target.iter().map(|v| v.norm_squared()).collect(),
    }
}

fn outer(v: &CVec) -> CMat {
    v * v.adjoint()
}

/// Interference matrix of the backscatter row for tag `t` (everything the
/// reader hears through combiner `u_t` except tag `t` itself).
fn bcom_interference(cp: &Couplings, refl: &Reflections, rcs: f64, t: usize, dim: usize) -> CMat {
    let mut b = CMat::zeros(dim, dim);
    for i in 0..cp.ht.len() {
        if i != t {
            b += outer(&cp.ht[i]) * Complex64::new(refl.beta[i] * cp.gu[t][i], 0.0);
        }
    }
    for q in 0..cp.hq.len() {
        b += outer(&cp.hq[q]) * Complex64::new(rcs * cp.fu[t][q], 0.0);
    }
    b
}

/// The `Σ_q Σ_i β_i|g_{i,q}|²|f_qᴴa|²·ĥ_iĥ_iᴴ` double-bounce matrix, with
/// an optional excluded target (the sensing stream's own echo).
fn double_bounce(
    set: &ChannelSet,
    cp: &Couplings,
    refl: &Reflections,
    rcs: f64,
    f_weights: &[f64],
    skip_q: Option<usize>,
    dim: usize,
) -> CMat {
    let mut b = CMat::zeros(dim, dim);
    for q in 0..cp.hq.len() {
        if skip_q == Some(q) {
            continue;
        }
        for i in 0..cp.ht.len() {
            let w = rcs * refl.beta[i] * set.g_tag_target[(i, q)].norm_sqr() * f_weights[q];
            b += outer(&cp.ht[i]) * Complex64::new(w, 0.0);
        }
    }
    b
}

/// Assemble the minimum-power transmit SDP for the given row families and
/// variable structure. Also returns the subspace the blocks live in.
pub fn build_tx_sdp(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    set: &ChannelSet,
    comb: &RxCombiners,
    refl: &Reflections,
    rows: RowSet,
    structure: &TxStructure,
) -> (SdpProblem, Subspace) {
    let m = set.h_br.ncols();

    // Span of every row coefficient (ZF directions included so the fixed
    // beams stay representable after reduction).
    let mut spanners: Vec<CVec> = Vec::new();
    spanners.extend(set.h_user.iter().cloned());
    spanners.extend(set.h_tag.iter().cloned());
    spanners.extend(set.h_target.iter().cloned());
    for u in &comb.u_tag {
        spanners.push(set.h_br.adjoint() * u);
    }
    for v in &comb.v_target {
        spanners.push(set.h_br.adjoint() * v);
    }
    if let TxStructure::FixedDirections { dirs } = structure {
        spanners.extend(dirs.iter().cloned());
    }
    let sub = Subspace::build(&spanners, m);
    let prob = assemble(cfg, dc, set, comb, refl, rows, structure, &sub);
    (prob, sub)
}

/// Row and block assembly against an explicit subspace.
fn assemble(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    set: &ChannelSet,
    comb: &RxCombiners,
    refl: &Reflections,
    rows: RowSet,
    structure: &TxStructure,
    sub: &Subspace,
) -> SdpProblem {
    let m = set.h_br.ncols();
    let k_users = set.h_user.len();
    let t_tags = set.h_tag.len();
    let q_targets = set.h_target.len();
    let rcs = cfg.rcs_var;
    let s_dim = sub.dim(m);
    let cp = couplings(set, comb, sub);

    // Variable blocks in scheme order: user blocks first, sensing last.
    let (blocks, n_user_blocks, with_rs) = match structure {
        TxStructure::Covariances { with_rs } => {
            let mut b: Vec<BlockSpec> =
                (0..k_users).map(|_| BlockSpec::Covariance { dim: s_dim }).collect();
            if *with_rs {
                b.push(BlockSpec::Covariance { dim: s_dim });
            }
            (b, k_users, *with_rs)
        }
        TxStructure::FixedDirections { dirs } => {
            let mut b: Vec<BlockSpec> = dirs
                .iter()
                .map(|d| BlockSpec::Direction { dir: sub.reduce(d) })
                .collect();
            b.push(BlockSpec::Covariance { dim: s_dim });
            (b, dirs.len(), true)
        }
        TxStructure::SensingOnly => (vec![BlockSpec::Covariance { dim: s_dim }], 0, true),
    };
    let nb = blocks.len();
    let objective: Vec<Option<CMat>> = vec![Some(CMat::identity(s_dim, s_dim)); nb];

    let mut ineq: Vec<SdpRow> = Vec::new();
    let all_blocks = |c: CMat| -> Vec<Option<CMat>> { vec![Some(c); nb] };

    if rows.comm {
        for k in 0..k_users {
            let h_hat = outer(&cp.hu[k]);
            let mut h_tilde = CMat::zeros(s_dim, s_dim);
            for t in 0..t_tags {
                let w = refl.beta[t] * set.g_tag_user[(t, k)].norm_sqr();
                h_tilde += outer(&cp.ht[t]) * Complex64::new(w, 0.0);
            }
            let gamma = cfg.gamma_comm;
            let interf_coeff = (&h_hat + &h_tilde) * Complex64::new(gamma, 0.0);
            let mut coeffs: Vec<Option<CMat>> = Vec::with_capacity(nb);
            for i in 0..n_user_blocks {
                if i == k {
                    coeffs.push(Some(&h_tilde * Complex64::new(gamma, 0.0) - &h_hat));
                } else {
                    coeffs.push(Some(interf_coeff.clone()));
                }
            }
            if with_rs {
                coeffs.push(Some(interf_coeff.clone()));
            }
            ineq.push(SdpRow { coeffs, rhs: -gamma * dc.noise_user_w });
        }
    }

    if rows.bcoms {
        for t in 0..t_tags {
            let g_hat = outer(&cp.ht[t]) * Complex64::new(cp.gu[t][t], 0.0);
            let mut b_mat = bcom_interference(&cp, refl, rcs, t, s_dim);
            b_mat += double_bounce(set, &cp, refl, rcs, &cp.fu[t], None, s_dim);
            b_mat += outer(&cp.bu[t]);
            let gamma = cfg.gamma_bcoms;
            let coeff = &b_mat * Complex64::new(gamma, 0.0) - &g_hat * Complex64::new(refl.beta[t], 0.0);
            ineq.push(SdpRow {
                coeffs: all_blocks(coeff),
                rhs: -gamma * dc.noise_reader_w * cp.u_norm2[t],
            });
        }
    }

    if rows.sens {
        for q in 0..q_targets {
            let fvq = cp.fv[q][q];
            let mut z_hat = outer(&cp.hq[q]) * Complex64::new(fvq, 0.0);
            for t in 0..t_tags {
                let w = refl.beta[t] * set.g_tag_target[(t, q)].norm_sqr() * fvq;
                z_hat += outer(&cp.ht[t]) * Complex64::new(w, 0.0);
            }
            let mut a_mat = CMat::zeros(s_dim, s_dim);
            for t in 0..t_tags {
                a_mat += outer(&cp.ht[t]) * Complex64::new(refl.beta[t] * cp.gv[q][t], 0.0);
            }
            for j in 0..q_targets {
                if j != q {
                    a_mat += outer(&cp.hq[j]) * Complex64::new(rcs * cp.fv[q][j], 0.0);
                }
            }
            a_mat += double_bounce(set, &cp, refl, rcs, &cp.fv[q], Some(q), s_dim);
            a_mat += outer(&cp.bv[q]);
            let gamma = cfg.gamma_sens;
            let coeff = &a_mat * Complex64::new(gamma, 0.0) - &z_hat * Complex64::new(rcs, 0.0);
            ineq.push(SdpRow {
                coeffs: all_blocks(coeff),
                rhs: -gamma * dc.noise_reader_w * cp.v_norm2[q],
            });
        }
    }

    if rows.eh {
        for t in 0..t_tags {
            let coeff = outer(&cp.ht[t]) * Complex64::new(-(1.0 - refl.beta[t]), 0.0);
            ineq.push(SdpRow { coeffs: all_blocks(coeff), rhs: -dc.eh_input_floor_w });
        }
    }

    SdpProblem { blocks, objective, ineq, eq: vec![] }
}

/// Solve the transmit design; `design` is `None` when the SDP is not solved
/// to optimality (infeasible rows, iteration limit, …).
pub struct TxSolve {
    pub design: Option<TxDesign>,
    pub status: SolveStatus,
}

/// Assemble and solve in one step, lifting blocks back to the full space.
pub fn build_and_solve(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    set: &ChannelSet,
    comb: &RxCombiners,
    refl: &Reflections,
    rows: RowSet,
    structure: &TxStructure,
) -> Result<TxSolve> {
    let m = set.h_br.ncols();
    let k_users = set.h_user.len();
    let (prob, sub) = build_tx_sdp(cfg, dc, set, comb, refl, rows, structure);
    let status = conic::solve_sdp(&prob)?;
    if status.status != SolveStatusKind::Optimal {
        return Ok(TxSolve { design: None, status });
    }

    let lifted: Vec<CMat> = status.blocks.iter().map(|b| sub.lift(b)).collect();
    let design = match structure {
        TxStructure::Covariances { with_rs } => {
            let w_cov = lifted[..k_users].to_vec();
            let r_s = if *with_rs { lifted[k_users].clone() } else { CMat::zeros(m, m) };
            TxDesign { w_cov, r_s, w_vec: None }
        }
        TxStructure::FixedDirections { dirs } => {
            let w_cov = lifted[..dirs.len()].to_vec();
            let r_s = lifted[dirs.len()].clone();
            TxDesign { w_cov, r_s, w_vec: None }
        }
        TxStructure::SensingOnly => TxDesign {
            w_cov: vec![CMat::zeros(m, m); k_users],
            r_s: lifted[0].clone(),
            w_vec: None,
        },
    };
    let design = repair_scale(cfg, dc, set, comb, refl, rows, design);
    Ok(TxSolve { design: Some(design), status })
}

/// Copy of a design with every covariance multiplied by `alpha`.
fn scaled_design(design: &TxDesign, alpha: f64) -> TxDesign {
    let c = Complex64::new(alpha, 0.0);
    TxDesign {
        w_cov: design.w_cov.iter().map(|w| w * c).collect(),
        r_s: &design.r_s * c,
        w_vec: None,
    }
}

/// Restore strict ground-truth feasibility after an interior-point solve.
///
/// The solver meets each row only to its own tolerance, measured against
/// the row's coefficient scale; when a row is a near-cancellation — the
/// sensing rows, where the BS→reader leak dwarfs the echo power — the
/// realized margin can land a few parts in 10⁵ short. Every constrained
/// metric grows monotonically with a common covariance scale `α` (only the
/// noise terms stay fixed), so the deficit is closed by bisecting for the
/// smallest `α ≥ 1` with nonnegative margins. Interference-limited streams
/// amplify the deficit by their interference-to-noise ratio, so the cap
/// allows up to 1 % extra power (0.04 dB); a design that even `α = 1.01`
/// cannot repair is returned as solved and left to the caller's
/// feasibility checks.
fn repair_scale(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    set: &ChannelSet,
    comb: &RxCombiners,
    refl: &Reflections,
    rows: RowSet,
    design: TxDesign,
) -> TxDesign {
    let margin = |alpha: f64| -> f64 {
        let d = scaled_design(&design, alpha);
        let report = metrics::check_all_qos(cfg, dc, set, &d, comb, refl);
        worst_active_margin(&report, rows, cfg, dc)
    };
    if margin(1.0) >= 0.0 {
        return design;
    }
    const CAP: f64 = 1.01;
    if margin(CAP) < 0.0 {
        return design;
    }
    let (mut lo, mut hi) = (1.0, CAP);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if margin(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    scaled_design(&design, hi)
}

/// BS transmit design: one covariance per user stream plus a sensing
/// covariance. After convergence a rank-one beamformer set may be recovered.
#[derive(Clone, Debug, PartialEq)]
pub struct TxDesign {
    /// Per-user transmit covariances `W_k`, each M×M PSD.
    pub w_cov: Vec<CMat>,
    /// Dedicated sensing covariance `R_s`, M×M PSD.
    pub r_s: CMat,
    /// Rank-one beamformers recovered from `w_cov`, once available.
    pub w_vec: Option<Vec<CVec>>,
}

impl TxDesign {
    /// All-zero design for M antennas and K users.
    pub fn zero(m: usize, k: usize) -> Self {
        TxDesign { w_cov: vec![CMat::zeros(m, m); k], r_s: CMat::zeros(m, m), w_vec: None }
    }

    /// Total transmit covariance `X = R_s + Σ_k W_k`.
    pub fn x_total(&self) -> CMat {
        let mut x = self.r_s.clone();
        for w in &self.w_cov {
            x += w;
        }
        x
    }

    /// Radiated power `tr(X)` in watts.
    pub fn total_power(&self) -> f64 {
        let tr: C64 = self.x_total().diagonal().sum();
        tr.re
    }

    /// Replace the user covariances with rank-one outer products of `w`.
    pub fn set_rank_one(&mut self, vectors: Vec<CVec>) {
        self.w_cov = vectors.iter().map(|w| w * w.adjoint()).collect();
        self.w_vec = Some(vectors);
    }
}

/// Smallest common scale `α` so that `{√α·w_k}` with the fixed `R_s`
/// satisfies every active row, or `None` when no scale works.
fn min_common_scale(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    set: &ChannelSet,
    comb: &RxCombiners,
    refl: &Reflections,
    rows: RowSet,
    cands: &[CVec],
    r_s: &CMat,
) -> Option<f64> {
    let t_tags = set.h_tag.len();
    let q_targets = set.h_target.len();
    let rcs = cfg.rcs_var;

    // Affine incident powers p(α) = rs_part + α·w_part per BS-side channel.
    let parts = |h: &CVec| -> (f64, f64) {
        let rs_part = quad_form(r_s, h);
        let w_part: f64 = cands.iter().map(|w| h.dotc(w).norm_sqr()).sum();
        (rs_part, w_part)
    };
    let tag_parts: Vec<(f64, f64)> = set.h_tag.iter().map(|h| parts(h)).collect();
    let target_parts: Vec<(f64, f64)> = set.h_target.iter().map(|h| parts(h)).collect();

    // Each row becomes α·a ≥ b.
    let mut bounds: Vec<(f64, f64)> = Vec::new();

    if rows.comm {
        for (k, h) in set.h_user.iter().enumerate() {
            let sig = h.dotc(&cands[k]).norm_sqr();
            let inter_w: f64 = cands
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .map(|(_, w)| h.dotc(w).norm_sqr())
                .sum();
            let mut loop_w = 0.0;
            let mut loop_rs = 0.0;
            for t in 0..t_tags {
                let c = refl.beta[t] * set.g_tag_user[(t, k)].norm_sqr();
                loop_rs += c * tag_parts[t].0;
                loop_w += c * tag_parts[t].1;
            }
            let g = cfg.gamma_comm;
            let a = sig - g * (inter_w + loop_w);
            let b = g * (quad_form(r_s, h) + loop_rs + dc.noise_user_w);
            bounds.push((a, b));
        }
    }

    // Reader-side rows share the same affine structure through any combiner.
    let reader_row = |a_vec: &CVec, sig_of: ReaderSignal| -> (f64, f64) {
        let gu: Vec<f64> = (0..t_tags).map(|i| set.g_tag[i].dotc(a_vec).norm_sqr()).collect();
        let fu: Vec<f64> = (0..q_targets).map(|q| set.f_target[q].dotc(a_vec).norm_sqr()).collect();
        let leak = set.h_br.adjoint() * a_vec;
        let (leak_rs, leak_w) = parts(&leak);
        // Echo powers through each target (single + double bounce).
        let echo = |q: usize| -> (f64, f64) {
            let mut rs = target_parts[q].0;
            let mut w = target_parts[q].1;
            for t in 0..t_tags {
                let c = refl.beta[t] * set.g_tag_target[(t, q)].norm_sqr();
                rs += c * tag_parts[t].0;
                w += c * tag_parts[t].1;
            }
            (fu[q] * rs, fu[q] * w)
        };

        let (s_rs, s_w, gamma, skip_tag, skip_target) = match sig_of {
            ReaderSignal::Tag(t) => {
                let c = refl.beta[t] * gu[t];
                (c * tag_parts[t].0, c * tag_parts[t].1, cfg.gamma_bcoms, Some(t), None)
            }
            ReaderSignal::Target(q) => {
                let (ers, ew) = echo(q);
                (rcs * ers, rcs * ew, cfg.gamma_sens, None, Some(q))
            }
        };
        let mut i_rs = leak_rs;
        let mut i_w = leak_w;
        for t in 0..t_tags {
            if skip_tag == Some(t) {
                continue;
            }
            let c = refl.beta[t] * gu[t];
            i_rs += c * tag_parts[t].0;
            i_w += c * tag_parts[t].1;
        }
        for q in 0..q_targets {
            if skip_target == Some(q) {
                continue;
            }
            let (ers, ew) = echo(q);
            i_rs += rcs * ers;
            i_w += rcs * ew;
        }
        let noise = dc.noise_reader_w * a_vec.norm_squared();
        // S(α) ≥ Γ(I(α)+noise) → α(s_w − Γ·i_w) ≥ Γ·i_rs + Γ·noise − s_rs.
        let a = s_w - gamma * i_w;
        let b = gamma * (i_rs + noise) - s_rs;
        (a, b)
    };

    if rows.bcoms {
        for t in 0..t_tags {
            bounds.push(reader_row(&comb.u_tag[t], ReaderSignal::Tag(t)));
        }
    }
    if rows.sens {
        for q in 0..q_targets {
            bounds.push(reader_row(&comb.v_target[q], ReaderSignal::Target(q)));
        }
    }
    if rows.eh {
        for t in 0..t_tags {
            let keep = 1.0 - refl.beta[t];
            let a = keep * tag_parts[t].1;
            let b = dc.eh_input_floor_w - keep * tag_parts[t].0;
            bounds.push((a, b));
        }
    }

    let mut lo = 0f64;
    let mut hi = f64::INFINITY;
    for (a, b) in bounds {
        let scale = a.abs().max(b.abs()).max(1e-300);
        if a.abs() <= 1e-14 * scale {
            if b > 1e-12 * scale {
                return None;
            }
        } else if a > 0.0 {
            lo = lo.max(b / a);
        } else {
            if b >= 0.0 {
                return None;
            }
            hi = hi.min(b / a);
        }
    }
    if lo > hi * (1.0 + 1e-9) {
        return None;
    }
    Some(lo.max(0.0) * (1.0 + 1e-9))
}

enum ReaderSignal {
    Tag(usize),
    Target(usize),
}

/// Number of Gaussian candidates drawn when the covariances are not
/// numerically rank one.
pub const RANDOMIZATION_DRAWS: usize = 200;

/// Recover rank-one beamformers from a converged covariance design.
///
/// If every `W_k` has eigenvalue ratio `λ₂/λ₁ ≤ 1e−6` the dominant
/// eigenvectors are taken directly; otherwise `RANDOMIZATION_DRAWS`
/// Gaussian candidate sets `w_k = W_k^{1/2}·ξ` are drawn, each rescaled by
/// the smallest common factor restoring feasibility, and the cheapest
/// verified candidate wins.
pub fn recover_rank_one(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    set: &ChannelSet,
    comb: &RxCombiners,
    refl: &Reflections,
    rows: RowSet,
    tx: &TxDesign,
    rng: &mut ChaCha8Rng,
) -> Result<TxDesign> {
    let k_users = tx.w_cov.len();
    if k_users == 0 {
        let mut out = tx.clone();
        out.w_vec = Some(Vec::new());
        return Ok(out);
    }

    struct Decomp {
        vectors: Vec<CVec>, // eigenvectors scaled by √λ
        top: CVec,
        ratio: f64,
    }
    let decomps: Vec<Decomp> = tx
        .w_cov
        .iter()
        .map(|w| {
            let eig = w.clone().symmetric_eigen();
            let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let l1 = eig.eigenvalues[order[0]].max(0.0);
            let l2 = if order.len() > 1 { eig.eigenvalues[order[1]].max(0.0) } else { 0.0 };
            let vectors: Vec<CVec> = order
                .iter()
                .filter(|&&i| eig.eigenvalues[i] > 0.0)
                .map(|&i| eig.eigenvectors.column(i) * Complex64::new(eig.eigenvalues[i].sqrt(), 0.0))
                .collect();
            let top = eig.eigenvectors.column(order[0]) * Complex64::new(l1.sqrt(), 0.0);
            Decomp { vectors, top, ratio: if l1 > 0.0 { l2 / l1 } else { 0.0 } }
        })
        .collect();

    let verify = |cands: &[CVec], alpha: f64| -> Option<(TxDesign, f64)> {
        let scaled: Vec<CVec> =
            cands.iter().map(|w| w * Complex64::new(alpha.sqrt(), 0.0)).collect();
        let mut out = tx.clone();
        out.set_rank_one(scaled);
        let report = metrics::check_all_qos(cfg, dc, set, &out, comb, refl);
        let ok = report_matches_rows(&report, rows, cfg, dc);
        if ok {
            let cost = out.total_power();
            Some((out, cost))
        } else {
            None
        }
    };

    let mut best: Option<(TxDesign, f64)> = None;
    let consider = |cands: &[CVec], best: &mut Option<(TxDesign, f64)>| {
        if let Some(alpha) = min_common_scale(cfg, dc, set, comb, refl, rows, cands, &tx.r_s) {
            if let Some((design, cost)) = verify(cands, alpha) {
                if best.as_ref().is_none_or(|(_, c)| cost < *c) {
                    *best = Some((design, cost));
                }
            }
        }
    };

    // Dominant-eigenvector candidate (exact when ratios vanish).
    let eigen_cand: Vec<CVec> = decomps.iter().map(|d| d.top.clone()).collect();
    consider(&eigen_cand, &mut best);
    let all_rank_one = decomps.iter().all(|d| d.ratio <= 1e-6);

    if !(all_rank_one && best.is_some()) {
        for _ in 0..RANDOMIZATION_DRAWS {
            let cands: Vec<CVec> = decomps
                .iter()
                .map(|d| {
                    let mut w = CVec::zeros(tx.r_s.nrows());
                    for v in &d.vectors {
                        w += v * cn01(rng);
                    }
                    w
                })
                .collect();
            consider(&cands, &mut best);
        }
    }

    match best {
        Some((design, _)) => Ok(design),
        None => Err(Error::RandomizationFailed { draws: RANDOMIZATION_DRAWS }),
    }
}

/// Smallest relative margin of a QoS report over the active row families.
pub fn worst_active_margin(
    report: &metrics::QosReport,
    rows: RowSet,
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
) -> f64 {
    let fam = |vals: &[f64], thr: f64| {
        vals.iter().fold(f64::INFINITY, |m, &v| m.min(v / thr - 1.0))
    };
    let mut worst = f64::INFINITY;
    if rows.comm {
        worst = worst.min(fam(&report.comm_sinr, cfg.gamma_comm));
    }
    if rows.bcoms {
        worst = worst.min(fam(&report.bcom_sinr, cfg.gamma_bcoms));
    }
    if rows.sens {
        worst = worst.min(fam(&report.sens_sinr, cfg.gamma_sens));
    }
    if rows.eh {
        worst = worst.min(fam(&report.eh_input_w, dc.eh_input_floor_w));
    }
    worst
}

/// Feasibility of a QoS report restricted to the active row families.
pub fn report_matches_rows(
    report: &metrics::QosReport,
    rows: RowSet,
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
) -> bool {
    worst_active_margin(report, rows, cfg, dc) >= -metrics::FEAS_TOL_REL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_decomposition;
    use crate::metrics::{check_all_qos, comm_sinr, reader_sinr, ReaderStream};
    use crate::scenario::{derive_constants, sample_geometry, stream};
    use approx::assert_relative_eq;
    use crate::RVec;

    fn defaults() -> (ScenarioConfig, DerivedConstants, ChannelSet) {
        let cfg = ScenarioConfig::default();
        let dc = derive_constants(&cfg).unwrap();
        let geom = sample_geometry(&cfg, 0);
        let chan = generate_decomposition(&cfg, &dc, &geom, 0);
        let z = RVec::from_iterator(
            cfg.m_tx,
            (0..cfg.m_tx).map(|i| i as f64 * cfg.aperture_m / (cfg.m_tx - 1) as f64),
        );
        (cfg, dc, chan.materialize(&z))
    }

    fn matched_filters(set: &ChannelSet) -> RxCombiners {
        let unit = |v: &CVec| v / Complex64::new(v.norm(), 0.0);
        RxCombiners {
            u_tag: set.g_tag.iter().map(unit).collect(),
            v_target: set.f_target.iter().map(unit).collect(),
        }
    }

    /// The assembled row values must reproduce the exact QoS metrics:
    /// lhs − rhs = Γ·I − S for every SINR row, = floor − harvest for EH.
    #[test]
    fn rows_reproduce_ground_truth_metrics() {
        let (cfg, dc, set) = defaults();
        let comb = matched_filters(&set);
        let refl = Reflections::uniform(cfg.t_tags, 0.5);
        let (prob, sub) = build_tx_sdp(
            &cfg,
            &dc,
            &set,
            &comb,
            &refl,
            RowSet::all(),
            &TxStructure::Covariances { with_rs: true },
        );
        // Random PSD design, evaluated both through the rows (reduced) and
        // through the ground-truth metrics (full space).
        let mut rng = stream(31, 0, "txdesign-oracle");
        let s_dim = sub.dim(cfg.m_tx);
        let mut blocks: Vec<CMat> = Vec::new();
        for _ in 0..cfg.k_users + 1 {
            let a = CMat::from_fn(s_dim, s_dim, |_, _| 1e-2 * cn01(&mut rng));
            blocks.push(&a * a.adjoint());
        }
        let tx = TxDesign {
            w_cov: blocks[..cfg.k_users].iter().map(|b| sub.lift(b)).collect(),
            r_s: sub.lift(&blocks[cfg.k_users]),
            w_vec: None,
        };

        let row_value = |row: &SdpRow| -> f64 {
            let mut v = 0.0;
            for (b, c) in row.coeffs.iter().enumerate() {
                if let Some(c) = c {
                    v += conic::re_tr(c, &blocks[b]);
                }
            }
            v - row.rhs
        };

        // Communication rows.
        for k in 0..cfg.k_users {
            let sinr = comm_sinr(&set, &tx, &refl, dc.noise_user_w, k);
            let s = quad_form(&tx.w_cov[k], &set.h_user[k]);
            let i = s / sinr;
            assert_relative_eq!(
                row_value(&prob.ineq[k]),
                cfg.gamma_comm * i - s,
                max_relative = 1e-9,
                epsilon = 1e-18
            );
        }
        // Backscatter rows.
        for t in 0..cfg.t_tags {
            let sinr =
                reader_sinr(&set, &tx, &refl, &comb, cfg.rcs_var, dc.noise_reader_w, ReaderStream::Tag(t));
            let x = tx.x_total();
            let s = refl.beta[t]
                * set.g_tag[t].dotc(&comb.u_tag[t]).norm_sqr()
                * quad_form(&x, &set.h_tag[t]);
            let i = s / sinr;
            assert_relative_eq!(
                row_value(&prob.ineq[cfg.k_users + t]),
                cfg.gamma_bcoms * i - s,
                max_relative = 1e-9,
                epsilon = 1e-18
            );
        }
        // Sensing rows.
        for q in 0..cfg.q_targets {
            let sinr = reader_sinr(
                &set,
                &tx,
                &refl,
                &comb,
                cfg.rcs_var,
                dc.noise_reader_w,
                ReaderStream::Target(q),
            );
            let x = tx.x_total();
            let fv = set.f_target[q].dotc(&comb.v_target[q]).norm_sqr();
            let mut s = quad_form(&x, &set.h_target[q]);
            for t in 0..cfg.t_tags {
                s += refl.beta[t] * set.g_tag_target[(t, q)].norm_sqr() * quad_form(&x, &set.h_tag[t]);
            }
            s *= cfg.rcs_var * fv;
            let i = s / sinr;
            assert_relative_eq!(
                row_value(&prob.ineq[cfg.k_users + cfg.t_tags + q]),
                cfg.gamma_sens * i - s,
                max_relative = 1e-9,
                epsilon = 1e-18
            );
        }
        // Harvesting rows.
        for t in 0..cfg.t_tags {
            let x = tx.x_total();
            let harvest = (1.0 - refl.beta[t]) * quad_form(&x, &set.h_tag[t]);
            assert_relative_eq!(
                row_value(&prob.ineq[cfg.k_users + cfg.t_tags + cfg.q_targets + t]),
                dc.eh_input_floor_w - harvest,
                max_relative = 1e-9,
                epsilon = 1e-18
            );
        }
    }

    /// Solving in the reduced subspace must give the same optimum as the
    /// identical rows assembled in the full antenna space.
    #[test]
    fn reduction_is_exact_against_full_space_solve() {
        let (cfg, dc, set) = defaults();
        let comb = matched_filters(&set);
        let refl = Reflections::uniform(cfg.t_tags, 0.5);
        let structure = TxStructure::Covariances { with_rs: true };
        let rows = RowSet::comm_bcom();
        let reduced = build_and_solve(&cfg, &dc, &set, &comb, &refl, rows, &structure).unwrap();
        assert_eq!(reduced.status.status, SolveStatusKind::Optimal);

        let identity = Subspace { basis: None };
        let full_prob = assemble(&cfg, &dc, &set, &comb, &refl, rows, &structure, &identity);
        assert_eq!(full_prob.blocks.len(), cfg.k_users + 1);
        if let BlockSpec::Covariance { dim } = full_prob.blocks[0] {
            assert_eq!(dim, cfg.m_tx, "identity subspace must keep the ambient dimension");
        }
        let full = conic::solve_sdp(&full_prob).unwrap();
        assert_eq!(full.status, SolveStatusKind::Optimal);
        assert_relative_eq!(reduced.status.objective, full.objective, max_relative = 1e-4);
    }

    /// At the initial matched-filter combiners the joint system (all four
    /// row families at once) can be genuinely infeasible — the outer loop
    /// only escapes that after re-optimizing the combiners — so the solve
    /// tests run on the communication + backscatter + harvesting subset,
    /// which is feasible at initialization.
    #[test]
    fn solved_design_is_feasible_and_scheme_power_ordering_holds() {
        let (cfg, dc, set) = defaults();
        let comb = matched_filters(&set);
        let refl = Reflections::uniform(cfg.t_tags, 0.5);
        let rows = RowSet::comm_bcom();
        let full = build_and_solve(
            &cfg,
            &dc,
            &set,
            &comb,
            &refl,
            rows,
            &TxStructure::Covariances { with_rs: true },
        )
        .unwrap();
        let tx = full.design.expect("comm+bcom+eh rows must be feasible at defaults");
        assert!(full.status.kkt.max() < 1e-5, "kkt {:?}", full.status.kkt);
        let report = check_all_qos(&cfg, &dc, &set, &tx, &comb, &refl);
        assert!(
            report_matches_rows(&report, rows, &cfg, &dc),
            "active rows violated: comm {:?} bcom {:?} eh {:?}",
            report.comm_sinr,
            report.bcom_sinr,
            report.eh_input_w
        );
        // Realized power tracks the SDP objective up to the post-solve
        // repair scaling, which may add at most 1 %.
        let power = tx.total_power();
        assert!(
            power >= full.status.objective * (1.0 - 1e-9) && power <= full.status.objective * 1.01,
            "realized power {power} strays from objective {}",
            full.status.objective
        );

        // Fixing beam directions can never beat free covariances.
        let zf = build_and_solve(
            &cfg,
            &dc,
            &set,
            &comb,
            &refl,
            rows,
            &TxStructure::FixedDirections { dirs: zf_directions(&set) },
        )
        .unwrap();
        let zf_power = zf.status.objective;
        assert!(
            zf_power >= full.status.objective * (1.0 - 1e-6),
            "restricted structure {zf_power} beat free covariances {}",
            full.status.objective
        );
    }

    #[test]
    fn zero_forcing_directions_null_cross_user_terms() {
        let (_, _, set) = defaults();
        let dirs = zf_directions(&set);
        for (i, d) in dirs.iter().enumerate() {
            for (k, h) in set.h_user.iter().enumerate() {
                let proj = h.dotc(d).norm() / (h.norm() * d.norm());
                if i != k {
                    assert!(proj < 1e-10, "direction {i} leaks into user {k}: {proj}");
                } else {
                    assert!(proj > 1e-6, "direction {i} lost its own user");
                }
            }
        }
    }

    #[test]
    fn sensing_only_design_uses_a_single_covariance() {
        let (cfg, dc, set) = defaults();
        let comb = matched_filters(&set);
        let refl = Reflections::uniform(cfg.t_tags, 0.5);
        let out = build_and_solve(
            &cfg,
            &dc,
            &set,
            &comb,
            &refl,
            RowSet::sens_only(),
            &TxStructure::SensingOnly,
        )
        .unwrap();
        let tx = out.design.expect("sensing-only must be feasible");
        for w in &tx.w_cov {
            assert_eq!(w.iter().map(|c| c.norm()).fold(0.0, f64::max), 0.0);
        }
        let report = check_all_qos(&cfg, &dc, &set, &tx, &comb, &refl);
        for &s in &report.sens_sinr {
            assert!(s >= cfg.gamma_sens * (1.0 - 1e-5), "sensing stream at {s}");
        }
    }

    #[test]
    fn rank_one_recovery_is_feasible_and_near_optimal() {
        let (cfg, dc, set) = defaults();
        let comb = matched_filters(&set);
        let refl = Reflections::uniform(cfg.t_tags, 0.5);
        let rows = RowSet::comm_bcom();
        let out = build_and_solve(
            &cfg,
            &dc,
            &set,
            &comb,
            &refl,
            rows,
            &TxStructure::Covariances { with_rs: true },
        )
        .unwrap();
        let tx = out.design.unwrap();
        let mut rng = stream(cfg.seed, 0, "randomization");
        let fixed = recover_rank_one(&cfg, &dc, &set, &comb, &refl, rows, &tx, &mut rng)
            .expect("recovery must succeed on a feasible covariance design");
        assert!(fixed.w_vec.is_some());
        let report = check_all_qos(&cfg, &dc, &set, &fixed, &comb, &refl);
        assert!(
            report_matches_rows(&report, rows, &cfg, &dc),
            "active rows violated after recovery: comm {:?} bcom {:?} eh {:?}",
            report.comm_sinr,
            report.bcom_sinr,
            report.eh_input_w
        );
        // The relaxation bound: rank-one can only cost more, and the
        // randomization should stay within a modest factor of it.
        assert!(fixed.total_power() >= tx.total_power() * (1.0 - 1e-6));
        assert!(
            fixed.total_power() <= tx.total_power() * 3.0,
            "recovered power {} far above bound {}",
            fixed.total_power(),
            tx.total_power()
        );
    }

    /// A tag's own power echoes off the targets back into its combiner, so
    /// the backscatter SINR saturates at a finite self-interference ceiling
    /// no matter how the covariance is shaped; demands above it must come
    /// back as certified infeasibility, not a numeric failure.
    #[test]
    fn bcom_demand_above_self_interference_ceiling_is_infeasible() {
        let (mut cfg, dc, set) = defaults();
        let comb = matched_filters(&set);
        let refl = Reflections::uniform(cfg.t_tags, 0.5);
        cfg.gamma_bcoms = 1e12;
        let out = build_and_solve(
            &cfg,
            &dc,
            &set,
            &comb,
            &refl,
            RowSet { comm: false, bcoms: true, sens: false, eh: false },
            &TxStructure::Covariances { with_rs: true },
        )
        .unwrap();
        assert!(out.design.is_none(), "absurd backscatter demand produced a design");
        assert_eq!(out.status.status, SolveStatusKind::Infeasible);
    }

    /// A far larger harvest floor stays feasible — transmit power is
    /// unbounded — and the design must actually deliver it at every tag.
    #[test]
    fn extreme_harvest_floor_is_met_by_scaling_power() {
        let (cfg, mut dc, set) = defaults();
        let comb = matched_filters(&set);
        let refl = Reflections::uniform(cfg.t_tags, 0.5);
        dc.eh_input_floor_w = 1e-3; // ~200× the default demand at the tag
        let out = build_and_solve(
            &cfg,
            &dc,
            &set,
            &comb,
            &refl,
            RowSet::comm_bcom(),
            &TxStructure::Covariances { with_rs: true },
        )
        .unwrap();
        let tx = out.design.expect("harvest floor alone cannot make the cone empty");
        for t in 0..cfg.t_tags {
            let p = quad_form(&tx.x_total(), &set.h_tag[t]);
            assert!(
                (1.0 - refl.beta[t]) * p >= 1e-3 * (1.0 - 1e-5),
                "tag {t} harvests only {:.3e} W",
                (1.0 - refl.beta[t]) * p
            );
        }
    }
}
