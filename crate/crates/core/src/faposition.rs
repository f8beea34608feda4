//! Transmit antenna placement via global quadratic trigonometric bounds.
//!
//! Every QoS quantity depends on the antenna positions `z` only through
//! powers `|vᴴh(z)|²` of field-response links `h(z) = ℓ̄·a(θ̂,z) + ñ` with
//! `a(θ̂,z)_m = e^{jθ̂z_m}`. Expanding one such power gives a constant plus
//! a sum of cosines of *affine* functions of `z`:
//!
//! ```text
//! |vᴴh(z)|² = |ℓ̄|²·Σ_m|v_m|² + |vᴴñ|²                     (constants)
//!   + Σ_{m<m'} 2|c_{mm'}|·cos(θ̂z_m − θ̂z_{m'} + ∠c_{mm'})   (pair terms)
//!   + Σ_m     2|c_m|·cos(θ̂z_m + ∠c_m)                      (cross terms)
//! ```
//!
//! with `c_{mm'} = |ℓ̄|²·v̄_m v_{m'}` and `c_m = ℓ̄·v̄_m·(vᴴñ)^*`. Writing
//! each cosine in polar form keeps every amplitude nonnegative, so a single
//! pair of global quadratic bounds covers all terms: with `x₀` the current
//! phase (shifted by a multiple of 2π into `(−π, π]`),
//!
//! ```text
//! cos x ≥ −½x² + (x₀ − sin x₀)·x + cos x₀ + x₀ sin x₀ − ½x₀²
//! cos x ≤ +½x² − (x₀ + sin x₀)·x + cos x₀ + x₀ sin x₀ + ½x₀²
//! ```
//!
//! Both are tangent at `x₀` and valid for every real `x` (the gap to
//! `cos` is convex/concave with a double root at `x₀`). Minorizing signal
//! terms and majorizing interference terms therefore turns every QoS row
//! into a *concave* quadratic in `z` that touches the true row at the
//! incumbent placement — the majorize-minimize step is exact at `z₀` and
//! conservative everywhere else, so true feasibility can only improve.
//!
//! The update solves two small convex programs per sweep: first maximize
//! the minimum normalized row slack over the placement polytope
//! (`0 ≤ z₁`, `z_{m+1} − z_m ≥ δ`, `z_M ≤ D`), then, pinned just below
//! that optimum, pick the feasible placement closest to the incumbent so
//! the step does not wander along flat slack directions.

use std::f64::consts::TAU;

use crate::channel::{ChannelDecomposition, FieldLink};
use crate::conic::{solve_qcqp_feasibility, QcqpProblem, QuadRow};
use crate::metrics::quad_form;
use crate::reflection::Reflections;
use crate::rxdesign::RxCombiners;
use crate::scenario::{DerivedConstants, ScenarioConfig};
use crate::txdesign::{RowSet, TxDesign};
use crate::{CMat, CVec, Error, RMat, RVec, Result};

/// Whether a term enters the row on the signal side (minorized) or the
/// interference side (majorized and negated).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Support,
    Oppose,
}

/// Accumulating quadratic `½yᵀHy + rᵀy + c` in the *displacement*
/// `y = z − z₀` that lower-bounds a QoS row.
///
/// Centering at the expansion point keeps every accumulated coefficient at
/// the scale of the term amplitude (the tangent contributions are exactly
/// `−a·sin x₀` and `a·cos x₀`), so tens of thousands of terms sum without
/// the catastrophic cancellation a global-coordinate polynomial would
/// suffer. `H` only ever receives `−a·ttᵀ` updates with `a ≥ 0`, so the
/// surrogate stays concave by construction.
#[derive(Clone, Debug)]
pub struct QuadraticSurrogate {
    pub h: RMat,
    pub r: RVec,
    pub c: f64,
    pub z0: RVec,
}

impl QuadraticSurrogate {
    pub fn new(z0: &RVec) -> Self {
        let m = z0.len();
        QuadraticSurrogate { h: RMat::zeros(m, m), r: RVec::zeros(m), c: 0.0, z0: z0.clone() }
    }

    pub fn eval(&self, z: &RVec) -> f64 {
        let y = z - &self.z0;
        0.5 * (y.transpose() * &self.h * &y)[(0, 0)] + self.r.dot(&y) + self.c
    }

    pub fn add_constant(&mut self, v: f64) {
        self.c += v;
    }

    /// Add the tangent bound of `amp·cos(Σᵢ coefᵢ·z_idxᵢ + psi)` at `z₀`:
    /// the lower bound when supporting, minus the upper bound when opposing.
    ///
    /// In displacement coordinates the argument is `tᵀy + x₀` with
    /// `x₀ = tᵀz₀ + ψ` folded into `(−π, π]`, and the two global bounds
    ///
    /// ```text
    /// cos(u + x₀) ≥ −½u² − sin(x₀)·u + cos(x₀)
    /// cos(u + x₀) ≤ +½u² − sin(x₀)·u + cos(x₀)
    /// ```
    ///
    /// are tangent at `u = 0` and valid for all real `u` (the gap to the
    /// cosine is convex resp. concave with a double root at zero, since its
    /// second derivative is `1 ∓ cos`).
    pub fn add_cos_term(&mut self, side: Side, amp: f64, terms: &[(usize, f64)], psi: f64) {
        debug_assert!(amp >= 0.0, "polar amplitudes are nonnegative");
        if amp == 0.0 {
            return;
        }
        let x0_raw: f64 = terms.iter().map(|&(i, co)| co * self.z0[i]).sum::<f64>() + psi;
        let x0 = x0_raw - TAU * (x0_raw / TAU).round();

        for &(i, ci) in terms {
            for &(j, cj) in terms {
                self.h[(i, j)] -= amp * ci * cj;
            }
        }
        let sign = match side {
            Side::Support => 1.0,
            Side::Oppose => -1.0,
        };
        for &(i, ci) in terms {
            self.r[i] -= sign * amp * x0.sin() * ci;
        }
        self.c += sign * amp * x0.cos();
    }

    /// Add the bound of `rho·hᴴ(z)·W·h(z)` over one field-response link,
    /// signed by `side` (`rho ≥ 0`; `weights` is the signed spectrum of `W`
    /// from [`eig_weights`]).
    ///
    /// The expansion is exact per eigendirection, so `W` may be indefinite:
    /// a direction with negative weight simply gets the opposite one-sided
    /// bound. This matters because solver-produced covariances carry
    /// eigenvalue noise of either sign, and rows such as the direct-path
    /// leak live entirely at that noise level — truncating to the positive
    /// part would detune the surrogate from the true row by far more than
    /// the feasibility tolerance.
    pub fn add_power_term(&mut self, side: Side, rho: f64, weights: &[(f64, CVec)], link: &FieldLink) {
        debug_assert!(rho >= 0.0, "power weights are nonnegative");
        if rho == 0.0 {
            return;
        }
        let m = link.dim();
        let los2 = link.los_gain.norm_sqr();
        for (lam, v) in weights {
            let a = rho * lam.abs();
            if a == 0.0 {
                continue;
            }
            let dir_side = if (*lam < 0.0) == (side == Side::Oppose) {
                Side::Support
            } else {
                Side::Oppose
            };
            let sign = match dir_side {
                Side::Support => 1.0,
                Side::Oppose => -1.0,
            };
            let vn = v.adjoint() * &link.nlos; // vᴴñ, 1×1
            let vn = vn[(0, 0)];
            self.add_constant(sign * a * (los2 * v.norm_squared() + vn.norm_sqr()));
            for i in 0..m {
                let c_single = link.los_gain * v[i].conj() * vn.conj();
                self.add_cos_term(
                    dir_side,
                    2.0 * a * c_single.norm(),
                    &[(i, link.theta_hat)],
                    c_single.arg(),
                );
                for j in i + 1..m {
                    let c_pair = v[i].conj() * v[j] * los2;
                    self.add_cos_term(
                        dir_side,
                        2.0 * a * c_pair.norm(),
                        &[(i, link.theta_hat), (j, -link.theta_hat)],
                        c_pair.arg(),
                    );
                }
            }
        }
    }
}

/// Signed spectrum `(λᵣ, uᵣ)` of a Hermitian matrix, dropping only
/// eigenvalues below `1e−14` of the total spectral mass.
///
/// Negative eigenvalues are kept on purpose: solver output carries eigen
/// noise of both signs, and the expansion must reproduce `hᴴWh` exactly to
/// keep the row surrogates tangent to the true QoS rows.
pub fn eig_weights(w: &CMat) -> Vec<(f64, CVec)> {
    let eig = w.clone().symmetric_eigen();
    let mass: f64 = eig.eigenvalues.iter().map(|l| l.abs()).sum();
    if mass <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > 1e-14 * mass {
            out.push((lam, eig.eigenvectors.column(i).into_owned()));
        }
    }
    out
}

/// One QoS row as a concave quadratic minorant plus its normalization.
pub struct RowSurrogate {
    pub q: QuadraticSurrogate,
    /// Natural row magnitude `S(z₀) + Γ·I(z₀)`, used to normalize slacks.
    pub scale: f64,
}

/// Build the concave minorant of every active QoS row at the incumbent
/// placement `z0`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_rows(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    dec: &ChannelDecomposition,
    z0: &RVec,
    tx: &TxDesign,
    comb: &RxCombiners,
    refl: &Reflections,
    rows: RowSet,
) -> Vec<RowSurrogate> {
    let t_tags = dec.tag.len();
    let q_targets = dec.target.len();
    let rcs = cfg.rcs_var;
    let x = tx.x_total();
    let x_w = eig_weights(&x);

    let h_tag0: Vec<CVec> = dec.tag.iter().map(|l| l.materialize(z0)).collect();
    let h_target0: Vec<CVec> = dec.target.iter().map(|l| l.materialize(z0)).collect();
    let p_tag0: Vec<f64> = h_tag0.iter().map(|h| quad_form(&x, h)).collect();
    let p_target0: Vec<f64> = h_target0.iter().map(|h| quad_form(&x, h)).collect();

    let mut out = Vec::new();
    let mut push = |q: QuadraticSurrogate, signal0: f64| {
        // Tangency makes q(z0) the true row value S − Γ·I, so the natural
        // magnitude S + Γ·I is recoverable without a second evaluation.
        let scale = (2.0 * signal0 - q.eval(z0)).max(1e-300);
        out.push(RowSurrogate { q, scale });
    };

    if rows.comm {
        for k in 0..dec.user.len() {
            let link = &dec.user[k];
            let w_k = eig_weights(&tx.w_cov[k]);
            // X − W_k covers both the other users' streams and R_s.
            let others = eig_weights(&(&x - &tx.w_cov[k]));
            let mut q = QuadraticSurrogate::new(z0);
            q.add_power_term(Side::Support, 1.0, &w_k, link);
            q.add_power_term(Side::Oppose, cfg.gamma_comm, &others, link);
            for t in 0..t_tags {
                let w = refl.beta[t] * dec.tag_user[(t, k)].norm_sqr();
                q.add_power_term(Side::Oppose, cfg.gamma_comm * w, &x_w, &dec.tag[t]);
            }
            q.add_constant(-cfg.gamma_comm * dc.noise_user_w);
            let signal0 = quad_form(&tx.w_cov[k], &link.materialize(z0));
            push(q, signal0);
        }
    }

    if rows.bcoms {
        for t in 0..t_tags {
            let u = &comb.u_tag[t];
            let gw: Vec<f64> = dec.tag_reader.iter().map(|g| g.dotc(u).norm_sqr()).collect();
            let fw: Vec<f64> = dec.target_reader.iter().map(|f| f.dotc(u).norm_sqr()).collect();
            let mut q = QuadraticSurrogate::new(z0);
            q.add_power_term(Side::Support, refl.beta[t] * gw[t], &x_w, &dec.tag[t]);
            for i in 0..t_tags {
                let mut w = if i == t { 0.0 } else { refl.beta[i] * gw[i] };
                // Double bounce off every target, own stream included.
                for qx in 0..q_targets {
                    w += rcs * refl.beta[i] * dec.tag_target[(i, qx)].norm_sqr() * fw[qx];
                }
                q.add_power_term(Side::Oppose, cfg.gamma_bcoms * w, &x_w, &dec.tag[i]);
            }
            for qx in 0..q_targets {
                q.add_power_term(Side::Oppose, cfg.gamma_bcoms * rcs * fw[qx], &x_w, &dec.target[qx]);
            }
            let leak = dec.bs_reader.effective(u);
            q.add_power_term(Side::Oppose, cfg.gamma_bcoms, &x_w, &leak);
            q.add_constant(-cfg.gamma_bcoms * dc.noise_reader_w * u.norm_squared());
            let signal0 = refl.beta[t] * gw[t] * p_tag0[t];
            push(q, signal0);
        }
    }

    if rows.sens {
        for qi in 0..q_targets {
            let v = &comb.v_target[qi];
            let gw: Vec<f64> = dec.tag_reader.iter().map(|g| g.dotc(v).norm_sqr()).collect();
            let fw: Vec<f64> = dec.target_reader.iter().map(|f| f.dotc(v).norm_sqr()).collect();
            let mut q = QuadraticSurrogate::new(z0);
            q.add_power_term(Side::Support, rcs * fw[qi], &x_w, &dec.target[qi]);
            for t in 0..t_tags {
                let own_echo = rcs * fw[qi] * refl.beta[t] * dec.tag_target[(t, qi)].norm_sqr();
                q.add_power_term(Side::Support, own_echo, &x_w, &dec.tag[t]);
                let mut w = refl.beta[t] * gw[t];
                for j in 0..q_targets {
                    if j != qi {
                        w += rcs * refl.beta[t] * dec.tag_target[(t, j)].norm_sqr() * fw[j];
                    }
                }
                q.add_power_term(Side::Oppose, cfg.gamma_sens * w, &x_w, &dec.tag[t]);
            }
            for j in 0..q_targets {
                if j != qi {
                    q.add_power_term(Side::Oppose, cfg.gamma_sens * rcs * fw[j], &x_w, &dec.target[j]);
                }
            }
            let leak = dec.bs_reader.effective(v);
            q.add_power_term(Side::Oppose, cfg.gamma_sens, &x_w, &leak);
            q.add_constant(-cfg.gamma_sens * dc.noise_reader_w * v.norm_squared());
            let mut echo0 = p_target0[qi];
            for t in 0..t_tags {
                echo0 += refl.beta[t] * dec.tag_target[(t, qi)].norm_sqr() * p_tag0[t];
            }
            push(q, rcs * fw[qi] * echo0);
        }
    }

    if rows.eh {
        for t in 0..t_tags {
            let mut q = QuadraticSurrogate::new(z0);
            q.add_power_term(Side::Support, 1.0 - refl.beta[t], &x_w, &dec.tag[t]);
            q.add_constant(-dc.eh_input_floor_w);
            push(q, (1.0 - refl.beta[t]) * p_tag0[t]);
        }
    }

    out
}

/// Placement polytope `0 ≤ z₁`, `z_m + δ ≤ z_{m+1}`, `z_M ≤ D` expressed in
/// the displacement `y = z − z₀`, as linear rows over `n_vars ≥ m`
/// variables (extra variables unconstrained).
fn geometry_rows(z0: &RVec, n_vars: usize, aperture: f64, min_spacing: f64) -> Vec<(RVec, f64)> {
    let m = z0.len();
    let mut rows = Vec::with_capacity(m + 1);
    let mut first = RVec::zeros(n_vars);
    first[0] = -1.0;
    rows.push((first, z0[0]));
    for i in 0..m - 1 {
        let mut a = RVec::zeros(n_vars);
        a[i] = 1.0;
        a[i + 1] = -1.0;
        rows.push((a, z0[i + 1] - z0[i] - min_spacing));
    }
    let mut last = RVec::zeros(n_vars);
    last[m - 1] = 1.0;
    rows.push((last, aperture - z0[m - 1]));
    rows
}

/// Result of one placement update.
pub struct PositionStep {
    pub z: RVec,
    /// Minimum normalized row slack at the incumbent placement.
    pub slack_before: f64,
    /// Minimum normalized surrogate slack at the returned placement.
    pub slack_after: f64,
}

/// One majorize-minimize placement sweep: maximize the minimum normalized
/// row slack, then return the deepest such placement nearest the incumbent.
///
/// The incumbent placement is always feasible for the first stage (the
/// surrogates touch the true rows there), so the step can only raise the
/// worst slack; in particular a feasible design stays feasible and an
/// infeasible one moves toward feasibility.
#[allow(clippy::too_many_arguments)]
pub fn optimize_positions(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    dec: &ChannelDecomposition,
    z0: &RVec,
    tx: &TxDesign,
    comb: &RxCombiners,
    refl: &Reflections,
    rows: RowSet,
) -> Result<PositionStep> {
    let m = dec.m_tx();
    let surrogates = assemble_rows(cfg, dc, dec, z0, tx, comb, refl, rows);
    if surrogates.is_empty() {
        return Ok(PositionStep { z: z0.clone(), slack_before: 0.0, slack_after: 0.0 });
    }
    let slack_at = |z: &RVec| {
        surrogates.iter().fold(f64::INFINITY, |s, row| s.min(row.q.eval(z) / row.scale))
    };
    let slack_before = slack_at(z0);

    // Both stages run in phase units of the displacement, ỹ = (2π/λ)(z−z₀).
    // In meters the curvature entries of H dominate the row constants by the
    // squared carrier wavenumber (~5·10³ at 3.5 GHz), so max-entry row
    // normalization would push the margin signal below what the interior
    // point method resolves; in phase units every coefficient class sits at
    // the row's natural scale and each row is normalized by that scale.
    let kappa = TAU / dc.wavelength_m;
    let row_quad = |row: &RowSurrogate, extra: usize, c_shift: f64| {
        let n = m + extra;
        let mut p = RMat::zeros(n, n);
        p.view_mut((0, 0), (m, m)).copy_from(&(-&row.q.h / (kappa * kappa * row.scale)));
        let mut r = RVec::zeros(n);
        r.rows_mut(0, m).copy_from(&(-&row.q.r / (kappa * row.scale)));
        QuadRow { p, r, c: -row.q.c / row.scale + c_shift }
    };
    let geometry = |extra: usize| {
        let mut rows = geometry_rows(z0, m + extra, cfg.aperture_m, cfg.min_spacing_m);
        for (a, _) in &mut rows {
            *a /= kappa;
        }
        rows
    };

    // Stage 1 over (ỹ, s): maximize s subject to Q_i(ỹ)/scale_i ≥ s.
    let n1 = m + 1;
    let mut quad_rows = Vec::with_capacity(surrogates.len());
    for row in &surrogates {
        let mut qr = row_quad(row, 1, 0.0);
        qr.r[m] = 1.0;
        quad_rows.push(qr);
    }
    let mut lin_rows = geometry(1);
    // Normalized margins lie in [−1, 1] at the incumbent, so a snug box on
    // the slack keeps the homogeneous embedding well centered; capping can
    // only understate the achievable slack, never break feasibility.
    let mut cap = RVec::zeros(n1);
    cap[m] = 1.0;
    lin_rows.push((cap.clone(), 2.0));
    lin_rows.push((-cap, 2.0));
    let mut obj_q = RVec::zeros(n1);
    obj_q[m] = -1.0;
    let stage1 = QcqpProblem {
        n: n1,
        obj_p: RMat::zeros(n1, n1),
        obj_q,
        quad_rows,
        lin_rows,
    };
    let sol = solve_qcqp_feasibility(&stage1)?.ok_or(Error::InfeasibleSurrogateStep)?;
    let s_star = sol[m];

    // A placement sweep that cannot lift the worst margin by even a tenth
    // of the feasibility tolerance is converged; keep the incumbent rather
    // than chase solver noise.
    let improvement = s_star - slack_before;
    if improvement <= 1e-7 {
        return Ok(PositionStep { z: z0.clone(), slack_before, slack_after: slack_before });
    }

    // Stage 2 over ỹ: stay just below the optimal slack, return the point
    // nearest the incumbent (minimum-norm displacement). The backoff is
    // proportional to the improvement so the feasible lens keeps enough
    // interior for the barrier to walk; sacrificing 0.1 % of the gain is
    // immaterial to the outer loop.
    let s_target = s_star - 1e-3 * improvement;
    let quad_rows = surrogates.iter().map(|row| row_quad(row, 0, s_target)).collect();
    let stage2 = QcqpProblem {
        n: m,
        obj_p: RMat::identity(m, m),
        obj_q: RVec::zeros(m),
        quad_rows,
        lin_rows: geometry(0),
    };
    let y = match solve_qcqp_feasibility(&stage2) {
        Ok(Some(y)) => y,
        // Stage 1 exhibited a point with slack s*, so the backed-off set is
        // nonempty; a failure here only means the lens is too thin for the
        // barrier, and the stage-1 point itself is the answer.
        Ok(None) | Err(Error::SolverFailure(_)) => sol.rows(0, m).into_owned(),
        Err(e) => return Err(e),
    };
    let z = z0 + y / kappa;
    let slack_after = slack_at(&z);
    Ok(PositionStep { z, slack_before, slack_after })
}
