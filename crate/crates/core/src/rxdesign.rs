//! Reader combiner design: per-stream SINR-optimal receive vectors.
//!
//! With the transmit design, reflection coefficients, and antenna positions
//! fixed, each reader stream's SINR is a generalized Rayleigh quotient
//!
//! ```text
//! SINR(u) = uᴴ·G̃·u / uᴴ·F̃·u
//! ```
//!
//! with a PSD signal matrix `G̃` and a positive-definite interference-plus-
//! noise matrix `F̃` (the `σ_R²·I` term keeps it invertible). The maximizer
//! is the dominant generalized eigenvector: whiten with the Cholesky factor
//! `F̃ = L·Lᴴ`, take the top eigenpair of `L⁻¹·G̃·L⁻ᴴ`, and map back through
//! `L⁻ᴴ`. Each stream decouples, so the block update is exact — no
//! relaxation gap — and the attained SINR is the eigenvalue itself.

use num_complex::Complex64;

use crate::channel::ChannelSet;
use crate::metrics::quad_form;
use crate::reflection::Reflections;
use crate::scenario::{DerivedConstants, ScenarioConfig};
use crate::txdesign::TxDesign;
use crate::{CMat, CVec, Error, Result};

/// Receive combiners at the reader: one per tag stream, one per target.
#[derive(Clone, Debug, PartialEq)]
pub struct RxCombiners {
    /// Backscatter-decoding combiners `u_t`, length T, each N-dimensional.
    pub u_tag: Vec<CVec>,
    /// Sensing combiners `v_q`, length Q, each N-dimensional.
    pub v_target: Vec<CVec>,
}

impl RxCombiners {
    /// Matched filters on the direct reader-side vectors — the simplest
    /// possible combiners.
    pub fn matched(set: &ChannelSet) -> Self {
        let unit = |v: &CVec| v / Complex64::new(v.norm(), 0.0);
        RxCombiners {
            u_tag: set.g_tag.iter().map(unit).collect(),
            v_target: set.f_target.iter().map(unit).collect(),
        }
    }

    /// Matched filters projected off the other streams' reader-side
    /// vectors. Plain matched filters leave the cross-stream echo terms at
    /// full strength, which makes the joint QoS system infeasible on most
    /// realizations before any block has adapted; nulling the other
    /// streams breaks that deadlock whenever the reader has enough
    /// antennas (falls back to the matched filter when it does not).
    pub fn interference_suppressed(set: &ChannelSet) -> Self {
        let t_tags = set.g_tag.len();
        let q_targets = set.f_target.len();
        let suppress = |own: &CVec, others: Vec<&CVec>| -> CVec {
            let mut basis: Vec<CVec> = Vec::new();
            for v in others {
                let mut w = v.clone();
                for b in &basis {
                    let c = b.dotc(&w);
                    w -= b * c;
                }
                let n = w.norm();
                if n > 1e-10 * v.norm() {
                    basis.push(w / Complex64::new(n, 0.0));
                }
            }
            let mut u = own.clone();
            for b in &basis {
                let c = b.dotc(&u);
                u -= b * c;
            }
            if u.norm() < 1e-8 * own.norm() {
                u = own.clone();
            }
            let n = u.norm();
            u / Complex64::new(n, 0.0)
        };
        let u_tag = (0..t_tags)
            .map(|t| {
                let others: Vec<&CVec> = set
                    .g_tag
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != t)
                    .map(|(_, g)| g)
                    .chain(set.f_target.iter())
                    .collect();
                suppress(&set.g_tag[t], others)
            })
            .collect();
        let v_target = (0..q_targets)
            .map(|q| {
                let others: Vec<&CVec> = set
                    .f_target
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != q)
                    .map(|(_, f)| f)
                    .chain(set.g_tag.iter())
                    .collect();
                suppress(&set.f_target[q], others)
            })
            .collect();
        RxCombiners { u_tag, v_target }
    }
}

/// Which reader stream a combiner serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    Tag(usize),
    Target(usize),
}

/// Signal and interference-plus-noise matrices of one reader stream.
///
/// Expanding the received power through any combiner `a` gives
/// `aᴴ·G̃·a` for the wanted stream and `aᴴ·F̃·a` for everything else:
/// other tags' backscatter, target echoes (single and double bounce),
/// the direct BS→reader leak `H_BR·X·H_BRᴴ`, and thermal noise.
pub fn build_rx_matrices(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    set: &ChannelSet,
    tx: &TxDesign,
    refl: &Reflections,
    stream: StreamKind,
) -> (CMat, CMat) {
    let n = set.g_tag.first().map_or_else(|| set.f_target[0].len(), |g| g.len());
    let t_tags = set.h_tag.len();
    let q_targets = set.h_target.len();
    let rcs = cfg.rcs_var;
    let x = tx.x_total();

    let p_tag: Vec<f64> = set.h_tag.iter().map(|h| quad_form(&x, h)).collect();
    let p_target: Vec<f64> = set.h_target.iter().map(|h| quad_form(&x, h)).collect();
    // Echo power re-radiated by target q: its own illumination plus the
    // tags' reflections bouncing off it.
    let echo: Vec<f64> = (0..q_targets)
        .map(|q| {
            let mut p = p_target[q];
            for t in 0..t_tags {
                p += refl.beta[t] * set.g_tag_target[(t, q)].norm_sqr() * p_tag[t];
            }
            p
        })
        .collect();

    let outer = |v: &CVec, w: f64| -> CMat { v * v.adjoint() * Complex64::new(w, 0.0) };

    let mut signal = CMat::zeros(n, n);
    let mut interf = CMat::zeros(n, n);
    match stream {
        StreamKind::Tag(t) => {
            signal += outer(&set.g_tag[t], refl.beta[t] * p_tag[t]);
            for i in 0..t_tags {
                if i != t {
                    interf += outer(&set.g_tag[i], refl.beta[i] * p_tag[i]);
                }
            }
            for q in 0..q_targets {
                interf += outer(&set.f_target[q], rcs * echo[q]);
            }
        }
        StreamKind::Target(q) => {
            signal += outer(&set.f_target[q], rcs * echo[q]);
            for i in 0..t_tags {
                interf += outer(&set.g_tag[i], refl.beta[i] * p_tag[i]);
            }
            for j in 0..q_targets {
                if j != q {
                    interf += outer(&set.f_target[j], rcs * echo[j]);
                }
            }
        }
    }
    interf += &set.h_br * &x * set.h_br.adjoint();
    for i in 0..n {
        interf[(i, i)] += Complex64::new(dc.noise_reader_w, 0.0);
    }
    (signal, interf)
}

/// Dominant generalized eigenpair of `(G̃, F̃)`: the unit-norm combiner
/// attaining the stream's maximum SINR, and that SINR.
pub fn solve_combiner(signal: &CMat, interf: &CMat) -> Result<(CVec, f64)> {
    let chol = interf.clone().cholesky().ok_or_else(|| {
        Error::SolverFailure("interference-plus-noise matrix not positive definite".into())
    })?;
    let l = chol.l();
    // M = L⁻¹·G̃·L⁻ᴴ, Hermitian with the same spectrum as F̃⁻¹·G̃.
    let a = l
        .solve_lower_triangular(signal)
        .ok_or_else(|| Error::SolverFailure("singular Cholesky factor".into()))?;
    let b = l
        .solve_lower_triangular(&a.adjoint())
        .ok_or_else(|| Error::SolverFailure("singular Cholesky factor".into()))?;
    let m = b.adjoint();
    let eig = m.symmetric_eigen();
    let mut top = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[top] {
            top = i;
        }
    }
    let lambda = eig.eigenvalues[top].max(0.0);
    let q = eig.eigenvectors.column(top).clone_owned();
    let u = l
        .adjoint()
        .solve_upper_triangular(&q)
        .ok_or_else(|| Error::SolverFailure("singular Cholesky factor".into()))?;
    let norm = u.norm();
    Ok((u / Complex64::new(norm, 0.0), lambda))
}

/// SINR-optimal combiners for every reader stream under the given design.
/// Also returns the attained per-stream SINRs (tags first, then targets).
pub fn optimize_combiners(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    set: &ChannelSet,
    tx: &TxDesign,
    refl: &Reflections,
) -> Result<(RxCombiners, Vec<f64>)> {
    let t_tags = set.h_tag.len();
    let q_targets = set.h_target.len();
    let mut u_tag = Vec::with_capacity(t_tags);
    let mut v_target = Vec::with_capacity(q_targets);
    let mut sinrs = Vec::with_capacity(t_tags + q_targets);
    for t in 0..t_tags {
        let (g, f) = build_rx_matrices(cfg, dc, set, tx, refl, StreamKind::Tag(t));
        let (u, lambda) = solve_combiner(&g, &f)?;
        u_tag.push(u);
        sinrs.push(lambda);
    }
    for q in 0..q_targets {
        let (g, f) = build_rx_matrices(cfg, dc, set, tx, refl, StreamKind::Target(q));
        let (v, lambda) = solve_combiner(&g, &f)?;
        v_target.push(v);
        sinrs.push(lambda);
    }
    Ok((RxCombiners { u_tag, v_target }, sinrs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_decomposition;
    use crate::conic::{self, BlockSpec, SdpProblem, SdpRow, SolveStatusKind};
    use crate::metrics::{reader_sinr, ReaderStream};
    use crate::reflection::Reflections;
    use crate::scenario::{derive_constants, sample_geometry, ScenarioConfig};
    use crate::txdesign::{build_and_solve, RowSet, TxStructure};
    use crate::RVec;
    use approx::assert_relative_eq;

    fn solved_scene() -> (ScenarioConfig, DerivedConstants, ChannelSet, TxDesign, Reflections) {
        let cfg = ScenarioConfig::default();
        let dc = derive_constants(&cfg).unwrap();
        let geom = sample_geometry(&cfg, 0);
        let chan = generate_decomposition(&cfg, &dc, &geom, 0);
        let z = RVec::from_iterator(
            cfg.m_tx,
            (0..cfg.m_tx).map(|i| i as f64 * cfg.aperture_m / (cfg.m_tx - 1) as f64),
        );
        let set = chan.materialize(&z);
        let comb = RxCombiners::matched(&set);
        let refl = Reflections::uniform(cfg.t_tags, 0.5);
        let tx = build_and_solve(
            &cfg,
            &dc,
            &set,
            &comb,
            &refl,
            RowSet::comm_bcom(),
            &TxStructure::Covariances { with_rs: true },
        )
        .unwrap()
        .design
        .unwrap();
        (cfg, dc, set, tx, refl)
    }

    /// The Rayleigh-quotient matrices must reproduce the ground-truth
    /// reader SINR for any combiner.
    #[test]
    fn rx_matrices_reproduce_reader_sinr() {
        let (cfg, dc, set, tx, refl) = solved_scene();
        let comb = RxCombiners::matched(&set);
        for t in 0..cfg.t_tags {
            let (g, f) = build_rx_matrices(&cfg, &dc, &set, &tx, &refl, StreamKind::Tag(t));
            let u = &comb.u_tag[t];
            let ratio = quad_form(&g, u) / quad_form(&f, u);
            let truth =
                reader_sinr(&set, &tx, &refl, &comb, cfg.rcs_var, dc.noise_reader_w, ReaderStream::Tag(t));
            assert_relative_eq!(ratio, truth, max_relative = 1e-10);
        }
        for q in 0..cfg.q_targets {
            let (g, f) = build_rx_matrices(&cfg, &dc, &set, &tx, &refl, StreamKind::Target(q));
            let v = &comb.v_target[q];
            let ratio = quad_form(&g, v) / quad_form(&f, v);
            let truth = reader_sinr(
                &set,
                &tx,
                &refl,
                &comb,
                cfg.rcs_var,
                dc.noise_reader_w,
                ReaderStream::Target(q),
            );
            assert_relative_eq!(ratio, truth, max_relative = 1e-10);
        }
    }

    /// The whitened eigen solution must match an independent SDP oracle:
    /// maximize ⟨G̃,U⟩ subject to ⟨F̃,U⟩ = 1, U ⪰ 0, whose optimum is the
    /// top generalized eigenvalue.
    #[test]
    fn combiner_matches_sdp_oracle_and_attains_its_sinr() {
        let (cfg, dc, set, tx, refl) = solved_scene();
        for t in 0..cfg.t_tags {
            let (g, f) = build_rx_matrices(&cfg, &dc, &set, &tx, &refl, StreamKind::Tag(t));
            let (u, lambda) = solve_combiner(&g, &f).unwrap();

            let n = g.nrows();
            let prob = SdpProblem {
                blocks: vec![BlockSpec::Covariance { dim: n }],
                objective: vec![Some(-&g)],
                ineq: vec![],
                eq: vec![SdpRow { coeffs: vec![Some(f.clone())], rhs: 1.0 }],
            };
            let sol = conic::solve_sdp(&prob).unwrap();
            assert_eq!(sol.status, SolveStatusKind::Optimal);
            assert_relative_eq!(-sol.objective, lambda, max_relative = 1e-6);

            // And the recovered vector really attains it in the metrics.
            let mut comb = RxCombiners::matched(&set);
            comb.u_tag[t] = u;
            let attained =
                reader_sinr(&set, &tx, &refl, &comb, cfg.rcs_var, dc.noise_reader_w, ReaderStream::Tag(t));
            assert_relative_eq!(attained, lambda, max_relative = 1e-9);
        }
    }

    /// Optimized combiners can never do worse than the matched filters
    /// they replace.
    #[test]
    fn optimized_combiners_dominate_matched_filters() {
        let (cfg, dc, set, tx, refl) = solved_scene();
        let matched = RxCombiners::matched(&set);
        let (opt, sinrs) = optimize_combiners(&cfg, &dc, &set, &tx, &refl).unwrap();
        for t in 0..cfg.t_tags {
            let before = reader_sinr(
                &set,
                &tx,
                &refl,
                &matched,
                cfg.rcs_var,
                dc.noise_reader_w,
                ReaderStream::Tag(t),
            );
            let after =
                reader_sinr(&set, &tx, &refl, &opt, cfg.rcs_var, dc.noise_reader_w, ReaderStream::Tag(t));
            assert!(
                after >= before * (1.0 - 1e-9),
                "tag {t}: optimized {after} < matched {before}"
            );
            assert_relative_eq!(after, sinrs[t], max_relative = 1e-9);
        }
        for q in 0..cfg.q_targets {
            let before = reader_sinr(
                &set,
                &tx,
                &refl,
                &matched,
                cfg.rcs_var,
                dc.noise_reader_w,
                ReaderStream::Target(q),
            );
            let after = reader_sinr(
                &set,
                &tx,
                &refl,
                &opt,
                cfg.rcs_var,
                dc.noise_reader_w,
                ReaderStream::Target(q),
            );
            assert!(
                after >= before * (1.0 - 1e-9),
                "target {q}: optimized {after} < matched {before}"
            );
            assert_relative_eq!(after, sinrs[cfg.t_tags + q], max_relative = 1e-9);
        }
    }

    /// Combiner scaling cancels out of the quotient, so the returned
    /// unit-norm vector is as good as any scaled copy.
    #[test]
    fn returned_combiner_is_unit_norm() {
        let (cfg, dc, set, tx, refl) = solved_scene();
        let (opt, _) = optimize_combiners(&cfg, &dc, &set, &tx, &refl).unwrap();
        for u in opt.u_tag.iter().chain(opt.v_target.iter()) {
            assert_relative_eq!(u.norm(), 1.0, max_relative = 1e-12);
        }
    }

    /// Suppressed filters must null every other stream's reader-side vector
    /// while keeping a usable gain on their own stream. With N = 4 reader
    /// antennas and T − 1 + Q = 3 directions to cancel, the nulls are exact.
    #[test]
    fn suppressed_filters_null_cross_streams_and_keep_own_gain() {
        let cfg = ScenarioConfig::default();
        let dc = derive_constants(&cfg).unwrap();
        let geom = sample_geometry(&cfg, 0);
        let chan = generate_decomposition(&cfg, &dc, &geom, 0);
        let z = RVec::from_iterator(
            cfg.m_tx,
            (0..cfg.m_tx).map(|i| i as f64 * cfg.aperture_m / (cfg.m_tx - 1) as f64),
        );
        let set = chan.materialize(&z);
        let comb = RxCombiners::interference_suppressed(&set);

        let cross = |a: &CVec, v: &CVec| a.dotc(v).norm() / v.norm();
        for t in 0..cfg.t_tags {
            let u = &comb.u_tag[t];
            assert_relative_eq!(u.norm(), 1.0, max_relative = 1e-12);
            assert!(cross(u, &set.g_tag[t]) > 1e-3, "tag {t} combiner lost its own stream");
            for i in 0..cfg.t_tags {
                if i != t {
                    assert!(
                        cross(u, &set.g_tag[i]) < 1e-10,
                        "tag {t} combiner leaks tag {i}: {}",
                        cross(u, &set.g_tag[i])
                    );
                }
            }
            for q in 0..cfg.q_targets {
                assert!(
                    cross(u, &set.f_target[q]) < 1e-10,
                    "tag {t} combiner leaks target {q}: {}",
                    cross(u, &set.f_target[q])
                );
            }
        }
        for q in 0..cfg.q_targets {
            let v = &comb.v_target[q];
            for t in 0..cfg.t_tags {
                assert!(cross(v, &set.g_tag[t]) < 1e-10, "target {q} combiner leaks tag {t}");
            }
            for j in 0..cfg.q_targets {
                if j != q {
                    assert!(cross(v, &set.f_target[j]) < 1e-10, "target {q} combiner leaks target {j}");
                }
            }
        }
    }

    /// When the reader has fewer antennas than streams to cancel, the
    /// projection residual vanishes and the constructor must fall back to
    /// the plain matched filter rather than return a zero vector.
    #[test]
    fn suppression_falls_back_to_matched_when_reader_is_too_small() {
        let mut cfg = ScenarioConfig::default();
        cfg.n_rx = 1;
        let dc = derive_constants(&cfg).unwrap();
        let geom = sample_geometry(&cfg, 0);
        let chan = generate_decomposition(&cfg, &dc, &geom, 0);
        let z = RVec::from_iterator(
            cfg.m_tx,
            (0..cfg.m_tx).map(|i| i as f64 * cfg.aperture_m / (cfg.m_tx - 1) as f64),
        );
        let set = chan.materialize(&z);
        let suppressed = RxCombiners::interference_suppressed(&set);
        let matched = RxCombiners::matched(&set);
        // One reader antenna: a single basis vector spans everything, so
        // every projection residual is ~0 and the fallback must trigger.
        for (s, m) in suppressed.u_tag.iter().zip(matched.u_tag.iter()) {
            assert_relative_eq!((s - m).norm(), 0.0, epsilon = 1e-12);
        }
        for (s, m) in suppressed.v_target.iter().zip(matched.v_target.iter()) {
            assert_relative_eq!((s - m).norm(), 0.0, epsilon = 1e-12);
        }
    }
}
