//! Alternating block optimization of the joint transmit/receive design.
//!
//! One sweep updates, in order,
//!
//! 1. transmit covariances `{W_k}, R_s` — power-minimizing semidefinite
//!    program at fixed combiners, reflections, and positions
//!    ([`txdesign::build_and_solve`]),
//! 2. tag reflection coefficients `β` — max-slack linear feasibility
//!    ([`reflection::optimize_reflections`]),
//! 3. reader combiners `{u_t, v_q}` — per-stream generalized-eigenvector
//!    SINR maximization ([`rxdesign::optimize_combiners`]),
//! 4. fluid-antenna positions `z` — one concave-surrogate improvement step
//!    ([`faposition::optimize_positions`]), for schemes that move antennas,
//!
//! then re-evaluates every enforced constraint on the exact SINR/harvesting
//! functionals. Each block update is applied tentatively: a candidate that
//! would break a currently feasible design is rolled back, so once some
//! sweep ends feasible every later sweep stays feasible, and the recorded
//! objective can only step up by the 1 % margin-repair cap of the transmit
//! block. A block whose subproblem is infeasible or whose solver stalls
//! keeps the previous value and the sweep continues.
//!
//! Convergence is declared when two consecutive feasible sweeps change the
//! transmit power by less than `tol` in relative terms. The driver then
//! recovers rank-one user beamformers from the covariance design —
//! dominant eigenvectors when the covariances are numerically rank one,
//! Gaussian randomization otherwise — and reports the realized design. If
//! no sweep ever reaches feasibility the realization fails with
//! [`Error::NeverFeasible`] and is counted by the caller.

use crate::channel::{ChannelDecomposition, ChannelSet};
use crate::metrics;
use crate::reflection::{self, Reflections};
use crate::rxdesign::{self, RxCombiners};
use crate::scenario::{stream, DerivedConstants, ScenarioConfig};
use crate::txdesign::{self, RowSet, TxDesign, TxStructure};
use crate::{faposition, C64, CMat, CVec, Error, RVec, Result};

/// A named end-to-end design strategy selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Full design: every constraint family, movable antennas.
    Proposed,
    /// Full design on a fixed uniform antenna grid.
    Fpa,
    /// Zero-forcing user beams (power allocation only) on a fixed grid.
    Zf,
    /// Communication, backscatter, and harvesting constraints without the
    /// sensing rows; no dedicated sensing covariance.
    ComBcom,
    /// Sensing constraints alone; users receive no stream.
    SensOnly,
}

impl Scheme {
    /// Every scheme, in reporting order.
    pub const ALL: [Scheme; 5] =
        [Scheme::Proposed, Scheme::Fpa, Scheme::Zf, Scheme::ComBcom, Scheme::SensOnly];

    /// Parse a command-line scheme name.
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "proposed" => Ok(Scheme::Proposed),
            "fpa" => Ok(Scheme::Fpa),
            "zf" => Ok(Scheme::Zf),
            "com_bcom" => Ok(Scheme::ComBcom),
            "sens_only" => Ok(Scheme::SensOnly),
            other => Err(Error::UnknownScheme(other.to_string())),
        }
    }

    /// The scheme's command-line name.
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Fpa => "fpa",
            Scheme::Zf => "zf",
            Scheme::ComBcom => "com_bcom",
            Scheme::SensOnly => "sens_only",
        }
    }

    /// Constraint families the scheme enforces.
    pub fn rows(self) -> RowSet {
        match self {
            Scheme::Proposed | Scheme::Fpa | Scheme::Zf => RowSet::all(),
            Scheme::ComBcom => RowSet::comm_bcom(),
            Scheme::SensOnly => RowSet::sens_only(),
        }
    }

    /// Whether the antenna-position block runs.
    pub fn moves_antennas(self) -> bool {
        matches!(self, Scheme::Proposed | Scheme::ComBcom | Scheme::SensOnly)
    }

    fn tx_structure(self, set: &ChannelSet) -> TxStructure {
        match self {
            Scheme::Proposed | Scheme::Fpa => TxStructure::Covariances { with_rs: true },
            Scheme::Zf => TxStructure::FixedDirections { dirs: txdesign::zf_directions(set) },
            Scheme::ComBcom => TxStructure::Covariances { with_rs: false },
            Scheme::SensOnly => TxStructure::SensingOnly,
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Stopping controls of the alternating loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AoOptions {
    /// Relative objective change between consecutive feasible sweeps below
    /// which the loop stops.
    pub tol: f64,
    /// Maximum number of sweeps.
    pub max_iter: usize,
}

impl Default for AoOptions {
    fn default() -> Self {
        AoOptions { tol: 1e-3, max_iter: 30 }
    }
}

/// Result of one alternating-optimization run on one channel realization.
#[derive(Clone, Debug)]
pub struct AoOutcome {
    /// Final transmit design (rank-one user beams when recovery succeeded).
    pub design: TxDesign,
    /// Final reader combiners.
    pub combiners: RxCombiners,
    /// Final tag reflection coefficients.
    pub reflections: Reflections,
    /// Final antenna positions in m.
    pub positions: RVec,
    /// Realized transmit power of `design` in watts.
    pub objective_w: f64,
    /// Covariance-stage transmit power after each feasible sweep, watts.
    pub history_w: Vec<f64>,
    /// Number of sweeps executed.
    pub iterations: usize,
    /// Whether the relative-change test stopped the loop.
    pub converged: bool,
    /// Whether `design` carries verified rank-one user beamformers.
    pub rank_one: bool,
    /// Exact constraint metrics of the returned design.
    pub report: metrics::QosReport,
}

/// Uniform placement at the wider of the minimum spacing and the even grid,
/// clamped to the aperture.
fn initial_positions(m: usize, aperture_m: f64, min_spacing_m: f64) -> RVec {
    if m <= 1 {
        return RVec::zeros(m);
    }
    let spacing = min_spacing_m.max(aperture_m / (m as f64 - 1.0));
    RVec::from_fn(m, |i, _| (i as f64 * spacing).min(aperture_m))
}

/// Matched-filter starting covariances: 0.5 W split evenly over the users
/// along their own channels, 0.5 W spread evenly over the tag and target
/// directions.
fn initial_design(set: &ChannelSet) -> TxDesign {
    let m = set.h_br.ncols();
    let outer_unit = |h: &CVec| -> CMat {
        let n2 = h.norm_squared();
        if n2 > 0.0 {
            (h * h.adjoint()) * C64::new(1.0 / n2, 0.0)
        } else {
            CMat::zeros(m, m)
        }
    };

    let k = set.h_user.len();
    let w_cov: Vec<CMat> = set
        .h_user
        .iter()
        .map(|h| outer_unit(h) * C64::new(0.5 / k as f64, 0.0))
        .collect();

    let beacons: Vec<&CVec> = set.h_tag.iter().chain(set.h_target.iter()).collect();
    let mut r_s = CMat::zeros(m, m);
    if !beacons.is_empty() {
        let share = C64::new(0.5 / beacons.len() as f64, 0.0);
        for h in beacons {
            r_s += outer_unit(h) * share;
        }
    }

    TxDesign { w_cov, r_s, w_vec: None }
}

/// Run the alternating loop on one channel realization.
///
/// `realization` seeds the randomization stream used by rank-one recovery,
/// so repeated runs with identical inputs are bit-reproducible.
pub fn run(
    cfg: &ScenarioConfig,
    dc: &DerivedConstants,
    dec: &ChannelDecomposition,
    realization: usize,
    scheme: Scheme,
    opts: &AoOptions,
) -> Result<AoOutcome> {
    let m = dec.m_tx();
    let rows = scheme.rows();

    let mut z = initial_positions(m, cfg.aperture_m, cfg.min_spacing_m);
    let mut set = dec.materialize(&z);
    if scheme == Scheme::Zf && set.h_user.is_empty() {
        return Err(Error::InvalidConfig(
            "the zf scheme needs at least one user to steer".into(),
        ));
    }
    let structure = scheme.tx_structure(&set);

    let mut tx = initial_design(&set);
    let mut comb = RxCombiners::interference_suppressed(&set);
    let mut refl = Reflections::uniform(cfg.t_tags, 0.5);

    let feas = |set: &ChannelSet, tx: &TxDesign, comb: &RxCombiners, refl: &Reflections| {
        let report = metrics::check_all_qos(cfg, dc, set, tx, comb, refl);
        txdesign::report_matches_rows(&report, rows, cfg, dc)
    };
    let mut feasible_now = feas(&set, &tx, &comb, &refl);

    let mut history: Vec<f64> = Vec::new();
    let mut best: Option<(f64, TxDesign, RxCombiners, Reflections, RVec)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        iterations += 1;

        // Transmit covariances. A candidate may only replace the incumbent
        // if it preserves feasibility (or nothing is feasible yet).
        let solve = txdesign::build_and_solve(cfg, dc, &set, &comb, &refl, rows, &structure)?;
        if let Some(cand) = solve.design {
            let ok = feas(&set, &cand, &comb, &refl);
            if ok || !feasible_now {
                tx = cand;
                feasible_now = ok;
            }
        }

        // Reflection coefficients.
        if cfg.t_tags > 0 {
            if let Some(cand) = reflection::optimize_reflections(cfg, dc, &set, &tx, &comb, rows)? {
                let ok = feas(&set, &tx, &comb, &cand);
                if ok || !feasible_now {
                    refl = cand;
                    feasible_now = ok;
                }
            }
        }

        // Reader combiners.
        let (cand, _sinrs) = rxdesign::optimize_combiners(cfg, dc, &set, &tx, &refl)?;
        let ok = feas(&set, &tx, &cand, &refl);
        if ok || !feasible_now {
            comb = cand;
            feasible_now = ok;
        }

        // Antenna positions. A stalled or degenerate placement step keeps
        // the previous grid; the loop continues with the other blocks.
        if scheme.moves_antennas() {
            match faposition::optimize_positions(cfg, dc, dec, &z, &tx, &comb, &refl, rows) {
                Ok(step) => {
                    let cand_set = dec.materialize(&step.z);
                    let ok = feas(&cand_set, &tx, &comb, &refl);
                    if ok || !feasible_now {
                        z = step.z;
                        set = cand_set;
                        feasible_now = ok;
                    }
                }
                Err(Error::InfeasibleSurrogateStep) | Err(Error::SolverFailure(_)) => {}
                Err(e) => return Err(e),
            }
        }

        if feasible_now {
            let obj = tx.total_power();
            if best.as_ref().is_none_or(|(b, ..)| obj < *b) {
                best = Some((obj, tx.clone(), comb.clone(), refl.clone(), z.clone()));
            }
            let settled = history
                .last()
                .is_some_and(|&prev| (prev - obj).abs() <= opts.tol * prev.max(1e-300));
            history.push(obj);
            if settled {
                converged = true;
                break;
            }
        }
    }

    let Some((_, tx, comb, refl, z)) = best else {
        return Err(Error::NeverFeasible { max_iter: opts.max_iter });
    };
    let set = dec.materialize(&z);

    // Rank-one recovery of the user beams. Schemes without user streams
    // carry zero beamformers by construction; a failed randomization keeps
    // the covariance design and flags it.
    let k_users = set.h_user.len();
    let (design, rank_one) = if k_users == 0 || matches!(structure, TxStructure::SensingOnly) {
        let mut d = tx.clone();
        d.w_vec = Some(vec![CVec::zeros(m); k_users]);
        (d, true)
    } else {
        let mut rng = stream(cfg.seed, realization, "randomization");
        match txdesign::recover_rank_one(cfg, dc, &set, &comb, &refl, rows, &tx, &mut rng) {
            Ok(d) => (d, true),
            Err(Error::RandomizationFailed { .. }) => (tx.clone(), false),
            Err(e) => return Err(e),
        }
    };

    let report = metrics::check_all_qos(cfg, dc, &set, &design, &comb, &refl);
    let objective_w = design.total_power();
    Ok(AoOutcome {
        design,
        combiners: comb,
        reflections: refl,
        positions: z,
        objective_w,
        history_w: history,
        iterations,
        converged,
        rank_one,
        report,
    })
}
