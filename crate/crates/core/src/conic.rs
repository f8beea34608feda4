//! Conic solver interface: complex SDPs, feasibility LPs, and convex QCQPs.
//!
//! Complex Hermitian semidefinite programs are lowered to real symmetric
//! ones through the trace-preserving embedding
//!
//! ```text
//! emb(H) = ½·[Re(H)  −Im(H); Im(H)  Re(H)],
//! tr(emb(H)·Y) = Re tr(H·X)   whenever   Y = [Re(X) −Im(X); Im(X) Re(X)],
//! ```
//!
//! solved over an unstructured real PSD variable `Y ⪰ 0`; block-averaging
//! `X = (Y₁₁+Y₂₂)/2 + j(Y₂₁−Y₁₂)/2` afterwards recovers a complex PSD
//! matrix with identical objective and constraint values. Quadratic
//! constraint rows `½xᵀPx + rᵀx + c ≤ 0` become rotated second-order cones
//! through an eigenvalue square root of `P`; a negative eigenvalue beyond
//! round-off is reported as a nonconvexity certificate instead of being
//! clamped.
//!
//! Every semidefinite solve returns independently recomputed KKT residuals
//! (primal feasibility, dual matrix positivity, duality gap) from the raw
//! primal/dual vectors, rather than echoing the solver's internal report.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus,
    SupportedConeT::{self, NonnegativeConeT, PSDTriangleConeT, SecondOrderConeT, ZeroConeT},
};
use num_complex::Complex64;

use crate::{CMat, CVec, Error, RMat, RVec, Result};

/// Termination state of a conic solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatusKind {
    /// Solution accepted: solver converged and the recomputed KKT residuals
    /// are within tolerance.
    Optimal,
    /// A certificate of primal infeasibility was produced.
    Infeasible,
    /// Iteration or time limit hit before convergence.
    MaxIter,
    /// Solver breakdown, or a "solved" flag contradicted by the residuals.
    NumericalFailure,
}

/// Independently recomputed optimality residuals of a semidefinite solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    /// Largest scaled constraint violation, including primal block negativity.
    pub primal: f64,
    /// Most negative scaled eigenvalue of the dual slack matrices.
    pub dual: f64,
    /// Scaled difference between primal and dual objective values.
    pub gap: f64,
}

impl KktResiduals {
    /// Largest of the three residuals.
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

/// One matrix variable of an [`SdpProblem`].
#[derive(Clone, Debug)]
pub enum BlockSpec {
    /// A full Hermitian PSD variable of the given complex dimension.
    Covariance { dim: usize },
    /// A rank-one variable `p·d·dᴴ` with `p ≥ 0` along the fixed direction
    /// `d`; constraint matrices collapse to the scalar `Re(dᴴCd)·p`.
    Direction { dir: CVec },
}

impl BlockSpec {
    fn complex_dim(&self) -> usize {
        match self {
            BlockSpec::Covariance { dim } => *dim,
            BlockSpec::Direction { dir } => dir.len(),
        }
    }
}

/// One linear row `Σ_b Re tr(C_b·X_b) (≤ or =) rhs`; `None` blocks carry a
/// zero coefficient.
#[derive(Clone, Debug)]
pub struct SdpRow {
    pub coeffs: Vec<Option<CMat>>,
    pub rhs: f64,
}

/// A complex-variable semidefinite program in inequality form:
/// minimize `Σ_b Re tr(C⁰_b·X_b)` over PSD blocks subject to linear trace
/// rows.
#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub blocks: Vec<BlockSpec>,
    /// Objective coefficient per block (`None` = zero).
    pub objective: Vec<Option<CMat>>,
    /// `≤` rows.
    pub ineq: Vec<SdpRow>,
    /// `=` rows.
    pub eq: Vec<SdpRow>,
}

/// Result of [`solve_sdp`]: primal blocks, dual multipliers, residuals.
#[derive(Clone, Debug)]
pub struct SolveStatus {
    pub status: SolveStatusKind,
    /// Objective value recomputed from the extracted blocks.
    pub objective: f64,
    /// Primal blocks as complex matrices (rank-one blocks reconstructed).
    pub blocks: Vec<CMat>,
    /// Multipliers of the `≤` rows (nonnegative), original scaling.
    pub duals_ineq: Vec<f64>,
    /// Multipliers of the `=` rows (free sign), original scaling.
    pub duals_eq: Vec<f64>,
    pub kkt: KktResiduals,
    pub iterations: u32,
}

/// Half-vectorization length of an n×n symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Real symmetric embedding `½[Re −Im; Im Re]` of a Hermitian matrix.
pub fn embed_hermitian(h: &CMat) -> RMat {
    let n = h.nrows();
    let mut out = RMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = h[(i, j)];
            out[(i, j)] = 0.5 * v.re;
            out[(n + i, n + j)] = 0.5 * v.re;
            out[(i, n + j)] = -0.5 * v.im;
            out[(n + i, j)] = 0.5 * v.im;
        }
    }
    out
}

/// Recover a complex Hermitian matrix from a real symmetric one by block
/// averaging; exact on matrices of the form `[Re −Im; Im Re]`.
pub fn extract_hermitian(y: &RMat) -> CMat {
    let n = y.nrows() / 2;
    let mut out = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let re = 0.5 * (y[(i, j)] + y[(n + i, n + j)]);
            let im = 0.5 * (y[(n + i, j)] - y[(i, n + j)]);
            out[(i, j)] = Complex64::new(re, im);
        }
    }
    // Symmetrize to kill round-off skew.
    let herm = (&out + out.adjoint()) * Complex64::new(0.5, 0.0);
    herm
}

/// Scaled column-major upper-triangle vectorization: off-diagonal entries
/// carry √2 so that `svec(A)ᵀ·svec(B) = tr(A·B)` for symmetric A, B.
pub fn svec(mat: &RMat) -> RVec {
    let n = mat.nrows();
    let mut out = RVec::zeros(svec_len(n));
    let mut idx = 0;
    let rt2 = 2f64.sqrt();
    for c in 0..n {
        for r in 0..=c {
            out[idx] = if r == c { mat[(r, c)] } else { rt2 * mat[(r, c)] };
            idx += 1;
        }
    }
    out
}

/// Inverse of [`svec`].
fn unsvec(v: &[f64], n: usize) -> RMat {
    let mut out = RMat::zeros(n, n);
    let mut idx = 0;
    let rt2 = 2f64.sqrt();
    for c in 0..n {
        for r in 0..=c {
            let val = if r == c { v[idx] } else { v[idx] / rt2 };
            out[(r, c)] = val;
            out[(c, r)] = val;
            idx += 1;
        }
    }
    out
}

/// Sparse-triplet accumulator for clarabel's CSC format.
struct CscBuilder {
    nrows: usize,
    cols: Vec<Vec<(usize, f64)>>,
}

impl CscBuilder {
    fn new(nrows: usize, ncols: usize) -> Self {
        CscBuilder { nrows, cols: vec![Vec::new(); ncols] }
    }

    fn push(&mut self, row: usize, col: usize, val: f64) {
        if val != 0.0 {
            self.cols[col].push((row, val));
        }
    }

    fn build(mut self) -> CscMatrix<f64> {
        let ncols = self.cols.len();
        let mut colptr = Vec::with_capacity(ncols + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in &mut self.cols {
            col.sort_by_key(|&(r, _)| r);
            for &(r, v) in col.iter() {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        CscMatrix::new(self.nrows, ncols, colptr, rowval, nzval)
    }
}

fn settings() -> clarabel::solver::DefaultSettings<f64> {
    // Rows whose attained signal sits orders of magnitude below the row's
    // coefficient scale (sensing rows under a strong direct leak) translate
    // the default 1e-8 feasibility tolerance into ~1e-5 signal-relative
    // error, so push the solver well past the ground-truth slack.
    DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_feas(1e-11)
        .tol_gap_abs(1e-11)
        .tol_gap_rel(1e-11)
        .build()
        .expect("static settings are valid")
}

fn settings_qcqp() -> clarabel::solver::DefaultSettings<f64> {
    let verbose = std::env::var("QCQP_VERBOSE").is_ok();
    // The placement steps tolerate a little more slack than the power
    // designs (the outer loop re-validates every step against the ground
    // truth), and their curvature-heavy rows stall the barrier before the
    // tightest tolerances are reachable. Accept a near-solved iterate
    // instead of reporting insufficient progress.
    DefaultSettingsBuilder::default()
        .verbose(verbose)
        .tol_feas(1e-10)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .reduced_tol_feas(1e-7)
        .reduced_tol_gap_abs(1e-7)
        .reduced_tol_gap_rel(1e-7)
        .build()
        .expect("static settings are valid")
}

/// Largest |entry| of the row's coefficients and rhs, for row equilibration.
fn row_scale(row: &SdpRow, blocks: &[BlockSpec]) -> f64 {
    let mut s: f64 = row.rhs.abs();
    for (b, c) in row.coeffs.iter().enumerate() {
        if let Some(c) = c {
            match &blocks[b] {
                BlockSpec::Covariance { .. } => {
                    for v in c.iter() {
                        s = s.max(v.norm());
                    }
                }
                BlockSpec::Direction { dir } => {
                    s = s.max(collapse(c, dir).abs());
                }
            }
        }
    }
    if s > 0.0 { s } else { 1.0 }
}

/// `Re(dᴴ C d)` — the scalar a trace row sees of a rank-one block.
fn collapse(c: &CMat, d: &CVec) -> f64 {
    let cd = c * d;
    d.dotc(&cd).re
}

/// Hermitian part of the smallest eigenvalue, for PSD checks.
fn min_eig_hermitian(h: &CMat) -> f64 {
    if h.nrows() == 0 {
        return 0.0;
    }
    h.clone().symmetric_eigen().eigenvalues.min()
}

/// Solve a complex-block SDP and recompute its optimality certificate.
pub fn solve_sdp(prob: &SdpProblem) -> Result<SolveStatus> {
    let nb = prob.blocks.len();
    assert_eq!(prob.objective.len(), nb, "one objective coefficient per block");

    // Variable layout: svec'd PSD embeddings first, then rank-one powers.
    let mut offsets = Vec::with_capacity(nb);
    let mut nvar = 0usize;
    for spec in &prob.blocks {
        offsets.push(nvar);
        nvar += match spec {
            BlockSpec::Covariance { dim } => svec_len(2 * dim),
            BlockSpec::Direction { .. } => 1,
        };
    }

    // Substitute X = var_scale·X̃ so the solver works on O(1) magnitudes:
    // physical powers range from ~1e−13 W noise floors to watts, and the
    // interior-point stop tests mix absolute and relative criteria.
    let mut log_acc = 0.0;
    let mut log_cnt = 0usize;
    for row in prob.ineq.iter().chain(prob.eq.iter()) {
        let coeff_max = row
            .coeffs
            .iter()
            .flatten()
            .flat_map(|c| c.iter())
            .fold(0f64, |m, v| m.max(v.norm()));
        if coeff_max > 0.0 && row.rhs != 0.0 {
            log_acc += (row.rhs.abs() / coeff_max).ln();
            log_cnt += 1;
        }
    }
    let var_scale = if log_cnt > 0 { (log_acc / log_cnt as f64).exp() } else { 1.0 };

    let n_eq = prob.eq.len();
    let n_ineq = prob.ineq.len();
    let n_dir = prob.blocks.iter().filter(|b| matches!(b, BlockSpec::Direction { .. })).count();
    let psd_dims: Vec<usize> = prob
        .blocks
        .iter()
        .filter_map(|b| match b {
            BlockSpec::Covariance { dim } => Some(2 * dim),
            BlockSpec::Direction { .. } => None,
        })
        .collect();
    let n_psd_rows: usize = psd_dims.iter().map(|&d| svec_len(d)).sum();
    let nrows = n_eq + n_ineq + n_dir + n_psd_rows;

    let mut a = CscBuilder::new(nrows, nvar);
    let mut b = vec![0.0; nrows];

    let mut eq_scales = Vec::with_capacity(n_eq);
    let mut ineq_scales = Vec::with_capacity(n_ineq);
    let fill_row = |a: &mut CscBuilder, b: &mut Vec<f64>, out_row: usize, row: &SdpRow, scale: f64| {
        for (blk, coeff) in row.coeffs.iter().enumerate() {
            let Some(c) = coeff else { continue };
            match &prob.blocks[blk] {
                BlockSpec::Covariance { .. } => {
                    let vec = svec(&embed_hermitian(c));
                    for (i, &v) in vec.iter().enumerate() {
                        a.push(out_row, offsets[blk] + i, v * var_scale / scale);
                    }
                }
                BlockSpec::Direction { dir } => {
                    a.push(out_row, offsets[blk], collapse(c, dir) * var_scale / scale);
                }
            }
        }
        b[out_row] = row.rhs / scale;
    };

    for (r, row) in prob.eq.iter().enumerate() {
        let s = row_scale(row, &prob.blocks);
        eq_scales.push(s);
        fill_row(&mut a, &mut b, r, row, s);
    }
    for (r, row) in prob.ineq.iter().enumerate() {
        let s = row_scale(row, &prob.blocks);
        ineq_scales.push(s);
        fill_row(&mut a, &mut b, n_eq + r, row, s);
    }

    // Rank-one powers stay nonnegative; PSD blocks mirror into their cones.
    let mut row_cursor = n_eq + n_ineq;
    for (blk, spec) in prob.blocks.iter().enumerate() {
        if matches!(spec, BlockSpec::Direction { .. }) {
            a.push(row_cursor, offsets[blk], -1.0);
            row_cursor += 1;
        }
    }
    for (blk, spec) in prob.blocks.iter().enumerate() {
        if let BlockSpec::Covariance { dim } = spec {
            for i in 0..svec_len(2 * dim) {
                a.push(row_cursor, offsets[blk] + i, -1.0);
                row_cursor += 1;
            }
        }
    }
    debug_assert_eq!(row_cursor, nrows);

    let mut q = vec![0.0; nvar];
    for (blk, coeff) in prob.objective.iter().enumerate() {
        let Some(c) = coeff else { continue };
        match &prob.blocks[blk] {
            BlockSpec::Covariance { .. } => {
                let vec = svec(&embed_hermitian(c));
                for (i, &v) in vec.iter().enumerate() {
                    q[offsets[blk] + i] += v;
                }
            }
            BlockSpec::Direction { dir } => q[offsets[blk]] += collapse(c, dir),
        }
    }
    // Normalize the objective so the solver-side cost is O(1); otherwise a
    // tiny-entry objective (e.g. physical powers in watts) sits below the
    // interior point's absolute gap tolerance and it stops prematurely.
    // Identity objectives have obj_scale = 1 and are untouched.
    let obj_scale = q.iter().fold(0f64, |m, &v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for v in &mut q {
        *v /= obj_scale;
    }

    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_eq > 0 {
        cones.push(ZeroConeT(n_eq));
    }
    if n_ineq + n_dir > 0 {
        cones.push(NonnegativeConeT(n_ineq + n_dir));
    }
    for &d in &psd_dims {
        cones.push(PSDTriangleConeT(d));
    }

    let p = CscMatrix::zeros((nvar, nvar));
    let a = a.build();
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings())
        .map_err(|e| Error::SolverFailure(format!("solver setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let raw_status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatusKind::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatusKind::Infeasible
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatusKind::MaxIter,
        _ => SolveStatusKind::NumericalFailure,
    };

    if raw_status != SolveStatusKind::Optimal {
        return Ok(SolveStatus {
            status: raw_status,
            objective: f64::NAN,
            blocks: Vec::new(),
            duals_ineq: Vec::new(),
            duals_eq: Vec::new(),
            kkt: KktResiduals { primal: f64::NAN, dual: f64::NAN, gap: f64::NAN },
            iterations: sol.iterations,
        });
    }

    // Extract primal blocks, undoing the variable scaling.
    let mut blocks_out = Vec::with_capacity(nb);
    for (blk, spec) in prob.blocks.iter().enumerate() {
        match spec {
            BlockSpec::Covariance { dim } => {
                let len = svec_len(2 * dim);
                let y = unsvec(&sol.x[offsets[blk]..offsets[blk] + len], 2 * dim);
                blocks_out.push(extract_hermitian(&y) * Complex64::new(var_scale, 0.0));
            }
            BlockSpec::Direction { dir } => {
                let p_val = sol.x[offsets[blk]].max(0.0) * var_scale;
                blocks_out.push(dir * dir.adjoint() * Complex64::new(p_val, 0.0));
            }
        }
    }

    // Objective recomputed from the extraction.
    let mut objective = 0.0;
    for (blk, coeff) in prob.objective.iter().enumerate() {
        if let Some(c) = coeff {
            objective += re_tr(c, &blocks_out[blk]);
        }
    }

    // Duals, unscaled back to the original rows: the solver saw coefficient
    // C·var_scale/s_r against an objective divided by obj_scale, so its
    // multiplier maps back via ×var_scale·obj_scale/s_r.
    let duals_eq: Vec<f64> =
        (0..n_eq).map(|r| sol.z[r] * var_scale * obj_scale / eq_scales[r]).collect();
    let duals_ineq: Vec<f64> = (0..n_ineq)
        .map(|r| sol.z[n_eq + r].max(0.0) * var_scale * obj_scale / ineq_scales[r])
        .collect();

    let kkt = recompute_kkt(prob, &blocks_out, &duals_ineq, &duals_eq, objective);
    let status = if kkt.max() <= 1e-4 { SolveStatusKind::Optimal } else { SolveStatusKind::NumericalFailure };

    Ok(SolveStatus {
        status,
        objective,
        blocks: blocks_out,
        duals_ineq,
        duals_eq,
        kkt,
        iterations: sol.iterations,
    })
}

/// `Re tr(C·X)`.
pub fn re_tr(c: &CMat, x: &CMat) -> f64 {
    let mut acc = 0.0;
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            acc += (c[(i, j)] * x[(j, i)]).re;
        }
    }
    acc
}

fn recompute_kkt(
    prob: &SdpProblem,
    blocks: &[CMat],
    duals_ineq: &[f64],
    duals_eq: &[f64],
    objective: f64,
) -> KktResiduals {
    // Primal: scaled row violations plus block negativity.
    let mut primal = 0f64;
    for (r, row) in prob.eq.iter().enumerate() {
        let s = row_scale(row, &prob.blocks);
        let lhs: f64 = row
            .coeffs
            .iter()
            .enumerate()
            .filter_map(|(b, c)| c.as_ref().map(|c| re_tr(c, &blocks[b])))
            .sum();
        let _ = r;
        primal = primal.max((lhs - row.rhs).abs() / s);
    }
    for row in prob.ineq.iter() {
        let s = row_scale(row, &prob.blocks);
        let lhs: f64 = row
            .coeffs
            .iter()
            .enumerate()
            .filter_map(|(b, c)| c.as_ref().map(|c| re_tr(c, &blocks[b])))
            .sum();
        primal = primal.max((lhs - row.rhs).max(0.0) / s);
    }
    for (blk, x) in blocks.iter().enumerate() {
        if matches!(prob.blocks[blk], BlockSpec::Covariance { .. }) {
            let tr: f64 = x.diagonal().iter().map(|c| c.re).sum();
            primal = primal.max(-min_eig_hermitian(x) / (1.0 + tr));
        }
    }

    // Dual: S_b = C⁰_b + Σ λ_r C_rb + Σ μ_e C_eb must be PSD per block.
    let mut dual = 0f64;
    for (blk, spec) in prob.blocks.iter().enumerate() {
        let n = spec.complex_dim();
        let mut s_mat = CMat::zeros(n, n);
        if let Some(c) = &prob.objective[blk] {
            s_mat += c;
        }
        for (r, row) in prob.ineq.iter().enumerate() {
            if let Some(c) = &row.coeffs[blk] {
                s_mat += c * Complex64::new(duals_ineq[r], 0.0);
            }
        }
        for (e, row) in prob.eq.iter().enumerate() {
            if let Some(c) = &row.coeffs[blk] {
                s_mat += c * Complex64::new(duals_eq[e], 0.0);
            }
        }
        let norm: f64 = 1.0 + s_mat.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let viol = match spec {
            BlockSpec::Covariance { .. } => -min_eig_hermitian(&s_mat),
            BlockSpec::Direction { dir } => -collapse(&s_mat, dir),
        };
        dual = dual.max(viol / norm);
    }

    // Gap between the primal objective and the dual bound −Σλ·rhs−Σμ·rhs.
    let dual_obj: f64 = -duals_ineq
        .iter()
        .zip(prob.ineq.iter())
        .map(|(l, row)| l * row.rhs)
        .sum::<f64>()
        - duals_eq.iter().zip(prob.eq.iter()).map(|(m, row)| m * row.rhs).sum::<f64>();
    let gap = (objective - dual_obj).abs() / (1.0 + objective.abs());

    KktResiduals { primal, dual, gap }
}

/// Chebyshev-center feasibility test for `{x : aᵀx ≤ b}` systems.
///
/// Maximizes the inradius `s` subject to `aᵀx + ‖a‖₂·s ≤ b`; the system is
/// declared feasible when the optimal radius is (numerically) nonnegative,
/// and the center — the deepest interior point under row-normalized
/// distances — is returned together with the radius.
pub fn solve_lp_feasibility(n: usize, rows: &[(RVec, f64)]) -> Result<Option<(RVec, f64)>> {
    let mut kept: Vec<(RVec, f64)> = Vec::with_capacity(rows.len());
    for (a, bval) in rows {
        assert_eq!(a.len(), n, "row dimension mismatch");
        let scale = a.iter().fold(bval.abs(), |m, &v| m.max(v.abs()));
        if a.iter().all(|&v| v == 0.0) {
            if *bval < -1e-12 {
                return Ok(None); // 0 ≤ negative: empty before solving
            }
            continue;
        }
        kept.push((a / scale, bval / scale));
    }
    if kept.is_empty() {
        return Ok(Some((RVec::zeros(n), f64::INFINITY)));
    }

    let nrows = kept.len();
    let mut a_mat = CscBuilder::new(nrows, n + 1);
    let mut b_vec = vec![0.0; nrows];
    for (r, (a, bval)) in kept.iter().enumerate() {
        for (j, &v) in a.iter().enumerate() {
            a_mat.push(r, j, v);
        }
        a_mat.push(r, n, a.norm());
        b_vec[r] = *bval;
    }
    let mut q = vec![0.0; n + 1];
    q[n] = -1.0; // maximize the radius
    let cones: Vec<SupportedConeT<f64>> = vec![NonnegativeConeT(nrows)];
    let p = CscMatrix::zeros((n + 1, n + 1));
    let a_mat = a_mat.build();
    let mut solver = DefaultSolver::new(&p, &q, &a_mat, &b_vec, &cones, settings())
        .map_err(|e| Error::SolverFailure(format!("solver setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let radius = sol.x[n];
            if radius < -1e-9 {
                return Ok(None);
            }
            let x = RVec::from_iterator(n, sol.x[..n].iter().copied());
            Ok(Some((x, radius)))
        }
        // The radius variable makes the relaxation always feasible, and the
        // box rows bound it; anything else is a solver breakdown.
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Ok(None),
        other => Err(Error::SolverFailure(format!("feasibility LP: {other:?}"))),
    }
}

/// A convex quadratic row `½xᵀPx + rᵀx + c ≤ 0`.
#[derive(Clone, Debug)]
pub struct QuadRow {
    pub p: RMat,
    pub r: RVec,
    pub c: f64,
}

/// A convex QCQP: quadratic objective, quadratic and linear rows.
#[derive(Clone, Debug)]
pub struct QcqpProblem {
    pub n: usize,
    /// Objective `½xᵀP₀x + q₀ᵀx`; `P₀` must be PSD.
    pub obj_p: RMat,
    pub obj_q: RVec,
    pub quad_rows: Vec<QuadRow>,
    /// Linear rows `aᵀx ≤ b`.
    pub lin_rows: Vec<(RVec, f64)>,
}

/// Solve a convex QCQP; `Ok(None)` means provably empty feasible set.
///
/// A quadratic row whose matrix has an eigenvalue below `−1e−8·‖P‖` aborts
/// with a nonconvexity certificate — surrogate construction upstream is
/// expected to deliver convex rows, and silently clamping would hide bugs.
pub fn solve_qcqp_feasibility(prob: &QcqpProblem) -> Result<Option<RVec>> {
    let n = prob.n;

    // Factor every quadratic row as P = L·Lᵀ (or certify nonconvexity).
    struct SocRow {
        l_cols: Vec<RVec>,
        r: RVec,
        c: f64,
    }
    let mut soc_rows = Vec::new();
    let mut lin_rows: Vec<(RVec, f64)> = prob.lin_rows.clone();
    for row in &prob.quad_rows {
        let scale = row
            .p
            .iter()
            .chain(row.r.iter())
            .fold(row.c.abs(), |m, &v| m.max(v.abs()))
            .max(1e-300);
        let eig = (row.p.clone() / scale).symmetric_eigen();
        let lam_max = eig.eigenvalues.iter().fold(0f64, |m, &l| m.max(l.abs()));
        let lam_min = eig.eigenvalues.min();
        if lam_min < -1e-8 * lam_max.max(1.0) {
            return Err(Error::NonconvexCertificate {
                min_eig: lam_min * scale,
                norm: lam_max * scale,
            });
        }
        let mut l_cols = Vec::new();
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > 1e-12 * lam_max.max(1.0) {
                l_cols.push(eig.eigenvectors.column(i) * lam.sqrt());
            }
        }
        if l_cols.is_empty() {
            lin_rows.push((row.r.clone() / scale, -row.c / scale));
        } else {
            soc_rows.push(SocRow { l_cols, r: &row.r / scale, c: row.c / scale });
        }
    }

    let n_lin = lin_rows.len();
    let n_soc_entries: usize = soc_rows.iter().map(|s| 2 + s.l_cols.len()).sum();
    let nrows = n_lin + n_soc_entries;
    let mut a = CscBuilder::new(nrows, n);
    let mut b = vec![0.0; nrows];
    for (r, (arow, bval)) in lin_rows.iter().enumerate() {
        let scale = arow.iter().fold(bval.abs(), |m, &v| m.max(v.abs())).max(1e-300);
        for (j, &v) in arow.iter().enumerate() {
            a.push(r, j, v / scale);
        }
        b[r] = bval / scale;
    }
    let rt2 = 2f64.sqrt();
    let mut cursor = n_lin;
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_lin > 0 {
        cones.push(NonnegativeConeT(n_lin));
    }
    for srow in &soc_rows {
        // s₁ = (v+1)/√2, s₂ = (v−1)/√2, v = −(rᵀx + c); tail = Lᵀx.
        for (j, &v) in srow.r.iter().enumerate() {
            a.push(cursor, j, v / rt2);
            a.push(cursor + 1, j, v / rt2);
        }
        b[cursor] = (1.0 - srow.c) / rt2;
        b[cursor + 1] = (-1.0 - srow.c) / rt2;
        for (i, col) in srow.l_cols.iter().enumerate() {
            for (j, &v) in col.iter().enumerate() {
                a.push(cursor + 2 + i, j, -v);
            }
            b[cursor + 2 + i] = 0.0;
        }
        cones.push(SecondOrderConeT(2 + srow.l_cols.len()));
        cursor += 2 + srow.l_cols.len();
    }
    debug_assert_eq!(cursor, nrows);

    // Native quadratic objective: clarabel consumes the upper triangle.
    let mut p_builder = CscBuilder::new(n, n);
    for j in 0..n {
        for i in 0..=j {
            p_builder.push(i, j, prob.obj_p[(i, j)]);
        }
    }
    let p = p_builder.build();
    let q: Vec<f64> = prob.obj_q.iter().copied().collect();
    let a = a.build();
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings_qcqp())
        .map_err(|e| Error::SolverFailure(format!("solver setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            Ok(Some(RVec::from_iterator(n, sol.x[..n].iter().copied())))
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Ok(None),
        other => Err(Error::SolverFailure(format!("QCQP step: {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::cn01;
    use crate::scenario::stream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_hermitian(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> CMat {
        let a = CMat::from_fn(n, n, |_, _| cn01(rng));
        (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
    }

    fn random_psd(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> CMat {
        let a = CMat::from_fn(n, n, |_, _| cn01(rng));
        &a * a.adjoint()
    }

    /// Unscaled companion embedding `[Re −Im; Im Re]` (variable side).
    fn embed_variable(x: &CMat) -> RMat {
        let n = x.nrows();
        RMat::from_fn(2 * n, 2 * n, |i, j| {
            let v = x[(i % n, j % n)];
            match (i < n, j < n) {
                (true, true) | (false, false) => v.re,
                (true, false) => -v.im,
                (false, true) => v.im,
            }
        })
    }

    #[test]
    fn embedding_preserves_traces_and_inverts() {
        let mut rng = stream(21, 0, "conic-embed");
        let h = random_hermitian(5, &mut rng);
        let x = random_psd(5, &mut rng);
        let lhs = svec(&embed_hermitian(&h)).dot(&svec(&embed_variable(&x)));
        assert_relative_eq!(lhs, re_tr(&h, &x), max_relative = 1e-12);
        let back = extract_hermitian(&embed_variable(&x));
        assert_relative_eq!((back - &x).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn svec_dot_equals_trace() {
        let mut rng = stream(22, 0, "conic-svec");
        let a = random_hermitian(4, &mut rng);
        let b = random_hermitian(4, &mut rng);
        let ar = embed_hermitian(&a);
        let br = embed_hermitian(&b);
        assert_relative_eq!(svec(&ar).dot(&svec(&br)), (&ar * &br).trace(), max_relative = 1e-12);
    }

    #[test]
    fn min_power_beam_to_one_receiver_is_mrt() {
        // min tr(X) s.t. hᴴXh ≥ t has optimum t/‖h‖² with X ∝ ĥĥᴴ.
        let mut rng = stream(23, 0, "conic-sdp");
        let h = CVec::from_fn(4, |_, _| cn01(&mut rng));
        let t = 2.5e-7;
        let prob = SdpProblem {
            blocks: vec![BlockSpec::Covariance { dim: 4 }],
            objective: vec![Some(CMat::identity(4, 4))],
            ineq: vec![SdpRow {
                coeffs: vec![Some(-(&h * h.adjoint()))],
                rhs: -t,
            }],
            eq: vec![],
        };
        let out = solve_sdp(&prob).unwrap();
        assert_eq!(out.status, SolveStatusKind::Optimal);
        let expect = t / h.norm_squared();
        assert_relative_eq!(out.objective, expect, max_relative = 1e-5);
        assert!(out.kkt.max() < 1e-5, "kkt residuals {:?}", out.kkt);
        // Stationarity pins the multiplier of the active row to 1/‖h‖².
        assert_relative_eq!(out.duals_ineq[0], 1.0 / h.norm_squared(), max_relative = 1e-4);
        // The optimal covariance is (numerically) rank one along h.
        let x = &out.blocks[0];
        let along = (h.adjoint() * x * &h)[(0, 0)].re / h.norm_squared();
        let tr: f64 = x.diagonal().iter().map(|c| c.re).sum();
        assert_relative_eq!(along, tr, max_relative = 1e-4);
    }

    #[test]
    fn direction_block_reproduces_the_covariance_answer() {
        let mut rng = stream(23, 0, "conic-sdp"); // same h as above
        let h = CVec::from_fn(4, |_, _| cn01(&mut rng));
        let t = 2.5e-7;
        let dir = &h / Complex64::new(h.norm(), 0.0);
        let prob = SdpProblem {
            blocks: vec![BlockSpec::Direction { dir }],
            objective: vec![Some(CMat::identity(4, 4))],
            ineq: vec![SdpRow {
                coeffs: vec![Some(-(&h * h.adjoint()))],
                rhs: -t,
            }],
            eq: vec![],
        };
        let out = solve_sdp(&prob).unwrap();
        assert_eq!(out.status, SolveStatusKind::Optimal);
        assert_relative_eq!(out.objective, t / h.norm_squared(), max_relative = 1e-5);
        let tr: f64 = out.blocks[0].diagonal().iter().map(|c| c.re).sum();
        assert_relative_eq!(tr, out.objective, max_relative = 1e-9);
    }

    #[test]
    fn trace_normalized_ratio_sdp_finds_generalized_eigenvalue() {
        // max tr(G·U) s.t. tr(F·U) = 1, U ⪰ 0 equals λ_max(F⁻¹G) and is the
        // oracle the combiner design is checked against.
        let mut rng = stream(24, 0, "conic-sdp");
        let g = random_psd(3, &mut rng);
        let f = random_psd(3, &mut rng) + CMat::identity(3, 3) * Complex64::new(0.1, 0.0);
        let prob = SdpProblem {
            blocks: vec![BlockSpec::Covariance { dim: 3 }],
            objective: vec![Some(-&g)],
            ineq: vec![],
            eq: vec![SdpRow { coeffs: vec![Some(f.clone())], rhs: 1.0 }],
        };
        let out = solve_sdp(&prob).unwrap();
        assert_eq!(out.status, SolveStatusKind::Optimal);
        // Independent reference via the Cholesky-whitened eigenproblem
        // λ_max(L⁻¹·G·L⁻ᴴ) with F = L·Lᴴ.
        let l = f.cholesky().unwrap().l();
        let li_g = l.solve_lower_triangular(&g).unwrap();
        let w = l.solve_lower_triangular(&li_g.adjoint()).unwrap();
        let lam_max = w.symmetric_eigen().eigenvalues.max();
        assert_relative_eq!(-out.objective, lam_max, max_relative = 1e-5);
    }

    #[test]
    fn impossible_power_demand_is_reported_infeasible() {
        // tr(X) ≤ −1 with X ⪰ 0 is empty.
        let prob = SdpProblem {
            blocks: vec![BlockSpec::Covariance { dim: 2 }],
            objective: vec![Some(CMat::identity(2, 2))],
            ineq: vec![SdpRow { coeffs: vec![Some(CMat::identity(2, 2))], rhs: -1.0 }],
            eq: vec![],
        };
        let out = solve_sdp(&prob).unwrap();
        assert_eq!(out.status, SolveStatusKind::Infeasible);
    }

    #[test]
    fn chebyshev_center_of_unit_box() {
        let rows = vec![
            (RVec::from_vec(vec![1.0, 0.0]), 1.0),
            (RVec::from_vec(vec![-1.0, 0.0]), 0.0),
            (RVec::from_vec(vec![0.0, 1.0]), 1.0),
            (RVec::from_vec(vec![0.0, -1.0]), 0.0),
        ];
        let (x, r) = solve_lp_feasibility(2, &rows).unwrap().expect("box is nonempty");
        assert_relative_eq!(x[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(x[1], 0.5, epsilon = 1e-6);
        assert_relative_eq!(r, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn contradictory_halfspaces_are_infeasible() {
        let rows = vec![
            (RVec::from_vec(vec![1.0]), 0.0),
            (RVec::from_vec(vec![-1.0]), -1.0),
        ];
        assert!(solve_lp_feasibility(1, &rows).unwrap().is_none());
    }

    #[test]
    fn zero_row_with_negative_rhs_short_circuits() {
        let rows = vec![(RVec::from_vec(vec![0.0, 0.0]), -0.5)];
        assert!(solve_lp_feasibility(2, &rows).unwrap().is_none());
    }

    #[test]
    fn projection_onto_unit_disk() {
        // min ‖x − (2,0)‖² s.t. ‖x‖² ≤ 1 → x = (1,0).
        let prob = QcqpProblem {
            n: 2,
            obj_p: RMat::identity(2, 2) * 2.0,
            obj_q: RVec::from_vec(vec![-4.0, 0.0]),
            quad_rows: vec![QuadRow {
                p: RMat::identity(2, 2) * 2.0,
                r: RVec::zeros(2),
                c: -1.0,
            }],
            lin_rows: vec![],
        };
        let x = solve_qcqp_feasibility(&prob).unwrap().expect("disk is nonempty");
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(x[1], 0.0, epsilon = 1e-5);
    }

    #[test]
    fn disjoint_disk_and_halfspace_is_infeasible() {
        let prob = QcqpProblem {
            n: 2,
            obj_p: RMat::zeros(2, 2),
            obj_q: RVec::zeros(2),
            quad_rows: vec![QuadRow {
                p: RMat::identity(2, 2) * 2.0,
                r: RVec::zeros(2),
                c: -1.0,
            }],
            lin_rows: vec![(RVec::from_vec(vec![-1.0, 0.0]), -3.0)],
        };
        assert!(solve_qcqp_feasibility(&prob).unwrap().is_none());
    }

    #[test]
    fn indefinite_quadratic_row_is_certified_nonconvex() {
        let mut p = RMat::zeros(2, 2);
        p[(0, 0)] = 1.0;
        p[(1, 1)] = -1.0;
        let prob = QcqpProblem {
            n: 2,
            obj_p: RMat::zeros(2, 2),
            obj_q: RVec::zeros(2),
            quad_rows: vec![QuadRow { p, r: RVec::zeros(2), c: 0.0 }],
            lin_rows: vec![],
        };
        match solve_qcqp_feasibility(&prob) {
            Err(Error::NonconvexCertificate { min_eig, .. }) => assert!(min_eig < 0.0),
            other => panic!("expected NonconvexCertificate, got {other:?}"),
        }
    }

    #[test]
    fn rank_deficient_quadratic_row_still_solves() {
        // P = diag(2, 0): the row only constrains x₀.
        let mut p = RMat::zeros(2, 2);
        p[(0, 0)] = 2.0;
        let prob = QcqpProblem {
            n: 2,
            obj_p: RMat::identity(2, 2) * 2.0,
            obj_q: RVec::from_vec(vec![-6.0, -2.0]),
            quad_rows: vec![QuadRow { p, r: RVec::zeros(2), c: -1.0 }],
            lin_rows: vec![],
        };
        let x = solve_qcqp_feasibility(&prob).unwrap().expect("feasible");
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-5); // clamped by the row
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-5); // free minimizer
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn chebyshev_center_satisfies_every_row(seed in 0u64..500) {
            let mut rng = stream(seed, 0, "conic-lp-prop");
            let n = 3usize;
            let mut rows = Vec::new();
            // Random halfspaces through a common feasible point x₀.
            let x0 = RVec::from_fn(n, |_, _| {
                use rand_distr::Distribution;
                rand_distr::StandardNormal.sample(&mut rng)
            });
            for _ in 0..8 {
                let a = RVec::from_fn(n, |_, _| {
                    use rand_distr::Distribution;
                    rand_distr::StandardNormal.sample(&mut rng)
                });
                let slack: f64 = {
                    use rand::RngExt;
                    rng.random::<f64>()
                };
                rows.push((a.clone(), a.dot(&x0) + slack));
            }
            // Box to keep the radius bounded.
            for j in 0..n {
                let mut e = RVec::zeros(n);
                e[j] = 1.0;
                rows.push((e.clone(), x0[j] + 10.0));
                rows.push((-e, -(x0[j] - 10.0)));
            }
            let got = solve_lp_feasibility(n, &rows).unwrap();
            let (x, r) = got.expect("x0 is feasible by construction");
            prop_assert!(r >= -1e-9);
            for (a, b) in &rows {
                prop_assert!(a.dot(&x) <= b + 1e-6 * b.abs().max(1.0));
            }
        }
    }
}
