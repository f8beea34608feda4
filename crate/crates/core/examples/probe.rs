//! Scratch diagnostics for the alternating loop trajectory.

use isabc::channel::generate_decomposition;
use isabc::metrics;
use isabc::reflection::{self, Reflections};
use isabc::rxdesign::{self, RxCombiners};
use isabc::scenario::{derive_constants, sample_geometry, ScenarioConfig};
use isabc::txdesign::{self, RowSet, TxStructure};
use isabc::{faposition, RVec};

fn main() {
    let cfg = ScenarioConfig::default();
    let dc = derive_constants(&cfg).unwrap();
    let geom = sample_geometry(&cfg, 0);
    let dec = generate_decomposition(&cfg, &dc, &geom, 0);
    let rows = RowSet::all();
    let structure = TxStructure::Covariances { with_rs: true };

    let m = cfg.m_tx;
    let spacing = cfg.min_spacing_m.max(cfg.aperture_m / (m as f64 - 1.0));
    let mut z = RVec::from_fn(m, |i, _| (i as f64 * spacing).min(cfg.aperture_m));
    let mut set = dec.materialize(&z);
    let mut comb = RxCombiners::interference_suppressed(&set);
    let mut refl = Reflections::uniform(cfg.t_tags, 0.5);
    let mut tx = {
        // matched-filter split as in ao::initial_design
        use isabc::{C64, CMat, CVec};
        let outer_unit = |h: &CVec| -> CMat {
            let n2 = h.norm_squared();
            (h * h.adjoint()) * C64::new(1.0 / n2, 0.0)
        };
        let k = set.h_user.len();
        let w_cov: Vec<CMat> = set
            .h_user
            .iter()
            .map(|h| outer_unit(h) * C64::new(0.5 / k as f64, 0.0))
            .collect();
        let beacons: Vec<&CVec> = set.h_tag.iter().chain(set.h_target.iter()).collect();
        let mut r_s = CMat::zeros(m, m);
        let share = C64::new(0.5 / beacons.len() as f64, 0.0);
        for h in beacons {
            r_s += outer_unit(h) * share;
        }
        txdesign::TxDesign { w_cov, r_s, w_vec: None }
    };

    for it in 0..30 {
        let solve =
            txdesign::build_and_solve(&cfg, &dc, &set, &comb, &refl, rows, &structure).unwrap();
        if let Some(cand) = solve.design {
            tx = cand;
        }
        if let Some(cand) =
            reflection::optimize_reflections(&cfg, &dc, &set, &tx, &comb, rows).unwrap()
        {
            refl = cand;
        }
        let (cand, _) = rxdesign::optimize_combiners(&cfg, &dc, &set, &tx, &refl).unwrap();
        comb = cand;

        let mut sb = f64::NAN;
        let mut sa = f64::NAN;
        let mut dz = 0.0f64;
        let mut inner_used = 0;
        for inner in 0..40 {
            match faposition::optimize_positions(&cfg, &dc, &dec, &z, &tx, &comb, &refl, rows) {
                Ok(s) => {
                    if inner == 0 {
                        sb = s.slack_before;
                    }
                    let gain = s.slack_after - s.slack_before;
                    let step_dz = (s.z.clone() - &z).amax();
                    if step_dz > 0.0 {
                        dz += step_dz;
                        z = s.z;
                        set = dec.materialize(&z);
                        sa = s.slack_after;
                    }
                    inner_used = inner + 1;
                    if step_dz == 0.0 || gain <= 1e-5 {
                        break;
                    }
                }
                Err(e) => {
                    println!("  position step error: {e}");
                    break;
                }
            }
        }
        let _ = inner_used;

        let report = metrics::check_all_qos(&cfg, &dc, &set, &tx, &comb, &refl);
        let ok = txdesign::report_matches_rows(&report, rows, &cfg, &dc);
        println!(
            "sweep {it:2}: P = {:.6} W feas={} slack {sb:+.3e}->{sa:+.3e} dz={dz:.4e} inner={inner_used} worst={:+.3e}",
            tx.total_power(),
            ok,
            report.worst_margin
        );
    }
}
