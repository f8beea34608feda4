//! Scratch: inner-loop behavior of repeated position steps at a fixed design.

use isabc::channel::generate_decomposition;
use isabc::reflection::{self, Reflections};
use isabc::rxdesign::{self, RxCombiners};
use isabc::scenario::{derive_constants, sample_geometry, ScenarioConfig};
use isabc::txdesign::{self, RowSet, TxStructure};
use isabc::{faposition, C64, CMat, CVec, RVec};

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
    let comb0 = RxCombiners::interference_suppressed(&set);
    let refl0 = Reflections::uniform(cfg.t_tags, 0.5);
    let outer_unit = |h: &CVec| -> CMat {
        let n2 = h.norm_squared();
        (h * h.adjoint()) * C64::new(1.0 / n2, 0.0)
    };
    let w_cov: Vec<CMat> = set
        .h_user
        .iter()
        .map(|h| outer_unit(h) * C64::new(0.5 / 3.0, 0.0))
        .collect();
    let beacons: Vec<&CVec> = set.h_tag.iter().chain(set.h_target.iter()).collect();
    let mut r_s = CMat::zeros(m, m);
    for h in beacons {
        r_s += outer_unit(h) * C64::new(0.5 / 4.0, 0.0);
    }
    let mut tx = txdesign::TxDesign { w_cov, r_s, w_vec: None };

    // one tx/beta/comb sweep to reach a realistic active design
    tx = txdesign::build_and_solve(&cfg, &dc, &set, &comb0, &refl0, rows, &structure)
        .unwrap()
        .design
        .unwrap();
    let refl = reflection::optimize_reflections(&cfg, &dc, &set, &tx, &comb0, rows)
        .unwrap()
        .unwrap();
    let (comb, _) = rxdesign::optimize_combiners(&cfg, &dc, &set, &tx, &refl).unwrap();

    let t0 = std::time::Instant::now();
    for inner in 0..40 {
        match faposition::optimize_positions(&cfg, &dc, &dec, &z, &tx, &comb, &refl, rows) {
            Ok(step) => {
                let gain = step.slack_after - step.slack_before;
                let dz = (step.z.clone() - &z).amax();
                println!(
                    "inner {inner:2}: slack {:+.4e} -> {:+.4e} gain {gain:+.3e} dz {dz:.3e} t={:?}",
                    step.slack_before,
                    step.slack_after,
                    t0.elapsed()
                );
                if dz == 0.0 {
                    println!("  fixed point");
                    break;
                }
                z = step.z;
                set = dec.materialize(&z);
            }
            Err(e) => {
                println!("inner {inner:2}: error {e}");
                break;
            }
        }
    }
}
