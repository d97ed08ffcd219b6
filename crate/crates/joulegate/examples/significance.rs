//! Paired significance testing over matched per-item results: accuracy
//! parity (two-tailed) and energy reduction (one-tailed).
//!
//! Run: `cargo run --example significance`

use joulegate::stats::paired_t_test;

fn main() {
    // per-domain emission averages: fixed-reasoning baseline vs adaptive
    let baseline = [4.20, 3.25, 2.10, 2.85];
    let adaptive = [4.45, 2.05, 0.41, 1.45];
    let energy = paired_t_test(&baseline, &adaptive).unwrap();
    println!("energy reduction (baseline - adaptive):");
    println!("  mean delta   {:+.3} gCO2e", energy.mean_delta);
    println!("  t            {:+.3} (df {})", energy.t, energy.df);
    println!("  one-tailed p {:.4}  (reduction > 0)", energy.one_tailed_p);
    println!("  two-tailed p {:.4}", energy.two_tailed_p);

    // matched accuracy samples where the difference is noise
    let system_a = [0.92, 0.88, 0.95, 0.81, 0.90, 0.86];
    let system_b = [0.91, 0.89, 0.94, 0.83, 0.90, 0.85];
    let parity = paired_t_test(&system_a, &system_b).unwrap();
    println!("\naccuracy parity:");
    println!("  mean delta   {:+.4}", parity.mean_delta);
    println!("  t            {:+.3}", parity.t);
    println!("  two-tailed p {:.4}  (> 0.05 means indistinguishable)", parity.two_tailed_p);

    // identical samples: flagged, not crashed
    let degenerate = paired_t_test(&system_a, &system_a).unwrap();
    println!("\nidentical samples: t = {}, degenerate = {}", degenerate.t, degenerate.degenerate);
}
