//! The token-time energy and carbon model.
//!
//! Estimates per-call joules and gCO2e from hardware constants, and shows
//! the percentage-saving arithmetic between a fixed baseline and an
//! adaptive deployment.
//!
//! Run: `cargo run --example energy_model`

use joulegate::energy::{energy_saving, estimate_query_energy, HardwareProfile, TokenStats};

fn main() {
    // a reference accelerator behind a datacenter with 20% overhead
    let profile = HardwareProfile::new("reference-gpu", 1.2, 300.0, 100.0, 400.0);

    println!("profile: {} (PUE {}, {} W, {} tok/s, {} g/kWh)\n",
        profile.label, profile.pue, profile.avg_power_watts,
        profile.throughput_tokens_per_sec, profile.grid_intensity_g_per_kwh);

    for (prompt, generated) in [(400u64, 600u64), (50, 20), (2000, 150)] {
        let stats = TokenStats::new(prompt, generated);
        let estimate = estimate_query_energy(stats, &profile).unwrap();
        println!(
            "{prompt:>5} prompt + {generated:>4} generated tokens -> {:>8.1} J  {:>7.4} Wh  {:>7.4} gCO2e",
            estimate.joules, estimate.watt_hours, estimate.grams_co2e
        );
    }

    // savings of an adaptive deployment against an always-reason baseline,
    // for a few representative per-query averages
    println!("\nsaving vs a fixed reasoning baseline:");
    for (label, baseline, adaptive) in [
        ("retrieval-heavy", 320.0, 58.0),
        ("mixed", 470.0, 280.0),
        ("math-heavy", 610.0, 645.0),
    ] {
        let saving = energy_saving(baseline, adaptive).unwrap();
        println!("  {label:<16} {baseline:>6.0} J -> {adaptive:>6.0} J   saving {saving:>6.1}%");
    }
}
