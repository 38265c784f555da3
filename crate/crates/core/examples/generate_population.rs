// Draws a synthetic tunnel-exit population and compares its per-archetype
// feature means with the calibration targets.

use tunnel_accel::clustering::DriverClass;
use tunnel_accel::synth::{generate_population, summarize_population, ArchetypeSpec, ScenarioSpec};
use tunnel_accel::trajectory::resample_to_grid;

pub fn run_example() -> tunnel_accel::Result<()> {
    let archetypes = ArchetypeSpec::calibrated_defaults();
    let scenario = ScenarioSpec { n_vehicles: 120, duration: 600.0, seed: 3, ..ScenarioSpec::default() };
    let pop = generate_population(&scenario, &archetypes)?;
    let profiles = pop.tracks.iter().map(|t| resample_to_grid(t, 1)).collect::<tunnel_accel::Result<Vec<_>>>()?;
    let summary = summarize_population(&profiles, &pop.labels)?;
    println!("{:<13} {:>5} {:>10} {:>10}", "archetype", "n", "speed", "target");
    for class in DriverClass::ALL {
        let target = archetypes.iter().find(|a| a.label == class).map(|a| a.mean_speed).unwrap_or(f64::NAN);
        if let Some(s) = summary.get(class) {
            println!("{:<13} {:>5} {:>10.2} {:>10.2}", class.to_string(), s.count, s.avg_speed, target);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> tunnel_accel::Result<()> {
    run_example()
}
