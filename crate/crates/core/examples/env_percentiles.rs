// Builds the spatial percentile sequence of the traffic that entered the
// section during the last two minutes.

use tunnel_accel::env::{build_env_sequence, EnvOptions};
use tunnel_accel::synth::{generate_population, ArchetypeSpec, ScenarioSpec};
use tunnel_accel::trajectory::resample_to_grid;

pub fn run_example() -> tunnel_accel::Result<()> {
    let scenario = ScenarioSpec { n_vehicles: 80, duration: 300.0, seed: 5, ..ScenarioSpec::default() };
    let pop = generate_population(&scenario, &ArchetypeSpec::calibrated_defaults())?;
    let profiles = pop.tracks.iter().map(|t| resample_to_grid(t, 1)).collect::<tunnel_accel::Result<Vec<_>>>()?;
    let opts = EnvOptions { min_support: 3, ..EnvOptions::default() };
    let env = build_env_sequence(&profiles, 300.0, 120.0, &opts)?;
    let present = env.rows.iter().filter(|r| r.is_some()).count();
    println!("{present}/{} positions supported", env.positions.len());
    for x in [-300, -100, 0, 100, 300] {
        match env.at(x) {
            Some(row) => println!("x = {x:>4} m  v p20..p80 = {:.2?}  a p20..p80 = {:.3?}", row.v, row.a),
            None => println!("x = {x:>4} m  absent"),
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> tunnel_accel::Result<()> {
    run_example()
}
