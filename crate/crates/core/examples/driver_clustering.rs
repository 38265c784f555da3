// Clusters drivers on their three behaviour features and picks k with the
// information criteria.

use tunnel_accel::clustering::{compute_features, label_clusters, select_k, Criterion, KMeansOptions};
use tunnel_accel::synth::{generate_population, ArchetypeSpec, ScenarioSpec};
use tunnel_accel::trajectory::resample_to_grid;

pub fn run_example() -> tunnel_accel::Result<()> {
    let scenario = ScenarioSpec { n_vehicles: 300, duration: 900.0, seed: 8, ..ScenarioSpec::default() };
    let pop = generate_population(&scenario, &ArchetypeSpec::calibrated_defaults())?;
    let features = pop
        .tracks
        .iter()
        .map(|t| compute_features(&resample_to_grid(t, 1)?))
        .collect::<tunnel_accel::Result<Vec<_>>>()?;
    let sel = select_k(&features, 1..=6, 8, &KMeansOptions::default(), Criterion::Aic)?;
    println!("{:>2} {:>10} {:>8} {:>8}", "k", "L", "AIC", "BIC");
    for d in &sel.diagnostics {
        println!("{:>2} {:>10.4} {:>8.3} {:>8.3}", d.k, d.mean_min_distance, d.aic, d.bic);
    }
    println!("selected k = {}", sel.best_k);
    let labeled = label_clusters(sel.best().clone());
    let agree = pop.labels.iter().enumerate().filter(|(i, l)| labeled.label_of_point(*i) == Some(**l)).count();
    println!("agreement with generator labels: {agree}/{}", pop.labels.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> tunnel_accel::Result<()> {
    run_example()
}
