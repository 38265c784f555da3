// Differentiates a raw speed trace and resamples it onto the 1 m grid.

use tunnel_accel::trajectory::{differentiate_speed, resample_to_grid, TrajectorySample, VehicleTrack};

pub fn run_example() -> tunnel_accel::Result<()> {
    // A vehicle slowing from 25 m/s to 20 m/s over ten seconds.
    let samples: Vec<TrajectorySample> = (0..=20)
        .scan(-12.3, |x, i| {
            let t = i as f64 * 0.5;
            let v = 25.0 - 0.5 * t;
            let s = TrajectorySample { t, x: *x, v, a: None };
            *x += v * 0.5;
            Some(s)
        })
        .collect();
    let track = differentiate_speed(&VehicleTrack::new("veh00001", samples)?)?;
    let profile = resample_to_grid(&track, 1)?;
    println!("{} grid points from {} to {} m", profile.positions.len(), profile.positions[0], profile.positions.last().unwrap());
    for i in (0..profile.positions.len()).step_by(40) {
        println!("x = {:>5} m  v = {:.3} m/s  a = {:.3} m/s²", profile.positions[i], profile.v_at[i], profile.a_at[i]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> tunnel_accel::Result<()> {
    run_example()
}
