// Runs the whole pipeline from a TOML config, the same way the
// `tunnel-accel pipeline` subcommand does.

use tunnel_accel::cli::{execute, Command};
use tunnel_accel::config::RunConfig;

const CONFIG: &str = r#"
[run]
seed = 3

[scenario]
n_vehicles = 90
duration = 300.0

[env]
window_min = 1.0
warmup_min = 1.0
min_support = 2

[data]
history_len = 20
anchor_stride = 50

[model]
hidden = 4
attn_width = 4
cnn_channels = 2

[train]
max_epochs = 1
max_steps = 3
batch_size = 16

[experiment]
models = ["seq2seq", "ann"]
horizons = [10]
seeds = 1
trace_vehicles = 1
"#;

pub fn run_example() -> tunnel_accel::Result<()> {
    let out = std::env::temp_dir().join("tunnel-accel-example-pipeline");
    let cfg = RunConfig::from_toml(CONFIG, "inline config")?.with_overrides(None, Some(out.clone()), Some(1));
    execute(Command::Pipeline, &cfg)?;
    let path = out.join("report.md");
    let report = std::fs::read_to_string(&path).map_err(|source| tunnel_accel::Error::Io { path, source })?;
    println!("{report}");
    std::fs::remove_dir_all(&out).ok();
    Ok(())
}

#[allow(dead_code)]
fn main() -> tunnel_accel::Result<()> {
    run_example()
}
