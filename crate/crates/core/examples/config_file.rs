//! Prints the default benchmark configuration as TOML; every key may be omitted in a file.

use dualref::bench::ExperimentConfig;

fn main() {
    print!("{}", ExperimentConfig::default().to_toml());
}
