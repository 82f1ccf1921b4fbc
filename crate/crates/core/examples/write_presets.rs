//! Regenerates `presets/*.json` from the built-in presets.
//!
//!     cargo run -p stap-core --example write_presets -- presets

use std::path::PathBuf;

use stap_core::harness::{save_spec, ExperimentSpec};

fn main() -> stap_core::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "presets".into()));
    std::fs::create_dir_all(&dir).map_err(|e| stap_core::StapError::io(&dir, e))?;
    for name in ExperimentSpec::PRESETS {
        let path = dir.join(format!("{name}.json"));
        save_spec(&ExperimentSpec::preset(name)?, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}
