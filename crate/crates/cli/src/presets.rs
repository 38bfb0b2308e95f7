//! Configs shipped with the binary. The JSON files live in `presets/`.

use crate::config::Command;

pub struct Preset {
    pub name: &'static str,
    pub command: Command,
    pub summary: &'static str,
    pub json: &'static str,
}

macro_rules! preset {
    ($name:literal, $cmd:expr, $summary:literal) => {
        Preset {
            name: $name,
            command: $cmd,
            summary: $summary,
            json: include_str!(concat!("../presets/", $name, ".json")),
        }
    };
}

pub const PRESETS: &[Preset] = &[
    preset!("fig2-k2", Command::Capacity, "two-type region grid and boundary, n=64, 4 coded"),
    preset!("fig2-k3", Command::Capacity, "three-type region grid, n=30, 3 coded"),
    preset!("fig4-k2", Command::Simulate, "coded vs uncoded response, k=2, n=64..512"),
    preset!("fig4-k3", Command::Simulate, "coded vs uncoded response, k=3, n=243..2187"),
    preset!("fig5", Command::Simulate, "square-wave traffic, coded and uncoded trajectories"),
    preset!("regime-light", Command::Regime, "light workload at n=1024"),
    preset!("regime-inner-heavy", Command::Regime, "inner-heavy workload at n=1024"),
    preset!("regime-outer-heavy", Command::Regime, "outer-heavy workload at n=1024"),
    preset!("route-outer-heavy", Command::Route, "pseudo-optimal policy, outer-heavy, n=256"),
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

/// One line per preset, for `--help`.
pub fn listing() -> String {
    let mut s = String::from("Presets:\n");
    for p in PRESETS {
        s.push_str(&format!("  {:<20} [{}] {}\n", p.name, p.command.name(), p.summary));
    }
    s
}
