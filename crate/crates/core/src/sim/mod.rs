//! A seedable model of the publication-point ecosystem.

mod scenario;
mod validation;

pub use self::scenario::{
    scenario_preset, scenario_presets, PpBehavior, PpConfig, ScenarioConfig, ScenarioError,
    ScheduleEntry, TalConfig, BLACKOUT_TARGET, DOS_TARGET, PRESET_NAMES,
};
pub use self::validation::{simulate_validation, SimContext, SimRun, SimulatedRp};
