//! Deterministic discrete-event execution of the plan.

mod calibration;
mod engagement;
mod engine;
mod execute;
mod faults;
mod metrics;
mod timeline;
mod world;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use calibration::{calibrate_frames, Calibration, CalibrationError};
pub use engagement::{attempt_engagement, Engagement, EngagementModel, Mode};
pub use engine::{run_loop, ArmSetup, DispatchRecord, Extraction, RunOutput, SimConfig, SimError};
pub use execute::{execute_action, motion_time, Execution, StepContext, StepOutcome};
pub use faults::{FaultInjector, FaultKind};
pub use metrics::{Metrics, NodeCounts};
pub use timeline::{
    read_csv, write_records, Clock, EventRecord, Outcome, ParsedEvent, Phase, SimEvent, Task, Ticks, Timeline,
    TimelineError, CSV_HEADER,
};
pub use world::{PartStatus, World, WorldPart};

/// Independent random stream for one purpose within a trial.
pub(crate) fn stream_rng(seed: u64, tag: u8, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = (tag as u64) << 56;
    h ^= splitmix(a.wrapping_add(0x9E37_79B9_7F4A_7C15));
    h ^= splitmix(b ^ 0xD1B5_4A32_D192_ED03).rotate_left(17);
    rng.set_stream(h);
    rng
}

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
