//! Timed execution of a single action primitive on one arm.

use rand::Rng;

use super::engagement::{attempt_engagement, Engagement, EngagementModel, Mode};
use super::faults::FaultKind;
use super::timeline::{Clock, Outcome, Phase, SimEvent, Task, Ticks};
use crate::geometry::{distance, Point};
use crate::model::Layer;
use crate::scenario::TimingSpec;
use crate::scheduler::ArmProfile;
use crate::sequencer::{ActionKind, ActionPrimitive};

/// Straight-line travel time at constant speed.
pub fn motion_time(from: &Point, to: &Point, speed: f64) -> f64 {
    assert!(speed > 0.0, "speed must be positive");
    distance(from, to) / speed
}

#[derive(Debug, Clone)]
pub struct StepContext<'a> {
    pub clock: Clock,
    pub timing: &'a TimingSpec,
    pub engagement: EngagementModel,
    pub layer: Layer,
    /// Extra wait when tool lighting drops out.
    pub illumination_outage_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Done,
    EngageFail,
    Fault(FaultKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub events: Vec<SimEvent>,
    pub end: Ticks,
    /// Where the arm is afterwards.
    pub position: Point,
    pub outcome: StepOutcome,
}

struct Builder<'a> {
    clock: Clock,
    arm: &'a str,
    task: Task,
    action: &'a ActionPrimitive,
    layer: Layer,
    t: Ticks,
    events: Vec<SimEvent>,
}

impl Builder<'_> {
    fn push(&mut self, phase: Phase, seconds: f64, outcome: Outcome) {
        let end = self.t + self.clock.ticks(seconds);
        self.events.push(SimEvent {
            t_start: self.t,
            t_end: end,
            arm: self.arm.to_owned(),
            task: self.task,
            phase,
            target: Some(self.action.target_node),
            layer: self.layer,
            outcome,
        });
        self.t = end;
    }

    fn finish(self, position: Point, outcome: StepOutcome) -> Execution {
        Execution {
            end: self.t,
            events: self.events,
            position,
            outcome,
        }
    }
}

/// Lays out the phases of `action` from `start`. `fault` is a fault
/// already drawn for this step; the engagement draw uses `rng`.
pub fn execute_action<R: Rng + ?Sized>(
    action: &ActionPrimitive,
    arm: &ArmProfile,
    start: Ticks,
    ctx: &StepContext<'_>,
    fault: Option<FaultKind>,
    rng: &mut R,
) -> Execution {
    let mut b = Builder {
        clock: ctx.clock,
        arm: &arm.name,
        task: Task::Action(action.action_kind),
        action,
        layer: ctx.layer,
        t: start,
        events: Vec::with_capacity(6),
    };
    let target = action.target_position;
    let approach = if action.approach_offset > 0.0 {
        action.approach_offset / action.nominal_speed
    } else {
        0.0
    };
    let move_s = motion_time(&arm.current_position, &target, arm.speed) + approach;
    let ok = Outcome::Success;
    let timing = ctx.timing;

    match action.action_kind {
        ActionKind::Unscrew => {
            b.push(Phase::Move, move_s, ok);
            if ctx.engagement.mode == Mode::Fine {
                if fault == Some(FaultKind::IlluminationLoss) {
                    let kind = FaultKind::IlluminationLoss;
                    b.push(Phase::Align, ctx.engagement.align_time() + ctx.illumination_outage_s, Outcome::Fault(kind));
                    return b.finish(target, StepOutcome::Fault(kind));
                }
                b.push(Phase::Align, ctx.engagement.align_time(), ok);
            }
            if attempt_engagement(&ctx.engagement, rng) == Engagement::EngageFail {
                b.push(Phase::Engage, ctx.engagement.engage_time, Outcome::EngageFail);
                return b.finish(target, StepOutcome::EngageFail);
            }
            b.push(Phase::Engage, ctx.engagement.engage_time, ok);
            b.push(Phase::Operate, ctx.engagement.unscrew_time, ok);
            let bin = arm.drop_pose_for(&action.capability_required);
            b.push(Phase::Carry, motion_time(&target, &bin, arm.speed), ok);
            b.push(Phase::Release, timing.release_s, ok);
            b.finish(bin, StepOutcome::Done)
        }
        ActionKind::Lift | ActionKind::Remove => {
            b.push(Phase::Move, move_s, ok);
            let op = if action.action_kind == ActionKind::Lift {
                timing.lift_s
            } else {
                timing.remove_s
            };
            if let Some(kind) = fault {
                b.push(Phase::Operate, op, Outcome::Fault(kind));
                return b.finish(target, StepOutcome::Fault(kind));
            }
            b.push(Phase::Operate, op, ok);
            b.finish(target, StepOutcome::Done)
        }
        ActionKind::Drop => {
            let bin = arm.drop_pose_for(&action.capability_required);
            b.push(Phase::Carry, motion_time(&arm.current_position, &bin, arm.speed), ok);
            b.push(Phase::Release, timing.drop_s, ok);
            b.finish(bin, StepOutcome::Done)
        }
        ActionKind::Hold => {
            b.push(Phase::Move, move_s, ok);
            b.finish(target, StepOutcome::Done)
        }
    }
}
