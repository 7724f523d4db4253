//! The two surface simulators: x-y floor plan (agent 1) and y-z elevation
//! (agent 2).
//!
//! Placements live on a lattice: the state keeps an integer offset per axis
//! from an anchor, so moving right and then left restores the exact same
//! coordinates. On axes where the start lies on the lattice through the
//! goal, the anchor is the goal itself and reaching it is exact.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_intersection_volume, project, rect_inside, rect_iou, Axes, Box3};
use crate::scene::{validate_scene, Scene, StepSize, Violation};

pub type SurfaceId = Axes;

pub const OBS_DIM: usize = 12;

pub type Observation = [f64; OBS_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Right,
    Left,
    Below,
    Up,
    Down,
}

const XY_ACTIONS: [Action; 4] = [Action::Right, Action::Left, Action::Below, Action::Up];
const YZ_ACTIONS: [Action; 2] = [Action::Up, Action::Down];

/// Actions available on a surface, in network output order.
pub fn actions(surface: SurfaceId) -> &'static [Action] {
    match surface {
        Axes::XY => &XY_ACTIONS,
        Axes::YZ => &YZ_ACTIONS,
    }
}

pub fn action_count(surface: SurfaceId) -> usize {
    actions(surface).len()
}

pub fn action_index(surface: SurfaceId, action: Action) -> Option<usize> {
    actions(surface).iter().position(|a| *a == action)
}

/// `(axis, sign)` moved by `action` on `surface`, or `None` if the action
/// does not exist there. Axis 0 is x, 1 is y, 2 is z.
pub fn displacement(surface: SurfaceId, action: Action) -> Option<(usize, i64)> {
    match (surface, action) {
        (Axes::XY, Action::Right) => Some((0, 1)),
        (Axes::XY, Action::Left) => Some((0, -1)),
        (Axes::XY, Action::Up) => Some((1, 1)),
        (Axes::XY, Action::Below) => Some((1, -1)),
        (Axes::YZ, Action::Up) => Some((2, 1)),
        (Axes::YZ, Action::Down) => Some((2, -1)),
        _ => None,
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Right => "right",
            Action::Left => "left",
            Action::Below => "below",
            Action::Up => "up",
            Action::Down => "down",
        };
        f.write_str(s)
    }
}

/// Validity flag per action index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionMask {
    bits: u8,
    len: u8,
}

impl ActionMask {
    pub fn all(len: usize) -> Self {
        assert!(len <= 8);
        Self {
            bits: ((1u16 << len) - 1) as u8,
            len: len as u8,
        }
    }

    pub fn none(len: usize) -> Self {
        assert!(len <= 8);
        Self { bits: 0, len: len as u8 }
    }

    pub fn from_slice(valid: &[bool]) -> Self {
        let mut m = Self::none(valid.len());
        for (i, v) in valid.iter().enumerate() {
            m.set(i, *v);
        }
        m
    }

    pub fn len(&self) -> usize {
        usize::from(self.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.len() && self.bits & (1 << i) != 0
    }

    pub fn set(&mut self, i: usize, valid: bool) {
        assert!(i < self.len());
        if valid {
            self.bits |= 1 << i;
        } else {
            self.bits &= !(1 << i);
        }
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn any(&self) -> bool {
        self.bits != 0
    }

    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|i| self.get(*i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Out-of-room actions are dropped and the caller picks again.
    Train,
    /// Out-of-room actions leave the item where it is.
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// `theta1 * IoU(goal, current)` after the move.
    #[default]
    Absolute,
    /// Extension: `theta1 * (IoU after - IoU before)`. Can be negative.
    DeltaIou,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub step: StepSize,
    pub success_iou: f64,
    pub max_steps: u32,
    pub theta1: f64,
    pub reward: RewardMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            step: StepSize::default(),
            success_iou: 0.95,
            max_steps: 200,
            theta1: 1.0,
            reward: RewardMode::Absolute,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid scene: {}", join_violations(.0))]
    InvalidScene(Vec<Violation>),
    #[error("action `{action}` does not exist on the {surface:?} surface")]
    IllegalAction { action: Action, surface: SurfaceId },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    scene: Arc<Scene>,
    anchor: Box3,
    offset: [i64; 3],
    delta: [f64; 3],
    steps: [u32; 2],
    mode: Mode,
}

fn surface_slot(surface: SurfaceId) -> usize {
    match surface {
        Axes::XY => 0,
        Axes::YZ => 1,
    }
}

impl EnvState {
    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn goal(&self) -> &Box3 {
        &self.scene.goal
    }

    /// Per-axis displacement of one action.
    pub fn delta(&self) -> [f64; 3] {
        self.delta
    }

    /// Accepted steps taken on `surface` since reset.
    pub fn step_count(&self, surface: SurfaceId) -> u32 {
        self.steps[surface_slot(surface)]
    }

    pub fn current(&self) -> Box3 {
        self.placement_at(self.offset)
    }

    fn placement_at(&self, offset: [i64; 3]) -> Box3 {
        let c = self.anchor.center().to_array();
        let moved: [f64; 3] = std::array::from_fn(|a| c[a] + offset[a] as f64 * self.delta[a]);
        self.anchor.with_center(moved.into())
    }

    pub fn surface_iou(&self, surface: SurfaceId) -> f64 {
        iou_on(&self.current(), &self.scene.goal, surface)
    }

    pub fn iou3d(&self) -> f64 {
        crate::geometry::box_iou3d(&self.current(), &self.scene.goal)
    }

    pub fn is_success(&self, success_iou: f64) -> bool {
        self.surface_iou(Axes::XY) >= success_iou && self.surface_iou(Axes::YZ) >= success_iou
    }

    /// Lattice offset of the current placement from the goal on `surface`.
    pub fn lattice_cell(&self, surface: SurfaceId) -> [i64; 2] {
        let (cur, goal) = (self.current().center(), self.scene.goal.center());
        let rel = |a: usize| ((cur.axis(a) - goal.axis(a)) / self.delta[a]).round() as i64;
        match surface {
            Axes::XY => [rel(0), rel(1)],
            Axes::YZ => [rel(1), rel(2)],
        }
    }

    /// Number of fixed items the movable item currently overlaps. Tracked,
    /// never penalized.
    pub fn fixed_overlaps(&self) -> usize {
        let cur = self.current();
        self.scene
            .fixed_items()
            .filter(|i| box_intersection_volume(&i.bounds, &cur) > 0.0)
            .count()
    }
}

fn iou_on(a: &Box3, b: &Box3, surface: SurfaceId) -> f64 {
    rect_iou(&project(a, surface), &project(b, surface)).expect("same surface")
}

pub fn reset(scene: impl Into<Arc<Scene>>, mode: Mode, cfg: &EnvConfig) -> Result<EnvState, EnvError> {
    let scene = scene.into();
    let violations = validate_scene(&scene);
    if !violations.is_empty() {
        return Err(EnvError::InvalidScene(violations));
    }
    let start = scene.movable().expect("validated").bounds;
    let delta = cfg.step.per_axis(&scene.room);
    let (s, g) = (start.center().to_array(), scene.goal.center().to_array());
    let mut anchor = s;
    let mut offset = [0i64; 3];
    for a in 0..3 {
        let k = (s[a] - g[a]) / delta[a];
        // only when the start is exactly where the lattice step would put it
        if k.is_finite() && g[a] + k.round() * delta[a] == s[a] {
            anchor[a] = g[a];
            offset[a] = k.round() as i64;
        }
    }
    Ok(EnvState {
        anchor: start.with_center(anchor.into()),
        scene,
        offset,
        delta,
        steps: [0; 2],
        mode,
    })
}

pub fn surface_reward(state: &EnvState, surface: SurfaceId, theta1: f64) -> f64 {
    theta1 * state.surface_iou(surface)
}

fn fits(state: &EnvState, offset: [i64; 3], surface: SurfaceId) -> bool {
    let placed = state.placement_at(offset);
    rect_inside(&project(&placed, surface), &project(&state.scene.room, surface)).expect("same surface")
}

fn shifted(offset: [i64; 3], axis: usize, sign: i64) -> [i64; 3] {
    let mut out = offset;
    out[axis] += sign;
    out
}

/// Actions whose move keeps the item's footprint inside the room.
pub fn valid_actions(state: &EnvState, surface: SurfaceId) -> ActionMask {
    let acts = actions(surface);
    let mut mask = ActionMask::none(acts.len());
    for (i, a) in acts.iter().enumerate() {
        let (axis, sign) = displacement(surface, *a).expect("surface action");
        mask.set(i, fits(state, shifted(state.offset, axis, sign), surface));
    }
    mask
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    /// `None` when the move was dropped in train mode.
    pub reward: Option<f64>,
    pub accepted: bool,
    /// Test mode only: the move hit a wall and the item stayed put.
    pub blocked: bool,
    pub terminal: bool,
    pub success: bool,
    pub surface: SurfaceId,
}

pub fn step(
    state: &EnvState,
    surface: SurfaceId,
    action: Action,
    cfg: &EnvConfig,
) -> Result<StepOutcome, EnvError> {
    let (axis, sign) =
        displacement(surface, action).ok_or(EnvError::IllegalAction { action, surface })?;
    let target = shifted(state.offset, axis, sign);
    let inside = fits(state, target, surface);

    if !inside && state.mode == Mode::Train {
        return Ok(StepOutcome {
            next_state: state.clone(),
            reward: None,
            accepted: false,
            blocked: false,
            terminal: false,
            success: false,
            surface,
        });
    }

    let mut next = state.clone();
    if inside {
        next.offset = target;
    }
    next.steps[surface_slot(surface)] += 1;

    let after = surface_reward(&next, surface, cfg.theta1);
    let reward = match cfg.reward {
        RewardMode::Absolute => after,
        RewardMode::DeltaIou => after - surface_reward(state, surface, cfg.theta1),
    };
    let success = next.is_success(cfg.success_iou);
    let terminal = success || next.step_count(surface) >= cfg.max_steps;
    Ok(StepOutcome {
        next_state: next,
        reward: Some(reward),
        accepted: true,
        blocked: !inside,
        terminal,
        success,
        surface,
    })
}

/// Observation vector for one surface (u, v are x, y on the floor plan and
/// y, z on the elevation):
///
/// `[cur_u, cur_v, goal_u, goal_v, half_u, half_v, room_u, room_v,
///   gap_neg_u, gap_pos_u, gap_neg_v, gap_pos_v]`
///
/// Centers are relative to the room center and, like half sizes and wall
/// gaps, divided by the room extent on that axis. Room extents are divided
/// by the larger of the two.
pub fn observe(state: &EnvState, surface: SurfaceId) -> Observation {
    let room = project(&state.scene.room, surface);
    let cur = project(&state.current(), surface);
    let goal = project(&state.scene.goal, surface);
    let (rc, rs) = (room.center(), room.size());
    let (rmin, rmax) = (room.min(), room.max());
    let longest = rs.u.max(rs.v);
    [
        (cur.center().u - rc.u) / rs.u,
        (cur.center().v - rc.v) / rs.v,
        (goal.center().u - rc.u) / rs.u,
        (goal.center().v - rc.v) / rs.v,
        cur.size().u / 2.0 / rs.u,
        cur.size().v / 2.0 / rs.v,
        rs.u / longest,
        rs.v / longest,
        (cur.min().u - rmin.u) / rs.u,
        (rmax.u - cur.max().u) / rs.u,
        (cur.min().v - rmin.v) / rs.v,
        (rmax.v - cur.max().v) / rs.v,
    ]
}
