//! Cooperative furniture placement with two goal-conditioned DQN agents.
//!
//! A room scene is split into two surface simulators: the x-y floor plan,
//! where agent 1 slides the movable item right/left/up/below, and the y-z
//! elevation, where agent 2 raises or lowers it. Both are rewarded by the
//! IoU between the item's footprint and its goal placement; agent 2's
//! training reward blends in agent 1's.
//!
//! Modules, bottom-up: [`geometry`], [`scene`], [`env`], [`agent`],
//! [`training`], [`eval`].

pub mod agent;
pub mod env;
pub mod eval;
pub mod geometry;
pub mod scene;
pub mod seeding;
pub mod training;
