//! Domain constraint families: multi-agent trajectories, grid porosity,
//! kinematic rollouts, sequence novelty, forbidden patterns and a surrogate
//! score threshold.

mod kinematics;
mod novelty;
mod pattern;
mod porosity;
mod trajectory;

pub use kinematics::{kinematics_constraint, kinematics_rollout, KinematicsConstraint, KinematicsSpec, KINEMATICS_TOL};
pub use novelty::{best_first_flips, flip_cost, novelty_project, promote_token, NoveltyConstraint, NoveltySet};
pub use pattern::{
    contains_forbidden, load_rules, parse_rules, pattern_repair, surrogate_constraint, PatternConstraint, PatternRule, SurrogateConstraint,
    SurrogateScorer,
};
pub use porosity::{
    negative_count, porosity_constraint, soft_negative_count, PorosityConstraint, PorosityTarget, FLIP_EPSILON, SOFT_COUNT_WIDTH,
};
pub use trajectory::{
    collision_constraint, obstacle_constraint, path_lengths, AgentSpec, AgentTrajectoryBundle, CollisionConstraint, MapFile, Obstacle,
    ObstacleConstraint, ObstacleMap, PinnedEndpoints,
};
