use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::projections::Constraint;

/// `A` agents, each with `J` planar waypoints, stored flat as
/// `[agent][waypoint][x, y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrajectoryBundle {
    agents: usize,
    steps: usize,
    positions: Vec<f64>,
    radii: Vec<f64>,
}

fn waypoint_index(steps: usize, agent: usize, j: usize) -> usize {
    (agent * steps + j) * 2
}

impl AgentTrajectoryBundle {
    pub fn from_flat(positions: Vec<f64>, agents: usize, steps: usize, radii: Vec<f64>) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 waypoints, got {steps}")));
        }
        if positions.len() != agents * steps * 2 {
            return Err(Error::DimensionMismatch {
                expected: agents * steps * 2,
                actual: positions.len(),
            });
        }
        if radii.len() != agents {
            return Err(Error::DimensionMismatch {
                expected: agents,
                actual: radii.len(),
            });
        }
        if radii.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidArgument("agent radii must be finite and nonnegative".into()));
        }
        Ok(Self {
            agents,
            steps,
            positions,
            radii,
        })
    }

    /// Evenly spaced straight segments from each start to its goal.
    pub fn straight_lines(endpoints: &[([f64; 2], [f64; 2])], steps: usize, radii: Vec<f64>) -> Result<Self> {
        let mut positions = Vec::with_capacity(endpoints.len() * steps * 2);
        for (s, g) in endpoints {
            for j in 0..steps {
                // endpoints are copied, not interpolated, so they survive exactly
                let p = if j + 1 == steps {
                    *g
                } else {
                    let u = j as f64 / (steps.max(2) - 1) as f64;
                    [s[0] + u * (g[0] - s[0]), s[1] + u * (g[1] - s[1])]
                };
                positions.extend_from_slice(&p);
            }
        }
        Self::from_flat(positions, endpoints.len(), steps, radii)
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn flat(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, agent: usize, j: usize) -> [f64; 2] {
        let i = waypoint_index(self.steps, agent, j);
        [self.positions[i], self.positions[i + 1]]
    }

    /// Minimum allowed separation of agents `a` and `b`.
    pub fn d_min(&self, a: usize, b: usize) -> f64 {
        self.radii[a] + self.radii[b]
    }

    pub fn endpoints(&self) -> Vec<([f64; 2], [f64; 2])> {
        (0..self.agents)
            .map(|a| (self.position(a, 0), self.position(a, self.steps - 1)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleMap {
    /// `[x_min, y_min, x_max, y_max]`
    pub bounds: [f64; 4],
    pub obstacles: Vec<Obstacle>,
}

impl ObstacleMap {
    pub fn new(bounds: [f64; 4], obstacles: Vec<Obstacle>) -> Result<Self> {
        let m = Self { bounds, obstacles };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.bounds;
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::InvalidArgument(format!("degenerate bounds {:?}", self.bounds)));
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) {
                return Err(Error::InvalidArgument(format!("obstacle {k}: radius must be positive")));
            }
            let [cx, cy] = o.center;
            if !(x0..=x1).contains(&cx) || !(y0..=y1).contains(&cy) {
                return Err(Error::InvalidArgument(format!("obstacle {k}: center outside bounds")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub radius: f64,
}

/// Map file contents: world, obstacles and agent start/goal pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    #[serde(flatten)]
    pub map: ObstacleMap,
    pub agents: Vec<AgentSpec>,
}

impl MapFile {
    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        if self.agents.is_empty() {
            return Err(Error::InvalidArgument("map lists no agents".into()));
        }
        if self.agents.iter().any(|a| !(a.radius >= 0.0)) {
            return Err(Error::InvalidArgument("agent radius must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("map file: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("map serializes")
    }

    /// Random instance in `[0, size]^2` with `1..=max_obstacles` obstacles.
    /// Starts and goals keep clear of obstacles and of each other, so the
    /// endpoints themselves are always feasible.
    pub fn random(agents: usize, max_obstacles: usize, size: f64, radius: f64, rng: &mut SeededRng) -> Self {
        let n_obs = if max_obstacles == 0 { 0 } else { 1 + rng.below(max_obstacles) };
        let mut obstacles = Vec::with_capacity(n_obs);
        for _ in 0..n_obs {
            obstacles.push(Obstacle {
                center: [
                    rng.uniform_range(0.25 * size, 0.75 * size),
                    rng.uniform_range(0.25 * size, 0.75 * size),
                ],
                radius: rng.uniform_range(0.05 * size, 0.1 * size),
            });
        }
        let clear = 2.0 * radius + 0.05 * size;
        let mut place = |taken: &mut Vec<[f64; 2]>| loop {
            let p = [
                rng.uniform_range(0.05 * size, 0.95 * size),
                rng.uniform_range(0.05 * size, 0.95 * size),
            ];
            let off_obstacles = obstacles.iter().all(|o| dist(p, o.center) >= o.radius + clear);
            let off_agents = taken.iter().all(|q| dist(p, *q) >= 2.0 * clear);
            if off_obstacles && off_agents {
                taken.push(p);
                return p;
            }
        };
        let mut starts = Vec::new();
        let mut goals = Vec::new();
        let specs = (0..agents)
            .map(|_| AgentSpec {
                start: place(&mut starts),
                goal: place(&mut goals),
                radius,
            })
            .collect();
        Self {
            map: ObstacleMap {
                bounds: [0.0, 0.0, size, size],
                obstacles,
            },
            agents: specs,
        }
    }

    pub fn radii(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.radius).collect()
    }

    pub fn endpoints(&self) -> Vec<([f64; 2], [f64; 2])> {
        self.agents.iter().map(|a| (a.start, a.goal)).collect()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Direction for pushing apart coincident points, fixed per pair so the
/// subgradient is deterministic.
fn fallback_direction(seed: usize) -> [f64; 2] {
    let angle = seed as f64 * 2.399_963_229_728_653;
    [angle.cos(), angle.sin()]
}

/// Unit vector from `b` to `a` and the distance.
fn separation(a: [f64; 2], b: [f64; 2], seed: usize) -> ([f64; 2], f64) {
    let d = dist(a, b);
    if d > 0.0 {
        ([(a[0] - b[0]) / d, (a[1] - b[1]) / d], d)
    } else {
        (fallback_direction(seed), 0.0)
    }
}

/// Pairwise separation: every pair of agents stays at least `d_min` apart at
/// every waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionConstraint {
    agents: usize,
    steps: usize,
    radii: Vec<f64>,
    margin: f64,
}

impl CollisionConstraint {
    /// Residual computed against `d_min + margin`. The predicate is checked
    /// against the inflated distance too, so use the zero-margin constraint
    /// for certification.
    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    fn at(&self, x: &[f64], a: usize, j: usize) -> [f64; 2] {
        let i = waypoint_index(self.steps, a, j);
        [x[i], x[i + 1]]
    }

    fn check_len(&self, x: &[f64]) {
        assert_eq!(x.len(), self.agents * self.steps * 2, "trajectory length mismatch");
    }
}

pub fn collision_constraint(bundle: &AgentTrajectoryBundle) -> Result<CollisionConstraint> {
    if bundle.agents() < 2 {
        return Err(Error::InvalidArgument("collision constraint needs at least 2 agents".into()));
    }
    Ok(CollisionConstraint {
        agents: bundle.agents(),
        steps: bundle.steps(),
        radii: bundle.radii().to_vec(),
        margin: 0.0,
    })
}

impl Constraint for CollisionConstraint {
    fn name(&self) -> &str {
        "collision"
    }

    fn residual(&self, x: &[f64]) -> f64 {
        self.residual_parts(x).iter().sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.weighted_gradient(x, &vec![1.0; self.num_parts()])
    }

    /// One term per agent pair and waypoint.
    fn num_parts(&self) -> usize {
        self.agents * (self.agents - 1) / 2 * self.steps
    }

    fn residual_parts(&self, x: &[f64]) -> Vec<f64> {
        self.check_len(x);
        let mut out = Vec::with_capacity(self.num_parts());
        for a in 0..self.agents {
            for b in a + 1..self.agents {
                let need = self.radii[a] + self.radii[b] + self.margin;
                for j in 0..self.steps {
                    out.push((need - dist(self.at(x, a, j), self.at(x, b, j))).max(0.0));
                }
            }
        }
        out
    }

    fn weighted_gradient(&self, x: &[f64], weights: &[f64]) -> Vec<f64> {
        self.check_len(x);
        let mut g = vec![0.0; x.len()];
        let mut k = 0;
        for a in 0..self.agents {
            for b in a + 1..self.agents {
                let need = self.radii[a] + self.radii[b] + self.margin;
                for j in 0..self.steps {
                    let w = weights[k];
                    k += 1;
                    if w == 0.0 {
                        continue;
                    }
                    let (u, d) = separation(self.at(x, a, j), self.at(x, b, j), a * self.agents + b);
                    if d < need {
                        let (ia, ib) = (waypoint_index(self.steps, a, j), waypoint_index(self.steps, b, j));
                        g[ia] -= w * u[0];
                        g[ia + 1] -= w * u[1];
                        g[ib] += w * u[0];
                        g[ib + 1] += w * u[1];
                    }
                }
            }
        }
        g
    }

    fn is_convex(&self) -> bool {
        false
    }
}

/// Every waypoint of every agent stays outside every obstacle disc.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleConstraint {
    agents: usize,
    steps: usize,
    obstacles: Vec<Obstacle>,
    margin: f64,
}

impl ObstacleConstraint {
    /// See [`CollisionConstraint::with_margin`].
    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }
}

pub fn obstacle_constraint(bundle: &AgentTrajectoryBundle, map: &ObstacleMap) -> ObstacleConstraint {
    ObstacleConstraint {
        agents: bundle.agents(),
        steps: bundle.steps(),
        obstacles: map.obstacles.clone(),
        margin: 0.0,
    }
}

impl ObstacleConstraint {
    fn check_len(&self, x: &[f64]) {
        assert_eq!(x.len(), self.agents * self.steps * 2, "trajectory length mismatch");
    }
}

impl Constraint for ObstacleConstraint {
    fn name(&self) -> &str {
        "obstacle"
    }

    fn residual(&self, x: &[f64]) -> f64 {
        self.residual_parts(x).iter().sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.weighted_gradient(x, &vec![1.0; self.num_parts()])
    }

    /// One term per waypoint and obstacle.
    fn num_parts(&self) -> usize {
        self.agents * self.steps * self.obstacles.len()
    }

    fn residual_parts(&self, x: &[f64]) -> Vec<f64> {
        self.check_len(x);
        let mut out = Vec::with_capacity(self.num_parts());
        for p in x.chunks_exact(2) {
            for o in &self.obstacles {
                out.push((o.radius + self.margin - dist([p[0], p[1]], o.center)).max(0.0));
            }
        }
        out
    }

    fn weighted_gradient(&self, x: &[f64], weights: &[f64]) -> Vec<f64> {
        self.check_len(x);
        let mut g = vec![0.0; x.len()];
        let n = self.obstacles.len();
        for (w, p) in x.chunks_exact(2).enumerate() {
            for (k, o) in self.obstacles.iter().enumerate() {
                let wt = weights[w * n + k];
                if wt == 0.0 {
                    continue;
                }
                let (u, d) = separation([p[0], p[1]], o.center, k);
                if d < o.radius + self.margin {
                    g[2 * w] -= wt * u[0];
                    g[2 * w + 1] -= wt * u[1];
                }
            }
        }
        g
    }

    fn is_convex(&self) -> bool {
        false
    }
}

/// Restricts a whole-bundle constraint to interior waypoints: the decision
/// vector holds waypoints `1..J-1` of each agent and the start/goal
/// positions are fixed, so no projection can move them.
#[derive(Clone)]
pub struct PinnedEndpoints {
    inner: Arc<dyn Constraint>,
    steps: usize,
    endpoints: Vec<([f64; 2], [f64; 2])>,
}

impl PinnedEndpoints {
    pub fn new(inner: Arc<dyn Constraint>, steps: usize, endpoints: Vec<([f64; 2], [f64; 2])>) -> Result<Self> {
        if steps < 3 {
            return Err(Error::InvalidArgument(
                "pinning endpoints needs at least one interior waypoint".into(),
            ));
        }
        Ok(Self { inner, steps, endpoints })
    }

    pub fn interior_dim(&self) -> usize {
        self.endpoints.len() * (self.steps - 2) * 2
    }

    /// Full bundle positions from interior waypoints.
    pub fn expand(&self, interior: &[f64]) -> Vec<f64> {
        assert_eq!(interior.len(), self.interior_dim(), "interior length mismatch");
        let per = (self.steps - 2) * 2;
        let mut full = Vec::with_capacity(self.endpoints.len() * self.steps * 2);
        for (a, (s, g)) in self.endpoints.iter().enumerate() {
            full.extend_from_slice(s);
            full.extend_from_slice(&interior[a * per..(a + 1) * per]);
            full.extend_from_slice(g);
        }
        full
    }

    /// Interior waypoints of a full bundle vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let per = self.steps * 2;
        full.chunks_exact(per).flat_map(|c| c[2..per - 2].iter().copied()).collect()
    }
}

impl Constraint for PinnedEndpoints {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn residual(&self, x: &[f64]) -> f64 {
        self.inner.residual(&self.expand(x))
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.restrict(&self.inner.gradient(&self.expand(x)))
    }

    fn num_parts(&self) -> usize {
        self.inner.num_parts()
    }

    fn residual_parts(&self, x: &[f64]) -> Vec<f64> {
        self.inner.residual_parts(&self.expand(x))
    }

    fn weighted_gradient(&self, x: &[f64], weights: &[f64]) -> Vec<f64> {
        self.restrict(&self.inner.weighted_gradient(&self.expand(x), weights))
    }

    fn check_tolerance(&self) -> f64 {
        self.inner.check_tolerance()
    }

    fn is_satisfied(&self, x: &[f64]) -> bool {
        self.inner.is_satisfied(&self.expand(x))
    }

    fn is_convex(&self) -> bool {
        self.inner.is_convex()
    }
}

/// Per-agent sum of segment lengths.
pub fn path_lengths(bundle: &AgentTrajectoryBundle) -> Vec<f64> {
    (0..bundle.agents())
        .map(|a| {
            (1..bundle.steps())
                .map(|j| dist(bundle.position(a, j - 1), bundle.position(a, j)))
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_agents(p: [f64; 2], q: [f64; 2]) -> AgentTrajectoryBundle {
        AgentTrajectoryBundle::from_flat(vec![p[0], p[1], p[0], p[1], q[0], q[1], q[0], q[1]], 2, 2, vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn separated_agents_feasible() {
        let b = two_agents([0.0, 0.0], [3.0, 0.0]);
        let c = collision_constraint(&b).unwrap();
        assert_eq!(c.residual(b.flat()), 0.0);
        assert!(c.is_satisfied(b.flat()));
    }

    #[test]
    fn coincident_agents_cost_d_min_per_step() {
        let b = two_agents([1.0, 1.0], [1.0, 1.0]);
        let c = collision_constraint(&b).unwrap();
        assert_eq!(c.residual(b.flat()), 4.0);
        assert!(!c.is_satisfied(b.flat()));
        assert!(!c.is_convex());
    }

    #[test]
    fn single_agent_rejected() {
        let b = AgentTrajectoryBundle::from_flat(vec![0.0; 4], 1, 2, vec![1.0]).unwrap();
        assert!(collision_constraint(&b).is_err());
    }

    #[test]
    fn obstacle_hinge_at_center() {
        let b = two_agents([5.0, 5.0], [0.0, 0.0]);
        let map = ObstacleMap::new(
            [0.0, 0.0, 10.0, 10.0],
            vec![Obstacle {
                center: [5.0, 5.0],
                radius: 1.5,
            }],
        )
        .unwrap();
        let c = obstacle_constraint(&b, &map);
        assert_eq!(c.residual(b.flat()), 3.0);
        let far = two_agents([9.0, 9.0], [0.0, 0.0]);
        assert_eq!(c.residual(far.flat()), 0.0);
    }

    #[test]
    fn straight_lines_keep_endpoints_bit_exact() {
        let ends = [([0.1, 0.7], [9.3, 2.9]), ([1.0 / 3.0, 5.0], [0.2, 7.0 / 3.0])];
        let b = AgentTrajectoryBundle::straight_lines(&ends, 20, vec![0.1, 0.1]).unwrap();
        assert_eq!(b.endpoints(), ends.to_vec());
    }

    #[test]
    fn pinned_gradient_has_no_endpoint_entries() {
        let b = AgentTrajectoryBundle::straight_lines(&[([0.0, 0.0], [4.0, 0.0]), ([0.0, 0.1], [4.0, 0.1])], 5, vec![0.5, 0.5]).unwrap();
        let inner: Arc<dyn Constraint> = Arc::new(collision_constraint(&b).unwrap());
        let pinned = PinnedEndpoints::new(inner.clone(), 5, b.endpoints()).unwrap();
        let interior = pinned.restrict(b.flat());
        assert_eq!(interior.len(), 12);
        assert_eq!(pinned.expand(&interior), b.flat());
        assert_eq!(pinned.residual(&interior), inner.residual(b.flat()));
        assert_eq!(pinned.gradient(&interior).len(), 12);
    }

    #[test]
    fn map_file_round_trip() {
        let m = MapFile::random(3, 4, 10.0, 0.25, &mut SeededRng::new(2));
        assert!(m.map.obstacles.len() <= 4 && !m.map.obstacles.is_empty());
        let back = MapFile::parse(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn path_length_of_straight_line() {
        let b = AgentTrajectoryBundle::from_flat(vec![0.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0], 2, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(path_lengths(&b), vec![5.0, 0.0]);
    }
}
