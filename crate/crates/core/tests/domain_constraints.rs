//! Domain constraint families: predicates against residuals, repairs against
//! their postconditions, novelty search against enumeration.

use std::collections::HashSet;
use std::sync::Arc;

use nsd_core::constraints_domain::{
    best_first_flips, collision_constraint, contains_forbidden, flip_cost, kinematics_constraint, kinematics_rollout, negative_count,
    novelty_project, obstacle_constraint, pattern_repair, porosity_constraint, surrogate_constraint, AgentTrajectoryBundle, KinematicsSpec,
    NoveltyConstraint, NoveltySet, Obstacle, ObstacleMap, PatternConstraint, PatternRule, PorosityTarget, SurrogateScorer,
};
use nsd_core::numerics::softmax;
use nsd_core::projections::{BoxConstraint, LinearConstraint};
use nsd_core::{CategoricalSequence, Constraint, SeededRng, SequenceConstraint, SimplexRow};
use proptest::prelude::*;

fn one_hot_rows(tokens: &[usize], vocab: usize) -> Vec<f64> {
    tokens
        .iter()
        .flat_map(|&t| (0..vocab).map(move |v| if v == t { 1.0 } else { 0.0 }))
        .collect()
}

fn rules() -> Vec<PatternRule> {
    vec![
        PatternRule::new(vec![1, 1], vec![vec![1, 2], vec![2]]).unwrap(),
        PatternRule::new(vec![0, 2, 0], vec![vec![0, 3, 0]]).unwrap(),
        PatternRule::new(vec![3, 3, 3], vec![]).unwrap(),
    ]
}

/// Continuous constraints agree with their residual at the check tolerance.
fn agrees(c: &dyn Constraint, x: &[f64]) -> bool {
    c.is_satisfied(x) == (c.residual(x) <= c.check_tolerance())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn linear_and_box_predicates_match_residuals(x in prop::collection::vec(-3.0..3.0f64, 3), b in -1.0..1.0f64) {
        let lin = LinearConstraint::new(vec![1.0, -2.0, 0.5], b).unwrap();
        let bx = BoxConstraint::uniform(3, -1.0, 1.0).unwrap();
        prop_assert!(agrees(&lin, &x));
        prop_assert!(agrees(&bx, &x));
        prop_assert!(lin.residual(&x) >= 0.0 && bx.residual(&x) >= 0.0);
    }

    #[test]
    fn porosity_residual_vanishes_exactly_at_the_count(grid in prop::collection::vec(-1.0..1.0f64, 16), k in 0usize..=16) {
        let c = porosity_constraint(PorosityTarget::new(4, 4, k).unwrap());
        let hit = negative_count(&grid) == k;
        prop_assert_eq!(c.is_satisfied(&grid), hit);
        prop_assert_eq!(c.residual(&grid) == 0.0, hit);
        if !hit {
            prop_assert!(c.residual(&grid) >= 0.5);
        }
        let p = c.project_exact(&grid).unwrap();
        prop_assert!(c.is_satisfied(&p));
    }

    #[test]
    fn kinematics_predicate_is_componentwise(noise in prop::collection::vec(-1e-8..1e-8f64, 6), p0 in -5.0..5.0f64, g in -2.0..2.0f64) {
        let spec = KinematicsSpec::new(p0, g, 6).unwrap();
        let c = kinematics_constraint(&spec).unwrap();
        let x: Vec<f64> = kinematics_rollout(&spec).iter().zip(&noise).map(|(a, e)| a + e).collect();
        let inside = noise.iter().all(|e| e.abs() <= 1e-9);
        prop_assert_eq!(c.is_satisfied(&x), inside);
        prop_assert!(c.residual(&x) >= noise.iter().fold(0.0f64, |m, e| m.max(e.abs())) * 0.999_999);
    }

    #[test]
    fn trajectory_residuals_vanish_iff_clear(positions in prop::collection::vec(0.0..2.0f64, 3 * 4 * 2)) {
        let bundle = AgentTrajectoryBundle::from_flat(positions.clone(), 3, 4, vec![0.2; 3]).unwrap();
        let collision = collision_constraint(&bundle).unwrap();
        let map = ObstacleMap::new([0.0, 0.0, 2.0, 2.0], vec![Obstacle { center: [1.0, 1.0], radius: 0.3 }]).unwrap();
        let obstacle = obstacle_constraint(&bundle, &map);
        let clear = (0..3).all(|a| (a + 1..3).all(|b| (0..4).all(|j| {
            let (p, q) = (bundle.position(a, j), bundle.position(b, j));
            (p[0] - q[0]).hypot(p[1] - q[1]) >= 0.4
        })));
        prop_assert_eq!(collision.residual(&positions) == 0.0, clear);
        prop_assert!(agrees(&collision, &positions));
        prop_assert!(agrees(&obstacle, &positions));
        let parts: f64 = collision.residual_parts(&positions).iter().sum();
        prop_assert!((parts - collision.residual(&positions)).abs() <= 1e-12);
    }

    #[test]
    fn pattern_relaxation_counts_matches_on_one_hot(tokens in prop::collection::vec(0usize..4, 0..12)) {
        let c = PatternConstraint::new(rules()).unwrap();
        let r = c.relaxed_residual(&one_hot_rows(&tokens, 4), 4);
        prop_assert_eq!(r == 0.0, c.holds(&tokens));
        prop_assert_eq!(r.fract(), 0.0);
    }

    #[test]
    fn surrogate_relaxation_matches_hard_score(tokens in prop::collection::vec(0usize..5, 1..10)) {
        let scorer = SurrogateScorer::new(vec![(vec![1, 2], 1.0), (vec![3], 0.5)], 1.0).unwrap();
        let hard = scorer.score(&tokens);
        prop_assert!((scorer.soft_score(&one_hot_rows(&tokens, 5), 5) - hard).abs() <= 1e-12);
        let c = surrogate_constraint(scorer);
        prop_assert_eq!(c.holds(&tokens), c.relaxed_residual(&one_hot_rows(&tokens, 5), 5) == 0.0);
    }

    #[test]
    fn novelty_relaxation_is_dataset_mass(tokens in prop::collection::vec(0usize..3, 3), others in prop::collection::vec(prop::collection::vec(0usize..3, 3), 0..6)) {
        let set = NoveltySet::from_sequences(others.clone());
        let c = NoveltyConstraint::new(Arc::new(set));
        let r = c.relaxed_residual(&one_hot_rows(&tokens, 3), 3);
        prop_assert_eq!(c.holds(&tokens), r == 0.0);
        if !c.holds(&tokens) {
            prop_assert!((r - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn pattern_repair_leaves_no_forbidden_pattern() {
    let rules = rules();
    let mut rng = SeededRng::new(77);
    for _ in 0..1000 {
        let len = rng.below(20);
        let tokens: Vec<usize> = (0..len).map(|_| rng.below(4)).collect();
        let fixed = pattern_repair(&tokens, &rules);
        assert!(!contains_forbidden(&fixed, &rules), "{tokens:?} -> {fixed:?}");
        assert!(fixed.len() <= tokens.len());
        if !contains_forbidden(&tokens, &rules) {
            assert_eq!(fixed, tokens);
        }
        assert_eq!(pattern_repair(&fixed, &rules), fixed);
    }
}

#[test]
fn pattern_repair_prefers_earlier_replacements() {
    let rules = rules();
    assert_eq!(pattern_repair(&[0, 1, 1, 0], &rules), vec![0, 1, 2, 0]);
    assert_eq!(pattern_repair(&[3, 3, 3], &rules), Vec::<usize>::new());
    assert_eq!(pattern_repair(&[0, 2, 0], &rules), vec![0, 3, 0]);
}

fn all_sequences(len: usize, vocab: usize) -> Vec<Vec<usize>> {
    (0..vocab.pow(len as u32))
        .map(|mut n| {
            let mut s = vec![0; len];
            for slot in s.iter_mut().rev() {
                *slot = n % vocab;
                n /= vocab;
            }
            s
        })
        .collect()
}

#[test]
fn best_first_flips_matches_enumeration() {
    let mut rng = SeededRng::new(909);
    let (len, vocab) = (4, 3);
    let space = all_sequences(len, vocab);
    for _ in 0..200 {
        let rows: Vec<Vec<f64>> = (0..len).map(|_| softmax(&rng.normal_vec(vocab)).into_inner()).collect();
        let banned: HashSet<Vec<usize>> = space.iter().filter(|_| rng.uniform() < 0.6).cloned().collect();
        let tops: Vec<usize> = rows.iter().map(|r| nsd_core::numerics::argmax(r)).collect();
        let cost = |s: &[usize]| s.iter().enumerate().map(|(i, &t)| flip_cost(&rows[i], tops[i], t)).sum::<f64>();
        let brute = space
            .iter()
            .filter(|s| !banned.contains(*s))
            .min_by(|a, b| cost(a).total_cmp(&cost(b)).then_with(|| a.cmp(b)))
            .cloned();
        let found = best_first_flips(&rows, &[true; 3], |s| !banned.contains(s), usize::MAX);
        match (&brute, &found) {
            (Some(b), Some(f)) => assert!((cost(b) - cost(f)).abs() <= 1e-12, "{b:?} vs {f:?}"),
            (None, None) => {}
            _ => panic!("{brute:?} vs {found:?}"),
        }
    }
}

#[test]
fn novelty_project_never_repeats() {
    let mut rng = SeededRng::new(5);
    let (len, vocab) = (3usize, 2usize);
    let mut seen = NoveltySet::new();
    let row = SimplexRow::new(vec![0.7, 0.3]).unwrap();
    let x = CategoricalSequence::filled(len, &row).unwrap();
    let mut out = HashSet::new();
    for _ in 0..vocab.pow(len as u32) {
        let y = novelty_project(&x, &mut seen).unwrap();
        assert!(out.insert(y.decode()));
    }
    assert!(novelty_project(&x, &mut seen).is_err());
    // a sequence outside the dataset comes back unchanged
    let rows: Vec<SimplexRow> = (0..len).map(|_| softmax(&rng.normal_vec(vocab))).collect();
    let noisy = CategoricalSequence::new(rows).unwrap();
    assert_eq!(novelty_project(&noisy, &mut NoveltySet::new()).unwrap(), noisy);
}
