//! Epsilon-greedy tree search over per-flow (route, bandwidth) choices.
//!
//! Tree level `l` fixes the choice of the `l`-th flow in the level order, so a
//! node at depth `F` is a complete configuration. Every episode starts from
//! the root, descends one level per flow and scores the leaf by simulation.
//! A node's q-value is the best reward of any episode that passed through it.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{epsilon_schedule, AllocError, Choice, MctsParams, RewardBreakdown, Scenario};
use crate::simulator::AllocationConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct MctsNode {
    /// Number of flows already decided.
    pub depth: usize,
    pub parent: Option<usize>,
    /// Choice that led here from the parent.
    pub action: Option<Choice>,
    pub q_value: f64,
    pub children: BTreeMap<Choice, usize>,
}

/// Arena-allocated search tree. Node 0 is the root.
#[derive(Debug, Clone)]
pub struct MctsTree {
    nodes: Vec<MctsNode>,
    arity: Vec<(usize, usize)>,
}

impl MctsTree {
    /// `arity[l]` is `(routes, bandwidth levels)` for the flow at level `l`.
    pub fn new(arity: Vec<(usize, usize)>) -> Self {
        Self {
            nodes: vec![MctsNode {
                depth: 0,
                parent: None,
                action: None,
                q_value: f64::NEG_INFINITY,
                children: BTreeMap::new(),
            }],
            arity,
        }
    }

    pub fn root(&self) -> &MctsNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &MctsNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of levels (flows).
    pub fn levels(&self) -> usize {
        self.arity.len()
    }

    fn child(&mut self, parent: usize, action: Choice) -> usize {
        if let Some(&id) = self.nodes[parent].children.get(&action) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push(MctsNode {
            depth: self.nodes[parent].depth + 1,
            parent: Some(parent),
            action: Some(action),
            q_value: f64::NEG_INFINITY,
            children: BTreeMap::new(),
        });
        self.nodes[parent].children.insert(action, id);
        id
    }

    fn random_action<R: Rng>(&self, level: usize, rng: &mut R) -> Choice {
        let (routes, levels) = self.arity[level];
        let a = rng.random_range(0..routes * levels);
        Choice {
            route: (a / levels) as u16,
            bandwidth: (a % levels) as u16,
        }
    }

    /// Child with the highest q-value; ties go to the smallest choice.
    fn best_child(&self, node: usize) -> Option<(Choice, usize)> {
        let mut best: Option<(Choice, usize)> = None;
        for (&a, &c) in &self.nodes[node].children {
            if best.is_none_or(|(_, b)| self.nodes[c].q_value > self.nodes[b].q_value) {
                best = Some((a, c));
            }
        }
        best
    }

    /// Descends from the root to a leaf, creating nodes as needed, and
    /// returns the visited node ids (root first). `forced` pins every level's
    /// choice.
    pub fn descend<R: Rng>(&mut self, epsilon: f64, rng: &mut R, forced: Option<&[Choice]>) -> Vec<usize> {
        let mut path = vec![0];
        let mut at = 0;
        for level in 0..self.levels() {
            let action = if let Some(f) = forced {
                f[level]
            } else if self.nodes[at].children.is_empty() {
                // Rollout.
                self.random_action(level, rng)
            } else if rng.random::<f64>() < epsilon {
                self.random_action(level, rng)
            } else {
                self.best_child(at).expect("node has children").0
            };
            at = self.child(at, action);
            path.push(at);
        }
        path
    }

    /// Choices along `path`, in level order.
    pub fn choices(&self, path: &[usize]) -> Vec<Choice> {
        path.iter().filter_map(|&n| self.nodes[n].action).collect()
    }
}

/// `q <- max(q, reward)` for every node on `path`.
pub fn backpropagate(tree: &mut MctsTree, path: &[usize], reward: f64) {
    for &n in path {
        let q = &mut tree.nodes[n].q_value;
        if reward > *q {
            *q = reward;
        }
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub episode: usize,
    pub reward: f64,
    pub objective: f64,
    pub constraint_violation: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Choices indexed by flow id.
    pub choices: Vec<Choice>,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainingResult {
    /// Choices indexed by flow id.
    pub best_choices: Vec<Choice>,
    pub best_config: AllocationConfig,
    pub best_reward: RewardBreakdown,
    pub trace: Vec<TraceRow>,
    /// Distinct leaves simulated.
    pub evaluations: usize,
    pub tree: MctsTree,
}

pub fn train(scenario: &Scenario, params: &MctsParams) -> Result<TrainingResult, AllocError> {
    train_from(scenario, params, None)
}

/// Like [`train`], with the first episode pinned to `warm` (indexed by flow
/// id) when given.
pub fn train_from(
    scenario: &Scenario,
    params: &MctsParams,
    warm: Option<&[Choice]>,
) -> Result<TrainingResult, AllocError> {
    params.validate()?;
    let nflows = scenario.flows.len();
    if nflows == 0 {
        return Err(AllocError::InvalidParams("scenario has no flows".into()));
    }
    let order = params.flow_order.order(&scenario.flows);
    let arity: Vec<(usize, usize)> = order.iter().map(|&f| scenario.action_space(f)).collect();
    let warm_levels: Option<Vec<Choice>> = match warm {
        Some(w) => {
            if w.len() != nflows
                || w.iter().enumerate().any(|(f, c)| {
                    let (r, b) = scenario.action_space(f);
                    c.route as usize >= r || c.bandwidth as usize >= b
                })
            {
                return Err(AllocError::InvalidParams("warm start does not fit the scenario".into()));
            }
            Some(order.iter().map(|&f| w[f]).collect())
        }
        None => None,
    };

    let mut tree = MctsTree::new(arity);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut cache: HashMap<Vec<Choice>, RewardBreakdown> = HashMap::new();
    let mut trace = Vec::with_capacity(params.episodes);
    let mut best: Option<Episode> = None;

    for z in 0..params.episodes {
        let epsilon = epsilon_schedule(z, params)?;
        let forced = if z == 0 { warm_levels.as_deref() } else { None };
        let path = tree.descend(epsilon, &mut rng, forced);
        let level_choices = tree.choices(&path);
        let mut choices = vec![Choice { route: 0, bandwidth: 0 }; nflows];
        for (l, &f) in order.iter().enumerate() {
            choices[f] = level_choices[l];
        }
        let reward = match cache.get(&choices) {
            Some(r) => *r,
            None => {
                let r = scenario.evaluate(&scenario.resolve(&choices), params.policy, params.lambda)?;
                cache.insert(choices.clone(), r);
                r
            }
        };
        backpropagate(&mut tree, &path, reward.reward);
        trace.push(TraceRow {
            episode: z,
            reward: reward.reward,
            objective: reward.objective,
            constraint_violation: reward.constraint_violation,
            epsilon,
        });
        if best.as_ref().is_none_or(|b| reward.reward > b.reward.reward) {
            best = Some(Episode { choices, reward });
        }
    }

    let best = best.expect("at least one episode");
    Ok(TrainingResult {
        best_config: scenario.resolve(&best.choices),
        best_choices: best.choices,
        best_reward: best.reward,
        trace,
        evaluations: cache.len(),
        tree,
    })
}
