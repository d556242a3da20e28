//! Random derivations under a grammar: the uniform-random legal policy
//! used for discriminator negatives, corpus synthesis, and the
//! completability oracle in the test suites.

use super::{
    Action, AstNode, FieldType, FrontierState, Grammar, SlotType, END_TOKEN,
};
use crate::rng::SeededRng;

/// Random well-typed AST. Productions are chosen uniformly while the depth
/// budget lasts, then by minimal completion depth, so sampling always
/// terminates.
pub fn sample_random_ast(
    g: &Grammar,
    rng: &mut SeededRng,
    token_pool: &[String],
    depth_budget: usize,
) -> AstNode {
    sample_nt(g, g.root(), rng, token_pool, depth_budget)
}

fn sample_nt(
    g: &Grammar,
    nt: usize,
    rng: &mut SeededRng,
    pool: &[String],
    budget: usize,
) -> AstNode {
    let prods = g.productions_for(nt);
    let pid = if budget == 0 {
        g.min_depth_production(nt)
    } else {
        prods[rng.below(prods.len())]
    };
    let children = g
        .production(pid)
        .fields
        .iter()
        .map(|f| match &f.ty {
            FieldType::Nonterminal(t) => {
                sample_nt(g, *t, rng, pool, budget.saturating_sub(1))
            }
            FieldType::Token => sample_leaf(rng, pool),
        })
        .collect::<Vec<_>>();
    AstNode::Node {
        production: pid,
        children,
    }
}

fn sample_leaf(rng: &mut SeededRng, pool: &[String]) -> AstNode {
    let mut tokens = vec![pool[rng.below(pool.len())].clone()];
    while tokens.len() < 3 && rng.chance(0.25) {
        tokens.push(pool[rng.below(pool.len())].clone());
    }
    AstNode::Leaf { tokens }
}

/// Uniform-random legal action walk. Returns the trace and whether the
/// frontier drained within `max_steps`.
pub fn sample_uniform_actions(
    g: &Grammar,
    rng: &mut SeededRng,
    token_pool: &[String],
    max_steps: usize,
) -> (Vec<Action>, bool) {
    let mut state = FrontierState::new(g);
    let mut actions = Vec::new();
    while !state.is_complete() {
        if actions.len() >= max_steps {
            return (actions, false);
        }
        let action = match &state.top().expect("incomplete").ty {
            SlotType::Nonterm(nt) => {
                let prods = g.productions_for(*nt);
                Action::ApplyRule(prods[rng.below(prods.len())])
            }
            SlotType::TokenField => {
                let started = state.top().expect("incomplete").started;
                if started && rng.chance(0.5) {
                    Action::GenToken(END_TOKEN.to_string())
                } else {
                    Action::GenToken(token_pool[rng.below(token_pool.len())].clone())
                }
            }
        };
        state.apply(&action, g).expect("sampled action is legal");
        actions.push(action);
    }
    (actions, true)
}

/// Deterministic completion of a partial derivation along minimal-depth
/// productions. Always terminates; used to prove masked actions never
/// dead-end.
pub fn min_completion(g: &Grammar, state: &FrontierState) -> Vec<Action> {
    let mut state = state.clone();
    let mut actions = Vec::new();
    while !state.is_complete() {
        let action = match &state.top().expect("incomplete").ty {
            SlotType::Nonterm(nt) => Action::ApplyRule(g.min_depth_production(*nt)),
            SlotType::TokenField => {
                if state.top().expect("incomplete").started {
                    Action::GenToken(END_TOKEN.to_string())
                } else {
                    Action::GenToken("t".to_string())
                }
            }
        };
        state.apply(&action, g).expect("min completion is legal");
        actions.push(action);
    }
    actions
}
