//! AST <-> action transduction and legal-action masking.
//!
//! Construction is top-down, left-to-right: the frontier stack always
//! exposes the leftmost unexpanded slot. Token fields emit their tokens
//! followed by the reserved end token; there is no third action kind.

use super::{
    Action, AstNode, FieldType, Grammar, NontermId, ProdId, END_ID, END_TOKEN, PAD_ID,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SlotType {
    Nonterm(NontermId),
    TokenField,
}

/// One pending slot: what may fill it and which step pushed it.
#[derive(Clone, Debug)]
pub struct Slot {
    pub ty: SlotType,
    pub parent_step: Option<usize>,
    /// Token fields only: at least one token emitted so far.
    pub started: bool,
}

/// Decoder-side derivation state. Empty stack means the derivation is
/// complete; the top of the stack is the leftmost unexpanded slot.
#[derive(Clone, Debug)]
pub struct FrontierState {
    stack: Vec<Slot>,
    step: usize,
}

impl FrontierState {
    pub fn new(g: &Grammar) -> FrontierState {
        FrontierState {
            stack: vec![Slot {
                ty: SlotType::Nonterm(g.root()),
                parent_step: None,
                started: false,
            }],
            step: 0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.stack.is_empty()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn pending(&self) -> usize {
        self.stack.len()
    }

    pub fn top(&self) -> Option<&Slot> {
        self.stack.last()
    }

    fn describe_top(&self, g: &Grammar) -> String {
        match self.top() {
            None => "complete derivation".into(),
            Some(Slot {
                ty: SlotType::Nonterm(nt),
                ..
            }) => format!("nonterminal {}", g.nonterminal_name(*nt)),
            Some(Slot {
                ty: SlotType::TokenField,
                started,
                ..
            }) => {
                if *started {
                    "token field (started)".into()
                } else {
                    "token field".into()
                }
            }
        }
    }

    /// Apply one action, enforcing grammar legality.
    pub fn apply(&mut self, action: &Action, g: &Grammar) -> Result<()> {
        let step = self.step;
        let Some(slot) = self.stack.last_mut() else {
            return Err(Error::TrailingActions { step });
        };
        match (action, &slot.ty) {
            (Action::ApplyRule(pid), SlotType::Nonterm(nt)) => {
                if *pid >= g.production_count() || g.production(*pid).lhs != *nt {
                    return Err(Error::IllegalAction {
                        step,
                        expected: self.describe_top(g),
                        got: action.to_string(),
                    });
                }
                let prod = g.production(*pid);
                self.stack.pop();
                for field in prod.fields.iter().rev() {
                    self.stack.push(Slot {
                        ty: match &field.ty {
                            FieldType::Nonterminal(t) => SlotType::Nonterm(*t),
                            FieldType::Token => SlotType::TokenField,
                        },
                        parent_step: Some(step),
                        started: false,
                    });
                }
            }
            (Action::GenToken(tok), SlotType::TokenField) => {
                if tok == END_TOKEN {
                    if !slot.started {
                        return Err(Error::IllegalAction {
                            step,
                            expected: "at least one token before the end token".into(),
                            got: action.to_string(),
                        });
                    }
                    self.stack.pop();
                } else if tok.is_empty() {
                    return Err(Error::IllegalAction {
                        step,
                        expected: "non-empty token".into(),
                        got: action.to_string(),
                    });
                } else {
                    slot.started = true;
                }
            }
            _ => {
                return Err(Error::IllegalAction {
                    step,
                    expected: self.describe_top(g),
                    got: action.to_string(),
                });
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Depth-first, left-to-right construction trace of a well-typed AST.
pub fn ast_to_actions(ast: &AstNode, g: &Grammar) -> Result<Vec<Action>> {
    ast.validate(g)?;
    let mut actions = Vec::new();
    emit(ast, &mut actions);
    Ok(actions)
}

fn emit(ast: &AstNode, out: &mut Vec<Action>) {
    match ast {
        AstNode::Node {
            production,
            children,
        } => {
            out.push(Action::ApplyRule(*production));
            for child in children {
                emit(child, out);
            }
        }
        AstNode::Leaf { tokens } => {
            for t in tokens {
                out.push(Action::GenToken(t.clone()));
            }
            out.push(Action::GenToken(END_TOKEN.to_string()));
        }
    }
}

/// Rebuild the unique AST whose trace is `actions`.
pub fn actions_to_ast(actions: &[Action], g: &Grammar) -> Result<AstNode> {
    let mut pos = 0usize;
    let root = parse_expected(actions, &mut pos, &FieldType::Nonterminal(g.root()), g)?;
    if pos != actions.len() {
        return Err(Error::TrailingActions { step: pos });
    }
    Ok(root)
}

fn parse_expected(
    actions: &[Action],
    pos: &mut usize,
    expected: &FieldType,
    g: &Grammar,
) -> Result<AstNode> {
    let describe = |g: &Grammar, e: &FieldType| match e {
        FieldType::Nonterminal(nt) => format!("nonterminal {}", g.nonterminal_name(*nt)),
        FieldType::Token => "token field".to_string(),
    };
    match expected {
        FieldType::Nonterminal(nt) => {
            let step = *pos;
            match actions.get(step) {
                Some(Action::ApplyRule(pid))
                    if *pid < g.production_count() && g.production(*pid).lhs == *nt =>
                {
                    *pos += 1;
                    let prod = g.production(*pid);
                    let mut children = Vec::with_capacity(prod.fields.len());
                    for field in &prod.fields {
                        children.push(parse_expected(actions, pos, &field.ty, g)?);
                    }
                    Ok(AstNode::Node {
                        production: *pid,
                        children,
                    })
                }
                Some(other) => Err(Error::IllegalAction {
                    step,
                    expected: describe(g, expected),
                    got: other.to_string(),
                }),
                None => Err(Error::IncompleteDerivation { pending: 1 }),
            }
        }
        FieldType::Token => {
            let mut tokens = Vec::new();
            loop {
                let step = *pos;
                match actions.get(step) {
                    Some(Action::GenToken(t)) if t == END_TOKEN => {
                        *pos += 1;
                        if tokens.is_empty() {
                            return Err(Error::IllegalAction {
                                step,
                                expected: "at least one token before the end token".into(),
                                got: Action::GenToken(END_TOKEN.into()).to_string(),
                            });
                        }
                        return Ok(AstNode::Leaf { tokens });
                    }
                    Some(Action::GenToken(t)) => {
                        *pos += 1;
                        tokens.push(t.clone());
                    }
                    Some(other) => {
                        return Err(Error::IllegalAction {
                            step,
                            expected: describe(g, expected),
                            got: other.to_string(),
                        });
                    }
                    None => return Err(Error::IncompleteDerivation { pending: 1 }),
                }
            }
        }
    }
}

/// Fixed index layout of the action space:
/// `[ApplyRule block | GenToken vocabulary block | end token | copy block]`.
///
/// The vocabulary block has one slot per code-vocabulary id; the slots for
/// the reserved PAD id and the reserved end id are dead (never legal) —
/// the end token is only reachable through its dedicated index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionLayout {
    pub n_productions: usize,
    pub vocab_size: usize,
    pub max_input_len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActionSlot {
    Rule(ProdId),
    Vocab(usize),
    End,
    Copy(usize),
}

impl ActionLayout {
    pub fn total(&self) -> usize {
        self.n_productions + self.vocab_size + 1 + self.max_input_len
    }

    pub fn rule_index(&self, p: ProdId) -> usize {
        p
    }

    pub fn vocab_index(&self, v: usize) -> usize {
        self.n_productions + v
    }

    pub fn end_index(&self) -> usize {
        self.n_productions + self.vocab_size
    }

    pub fn copy_index(&self, i: usize) -> usize {
        self.n_productions + self.vocab_size + 1 + i
    }

    pub fn decode(&self, idx: usize) -> ActionSlot {
        if idx < self.n_productions {
            ActionSlot::Rule(idx)
        } else if idx < self.n_productions + self.vocab_size {
            ActionSlot::Vocab(idx - self.n_productions)
        } else if idx == self.end_index() {
            ActionSlot::End
        } else {
            ActionSlot::Copy(idx - self.end_index() - 1)
        }
    }
}

/// Boolean mask over the action index space admitting exactly the legal
/// actions at `state`. Copy slots follow the current input's length.
pub fn legal_action_mask(
    state: &FrontierState,
    g: &Grammar,
    layout: &ActionLayout,
    input_tokens_len: usize,
) -> Result<Vec<bool>> {
    let Some(slot) = state.top() else {
        return Err(Error::Domain {
            op: "legal_action_mask",
            detail: "derivation already complete".into(),
        });
    };
    let mut mask = vec![false; layout.total()];
    match &slot.ty {
        SlotType::Nonterm(nt) => {
            for &pid in g.productions_for(*nt) {
                mask[layout.rule_index(pid)] = true;
            }
        }
        SlotType::TokenField => {
            for v in 0..layout.vocab_size {
                if v != PAD_ID && v != END_ID {
                    mask[layout.vocab_index(v)] = true;
                }
            }
            if slot.started {
                mask[layout.end_index()] = true;
            }
            for i in 0..input_tokens_len.min(layout.max_input_len) {
                mask[layout.copy_index(i)] = true;
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::load_grammar;

    fn lit_grammar() -> Grammar {
        load_grammar("S -> Lit(v:token)").unwrap()
    }

    #[test]
    fn smallest_derivation_roundtrips() {
        let g = lit_grammar();
        let ast = AstNode::node(0, vec![AstNode::leaf(vec!["x"])]);
        let actions = ast_to_actions(&ast, &g).unwrap();
        assert_eq!(
            actions,
            vec![
                Action::ApplyRule(0),
                Action::GenToken("x".into()),
                Action::GenToken(END_TOKEN.into())
            ]
        );
        assert_eq!(actions_to_ast(&actions, &g).unwrap(), ast);
    }

    #[test]
    fn apply_rule_where_token_required_is_illegal() {
        let g = lit_grammar();
        let actions = vec![Action::ApplyRule(0), Action::ApplyRule(0)];
        match actions_to_ast(&actions, &g) {
            Err(Error::IllegalAction { step, expected, .. }) => {
                assert_eq!(step, 1);
                assert!(expected.contains("token"), "{expected}");
            }
            other => panic!("expected illegal action, got {other:?}"),
        }
    }

    #[test]
    fn incomplete_and_trailing_are_distinct_errors() {
        let g = lit_grammar();
        assert!(matches!(
            actions_to_ast(&[Action::ApplyRule(0)], &g),
            Err(Error::IncompleteDerivation { .. })
        ));
        let complete = vec![
            Action::ApplyRule(0),
            Action::GenToken("x".into()),
            Action::GenToken(END_TOKEN.into()),
            Action::GenToken("y".into()),
        ];
        assert!(matches!(
            actions_to_ast(&complete, &g),
            Err(Error::TrailingActions { step: 3 })
        ));
    }

    #[test]
    fn frontier_tracks_parent_steps() {
        let g = load_grammar("S -> Pair(a:T, b:T)\nT -> Leaf(v:token)").unwrap();
        let mut state = FrontierState::new(&g);
        assert_eq!(state.top().unwrap().parent_step, None);
        state.apply(&Action::ApplyRule(0), &g).unwrap();
        // both pending T slots were pushed by step 0, leftmost on top
        assert_eq!(state.pending(), 2);
        assert_eq!(state.top().unwrap().parent_step, Some(0));
        state.apply(&Action::ApplyRule(1), &g).unwrap();
        assert_eq!(state.top().unwrap().ty, SlotType::TokenField);
        assert_eq!(state.top().unwrap().parent_step, Some(1));
    }

    #[test]
    fn end_token_requires_started_leaf() {
        let g = lit_grammar();
        let mut state = FrontierState::new(&g);
        state.apply(&Action::ApplyRule(0), &g).unwrap();
        let end = Action::GenToken(END_TOKEN.into());
        assert!(state.apply(&end, &g).is_err());
        state.apply(&Action::GenToken("x".into()), &g).unwrap();
        state.apply(&end, &g).unwrap();
        assert!(state.is_complete());
    }

    #[test]
    fn mask_counts_match_frontier_kind() {
        let g = load_grammar("S -> A(x:T)\nT -> P()\nT -> Q()").unwrap();
        let layout = ActionLayout {
            n_productions: g.production_count(),
            vocab_size: 5,
            max_input_len: 4,
        };
        let mut state = FrontierState::new(&g);
        let mask = legal_action_mask(&state, &g, &layout, 3).unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), 1);
        assert!(mask[layout.rule_index(0)]);

        state.apply(&Action::ApplyRule(0), &g).unwrap();
        let mask = legal_action_mask(&state, &g, &layout, 3).unwrap();
        // frontier T has exactly 2 productions
        let rule_hits: Vec<usize> = (0..g.production_count())
            .filter(|&p| mask[layout.rule_index(p)])
            .collect();
        assert_eq!(rule_hits, vec![1, 2]);
        assert!(mask[layout.rule_index(1)] && mask[layout.rule_index(2)]);
    }

    #[test]
    fn token_frontier_mask_admits_only_gen_tokens() {
        let g = lit_grammar();
        let layout = ActionLayout {
            n_productions: 1,
            vocab_size: 6,
            max_input_len: 4,
        };
        let mut state = FrontierState::new(&g);
        state.apply(&Action::ApplyRule(0), &g).unwrap();
        let mask = legal_action_mask(&state, &g, &layout, 2).unwrap();
        assert!(!mask[layout.rule_index(0)]);
        // live vocab slots (all but PAD and the in-block end id)
        for v in 0..6 {
            let expect = v != PAD_ID && v != END_ID;
            assert_eq!(mask[layout.vocab_index(v)], expect, "vocab slot {v}");
        }
        // unstarted leaf: end not yet legal
        assert!(!mask[layout.end_index()]);
        assert!(mask[layout.copy_index(0)] && mask[layout.copy_index(1)]);
        assert!(!mask[layout.copy_index(2)]);

        state.apply(&Action::GenToken("x".into()), &g).unwrap();
        let mask = legal_action_mask(&state, &g, &layout, 2).unwrap();
        assert!(mask[layout.end_index()]);
    }

    #[test]
    fn mask_of_complete_state_is_rejected() {
        let g = lit_grammar();
        let layout = ActionLayout {
            n_productions: 1,
            vocab_size: 4,
            max_input_len: 2,
        };
        let mut state = FrontierState::new(&g);
        for a in [
            Action::ApplyRule(0),
            Action::GenToken("x".into()),
            Action::GenToken(END_TOKEN.into()),
        ] {
            state.apply(&a, &g).unwrap();
        }
        assert!(state.is_complete());
        assert!(legal_action_mask(&state, &g, &layout, 2).is_err());
    }

    #[test]
    fn layout_decode_inverts_indices() {
        let layout = ActionLayout {
            n_productions: 3,
            vocab_size: 7,
            max_input_len: 5,
        };
        assert_eq!(layout.total(), 16);
        assert_eq!(layout.decode(layout.rule_index(2)), ActionSlot::Rule(2));
        assert_eq!(layout.decode(layout.vocab_index(6)), ActionSlot::Vocab(6));
        assert_eq!(layout.decode(layout.end_index()), ActionSlot::End);
        assert_eq!(layout.decode(layout.copy_index(4)), ActionSlot::Copy(4));
    }
}
