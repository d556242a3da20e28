//! Grammar-masked encoder-decoder generator with soft attention, parent
//! feeding, and a pointer-copy mixture for token emission.
//!
//! Every emitted action is drawn from a masked distribution, so sampled
//! and beamed traces parse under the grammar by construction.

use std::collections::HashMap;

use super::encoder::{BiEncoder, EncoderStates};
use super::lstm::LstmCell;
use crate::autodiff::{xavier_uniform_init, ParameterStore, Tensor, Value};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::grammar::{
    Action, ActionLayout, FrontierState, Grammar, Slot, SlotType, END_ID, END_TOKEN, PAD_ID,
};
use crate::rng::SeededRng;

/// Mask bias added to illegal logits; exp underflows to exactly zero.
const MASK_BIAS: f32 = -1e9;
/// Floor inside `log` guarding probabilities that underflow to 0.0; it is
/// absorbed by f32 rounding for any probability above ~1e-5.
const PROB_FLOOR: f32 = 1e-12;

pub struct GeneratorModel {
    pub params: ParameterStore,
    pub hidden: usize,
    pub embed: usize,
    pub nl_vocab: Vocabulary,
    pub code_vocab: Vocabulary,
    pub layout: ActionLayout,
    encoder: BiEncoder,
    cell: LstmCell,
    init_w: Value,
    init_b: Value,
    att_w: Value,
    action_embed: Value,
    rule_w: Value,
    rule_b: Value,
    gen_w: Value,
    gen_b: Value,
    gate_w: Value,
    gate_b: Value,
}

/// Partial decoder state during search.
#[derive(Clone)]
pub struct Hypothesis {
    pub frontier: FrontierState,
    pub actions: Vec<Action>,
    /// Primary action-space index per step (deterministic tie-breaking).
    pub action_indices: Vec<usize>,
    /// Cumulative log-probability; non-increasing as actions append.
    pub score: f64,
    h: Value,
    c: Value,
    /// Decoder state after each executed step, for parent feeding.
    states: Vec<Value>,
}

impl Hypothesis {
    pub fn is_complete(&self) -> bool {
        self.frontier.is_complete()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// One decoder step: recurrent state plus the masked action distribution
/// pieces for the current frontier slot.
pub struct DecoderStep {
    pub state: Value,
    pub cell_state: Value,
    pub context: Value,
    pub parent_feed: Value,
    pub prev_action_embedding: Value,
    slot: Slot,
    kind: StepKind,
}

enum StepKind {
    Rule {
        legal: Vec<usize>,
        probs: Value,
    },
    Token {
        gate: Value,
        gen_probs: Value,
        alpha: Value,
    },
}

/// One legal next action with its probability mass. Tokens reachable both
/// from the vocabulary and by copy carry their summed mass; `index` is the
/// first action-space index that produces the action.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub action: Action,
    pub prob: f32,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct CompletedHypothesis {
    pub actions: Vec<Action>,
    pub action_indices: Vec<usize>,
    pub score: f64,
    pub steps: usize,
}

/// Result of ancestral sampling; incompleteness is an outcome, not an
/// error.
pub struct SampleOutcome {
    pub actions: Vec<Action>,
    pub action_indices: Vec<usize>,
    pub step_log_probs: Vec<Value>,
    pub complete: bool,
    pub score: f64,
}

impl GeneratorModel {
    pub fn new(
        hidden: usize,
        embed: usize,
        nl_vocab: Vocabulary,
        code_vocab: Vocabulary,
        layout: ActionLayout,
        seed: u64,
    ) -> Result<GeneratorModel> {
        let mut rng = SeededRng::new(seed);
        let mut params = ParameterStore::new(seed);
        let p = layout.n_productions;
        let v = layout.vocab_size;
        let encoder = BiEncoder::new(&mut params, "enc", nl_vocab.len(), embed, hidden, &mut rng)?;
        let init_w = params.add(
            "dec.init_w",
            xavier_uniform_init(&[hidden, 2 * hidden], 2 * hidden, hidden, &mut rng)?,
        )?;
        let init_b = params.add("dec.init_b", Value::parameter(Tensor::zeros(&[hidden])))?;
        let att_w = params.add(
            "att.w",
            xavier_uniform_init(&[hidden, 2 * hidden], hidden, 2 * hidden, &mut rng)?,
        )?;
        let action_embed = params.add(
            "dec.action_embed",
            xavier_uniform_init(&[p + v, embed], p + v, embed, &mut rng)?,
        )?;
        // decoder input is [prev action : context : parent feed]
        let cell = LstmCell::new(
            &mut params,
            "dec.cell",
            embed + 2 * hidden + hidden,
            hidden,
            &mut rng,
        )?;
        let rule_w = params.add(
            "dec.rule_w",
            xavier_uniform_init(&[p, hidden], hidden, p, &mut rng)?,
        )?;
        let rule_b = params.add("dec.rule_b", Value::parameter(Tensor::zeros(&[p])))?;
        let gen_w = params.add(
            "dec.gen_w",
            xavier_uniform_init(&[v + 1, hidden], hidden, v + 1, &mut rng)?,
        )?;
        let gen_b = params.add("dec.gen_b", Value::parameter(Tensor::zeros(&[v + 1])))?;
        let gate_w = params.add(
            "dec.gate_w",
            xavier_uniform_init(&[1, hidden], hidden, 1, &mut rng)?,
        )?;
        let gate_b = params.add("dec.gate_b", Value::parameter(Tensor::zeros(&[1])))?;
        Ok(GeneratorModel {
            params,
            hidden,
            embed,
            nl_vocab,
            code_vocab,
            layout,
            encoder,
            cell,
            init_w,
            init_b,
            att_w,
            action_embed,
            rule_w,
            rule_b,
            gen_w,
            gen_b,
            gate_w,
            gate_b,
        })
    }

    pub fn encode(&self, nl_tokens: &[String]) -> Result<EncoderStates> {
        if nl_tokens.len() > self.layout.max_input_len {
            return Err(Error::Domain {
                op: "encode",
                detail: format!(
                    "input has {} tokens, max_input_len is {}",
                    nl_tokens.len(),
                    self.layout.max_input_len
                ),
            });
        }
        self.encoder.encode_tokens(nl_tokens, &self.nl_vocab)
    }

    /// Soft attention: bilinear scores between the decoder state and each
    /// encoder vector, softmax-normalized. Returns (weights, context).
    pub fn attend(&self, s: &Value, enc: &EncoderStates) -> Result<(Value, Value)> {
        let query = s.matmul(&self.att_w)?; // [2H]
        let scores: Vec<Value> = enc
            .hs
            .iter()
            .map(|h| query.matmul(h))
            .collect::<Result<_>>()?;
        let alpha = Value::concat(&scores, 0)?.softmax()?;
        let mut context: Option<Value> = None;
        for (i, h) in enc.hs.iter().enumerate() {
            let weighted = h.mul(&alpha.slice(i, 1)?)?;
            context = Some(match context {
                None => weighted,
                Some(acc) => acc.add(&weighted)?,
            });
        }
        Ok((alpha, context.expect("non-empty encoder states")))
    }

    pub fn start_hypothesis(&self, enc: &EncoderStates, g: &Grammar) -> Result<Hypothesis> {
        let h0 = self
            .init_w
            .matmul(&enc.summary)?
            .add(&self.init_b)?
            .tanh()?;
        Ok(Hypothesis {
            frontier: FrontierState::new(g),
            actions: Vec::new(),
            action_indices: Vec::new(),
            score: 0.0,
            h: h0,
            c: Value::zeros(&[self.hidden]),
            states: Vec::new(),
        })
    }

    /// One decoder step from `prev`: attention context, parent feed, the
    /// LSTM update, and the masked action distribution for the frontier.
    pub fn decode_step(
        &self,
        prev: &Hypothesis,
        enc: &EncoderStates,
        g: &Grammar,
    ) -> Result<DecoderStep> {
        let slot = prev
            .frontier
            .top()
            .ok_or_else(|| Error::Domain {
                op: "decode_step",
                detail: "hypothesis is already complete".into(),
            })?
            .clone();
        let (alpha, context) = self.attend(&prev.h, enc)?;
        let a_prev = match prev.actions.last() {
            None => Value::zeros(&[self.embed]),
            Some(Action::ApplyRule(p)) => self.action_embed.embedding_lookup(&[*p])?,
            Some(Action::GenToken(t)) => {
                let vid = if t == END_TOKEN {
                    END_ID
                } else {
                    self.code_vocab.id(t)
                };
                self.action_embed
                    .embedding_lookup(&[self.layout.n_productions + vid])?
            }
        };
        let parent_feed = match slot.parent_step {
            None => Value::zeros(&[self.hidden]),
            Some(step) => prev.states[step].clone(),
        };
        let x = Value::concat(
            &[a_prev.clone(), context.clone(), parent_feed.clone()],
            0,
        )?;
        let (s_t, c_t) = self.cell.step(&x, &prev.h, &prev.c)?;
        let kind = match &slot.ty {
            SlotType::Nonterm(nt) => {
                let legal = g.productions_for(*nt).to_vec();
                let logits = self.rule_w.matmul(&s_t)?.add(&self.rule_b)?;
                let mut bias = vec![MASK_BIAS; self.layout.n_productions];
                for &pid in &legal {
                    bias[pid] = 0.0;
                }
                let masked = logits.add(&Value::constant(Tensor::new(
                    bias,
                    vec![self.layout.n_productions],
                )))?;
                StepKind::Rule {
                    legal,
                    probs: masked.softmax()?,
                }
            }
            SlotType::TokenField => {
                let v = self.layout.vocab_size;
                let logits = self.gen_w.matmul(&s_t)?.add(&self.gen_b)?;
                let mut bias = vec![0.0f32; v + 1];
                bias[PAD_ID] = MASK_BIAS;
                bias[END_ID] = MASK_BIAS; // end lives in its dedicated slot
                if !slot.started {
                    bias[v] = MASK_BIAS; // leaves carry at least one token
                }
                let masked = logits.add(&Value::constant(Tensor::new(bias, vec![v + 1])))?;
                let gate = self.gate_w.matmul(&s_t)?.add(&self.gate_b)?.sigmoid()?;
                StepKind::Token {
                    gate,
                    gen_probs: masked.softmax()?,
                    alpha,
                }
            }
        };
        Ok(DecoderStep {
            state: s_t,
            cell_state: c_t,
            context,
            parent_feed,
            prev_action_embedding: a_prev,
            slot,
            kind,
        })
    }

    /// Legal next actions with probabilities. Copy positions whose token
    /// also exists in the vocabulary (or repeats an earlier position) fold
    /// their mass into the earlier candidate.
    pub fn candidates(&self, step: &DecoderStep, input_tokens: &[String]) -> Vec<Candidate> {
        match &step.kind {
            StepKind::Rule { legal, probs } => {
                let pd = probs.data();
                legal
                    .iter()
                    .map(|&pid| Candidate {
                        action: Action::ApplyRule(pid),
                        prob: pd[pid],
                        index: self.layout.rule_index(pid),
                    })
                    .collect()
            }
            StepKind::Token {
                gate,
                gen_probs,
                alpha,
            } => {
                let g = gate.item();
                let gp = gen_probs.data();
                let al = alpha.data();
                let v = self.layout.vocab_size;
                let mut out: Vec<Candidate> = Vec::with_capacity(v + 1 + input_tokens.len());
                let mut by_token: HashMap<&str, usize> = HashMap::new();
                for vid in 0..v {
                    if vid == PAD_ID || vid == END_ID {
                        continue;
                    }
                    let token = self.code_vocab.token(vid);
                    by_token.insert(token, out.len());
                    out.push(Candidate {
                        action: Action::GenToken(token.to_string()),
                        prob: g * gp[vid],
                        index: self.layout.vocab_index(vid),
                    });
                }
                if step.slot.started {
                    out.push(Candidate {
                        action: Action::GenToken(END_TOKEN.to_string()),
                        prob: g * gp[v],
                        index: self.layout.end_index(),
                    });
                }
                let n = input_tokens.len().min(self.layout.max_input_len);
                for (i, token) in input_tokens.iter().take(n).enumerate() {
                    let mass = (1.0 - g) * al[i];
                    match by_token.get(token.as_str()) {
                        Some(&at) => out[at].prob += mass,
                        None => {
                            by_token.insert(token.as_str(), out.len());
                            out.push(Candidate {
                                action: Action::GenToken(token.clone()),
                                prob: mass,
                                index: self.layout.copy_index(i),
                            });
                        }
                    }
                }
                out
            }
        }
    }

    /// Differentiable log-probability of `action` at this step. Tokens
    /// reachable both by generation and by copy sum their mass.
    pub fn action_log_prob(
        &self,
        step: &DecoderStep,
        action: &Action,
        input_tokens: &[String],
        step_idx: usize,
    ) -> Result<Value> {
        let illegal = |expected: &str| Error::IllegalAction {
            step: step_idx,
            expected: expected.to_string(),
            got: action.to_string(),
        };
        let mass = match (&step.kind, action) {
            (StepKind::Rule { legal, probs }, Action::ApplyRule(pid)) => {
                if !legal.contains(pid) {
                    return Err(illegal("a production legal at this frontier"));
                }
                probs.slice(*pid, 1)?
            }
            (
                StepKind::Token {
                    gate,
                    gen_probs,
                    alpha,
                },
                Action::GenToken(token),
            ) => {
                if token == END_TOKEN {
                    if !step.slot.started {
                        return Err(illegal("at least one token before the end token"));
                    }
                    gate.mul(&gen_probs.slice(self.layout.vocab_size, 1)?)?
                } else {
                    let mut acc: Option<Value> = None;
                    if self.code_vocab.contains(token) {
                        let vid = self.code_vocab.id(token);
                        if vid != PAD_ID && vid != END_ID {
                            acc = Some(gate.mul(&gen_probs.slice(vid, 1)?)?);
                        }
                    }
                    let n = input_tokens.len().min(self.layout.max_input_len);
                    let mut copy_gate: Option<Value> = None;
                    for (i, t) in input_tokens.iter().take(n).enumerate() {
                        if t == token {
                            let one_minus_g = Value::scalar(1.0)
                                .add(&copy_gate_term(gate, &mut copy_gate)?)?;
                            let mass = one_minus_g.mul(&alpha.slice(i, 1)?)?;
                            acc = Some(match acc {
                                None => mass,
                                Some(a) => a.add(&mass)?,
                            });
                        }
                    }
                    match acc {
                        Some(a) => a,
                        None => {
                            return Err(illegal(
                                "a token in the code vocabulary or the input utterance",
                            ))
                        }
                    }
                }
            }
            (StepKind::Rule { .. }, _) => {
                let SlotType::Nonterm(nt) = step.slot.ty else {
                    unreachable!()
                };
                return Err(illegal(&format!("expansion of nonterminal {nt}")));
            }
            (StepKind::Token { .. }, _) => return Err(illegal("a token emission")),
        };
        mass.add(&Value::scalar(PROB_FLOOR))?.log()
    }

    /// Extend a hypothesis with one chosen action.
    pub fn advance(
        &self,
        prev: &Hypothesis,
        action: Action,
        index: usize,
        log_p: f64,
        step: &DecoderStep,
        g: &Grammar,
    ) -> Result<Hypothesis> {
        let mut frontier = prev.frontier.clone();
        frontier.apply(&action, g)?;
        let mut actions = prev.actions.clone();
        actions.push(action);
        let mut action_indices = prev.action_indices.clone();
        action_indices.push(index);
        let mut states = prev.states.clone();
        states.push(step.state.clone());
        Ok(Hypothesis {
            frontier,
            actions,
            action_indices,
            score: prev.score + log_p,
            h: step.state.clone(),
            c: step.cell_state.clone(),
            states,
        })
    }

    /// Log-probability of a complete gold trace, differentiable w.r.t.
    /// the generator parameters.
    pub fn sequence_log_prob(
        &self,
        nl_tokens: &[String],
        actions: &[Action],
        g: &Grammar,
    ) -> Result<Value> {
        let enc = self.encode(nl_tokens)?;
        let mut hyp = self.start_hypothesis(&enc, g)?;
        let mut total: Option<Value> = None;
        for (idx, action) in actions.iter().enumerate() {
            if hyp.is_complete() {
                return Err(Error::TrailingActions { step: idx });
            }
            let step = self.decode_step(&hyp, &enc, g)?;
            let lp = self.action_log_prob(&step, action, nl_tokens, idx)?;
            let lp_f = lp.item() as f64;
            total = Some(match total {
                None => lp,
                Some(t) => t.add(&lp)?,
            });
            hyp = self.advance(&hyp, action.clone(), 0, lp_f, &step, g)?;
        }
        if !hyp.is_complete() {
            return Err(Error::IncompleteDerivation {
                pending: hyp.frontier.pending(),
            });
        }
        total.ok_or_else(|| Error::IncompleteDerivation { pending: 1 })
    }

    /// Ancestral sampling from the masked distributions. Stops when the
    /// frontier drains or `max_steps` is hit (flagged incomplete).
    pub fn sample(
        &self,
        nl_tokens: &[String],
        g: &Grammar,
        rng: &mut SeededRng,
        max_steps: usize,
    ) -> Result<SampleOutcome> {
        let enc = self.encode(nl_tokens)?;
        let mut hyp = self.start_hypothesis(&enc, g)?;
        let mut step_log_probs = Vec::new();
        while !hyp.is_complete() {
            if hyp.len() >= max_steps {
                return Ok(SampleOutcome {
                    actions: hyp.actions,
                    action_indices: hyp.action_indices,
                    step_log_probs,
                    complete: false,
                    score: hyp.score,
                });
            }
            let step = self.decode_step(&hyp, &enc, g)?;
            let cands = self.candidates(&step, nl_tokens);
            let weights: Vec<f32> = cands.iter().map(|c| c.prob).collect();
            let chosen = &cands[rng.categorical(&weights)];
            let lp = self.action_log_prob(&step, &chosen.action, nl_tokens, hyp.len())?;
            let lp_f = lp.item() as f64;
            step_log_probs.push(lp);
            hyp = self.advance(&hyp, chosen.action.clone(), chosen.index, lp_f, &step, g)?;
        }
        Ok(SampleOutcome {
            actions: hyp.actions,
            action_indices: hyp.action_indices,
            step_log_probs,
            complete: true,
            score: hyp.score,
        })
    }

    /// Length-synchronous beam search over masked action distributions.
    /// Completed hypotheses are ranked by total log-probability, ties by
    /// earlier completion then lexicographic action indices.
    pub fn beam_search(
        &self,
        nl_tokens: &[String],
        g: &Grammar,
        beam_width: usize,
        max_steps: usize,
    ) -> Result<Vec<CompletedHypothesis>> {
        if beam_width == 0 {
            return Err(Error::Domain {
                op: "beam_search",
                detail: "beam_width must be >= 1".into(),
            });
        }
        let enc = self.encode(nl_tokens)?;
        let mut live = vec![self.start_hypothesis(&enc, g)?];
        let mut done: Vec<CompletedHypothesis> = Vec::new();
        for _ in 0..max_steps {
            if live.is_empty() {
                break;
            }
            let steps: Vec<DecoderStep> = live
                .iter()
                .map(|h| self.decode_step(h, &enc, g))
                .collect::<Result<_>>()?;
            // (new score, live idx, action index, candidate)
            let mut pool: Vec<(f64, usize, usize, Action)> = Vec::new();
            for (hi, step) in steps.iter().enumerate() {
                for cand in self.candidates(step, nl_tokens) {
                    let lp = (cand.prob as f64).ln();
                    pool.push((live[hi].score + lp, hi, cand.index, cand.action));
                }
            }
            pool.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            pool.truncate(beam_width);
            let mut next = Vec::with_capacity(beam_width);
            for (score, hi, index, action) in pool {
                let lp = score - live[hi].score;
                let hyp = self.advance(&live[hi], action, index, lp, &steps[hi], g)?;
                if hyp.is_complete() {
                    done.push(CompletedHypothesis {
                        steps: hyp.len(),
                        score: hyp.score,
                        actions: hyp.actions,
                        action_indices: hyp.action_indices,
                    });
                } else {
                    next.push(hyp);
                }
            }
            live = next;
        }
        done.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.steps.cmp(&b.steps))
                .then(a.action_indices.cmp(&b.action_indices))
        });
        done.truncate(beam_width);
        Ok(done)
    }
}

/// `-g` as a graph value, memoized per call site.
fn copy_gate_term(gate: &Value, cache: &mut Option<Value>) -> Result<Value> {
    if cache.is_none() {
        *cache = Some(gate.mul(&Value::scalar(-1.0))?);
    }
    Ok(cache.clone().expect("just set"))
}
