//! Consistency discriminator: encodes the utterance with its own
//! bidirectional encoder, encodes the candidate program bottom-up (tree
//! mode, the primary path) or as a flat token sequence (ablation), and
//! scores the pair with a bilinear two-class head.

use super::encoder::BiEncoder;
use crate::autodiff::{xavier_uniform_init, ParameterStore, Tensor, Value};
use crate::data::{tokenize, Vocabulary};
use crate::error::{Error, Result};
use crate::grammar::{render_code, AstNode, Grammar};
use crate::rng::SeededRng;

/// Program-side encoder choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProgramEncoderKind {
    Tree,
    Seq,
}

impl std::str::FromStr for ProgramEncoderKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tree" => Ok(ProgramEncoderKind::Tree),
            "seq" => Ok(ProgramEncoderKind::Seq),
            other => Err(format!("unknown program encoder {other:?} (tree|seq)")),
        }
    }
}

/// Bottom-up encoding of an AST: one vector per node (postorder) plus the
/// root vector.
pub struct TreeEncoding {
    pub nodes: Vec<Value>,
    pub root: Value,
}

/// Two-class consistency head output.
pub struct ConsistencyScore {
    /// (match, mismatch) logits.
    pub logits: Value,
    /// Probability of the match class.
    pub p_sim: Value,
}

impl ConsistencyScore {
    pub fn p_sim_value(&self) -> f32 {
        self.p_sim.item()
    }
}

struct TreeParams {
    token_embed: Value,
    prod_embed: Value,
    child_w: Vec<Value>,
    bias: Value,
}

struct SeqParams {
    encoder: BiEncoder,
    vocab: Vocabulary,
}

pub struct DiscriminatorModel {
    pub params: ParameterStore,
    pub hidden: usize,
    pub kind: ProgramEncoderKind,
    pub nl_vocab: Vocabulary,
    pub code_vocab: Vocabulary,
    encoder: BiEncoder,
    tree: Option<TreeParams>,
    seq: Option<SeqParams>,
    head_w_match: Value,
    head_w_mismatch: Value,
    head_b: Value,
}

const PROB_FLOOR: f32 = 1e-12;

impl DiscriminatorModel {
    /// `seq_vocab` is required in `Seq` mode: the vocabulary of tokenized
    /// rendered code strings.
    pub fn new(
        hidden: usize,
        embed: usize,
        kind: ProgramEncoderKind,
        nl_vocab: Vocabulary,
        code_vocab: Vocabulary,
        seq_vocab: Option<Vocabulary>,
        g: &Grammar,
        seed: u64,
    ) -> Result<DiscriminatorModel> {
        let mut rng = SeededRng::new(seed);
        let mut params = ParameterStore::new(seed);
        let encoder = BiEncoder::new(
            &mut params,
            "dis.enc",
            nl_vocab.len(),
            embed,
            hidden,
            &mut rng,
        )?;
        let max_fields = g
            .productions()
            .iter()
            .map(|p| p.fields.len())
            .max()
            .unwrap_or(0);
        let (tree, seq, prog_dim) = match kind {
            ProgramEncoderKind::Tree => {
                let token_embed = params.add(
                    "dis.tree.token_embed",
                    xavier_uniform_init(
                        &[code_vocab.len(), hidden],
                        code_vocab.len(),
                        hidden,
                        &mut rng,
                    )?,
                )?;
                let prod_embed = params.add(
                    "dis.tree.prod_embed",
                    xavier_uniform_init(
                        &[g.production_count(), hidden],
                        g.production_count(),
                        hidden,
                        &mut rng,
                    )?,
                )?;
                let mut child_w = Vec::with_capacity(max_fields);
                for k in 0..max_fields {
                    child_w.push(params.add(
                        &format!("dis.tree.child_w{k}"),
                        xavier_uniform_init(&[hidden, hidden], hidden, hidden, &mut rng)?,
                    )?);
                }
                let bias = params.add(
                    "dis.tree.bias",
                    Value::parameter(Tensor::zeros(&[hidden])),
                )?;
                (
                    Some(TreeParams {
                        token_embed,
                        prod_embed,
                        child_w,
                        bias,
                    }),
                    None,
                    hidden,
                )
            }
            ProgramEncoderKind::Seq => {
                let vocab = seq_vocab.ok_or_else(|| {
                    Error::Internal("seq program encoder requires a sequence vocabulary".into())
                })?;
                let encoder = BiEncoder::new(
                    &mut params,
                    "dis.prog",
                    vocab.len(),
                    embed,
                    hidden,
                    &mut rng,
                )?;
                (None, Some(SeqParams { encoder, vocab }), 2 * hidden)
            }
        };
        let head_w_match = params.add(
            "dis.head.w_match",
            xavier_uniform_init(&[prog_dim, 2 * hidden], prog_dim, 2 * hidden, &mut rng)?,
        )?;
        let head_w_mismatch = params.add(
            "dis.head.w_mismatch",
            xavier_uniform_init(&[prog_dim, 2 * hidden], prog_dim, 2 * hidden, &mut rng)?,
        )?;
        let head_b = params.add("dis.head.b", Value::parameter(Tensor::zeros(&[2])))?;
        Ok(DiscriminatorModel {
            params,
            hidden,
            kind,
            nl_vocab,
            code_vocab,
            encoder,
            tree,
            seq,
            head_w_match,
            head_w_mismatch,
            head_b,
        })
    }

    /// Zero the bilinear head (used by tests: symmetric logits give
    /// P_sim = 0.5 exactly).
    pub fn zero_head(&self) {
        for v in [&self.head_w_match, &self.head_w_mismatch, &self.head_b] {
            for x in v.data_mut().iter_mut() {
                *x = 0.0;
            }
        }
    }

    /// Bottom-up tree encoding: leaves are the mean of their token
    /// embeddings; an internal node combines its production embedding with
    /// per-position transforms of its children (sibling order matters).
    pub fn encode_tree(&self, ast: &AstNode, g: &Grammar) -> Result<TreeEncoding> {
        ast.validate(g)?;
        let tree = self
            .tree
            .as_ref()
            .ok_or_else(|| Error::Internal("tree encoder not configured".into()))?;
        let mut nodes = Vec::new();
        let root = self.encode_node(ast, tree, &mut nodes)?;
        Ok(TreeEncoding { nodes, root })
    }

    fn encode_node(
        &self,
        ast: &AstNode,
        tree: &TreeParams,
        nodes: &mut Vec<Value>,
    ) -> Result<Value> {
        let vec = match ast {
            AstNode::Leaf { tokens } => {
                let mut acc: Option<Value> = None;
                for t in tokens {
                    let row = tree.token_embed.embedding_lookup(&[self.code_vocab.id(t)])?;
                    acc = Some(match acc {
                        None => row,
                        Some(a) => a.add(&row)?,
                    });
                }
                acc.expect("leaves carry >= 1 token")
                    .mul(&Value::scalar(1.0 / tokens.len() as f32))?
            }
            AstNode::Node {
                production,
                children,
            } => {
                let mut acc = tree.prod_embed.embedding_lookup(&[*production])?;
                for (k, child) in children.iter().enumerate() {
                    let child_vec = self.encode_node(child, tree, nodes)?;
                    acc = acc.add(&tree.child_w[k].matmul(&child_vec)?)?;
                }
                acc.add(&tree.bias)?.tanh()?
            }
        };
        nodes.push(vec.clone());
        Ok(vec)
    }

    fn program_vector(&self, ast: &AstNode, g: &Grammar) -> Result<Value> {
        match self.kind {
            ProgramEncoderKind::Tree => Ok(self.encode_tree(ast, g)?.root),
            ProgramEncoderKind::Seq => {
                let seq = self.seq.as_ref().expect("seq params exist in seq mode");
                let code = render_code(ast, g)?;
                let tokens = tokenize(&code);
                Ok(seq.encoder.encode_tokens(&tokens, &seq.vocab)?.summary)
            }
        }
    }

    /// Bilinear two-class score between the program encoding and the
    /// utterance summary.
    pub fn score(
        &self,
        nl_tokens: &[String],
        ast: &AstNode,
        g: &Grammar,
    ) -> Result<ConsistencyScore> {
        let h_nl = self.encoder.encode_tokens(nl_tokens, &self.nl_vocab)?.summary;
        let h_prog = self.program_vector(ast, g)?;
        let s_match = h_prog.matmul(&self.head_w_match)?.matmul(&h_nl)?;
        let s_mismatch = h_prog.matmul(&self.head_w_mismatch)?.matmul(&h_nl)?;
        let logits = Value::concat(&[s_match, s_mismatch], 0)?.add(&self.head_b)?;
        let probs = logits.softmax()?;
        Ok(ConsistencyScore {
            logits,
            p_sim: probs.slice(0, 1)?,
        })
    }

    /// Negated two-player objective, averaged over the batch: maximize
    /// `log D(real) + log(1 - D(fake))` over discriminator parameters.
    pub fn discriminator_loss(
        &self,
        batch: &[(&[String], &AstNode, bool)],
        g: &Grammar,
    ) -> Result<Value> {
        if batch.is_empty() {
            return Err(Error::Domain {
                op: "discriminator_loss",
                detail: "empty batch".into(),
            });
        }
        let mut acc: Option<Value> = None;
        for (nl, ast, is_real) in batch {
            let s = self.score(nl, ast, g)?;
            let p = if *is_real {
                s.p_sim
            } else {
                Value::scalar(1.0).add(&s.p_sim.mul(&Value::scalar(-1.0))?)?
            };
            let term = p.add(&Value::scalar(PROB_FLOOR))?.log()?;
            acc = Some(match acc {
                None => term,
                Some(a) => a.add(&term)?,
            });
        }
        acc.expect("non-empty batch")
            .mul(&Value::scalar(-1.0 / batch.len() as f32))
    }
}
