//! Context-free grammar definition, AST data model, and the two-kind
//! action transition system that drives grammar-constrained decoding.

mod loader;
mod sampling;
mod syntax;
mod transition;

pub use loader::load_grammar;
pub use sampling::{min_completion, sample_random_ast, sample_uniform_actions};
pub use syntax::{parse_code, render_code};
pub use transition::{
    actions_to_ast, ast_to_actions, legal_action_mask, ActionLayout, ActionSlot, FrontierState,
    Slot, SlotType,
};

use crate::error::{Error, Result};

pub type NontermId = usize;
pub type ProdId = usize;

/// Reserved terminal that closes a token field. Never producible as an
/// ordinary vocabulary token.
pub const END_TOKEN: &str = "</t>";

/// Reserved vocabulary ids shared by both vocabularies and the action
/// index layout.
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const END_ID: usize = 2;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FieldType {
    Nonterminal(NontermId),
    Token,
}

#[derive(Clone, Debug)]
pub struct Field {
    pub name: String,
    pub ty: FieldType,
    pub is_sequence: bool,
}

#[derive(Clone, Debug)]
pub struct Production {
    pub id: ProdId,
    pub lhs: NontermId,
    pub constructor: String,
    pub fields: Vec<Field>,
}

/// Validated grammar. Production ids are dense `0..production_count()`.
#[derive(Clone, Debug)]
pub struct Grammar {
    nonterminals: Vec<String>,
    productions: Vec<Production>,
    by_lhs: Vec<Vec<ProdId>>,
    root: NontermId,
    /// For synthesized list nonterminals: the element type.
    list_elem: Vec<Option<FieldType>>,
    /// Minimal derivation depth per nonterminal (guaranteed finite).
    min_depth: Vec<usize>,
}

impl Grammar {
    pub(crate) fn build(
        nonterminals: Vec<String>,
        productions: Vec<Production>,
        root: NontermId,
        list_elem: Vec<Option<FieldType>>,
    ) -> Result<Grammar> {
        let mut by_lhs = vec![Vec::new(); nonterminals.len()];
        for p in &productions {
            by_lhs[p.lhs].push(p.id);
        }
        let min_depth = compute_min_depths(&nonterminals, &productions, &by_lhs)?;
        Ok(Grammar {
            nonterminals,
            productions,
            by_lhs,
            root,
            list_elem,
            min_depth,
        })
    }

    pub fn root(&self) -> NontermId {
        self.root
    }

    pub fn nonterminal_count(&self) -> usize {
        self.nonterminals.len()
    }

    pub fn nonterminal_name(&self, nt: NontermId) -> &str {
        &self.nonterminals[nt]
    }

    pub fn production_count(&self) -> usize {
        self.productions.len()
    }

    pub fn production(&self, id: ProdId) -> &Production {
        &self.productions[id]
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn productions_for(&self, nt: NontermId) -> &[ProdId] {
        &self.by_lhs[nt]
    }

    pub fn production_by_constructor(&self, name: &str) -> Option<&Production> {
        let lower = name.to_lowercase();
        self.productions
            .iter()
            .find(|p| p.constructor.to_lowercase() == lower)
    }

    /// Element type when `nt` is a synthesized sequence nonterminal.
    pub fn list_element(&self, nt: NontermId) -> Option<&FieldType> {
        self.list_elem[nt].as_ref()
    }

    pub fn min_depth(&self, nt: NontermId) -> usize {
        self.min_depth[nt]
    }

    /// Production of minimal derivation depth for `nt` (lowest id wins).
    pub fn min_depth_production(&self, nt: NontermId) -> ProdId {
        let mut best = self.by_lhs[nt][0];
        let mut best_depth = usize::MAX;
        for &pid in &self.by_lhs[nt] {
            let d = self.production_depth(pid);
            if d < best_depth {
                best_depth = d;
                best = pid;
            }
        }
        best
    }

    fn production_depth(&self, pid: ProdId) -> usize {
        1 + self.productions[pid]
            .fields
            .iter()
            .map(|f| match &f.ty {
                FieldType::Nonterminal(nt) => self.min_depth[*nt],
                FieldType::Token => 1,
            })
            .max()
            .unwrap_or(0)
    }

    /// Canonical single-string form; basis of the checkpoint grammar hash.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for p in &self.productions {
            out.push_str(&self.nonterminals[p.lhs]);
            out.push_str(" -> ");
            out.push_str(&p.constructor);
            out.push('(');
            for (i, f) in p.fields.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&f.name);
                out.push(':');
                match &f.ty {
                    FieldType::Nonterminal(nt) => out.push_str(&self.nonterminals[*nt]),
                    FieldType::Token => out.push_str("token"),
                }
                if f.is_sequence {
                    out.push('*');
                }
            }
            out.push_str(")\n");
        }
        out
    }

    /// FNV-1a over the canonical text.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

fn compute_min_depths(
    nonterminals: &[String],
    productions: &[Production],
    by_lhs: &[Vec<ProdId>],
) -> Result<Vec<usize>> {
    let n = nonterminals.len();
    let mut depth = vec![usize::MAX; n];
    loop {
        let mut changed = false;
        for p in productions {
            let mut worst = 0usize;
            let mut feasible = true;
            for f in &p.fields {
                match &f.ty {
                    FieldType::Token => worst = worst.max(1),
                    FieldType::Nonterminal(nt) => {
                        if depth[*nt] == usize::MAX {
                            feasible = false;
                            break;
                        }
                        worst = worst.max(depth[*nt]);
                    }
                }
            }
            if feasible && 1 + worst < depth[p.lhs] {
                depth[p.lhs] = 1 + worst;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for (nt, &d) in depth.iter().enumerate() {
        if d == usize::MAX && !by_lhs[nt].is_empty() {
            return Err(Error::Grammar {
                line: 0,
                msg: format!(
                    "nonterminal {} cannot derive any finite tree",
                    nonterminals[nt]
                ),
            });
        }
        if by_lhs[nt].is_empty() {
            return Err(Error::Grammar {
                line: 0,
                msg: format!("nonterminal {} has no productions", nonterminals[nt]),
            });
        }
    }
    Ok(depth)
}

/// Program representation: internal nodes apply productions, leaves carry
/// terminal token sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AstNode {
    Node {
        production: ProdId,
        children: Vec<AstNode>,
    },
    Leaf {
        tokens: Vec<String>,
    },
}

impl AstNode {
    pub fn node(production: ProdId, children: Vec<AstNode>) -> AstNode {
        AstNode::Node {
            production,
            children,
        }
    }

    pub fn leaf<S: Into<String>>(tokens: Vec<S>) -> AstNode {
        AstNode::Leaf {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }

    /// Well-typedness under `g`, rooted at the grammar root.
    pub fn validate(&self, g: &Grammar) -> Result<()> {
        self.validate_at(g, &FieldType::Nonterminal(g.root()), "root")
    }

    fn validate_at(&self, g: &Grammar, expected: &FieldType, path: &str) -> Result<()> {
        match (self, expected) {
            (AstNode::Leaf { tokens }, FieldType::Token) => {
                if tokens.is_empty() {
                    return Err(Error::IllTypedAst {
                        path: path.to_string(),
                        msg: "leaf carries no tokens".into(),
                    });
                }
                if let Some(t) = tokens
                    .iter()
                    .find(|t| t.as_str() == END_TOKEN || t.is_empty())
                {
                    return Err(Error::IllTypedAst {
                        path: path.to_string(),
                        msg: format!("illegal leaf token {t:?}"),
                    });
                }
                Ok(())
            }
            (AstNode::Node { production, children }, FieldType::Nonterminal(nt)) => {
                if *production >= g.production_count() {
                    return Err(Error::IllTypedAst {
                        path: path.to_string(),
                        msg: format!("unknown production id {production}"),
                    });
                }
                let prod = g.production(*production);
                if prod.lhs != *nt {
                    return Err(Error::IllTypedAst {
                        path: path.to_string(),
                        msg: format!(
                            "production {} produces {}, expected {}",
                            prod.constructor,
                            g.nonterminal_name(prod.lhs),
                            g.nonterminal_name(*nt)
                        ),
                    });
                }
                if children.len() != prod.fields.len() {
                    return Err(Error::IllTypedAst {
                        path: path.to_string(),
                        msg: format!(
                            "{} expects {} children, got {}",
                            prod.constructor,
                            prod.fields.len(),
                            children.len()
                        ),
                    });
                }
                for (child, field) in children.iter().zip(prod.fields.iter()) {
                    let child_path = format!("{path}.{}", field.name);
                    child.validate_at(g, &field.ty, &child_path)?;
                }
                Ok(())
            }
            (AstNode::Leaf { .. }, FieldType::Nonterminal(nt)) => Err(Error::IllTypedAst {
                path: path.to_string(),
                msg: format!("expected {} node, found leaf", g.nonterminal_name(*nt)),
            }),
            (AstNode::Node { .. }, FieldType::Token) => Err(Error::IllTypedAst {
                path: path.to_string(),
                msg: "expected token leaf, found node".into(),
            }),
        }
    }

    pub fn internal_node_count(&self) -> usize {
        match self {
            AstNode::Leaf { .. } => 0,
            AstNode::Node { children, .. } => {
                1 + children.iter().map(|c| c.internal_node_count()).sum::<usize>()
            }
        }
    }

    pub fn leaf_token_count(&self) -> usize {
        match self {
            AstNode::Leaf { tokens } => tokens.len(),
            AstNode::Node { children, .. } => {
                children.iter().map(|c| c.leaf_token_count()).sum()
            }
        }
    }

    pub fn token_field_count(&self) -> usize {
        match self {
            AstNode::Leaf { .. } => 1,
            AstNode::Node { children, .. } => {
                children.iter().map(|c| c.token_field_count()).sum()
            }
        }
    }

    /// Every leaf token in depth-first order.
    pub fn leaf_tokens(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaf_tokens(&mut out);
        out
    }

    fn collect_leaf_tokens<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            AstNode::Leaf { tokens } => out.extend(tokens.iter().map(|t| t.as_str())),
            AstNode::Node { children, .. } => {
                for c in children {
                    c.collect_leaf_tokens(out);
                }
            }
        }
    }
}

/// One step of the construction trace: expand a frontier nonterminal or
/// emit a terminal token into a token field.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    ApplyRule(ProdId),
    GenToken(String),
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::ApplyRule(p) => write!(f, "ApplyRule({p})"),
            Action::GenToken(t) => write!(f, "GenToken({t})"),
        }
    }
}
