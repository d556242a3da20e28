//! Corpus representation, tokenization, vocabulary construction, and the
//! synthetic query corpus that makes desk-scale experiments self-contained.

mod synth;

pub use synth::generate_synthetic_corpus;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{
    parse_code, render_code, ActionLayout, AstNode, Grammar, END_TOKEN, PAD_TOKEN, UNK_ID,
    UNK_TOKEN,
};

/// One NL/code pair with its cached AST.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub nl: Vec<String>,
    pub code: String,
    pub ast: AstNode,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    nl: String,
    code: String,
}

/// Lowercase, split on whitespace and punctuation; single-quoted spans
/// stay intact as one token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    let mut current = String::new();
    while let Some(c) = chars.next() {
        if c == '\'' {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            let mut quoted = String::new();
            for q in chars.by_ref() {
                if q == '\'' {
                    break;
                }
                quoted.push(q);
            }
            let quoted = quoted.trim();
            if !quoted.is_empty() {
                tokens.push(quoted.to_lowercase());
            }
        } else if c.is_alphanumeric() || c == '_' {
            current.extend(c.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Frequency-filtered token map with reserved ids 0 = PAD, 1 = UNK,
/// 2 = end token. Ordinary tokens keep first-appearance order, so two
/// builds over the same corpus agree id-for-id.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    min_freq: usize,
}

impl Vocabulary {
    pub fn build<'a, I>(tokens: I, min_freq: usize) -> Vocabulary
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut order: Vec<(&str, usize)> = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            match seen.get(t) {
                Some(&i) => order[i].1 += 1,
                None => {
                    seen.insert(t, order.len());
                    order.push((t, 1));
                }
            }
        }
        let mut id_to_token: Vec<String> =
            vec![PAD_TOKEN.into(), UNK_TOKEN.into(), END_TOKEN.into()];
        for (t, count) in order {
            if count >= min_freq && t != PAD_TOKEN && t != UNK_TOKEN && t != END_TOKEN {
                id_to_token.push(t.to_string());
            }
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
            min_freq,
        }
    }

    /// Id of `token`, or the UNK id when the token was cut or unseen.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved ids always present
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }
}

/// Load a JSONL corpus (`{"id","nl","code"}` per line), parse and cache
/// every AST, and enforce the render/parse roundtrip invariant.
pub fn load_corpus(path: &Path, g: &Grammar) -> Result<Vec<Example>> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text, g)
}

pub fn parse_corpus(text: &str, g: &Grammar) -> Result<Vec<Example>> {
    let mut examples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Corpus {
            record: format!("line {}", idx + 1),
            msg: format!("malformed record: {e}"),
        })?;
        let ast = parse_code(&raw.code, g).map_err(|e| Error::Corpus {
            record: raw.id.clone(),
            msg: format!("code does not parse: {e}"),
        })?;
        let rendered = render_code(&ast, g).map_err(|e| Error::Corpus {
            record: raw.id.clone(),
            msg: e.to_string(),
        })?;
        if rendered != raw.code {
            return Err(Error::Corpus {
                record: raw.id.clone(),
                msg: format!(
                    "code is not in canonical form: {:?} reparses to {:?}",
                    raw.code, rendered
                ),
            });
        }
        let nl = tokenize(&raw.nl);
        if nl.is_empty() {
            return Err(Error::Corpus {
                record: raw.id.clone(),
                msg: "empty utterance".into(),
            });
        }
        examples.push(Example {
            id: raw.id,
            nl,
            code: raw.code,
            ast,
        });
    }
    Ok(examples)
}

/// Serialize examples in the on-disk JSONL form.
pub fn corpus_to_jsonl(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        let record = RawRecord {
            id: ex.id.clone(),
            nl: ex.nl.join(" "),
            code: ex.code.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Vocabularies plus the fixed action index layout for a corpus.
pub fn build_vocab(
    examples: &[Example],
    min_freq: usize,
    g: &Grammar,
    max_input_len: usize,
) -> (Vocabulary, Vocabulary, ActionLayout) {
    let nl_vocab = Vocabulary::build(
        examples
            .iter()
            .flat_map(|e| e.nl.iter().map(|t| t.as_str())),
        min_freq,
    );
    let code_tokens: Vec<&str> = examples
        .iter()
        .flat_map(|e| e.ast.leaf_tokens())
        .collect();
    let code_vocab = Vocabulary::build(code_tokens, min_freq);
    let layout = ActionLayout {
        n_productions: g.production_count(),
        vocab_size: code_vocab.len(),
        max_input_len,
    };
    (nl_vocab, code_vocab, layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::load_grammar;

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(
            tokenize("What jobs use Java, in Austin?"),
            vec!["what", "jobs", "use", "java", ",", "in", "austin", "?"]
        );
    }

    #[test]
    fn tokenizer_keeps_quoted_spans_intact() {
        assert_eq!(
            tokenize("jobs in 'New York' now"),
            vec!["jobs", "in", "new york", "now"]
        );
    }

    #[test]
    fn vocabulary_reserves_stable_ids() {
        let v = Vocabulary::build(["a", "b", "a"], 1);
        assert_eq!(v.id(PAD_TOKEN), PAD_ID);
        assert_eq!(v.id(UNK_TOKEN), UNK_ID);
        assert_eq!(v.id(END_TOKEN), END_ID);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), 4);
    }

    #[test]
    fn min_freq_one_keeps_every_token() {
        let v = Vocabulary::build(["x", "y", "z"], 1);
        assert!(v.contains("x") && v.contains("y") && v.contains("z"));
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn tokens_below_cutoff_map_to_unk() {
        let v = Vocabulary::build(["x", "x", "rare"], 2);
        assert_eq!(v.id("x"), 3);
        assert_eq!(v.id("rare"), UNK_ID);
        assert!(!v.contains("rare"));
    }

    #[test]
    fn empty_corpus_loads_as_empty() {
        let g = load_grammar("S -> Lit(v:token)").unwrap();
        assert!(parse_corpus("", &g).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let g = load_grammar("S -> Lit(v:token)").unwrap();
        let text = "{\"id\":\"a\",\"nl\":\"x\",\"code\":\"x\"}\nnot json\n";
        match parse_corpus(text, &g) {
            Err(Error::Corpus { record, .. }) => assert_eq!(record, "line 2"),
            other => panic!("expected corpus error, got {other:?}"),
        }
    }

    #[test]
    fn unparseable_code_names_the_record() {
        let g = load_grammar("S -> Lit(v:token)").unwrap();
        let text = "{\"id\":\"bad-1\",\"nl\":\"x\",\"code\":\"(((\"}\n";
        match parse_corpus(text, &g) {
            Err(Error::Corpus { record, .. }) => assert_eq!(record, "bad-1"),
            other => panic!("expected corpus error, got {other:?}"),
        }
    }

    #[test]
    fn action_space_size_arithmetic() {
        let g = load_grammar("S -> Lit(v:token)").unwrap();
        let text = "{\"id\":\"a\",\"nl\":\"say hi\",\"code\":\"hi\"}\n";
        let examples = parse_corpus(text, &g).unwrap();
        let (_, code_vocab, layout) = build_vocab(&examples, 1, &g, 30);
        assert_eq!(
            layout.total(),
            g.production_count() + code_vocab.len() + 1 + 30
        );
    }
}
