//! Grammar file loader.
//!
//! Format: one production per line, `Lhs -> Constructor(field:Type,
//! field:Type*, field:token)`. `*` marks a sequence field, `#` starts a
//! comment, and the first production's lhs is the root. Sequence fields
//! are desugared into synthesized cons/nil productions so that the action
//! system needs exactly two action kinds.

use std::collections::HashMap;

use super::{Field, FieldType, Grammar, NontermId, Production};
use crate::error::{Error, Result};

struct RawField {
    name: String,
    type_name: String,
    is_sequence: bool,
}

struct RawProduction {
    line: usize,
    lhs: String,
    constructor: String,
    fields: Vec<RawField>,
}

pub fn load_grammar(text: &str) -> Result<Grammar> {
    let mut raw = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let stripped = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        };
        let stripped = stripped.trim();
        if stripped.is_empty() {
            continue;
        }
        raw.push(parse_production_line(stripped, line_no)?);
    }
    if raw.is_empty() {
        return Err(Error::Grammar {
            line: 0,
            msg: "grammar has no productions".into(),
        });
    }

    // Declared nonterminals, in first-appearance order of their lhs.
    let mut nonterminals: Vec<String> = Vec::new();
    let mut nt_index: HashMap<String, NontermId> = HashMap::new();
    for p in &raw {
        if p.lhs == "token" {
            return Err(Error::Grammar {
                line: p.line,
                msg: "`token` is a reserved type name".into(),
            });
        }
        if !nt_index.contains_key(&p.lhs) {
            nt_index.insert(p.lhs.clone(), nonterminals.len());
            nonterminals.push(p.lhs.clone());
        }
    }

    let mut seen_constructors: HashMap<String, usize> = HashMap::new();
    for p in &raw {
        let key = p.constructor.to_lowercase();
        if let Some(first) = seen_constructors.get(&key) {
            return Err(Error::Grammar {
                line: p.line,
                msg: format!(
                    "duplicate constructor {} (first declared on line {first})",
                    p.constructor
                ),
            });
        }
        seen_constructors.insert(key, p.line);
    }

    // Synthesized list nonterminals, keyed by element type name, created
    // in first-use order.
    let mut list_index: HashMap<String, NontermId> = HashMap::new();
    let mut list_elem: Vec<Option<FieldType>> = vec![None; nonterminals.len()];
    let mut productions: Vec<Production> = Vec::new();

    let resolve =
        |name: &str, line: usize, nt_index: &HashMap<String, NontermId>| -> Result<FieldType> {
            if name == "token" {
                return Ok(FieldType::Token);
            }
            match nt_index.get(name) {
                Some(&id) => Ok(FieldType::Nonterminal(id)),
                None => Err(Error::Grammar {
                    line,
                    msg: format!("undefined nonterminal {name}"),
                }),
            }
        };

    for p in &raw {
        let lhs = nt_index[&p.lhs];
        let mut fields = Vec::new();
        for f in &p.fields {
            if fields.iter().any(|x: &Field| x.name == f.name) {
                return Err(Error::Grammar {
                    line: p.line,
                    msg: format!("duplicate field name {} in {}", f.name, p.constructor),
                });
            }
            let ty = if f.is_sequence {
                if f.type_name == "token" {
                    return Err(Error::Grammar {
                        line: p.line,
                        msg: "token fields are already sequences; `token*` is not allowed"
                            .into(),
                    });
                }
                let elem = resolve(&f.type_name, p.line, &nt_index)?;
                let list_nt = *list_index.entry(f.type_name.clone()).or_insert_with(|| {
                    let id = nonterminals.len();
                    nonterminals.push(format!("{}*", f.type_name));
                    list_elem.push(Some(elem.clone()));
                    id
                });
                FieldType::Nonterminal(list_nt)
            } else {
                resolve(&f.type_name, p.line, &nt_index)?
            };
            fields.push(Field {
                name: f.name.clone(),
                ty,
                is_sequence: f.is_sequence,
            });
        }
        productions.push(Production {
            id: productions.len(),
            lhs,
            constructor: p.constructor.clone(),
            fields,
        });
    }

    // cons/nil productions for each synthesized list nonterminal
    let mut list_pairs: Vec<(NontermId, String)> = list_index
        .iter()
        .map(|(name, &id)| (id, name.clone()))
        .collect();
    list_pairs.sort_by_key(|(id, _)| *id);
    for (list_nt, elem_name) in list_pairs {
        let elem_ty = list_elem[list_nt].clone().expect("list entry");
        productions.push(Production {
            id: productions.len(),
            lhs: list_nt,
            constructor: format!("cons%{}", elem_name.to_lowercase()),
            fields: vec![
                Field {
                    name: "head".into(),
                    ty: elem_ty,
                    is_sequence: false,
                },
                Field {
                    name: "tail".into(),
                    ty: FieldType::Nonterminal(list_nt),
                    is_sequence: false,
                },
            ],
        });
        productions.push(Production {
            id: productions.len(),
            lhs: list_nt,
            constructor: format!("nil%{}", elem_name.to_lowercase()),
            fields: vec![],
        });
    }

    Grammar::build(nonterminals, productions, 0, list_elem)
}

fn parse_production_line(line: &str, line_no: usize) -> Result<RawProduction> {
    let err = |msg: String| Error::Grammar { line: line_no, msg };
    let (lhs, rest) = line
        .split_once("->")
        .ok_or_else(|| err("expected `Lhs -> Constructor(...)`".into()))?;
    let lhs = lhs.trim();
    if !is_identifier(lhs) {
        return Err(err(format!("invalid nonterminal name {lhs:?}")));
    }
    let rest = rest.trim();
    let open = rest
        .find('(')
        .ok_or_else(|| err("expected `(` after constructor name".into()))?;
    if !rest.ends_with(')') {
        return Err(err("expected `)` at end of production".into()));
    }
    let constructor = rest[..open].trim();
    if !is_identifier(constructor) {
        return Err(err(format!("invalid constructor name {constructor:?}")));
    }
    let body = &rest[open + 1..rest.len() - 1];
    let mut fields = Vec::new();
    if !body.trim().is_empty() {
        for part in body.split(',') {
            let part = part.trim();
            let (name, ty) = part
                .split_once(':')
                .ok_or_else(|| err(format!("field {part:?} must be `name:Type`")))?;
            let name = name.trim();
            let mut type_name = ty.trim();
            let is_sequence = type_name.ends_with('*');
            if is_sequence {
                type_name = type_name[..type_name.len() - 1].trim_end();
            }
            if !is_identifier(name) || !is_identifier(type_name) {
                return Err(err(format!("invalid field declaration {part:?}")));
            }
            fields.push(RawField {
                name: name.to_string(),
                type_name: type_name.to_string(),
                is_sequence,
            });
        }
    }
    Ok(RawProduction {
        line: line_no,
        lhs: lhs.to_string(),
        constructor: constructor.to_string(),
        fields,
    })
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().unwrap().is_ascii_alphabetic()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}
