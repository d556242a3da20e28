//! Concrete syntax: rendering ASTs to code strings and parsing them back.
//!
//! The syntax is grammar-generic and bijective on well-typed ASTs:
//!
//! * a node is `constructor(child,child,...)` with the constructor
//!   lowercased; when its nonterminal has exactly one production with at
//!   least one field, the constructor is elided (the context determines it)
//! * synthesized sequence nonterminals render as `[elem,elem,...]`
//! * leaves render bare when they are a single plain token, otherwise as a
//!   single-quoted, space-joined token list

use super::{AstNode, FieldType, Grammar, NontermId};
use crate::error::{Error, Result};

const DELIMITERS: &[char] = &['(', ')', '[', ']', ',', '\''];

fn token_is_bare(t: &str) -> bool {
    !t.is_empty() && !t.chars().any(|c| c.is_whitespace() || DELIMITERS.contains(&c))
}

pub fn render_code(ast: &AstNode, g: &Grammar) -> Result<String> {
    ast.validate(g)?;
    let mut out = String::new();
    render_into(ast, g, &mut out)?;
    Ok(out)
}

fn render_into(ast: &AstNode, g: &Grammar, out: &mut String) -> Result<()> {
    match ast {
        AstNode::Leaf { tokens } => {
            for t in tokens {
                if t.chars().any(|c| c == '\'' || (c.is_whitespace() && tokens.len() == 1)) {
                    return Err(Error::Domain {
                        op: "render_code",
                        detail: format!("token {t:?} cannot be rendered"),
                    });
                }
            }
            if tokens.len() == 1 && token_is_bare(&tokens[0]) {
                out.push_str(&tokens[0]);
            } else {
                if tokens.iter().any(|t| !token_is_bare(t)) {
                    return Err(Error::Domain {
                        op: "render_code",
                        detail: format!("tokens {tokens:?} cannot be quoted"),
                    });
                }
                out.push('\'');
                out.push_str(&tokens.join(" "));
                out.push('\'');
            }
            Ok(())
        }
        AstNode::Node {
            production,
            children,
        } => {
            let prod = g.production(*production);
            if g.list_element(prod.lhs).is_some() {
                // flatten the cons chain into a bracket list
                out.push('[');
                let mut first = true;
                let mut cursor = ast;
                loop {
                    let AstNode::Node {
                        production,
                        children,
                    } = cursor
                    else {
                        unreachable!("validated list chain");
                    };
                    if children.is_empty() {
                        break; // nil
                    }
                    if !first {
                        out.push(',');
                    }
                    first = false;
                    render_into(&children[0], g, out)?;
                    let _ = production;
                    cursor = &children[1];
                }
                out.push(']');
                return Ok(());
            }
            let siblings = g.productions_for(prod.lhs).len();
            if siblings == 1 && !prod.fields.is_empty() {
                for (i, child) in children.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    render_into(child, g, out)?;
                }
            } else {
                out.push_str(&prod.constructor.to_lowercase());
                out.push('(');
                for (i, child) in children.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    render_into(child, g, out)?;
                }
                out.push(')');
            }
            Ok(())
        }
    }
}

pub fn parse_code(code: &str, g: &Grammar) -> Result<AstNode> {
    let mut p = Parser { src: code, pos: 0 };
    let ast = p.parse_nonterminal(g.root(), g)?;
    p.skip_ws();
    if !p.eof() {
        return Err(p.error("trailing input"));
    }
    Ok(ast)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, msg: &str) -> Error {
        Error::CodeParse {
            offset: self.pos,
            msg: msg.to_string(),
        }
    }

    fn eof(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        self.skip_ws();
        match self.peek() {
            Some(found) if found == c => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(found) => Err(self.error(&format!("expected `{c}`, found `{found}`"))),
            None => Err(self.error(&format!("expected `{c}`, found end of input"))),
        }
    }

    fn bare_word(&mut self) -> Result<&'a str> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || DELIMITERS.contains(&c) {
                break;
            }
            self.pos += c.len_utf8();
        }
        if self.pos == start {
            Err(self.error(if self.eof() {
                "unexpected end of input"
            } else {
                "expected a token"
            }))
        } else {
            Ok(&self.src[start..self.pos])
        }
    }

    fn parse_nonterminal(&mut self, nt: NontermId, g: &Grammar) -> Result<AstNode> {
        if let Some(elem_ty) = g.list_element(nt) {
            let elem_ty = elem_ty.clone();
            return self.parse_list(nt, &elem_ty, g);
        }
        let prods = g.productions_for(nt);
        if prods.len() == 1 && !g.production(prods[0]).fields.is_empty() {
            return self.parse_fields(prods[0], g);
        }
        self.skip_ws();
        let at = self.pos;
        let word = self.bare_word()?;
        let prod = prods
            .iter()
            .map(|&pid| g.production(pid))
            .find(|p| p.constructor.to_lowercase() == word);
        let Some(prod) = prod else {
            self.pos = at;
            return Err(self.error(&format!(
                "unknown constructor `{word}` for nonterminal {}",
                g.nonterminal_name(nt)
            )));
        };
        let pid = prod.id;
        self.expect('(')?;
        let node = if g.production(pid).fields.is_empty() {
            AstNode::Node {
                production: pid,
                children: Vec::new(),
            }
        } else {
            self.parse_fields(pid, g)?
        };
        self.expect(')')?;
        Ok(node)
    }

    fn parse_fields(&mut self, pid: usize, g: &Grammar) -> Result<AstNode> {
        let n_fields = g.production(pid).fields.len();
        let mut children = Vec::with_capacity(n_fields);
        for i in 0..n_fields {
            if i > 0 {
                self.expect(',')?;
            }
            let ty = g.production(pid).fields[i].ty.clone();
            children.push(self.parse_field(&ty, g)?);
        }
        Ok(AstNode::Node {
            production: pid,
            children,
        })
    }

    fn parse_field(&mut self, ty: &FieldType, g: &Grammar) -> Result<AstNode> {
        match ty {
            FieldType::Nonterminal(nt) => self.parse_nonterminal(*nt, g),
            FieldType::Token => self.parse_leaf(),
        }
    }

    fn parse_list(&mut self, list_nt: NontermId, elem_ty: &FieldType, g: &Grammar) -> Result<AstNode> {
        let prods = g.productions_for(list_nt);
        let cons = prods
            .iter()
            .map(|&p| g.production(p))
            .find(|p| p.fields.len() == 2)
            .expect("list cons");
        let nil = prods
            .iter()
            .map(|&p| g.production(p))
            .find(|p| p.fields.is_empty())
            .expect("list nil");
        let (cons_id, nil_id) = (cons.id, nil.id);
        self.expect('[')?;
        let mut elems = Vec::new();
        self.skip_ws();
        if self.peek() != Some(']') {
            loop {
                elems.push(self.parse_field(elem_ty, g)?);
                self.skip_ws();
                if self.peek() == Some(',') {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(']')?;
        let mut node = AstNode::Node {
            production: nil_id,
            children: Vec::new(),
        };
        for elem in elems.into_iter().rev() {
            node = AstNode::Node {
                production: cons_id,
                children: vec![elem, node],
            };
        }
        Ok(node)
    }

    fn parse_leaf(&mut self) -> Result<AstNode> {
        self.skip_ws();
        if self.peek() == Some('\'') {
            self.pos += 1;
            let start = self.pos;
            while let Some(c) = self.peek() {
                if c == '\'' {
                    break;
                }
                self.pos += c.len_utf8();
            }
            if self.eof() {
                return Err(self.error("unterminated quoted leaf"));
            }
            let body = &self.src[start..self.pos];
            self.pos += 1;
            let tokens: Vec<String> = body.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() {
                return Err(self.error("empty quoted leaf"));
            }
            Ok(AstNode::Leaf { tokens })
        } else {
            let word = self.bare_word()?;
            Ok(AstNode::Leaf {
                tokens: vec![word.to_string()],
            })
        }
    }
}
