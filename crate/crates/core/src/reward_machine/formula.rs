//! Propositional formulas over a machine's alphabet, used by bracketed edge
//! labels. A formula is compiled to the explicit list of satisfying events.

use super::{Event, EventSet};

/// Largest alphabet a formula may be expanded over (2^16 candidate events).
pub(crate) const MAX_EXPAND_PROPS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Formula {
    True,
    False,
    Prop(usize),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub(crate) fn eval(&self, ev: Event) -> bool {
        match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Prop(k) => ev.contains(*k),
            Formula::Not(f) => !f.eval(ev),
            Formula::And(a, b) => a.eval(ev) && b.eval(ev),
            Formula::Or(a, b) => a.eval(ev) || b.eval(ev),
        }
    }

    pub(crate) fn expand(&self, alphabet: &EventSet) -> Vec<Event> {
        let n = alphabet.len();
        (0u64..(1u64 << n))
            .map(Event)
            .filter(|&ev| self.eval(ev))
            .collect()
    }
}

/// Recursive-descent parser. Errors carry a byte offset into `src`.
pub(crate) fn parse_formula(src: &str, alphabet: &EventSet) -> Result<Formula, (usize, String)> {
    let mut p = Parser {
        src,
        pos: 0,
        alphabet,
    };
    let f = p.or()?;
    p.skip_ws();
    if p.pos != src.len() {
        return Err((p.pos, format!("unexpected `{}`", &src[p.pos..])));
    }
    Ok(f)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    alphabet: &'a EventSet,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn or(&mut self) -> Result<Formula, (usize, String)> {
        let mut lhs = self.and()?;
        while self.peek() == Some('|') {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Formula::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, (usize, String)> {
        let mut lhs = self.unary()?;
        while self.peek() == Some('&') {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Formula::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, (usize, String)> {
        match self.peek() {
            Some('!') => {
                self.pos += 1;
                Ok(Formula::Not(Box::new(self.unary()?)))
            }
            Some('(') => {
                self.pos += 1;
                let f = self.or()?;
                if self.peek() != Some(')') {
                    return Err((self.pos, "expected `)`".into()));
                }
                self.pos += 1;
                Ok(f)
            }
            Some(c) if is_ident_char(c) => {
                let start = self.pos;
                while let Some(c) = self.src[self.pos..].chars().next() {
                    if !is_ident_char(c) {
                        break;
                    }
                    self.pos += c.len_utf8();
                }
                let name = &self.src[start..self.pos];
                match name {
                    "true" => Ok(Formula::True),
                    "false" => Ok(Formula::False),
                    _ => self
                        .alphabet
                        .index_of(name)
                        .map(Formula::Prop)
                        .ok_or((start, format!("unknown proposition `{name}`"))),
                }
            }
            Some(c) => Err((self.pos, format!("unexpected `{c}`"))),
            None => Err((self.pos, "unexpected end of formula".into())),
        }
    }
}

pub(crate) fn is_ident_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, '&' | '|' | '!' | '(' | ')' | '[' | ']' | '{' | '}' | ':' | '#')
}
