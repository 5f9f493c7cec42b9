use std::collections::BTreeSet;

use thiserror::Error;

use super::formula::{is_ident_char, parse_formula, MAX_EXPAND_PROPS};
use super::{Event, EventSet, RewardMachine, RmError};

/// A syntax or reference error, positioned at a 1-based line and column.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> RmError {
    RmError::Parse(ParseError {
        line,
        column,
        message: message.into(),
    })
}

struct Header<'a> {
    line: usize,
    column: usize,
    values: Vec<&'a str>,
}

struct TransitionLine<'a> {
    line: usize,
    text: &'a str,
    offset: usize,
}

pub(super) fn parse(text: &str) -> Result<RewardMachine, RmError> {
    let mut states = None;
    let mut initial = None;
    let mut props = None;
    let mut sinks = None;
    let mut goals = None;
    let mut edges = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let body = raw.split('#').next().unwrap_or("");
        let trimmed = body.trim_start();
        let offset = body.len() - trimmed.len();
        let trimmed = trimmed.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.contains("--") {
            edges.push(TransitionLine {
                line: line_no,
                text: trimmed,
                offset,
            });
            continue;
        }
        let Some((key, rest)) = trimmed.split_once(':') else {
            return Err(err(line_no, offset + 1, "expected `key: values` or a transition"));
        };
        let header = Header {
            line: line_no,
            column: offset + 1,
            values: rest.split_whitespace().collect(),
        };
        let slot = match key.trim() {
            "states" => &mut states,
            "initial" => &mut initial,
            "props" => &mut props,
            "sinks" => &mut sinks,
            "goals" => &mut goals,
            other => {
                return Err(err(line_no, offset + 1, format!("unknown header `{other}`")));
            }
        };
        if slot.is_some() {
            return Err(err(line_no, offset + 1, format!("repeated header `{}`", key.trim())));
        }
        *slot = Some(header);
    }

    let states = states.ok_or_else(|| err(1, 1, "missing `states:` header"))?;
    let initial = initial.ok_or_else(|| err(1, 1, "missing `initial:` header"))?;
    let props = props.ok_or_else(|| err(1, 1, "missing `props:` header"))?;
    if initial.values.len() != 1 {
        return Err(err(initial.line, initial.column, "`initial:` takes exactly one state"));
    }
    let empty = Vec::new();
    let sink_names = sinks.as_ref().map_or(&empty, |h| &h.values);
    let goal_names = goals.as_ref().map_or(&empty, |h| &h.values);
    for h in [&sinks, &goals].into_iter().flatten() {
        for v in &h.values {
            if !states.values.contains(v) {
                return Err(err(h.line, h.column, format!("undeclared state `{v}`")));
            }
        }
    }
    if !states.values.contains(&initial.values[0]) {
        return Err(err(
            initial.line,
            initial.column,
            format!("undeclared state `{}`", initial.values[0]),
        ));
    }

    let mut rm = RewardMachine::new(
        &states.values,
        initial.values[0],
        &props.values,
        sink_names,
        goal_names,
    )
    .map_err(|e| match e {
        RmError::DuplicateState(_) | RmError::EmptyIdentifier => {
            err(states.line, states.column, e.to_string())
        }
        RmError::DuplicateProposition(_) | RmError::TooManyPropositions(_) => {
            err(props.line, props.column, e.to_string())
        }
        other => err(states.line, states.column, other.to_string()),
    })?;

    for edge in edges {
        parse_transition(&mut rm, &edge)?;
    }
    Ok(rm)
}

fn parse_transition(rm: &mut RewardMachine, edge: &TransitionLine<'_>) -> Result<(), RmError> {
    let line = edge.line;
    let col = |byte: usize| edge.offset + byte + 1;
    let text = edge.text;

    let dash = text.find("--").expect("caller checked for `--`");
    let arrow = text[dash..]
        .find("->")
        .map(|p| p + dash)
        .ok_or_else(|| err(line, col(dash), "expected `->` after the label"))?;
    let from = text[..dash].trim();
    let label = &text[dash + 2..arrow];
    let rest = &text[arrow + 2..];
    let (to, reward_text) = rest
        .split_once(':')
        .ok_or_else(|| err(line, col(arrow + 2), "expected `: <reward>`"))?;
    let to = to.trim();
    let reward_trim = reward_text.trim();
    let reward_col = col(text.len() - reward_text.trim_start().len());

    if from.is_empty() {
        return Err(err(line, col(0), "missing source state"));
    }
    rm.state_index(from)
        .map_err(|_| err(line, col(0), format!("undeclared state `{from}`")))?;
    let to_col = col(arrow + 2 + (rest.len() - rest.trim_start().len()));
    if to.is_empty() {
        return Err(err(line, to_col, "missing target state"));
    }
    rm.state_index(to)
        .map_err(|_| err(line, to_col, format!("undeclared state `{to}`")))?;
    let reward: f64 = reward_trim
        .parse()
        .map_err(|_| err(line, reward_col, format!("invalid reward `{reward_trim}`")))?;

    let events = parse_label(label, rm.events())
        .map_err(|(byte, msg)| err(line, col(dash + 2 + byte), msg))?;
    for ev in events {
        rm.add_transition(from, ev, to, reward).map_err(|e| match e {
            RmError::DuplicateTransition { .. } => err(line, col(0), e.to_string()),
            other => err(line, col(dash + 2), other.to_string()),
        })?;
    }
    Ok(())
}

/// Parses `alt ('|' alt)*` into the explicit list of events, deduplicated.
fn parse_label(label: &str, alphabet: &EventSet) -> Result<Vec<Event>, (usize, String)> {
    let mut out = BTreeSet::new();
    let bytes = label.as_bytes();
    let mut pos = 0;
    loop {
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err((pos, "empty event label".into()));
        }
        match bytes[pos] {
            b'{' => {
                let close = label[pos..]
                    .find('}')
                    .ok_or((pos, "unterminated `{`".to_string()))?;
                if !label[pos + 1..pos + close].trim().is_empty() {
                    return Err((pos, "only `{}` (the empty event) is allowed in braces".into()));
                }
                out.insert(Event::EMPTY);
                pos += close + 1;
            }
            b'[' => {
                let close = label[pos..]
                    .find(']')
                    .ok_or((pos, "unterminated `[`".to_string()))?;
                if alphabet.len() > MAX_EXPAND_PROPS {
                    return Err((
                        pos,
                        format!("formula expansion needs at most {MAX_EXPAND_PROPS} propositions"),
                    ));
                }
                let inner = &label[pos + 1..pos + close];
                let f = parse_formula(inner, alphabet).map_err(|(b, m)| (pos + 1 + b, m))?;
                let evs = f.expand(alphabet);
                if evs.is_empty() {
                    return Err((pos, "formula is unsatisfiable".into()));
                }
                out.extend(evs);
                pos += close + 1;
            }
            _ => {
                let mut ev = Event::EMPTY;
                loop {
                    while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
                        pos += 1;
                    }
                    let start = pos;
                    while pos < label.len() {
                        let c = label[pos..].chars().next().unwrap();
                        if !is_ident_char(c) {
                            break;
                        }
                        pos += c.len_utf8();
                    }
                    let name = &label[start..pos];
                    if name.is_empty() {
                        return Err((start, "expected a proposition".into()));
                    }
                    let k = alphabet
                        .index_of(name)
                        .ok_or((start, format!("undeclared proposition `{name}`")))?;
                    ev = ev.with(k);
                    while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
                        pos += 1;
                    }
                    if pos < bytes.len() && bytes[pos] == b'&' {
                        pos += 1;
                    } else {
                        break;
                    }
                }
                out.insert(ev);
            }
        }
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            break;
        }
        if bytes[pos] != b'|' {
            return Err((pos, format!("unexpected `{}`", &label[pos..])));
        }
        pos += 1;
    }
    Ok(out.into_iter().collect())
}
