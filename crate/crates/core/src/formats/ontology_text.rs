//! Line-oriented frame grammar for ontology files (`.ctx`).
//!
//! ```text
//! agent <id> { kind: <person|group|machine> name: "<string>" }
//! resource <id> { kind: <kind> name: "<string>" attributes: { k: v, ... }? }
//! activity "<name>" { parent: "<name>"? description: "<string>"?
//!                     signature: [tok(:weight)?, ...] min-score: <float>? }
//! context for "<activity-name>" { resources: [<id>, ...]
//!                                 attributes: { k: v, ... }?
//!                                 process { step "<name>" | if [not] "<cond>" { ... } } }
//! ```
//!
//! `#` starts a comment. Activity class ids are derived by slugging the
//! activity name; a generic context takes the id `<class-id>-context`.
//! Cross-reference checks are left to `validate_ontology`.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::identify::PatternSignature;
use crate::model::{
    slug, ActivityClass, Agent, AgentId, AgentKind, ClassId, GenericContext, GenericContextId,
    Ontology, ProcessTemplate, Resource, ResourceId, ResourceKind, Step,
};

/// Default per-signature identification threshold when `min-score` is absent.
pub const DEFAULT_MIN_SCORE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Colon,
    Comma,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("\"{s}\""),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | '/')
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let mut line = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '#' => {
                for c in chars.by_ref() {
                    if c == '\n' {
                        line += 1;
                        break;
                    }
                }
            }
            '{' | '}' | '[' | ']' | ':' | ',' => {
                chars.next();
                let tok = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    ':' => Tok::Colon,
                    _ => Tok::Comma,
                };
                tokens.push(Token { tok, line });
            }
            '"' => {
                chars.next();
                let start_line = line;
                let mut value = String::new();
                let mut closed = false;
                while let Some(c) = chars.next() {
                    match c {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\\' => match chars.next() {
                            Some(escaped) => value.push(escaped),
                            None => break,
                        },
                        '\n' => {
                            line += 1;
                            value.push(c);
                        }
                        _ => value.push(c),
                    }
                }
                if !closed {
                    return Err(ParseError::new(start_line, "unterminated string"));
                }
                tokens.push(Token {
                    tok: Tok::Str(value),
                    line: start_line,
                });
            }
            c if is_ident_char(c) => {
                let mut ident = String::new();
                while let Some(&c) = chars.peek() {
                    if is_ident_char(c) {
                        ident.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token {
                    tok: Tok::Ident(ident),
                    line,
                });
            }
            other => {
                return Err(ParseError::new(line, format!("unexpected character `{other}`")));
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn line(&self) -> usize {
        self.tokens
            .get(self.pos.min(self.tokens.len().saturating_sub(1)))
            .map(|t| t.line)
            .unwrap_or(1)
    }

    fn expect(&mut self, expected: &Tok) -> Result<usize, ParseError> {
        match self.next() {
            Some(t) if t.tok == *expected => Ok(t.line),
            Some(t) => Err(ParseError::new(
                t.line,
                format!("expected {}, found {}", expected.describe(), t.tok.describe()),
            )),
            None => Err(ParseError::new(
                self.line(),
                format!("expected {}, found end of input", expected.describe()),
            )),
        }
    }

    fn expect_str(&mut self, what: &str) -> Result<(String, usize), ParseError> {
        match self.next() {
            Some(Token {
                tok: Tok::Str(s),
                line,
            }) => Ok((s, line)),
            Some(t) => Err(ParseError::new(
                t.line,
                format!("expected {what} string, found {}", t.tok.describe()),
            )),
            None => Err(ParseError::new(
                self.line(),
                format!("expected {what} string, found end of input"),
            )),
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, usize), ParseError> {
        match self.next() {
            Some(Token {
                tok: Tok::Ident(s),
                line,
            }) => Ok((s, line)),
            Some(t) => Err(ParseError::new(
                t.line,
                format!("expected {what}, found {}", t.tok.describe()),
            )),
            None => Err(ParseError::new(
                self.line(),
                format!("expected {what}, found end of input"),
            )),
        }
    }

    /// An identifier or quoted string, for ids and attribute keys/values.
    fn expect_word(&mut self, what: &str) -> Result<(String, usize), ParseError> {
        match self.next() {
            Some(Token {
                tok: Tok::Ident(s) | Tok::Str(s),
                line,
            }) => Ok((s, line)),
            Some(t) => Err(ParseError::new(
                t.line,
                format!("expected {what}, found {}", t.tok.describe()),
            )),
            None => Err(ParseError::new(
                self.line(),
                format!("expected {what}, found end of input"),
            )),
        }
    }

    fn expect_number(&mut self, what: &str) -> Result<(f64, usize), ParseError> {
        let (word, line) = self.expect_ident(what)?;
        word.parse::<f64>()
            .map(|n| (n, line))
            .map_err(|_| ParseError::new(line, format!("expected {what}, found `{word}`")))
    }

    /// Skips to just past the end of the current declaration: consumes
    /// balanced braces/brackets until depth returns to zero.
    fn resync(&mut self) {
        let mut depth = 0i64;
        while let Some(t) = self.next() {
            match t.tok {
                Tok::LBrace | Tok::LBracket => depth += 1,
                Tok::RBrace | Tok::RBracket => {
                    depth -= 1;
                    if depth <= 0 {
                        break;
                    }
                }
                Tok::Ident(ref kw)
                    if depth == 0 && matches!(kw.as_str(), "activity" | "context" | "resource" | "agent") =>
                {
                    self.pos -= 1;
                    break;
                }
                _ => {}
            }
        }
    }
}

/// Parses an ontology document. All errors found are reported together;
/// cross-reference checks are delegated to `validate_ontology`.
pub fn parse_ontology(text: &str) -> Result<Ontology, Vec<ParseError>> {
    let tokens = tokenize(text).map_err(|e| vec![e])?;
    let mut parser = Parser { tokens, pos: 0 };
    let mut ontology = Ontology::default();
    let mut errors = Vec::new();

    while let Some(token) = parser.peek().cloned() {
        let result = match &token.tok {
            Tok::Ident(kw) => match kw.as_str() {
                "activity" => parse_activity(&mut parser, &mut ontology),
                "context" => parse_context(&mut parser, &mut ontology),
                "resource" => parse_resource(&mut parser, &mut ontology),
                "agent" => parse_agent(&mut parser, &mut ontology),
                other => {
                    parser.next();
                    Err(ParseError::new(
                        token.line,
                        format!("expected `activity`, `context`, `resource` or `agent`, found `{other}`"),
                    ))
                }
            },
            other => {
                parser.next();
                Err(ParseError::new(
                    token.line,
                    format!(
                        "expected `activity`, `context`, `resource` or `agent`, found {}",
                        other.describe()
                    ),
                ))
            }
        };
        if let Err(e) = result {
            errors.push(e);
            parser.resync();
        }
    }

    if errors.is_empty() {
        Ok(ontology)
    } else {
        Err(errors)
    }
}

fn parse_activity(parser: &mut Parser, ontology: &mut Ontology) -> Result<(), ParseError> {
    parser.next(); // `activity`
    let (name, name_line) = parser.expect_str("activity name")?;
    let id = slug(&name);
    if id.is_empty() {
        return Err(ParseError::new(
            name_line,
            "activity name must contain at least one alphanumeric character",
        ));
    }
    parser.expect(&Tok::LBrace)?;

    let mut parent: Option<String> = None;
    let mut description: Option<String> = None;
    let mut signature: Option<BTreeMap<String, f64>> = None;
    let mut min_score: Option<f64> = None;

    loop {
        match parser.peek().cloned() {
            Some(Token { tok: Tok::RBrace, .. }) => {
                parser.next();
                break;
            }
            Some(Token {
                tok: Tok::Ident(key),
                line,
            }) => {
                parser.next();
                match key.as_str() {
                    "parent" => {
                        parser.expect(&Tok::Colon)?;
                        let (value, _) = parser.expect_str("parent activity name")?;
                        set_once(&mut parent, value, "parent", line)?;
                    }
                    "description" => {
                        parser.expect(&Tok::Colon)?;
                        let (value, _) = parser.expect_str("description")?;
                        set_once(&mut description, value, "description", line)?;
                    }
                    "signature" => {
                        parser.expect(&Tok::Colon)?;
                        let tokens = parse_signature_list(parser)?;
                        set_once(&mut signature, tokens, "signature", line)?;
                    }
                    "min-score" => {
                        parser.expect(&Tok::Colon)?;
                        let (value, _) = parser.expect_number("min-score value")?;
                        set_once(&mut min_score, value, "min-score", line)?;
                    }
                    other => {
                        return Err(ParseError::new(
                            line,
                            format!("unknown activity entry `{other}`"),
                        ));
                    }
                }
            }
            Some(t) => {
                return Err(ParseError::new(
                    t.line,
                    format!("expected activity entry or `}}`, found {}", t.tok.describe()),
                ));
            }
            None => {
                return Err(ParseError::new(
                    parser.line(),
                    "unterminated activity block",
                ));
            }
        }
    }

    let signature = signature
        .ok_or_else(|| ParseError::new(name_line, format!("activity \"{name}\" has no signature")))?;

    let class = ActivityClass {
        id: ClassId::new(id.clone()),
        name,
        parent_class: parent.map(|p| ClassId::new(slug(&p))),
        signature: PatternSignature::new(signature, min_score.unwrap_or(DEFAULT_MIN_SCORE)),
        description: description.unwrap_or_default(),
    };
    if ontology.activity_classes.contains_key(&class.id) {
        return Err(ParseError::new(name_line, format!("duplicate activity id `{id}`")));
    }
    ontology.insert_class(class);
    Ok(())
}

fn parse_signature_list(parser: &mut Parser) -> Result<BTreeMap<String, f64>, ParseError> {
    parser.expect(&Tok::LBracket)?;
    let mut out = BTreeMap::new();
    loop {
        match parser.peek().cloned() {
            Some(Token { tok: Tok::RBracket, .. }) => {
                parser.next();
                break;
            }
            Some(Token { tok: Tok::Comma, .. }) => {
                parser.next();
            }
            _ => {
                let (token, line) = parser.expect_word("signature token")?;
                let weight = match parser.peek() {
                    Some(Token { tok: Tok::Colon, .. }) => {
                        parser.next();
                        parser.expect_number("signature weight")?.0
                    }
                    _ => 1.0,
                };
                if out.insert(token.clone(), weight).is_some() {
                    return Err(ParseError::new(
                        line,
                        format!("duplicate signature token `{token}`"),
                    ));
                }
            }
        }
    }
    Ok(out)
}

fn parse_context(parser: &mut Parser, ontology: &mut Ontology) -> Result<(), ParseError> {
    parser.next(); // `context`
    let (kw, kw_line) = parser.expect_ident("`for`")?;
    if kw != "for" {
        return Err(ParseError::new(kw_line, format!("expected `for`, found `{kw}`")));
    }
    let (name, name_line) = parser.expect_str("activity name")?;
    let class_id = slug(&name);
    if class_id.is_empty() {
        return Err(ParseError::new(
            name_line,
            "activity name must contain at least one alphanumeric character",
        ));
    }
    parser.expect(&Tok::LBrace)?;

    let mut resources: Option<BTreeSet<ResourceId>> = None;
    let mut attributes: Option<BTreeMap<String, String>> = None;
    let mut process: Option<ProcessTemplate> = None;

    loop {
        match parser.peek().cloned() {
            Some(Token { tok: Tok::RBrace, .. }) => {
                parser.next();
                break;
            }
            Some(Token {
                tok: Tok::Ident(key),
                line,
            }) => {
                parser.next();
                match key.as_str() {
                    "resources" => {
                        parser.expect(&Tok::Colon)?;
                        let list = parse_id_list(parser)?;
                        set_once(&mut resources, list, "resources", line)?;
                    }
                    "attributes" => {
                        parser.expect(&Tok::Colon)?;
                        let map = parse_attribute_map(parser)?;
                        set_once(&mut attributes, map, "attributes", line)?;
                    }
                    "process" => {
                        let steps = parse_process_block(parser)?;
                        set_once(&mut process, ProcessTemplate::new(steps), "process", line)?;
                    }
                    other => {
                        return Err(ParseError::new(
                            line,
                            format!("unknown context entry `{other}`"),
                        ));
                    }
                }
            }
            Some(t) => {
                return Err(ParseError::new(
                    t.line,
                    format!("expected context entry or `}}`, found {}", t.tok.describe()),
                ));
            }
            None => {
                return Err(ParseError::new(parser.line(), "unterminated context block"));
            }
        }
    }

    let generic = GenericContext {
        id: GenericContextId::new(format!("{class_id}-context")),
        for_class: ClassId::new(class_id.clone()),
        resources: resources.unwrap_or_default(),
        process: process.unwrap_or_default(),
        attributes: attributes.unwrap_or_default(),
    };
    if ontology.generic_contexts.contains_key(&generic.id) {
        return Err(ParseError::new(
            name_line,
            format!("duplicate context for activity `{class_id}`"),
        ));
    }
    ontology.insert_generic(generic);
    Ok(())
}

fn parse_id_list(parser: &mut Parser) -> Result<BTreeSet<ResourceId>, ParseError> {
    parser.expect(&Tok::LBracket)?;
    let mut out = BTreeSet::new();
    loop {
        match parser.peek().cloned() {
            Some(Token { tok: Tok::RBracket, .. }) => {
                parser.next();
                break;
            }
            Some(Token { tok: Tok::Comma, .. }) => {
                parser.next();
            }
            _ => {
                let (id, _) = parser.expect_word("resource id")?;
                out.insert(ResourceId::new(id));
            }
        }
    }
    Ok(out)
}

fn parse_attribute_map(parser: &mut Parser) -> Result<BTreeMap<String, String>, ParseError> {
    parser.expect(&Tok::LBrace)?;
    let mut out = BTreeMap::new();
    loop {
        match parser.peek().cloned() {
            Some(Token { tok: Tok::RBrace, .. }) => {
                parser.next();
                break;
            }
            Some(Token { tok: Tok::Comma, .. }) => {
                parser.next();
            }
            _ => {
                let (key, line) = parser.expect_word("attribute key")?;
                parser.expect(&Tok::Colon)?;
                let (value, _) = parser.expect_word("attribute value")?;
                if out.insert(key.clone(), value).is_some() {
                    return Err(ParseError::new(line, format!("duplicate attribute `{key}`")));
                }
            }
        }
    }
    Ok(out)
}

fn parse_process_block(parser: &mut Parser) -> Result<Vec<Step>, ParseError> {
    parser.expect(&Tok::LBrace)?;
    let mut steps = Vec::new();
    loop {
        match parser.peek().cloned() {
            Some(Token { tok: Tok::RBrace, .. }) => {
                parser.next();
                break;
            }
            Some(Token {
                tok: Tok::Ident(kw),
                line,
            }) => {
                parser.next();
                match kw.as_str() {
                    "step" => {
                        let (name, _) = parser.expect_str("step name")?;
                        steps.push(Step::Atomic { name });
                    }
                    "if" => {
                        let negated = matches!(
                            parser.peek(),
                            Some(Token { tok: Tok::Ident(word), .. }) if word == "not"
                        );
                        if negated {
                            parser.next();
                        }
                        let (condition, _) = parser.expect_str("condition name")?;
                        let then_steps = parse_process_block(parser)?;
                        steps.push(Step::Conditional {
                            condition,
                            negated,
                            then_steps,
                        });
                    }
                    other => {
                        return Err(ParseError::new(
                            line,
                            format!("expected `step` or `if`, found `{other}`"),
                        ));
                    }
                }
            }
            Some(t) => {
                return Err(ParseError::new(
                    t.line,
                    format!("expected `step`, `if` or `}}`, found {}", t.tok.describe()),
                ));
            }
            None => {
                return Err(ParseError::new(parser.line(), "unterminated process block"));
            }
        }
    }
    Ok(steps)
}

fn parse_resource(parser: &mut Parser, ontology: &mut Ontology) -> Result<(), ParseError> {
    parser.next(); // `resource`
    let (id, id_line) = parser.expect_word("resource id")?;
    let (kind, name, attributes) = parse_kind_name_block(parser, "resource")?;
    let kind = ResourceKind::parse(&kind).ok_or_else(|| {
        ParseError::new(
            id_line,
            format!("unknown resource kind `{kind}` (expected information, application, person, device or other)"),
        )
    })?;
    let resource = Resource {
        id: ResourceId::new(id.clone()),
        kind,
        name,
        attributes,
    };
    if ontology.resources.contains_key(&resource.id) {
        return Err(ParseError::new(id_line, format!("duplicate resource id `{id}`")));
    }
    ontology.insert_resource(resource);
    Ok(())
}

fn parse_agent(parser: &mut Parser, ontology: &mut Ontology) -> Result<(), ParseError> {
    parser.next(); // `agent`
    let (id, id_line) = parser.expect_word("agent id")?;
    let (kind, name, _) = parse_kind_name_block(parser, "agent")?;
    let kind = AgentKind::parse(&kind).ok_or_else(|| {
        ParseError::new(
            id_line,
            format!("unknown agent kind `{kind}` (expected person, group or machine)"),
        )
    })?;
    let agent = Agent {
        id: AgentId::new(id.clone()),
        kind,
        name,
    };
    if ontology.agents.contains_key(&agent.id) {
        return Err(ParseError::new(id_line, format!("duplicate agent id `{id}`")));
    }
    ontology.insert_agent(agent);
    Ok(())
}

type KindNameAttrs = (String, String, BTreeMap<String, String>);

fn parse_kind_name_block(parser: &mut Parser, what: &str) -> Result<KindNameAttrs, ParseError> {
    parser.expect(&Tok::LBrace)?;
    let mut kind: Option<String> = None;
    let mut name: Option<String> = None;
    let mut attributes: Option<BTreeMap<String, String>> = None;
    loop {
        match parser.peek().cloned() {
            Some(Token { tok: Tok::RBrace, line }) => {
                parser.next();
                let kind = kind.ok_or_else(|| ParseError::new(line, format!("{what} has no kind")))?;
                let name = name.ok_or_else(|| ParseError::new(line, format!("{what} has no name")))?;
                return Ok((kind, name, attributes.unwrap_or_default()));
            }
            Some(Token {
                tok: Tok::Ident(key),
                line,
            }) => {
                parser.next();
                match key.as_str() {
                    "kind" => {
                        parser.expect(&Tok::Colon)?;
                        let (value, _) = parser.expect_ident("kind")?;
                        set_once(&mut kind, value, "kind", line)?;
                    }
                    "name" => {
                        parser.expect(&Tok::Colon)?;
                        let (value, _) = parser.expect_str("name")?;
                        set_once(&mut name, value, "name", line)?;
                    }
                    "attributes" => {
                        parser.expect(&Tok::Colon)?;
                        let map = parse_attribute_map(parser)?;
                        set_once(&mut attributes, map, "attributes", line)?;
                    }
                    other => {
                        return Err(ParseError::new(
                            line,
                            format!("unknown {what} entry `{other}`"),
                        ));
                    }
                }
            }
            Some(t) => {
                return Err(ParseError::new(
                    t.line,
                    format!("expected {what} entry or `}}`, found {}", t.tok.describe()),
                ));
            }
            None => {
                return Err(ParseError::new(parser.line(), format!("unterminated {what} block")));
            }
        }
    }
}

fn set_once<T>(slot: &mut Option<T>, value: T, key: &str, line: usize) -> Result<(), ParseError> {
    if slot.is_some() {
        return Err(ParseError::new(line, format!("duplicate entry `{key}`")));
    }
    *slot = Some(value);
    Ok(())
}

fn is_bare_word(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_ident_char) && s.parse::<f64>().is_err()
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn word(s: &str) -> String {
    if is_bare_word(s) {
        s.to_string()
    } else {
        quote(s)
    }
}

/// Renders an ontology back into the grammar. `parse_ontology` of the output
/// reproduces the value exactly (generic context ids and class ids are
/// name-derived, so they survive the trip).
pub fn serialize_ontology(ontology: &Ontology) -> String {
    let mut out = String::new();

    for agent in ontology.agents.values() {
        out.push_str(&format!(
            "agent {} {{\n  kind: {}\n  name: {}\n}}\n\n",
            word(agent.id.as_str()),
            agent.kind,
            quote(&agent.name)
        ));
    }

    for resource in ontology.resources.values() {
        out.push_str(&format!(
            "resource {} {{\n  kind: {}\n  name: {}\n",
            word(resource.id.as_str()),
            resource.kind,
            quote(&resource.name)
        ));
        if !resource.attributes.is_empty() {
            out.push_str(&format!(
                "  attributes: {}\n",
                render_attributes(&resource.attributes)
            ));
        }
        out.push_str("}\n\n");
    }

    for class in ontology.activity_classes.values() {
        out.push_str(&format!("activity {} {{\n", quote(&class.name)));
        if let Some(parent) = &class.parent_class {
            let parent_name = ontology
                .activity_classes
                .get(parent)
                .map(|c| c.name.clone())
                .unwrap_or_else(|| parent.as_str().to_string());
            out.push_str(&format!("  parent: {}\n", quote(&parent_name)));
        }
        if !class.description.is_empty() {
            out.push_str(&format!("  description: {}\n", quote(&class.description)));
        }
        let tokens: Vec<String> = class
            .signature
            .weighted_tokens
            .iter()
            .map(|(t, w)| format!("{}: {}", word(t), w))
            .collect();
        out.push_str(&format!("  signature: [{}]\n", tokens.join(", ")));
        out.push_str(&format!("  min-score: {}\n", class.signature.min_score));
        out.push_str("}\n\n");
    }

    for generic in ontology.generic_contexts.values() {
        let class_name = ontology
            .activity_classes
            .get(&generic.for_class)
            .map(|c| c.name.clone())
            .unwrap_or_else(|| generic.for_class.as_str().to_string());
        out.push_str(&format!("context for {} {{\n", quote(&class_name)));
        if !generic.resources.is_empty() {
            let ids: Vec<String> = generic.resources.iter().map(|r| word(r.as_str())).collect();
            out.push_str(&format!("  resources: [{}]\n", ids.join(", ")));
        }
        if !generic.attributes.is_empty() {
            out.push_str(&format!(
                "  attributes: {}\n",
                render_attributes(&generic.attributes)
            ));
        }
        if !generic.process.is_empty() {
            out.push_str("  process {\n");
            render_steps(&generic.process.steps, 2, &mut out);
            out.push_str("  }\n");
        }
        out.push_str("}\n\n");
    }

    out
}

fn render_attributes(attributes: &BTreeMap<String, String>) -> String {
    let entries: Vec<String> = attributes
        .iter()
        .map(|(k, v)| format!("{}: {}", word(k), quote(v)))
        .collect();
    format!("{{ {} }}", entries.join(", "))
}

fn render_steps(steps: &[Step], indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    for step in steps {
        match step {
            Step::Atomic { name } => {
                out.push_str(&format!("{pad}step {}\n", quote(name)));
            }
            Step::Conditional {
                condition,
                negated,
                then_steps,
            } => {
                let not = if *negated { "not " } else { "" };
                out.push_str(&format!("{pad}if {not}{} {{\n", quote(condition)));
                render_steps(then_steps, indent + 1, out);
                out.push_str(&format!("{pad}}}\n"));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_ontology;

    #[test]
    fn empty_file_parses_to_empty_ontology() {
        let o = parse_ontology("").unwrap();
        assert_eq!(o, Ontology::default());
        let o = parse_ontology("# only a comment\n\n").unwrap();
        assert_eq!(o, Ontology::default());
    }

    #[test]
    fn parses_negated_conditional() {
        let text = r#"
activity "Organise" { signature: [plan] }
context for "Organise" {
  process {
    if not "Approval of Agenda" {
      step "Revise Agenda"
    }
  }
}
"#;
        let o = parse_ontology(text).unwrap();
        let generic = o.generic_contexts.values().next().unwrap();
        assert_eq!(
            generic.process.steps,
            vec![Step::Conditional {
                condition: "Approval of Agenda".into(),
                negated: true,
                then_steps: vec![Step::Atomic {
                    name: "Revise Agenda".into()
                }],
            }]
        );
    }

    #[test]
    fn parses_weighted_signature_and_min_score() {
        let text = r#"activity "A" { signature: [x: 2, y: 0.5, z] min-score: 0.4 }"#;
        let o = parse_ontology(text).unwrap();
        let class = &o.activity_classes[&ClassId::from("a")];
        assert_eq!(class.signature.weighted_tokens["x"], 2.0);
        assert_eq!(class.signature.weighted_tokens["y"], 0.5);
        assert_eq!(class.signature.weighted_tokens["z"], 1.0);
        assert_eq!(class.signature.min_score, 0.4);
    }

    #[test]
    fn min_score_defaults() {
        let o = parse_ontology(r#"activity "A" { signature: [x] }"#).unwrap();
        assert_eq!(
            o.activity_classes[&ClassId::from("a")].signature.min_score,
            DEFAULT_MIN_SCORE
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "activity \"A\" { signature: [x] }\nactivity \"B\" {\n  signature ]\n}\n";
        let errs = parse_ontology(text).unwrap_err();
        assert_eq!(errs[0].line, 3);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = r#"
activity "Same Name" { signature: [x] }
activity "Same  Name" { signature: [y] }
"#;
        let errs = parse_ontology(text).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("duplicate activity id")));

        let errs = parse_ontology("resource r { kind: device name: \"R\" }\nresource r { kind: device name: \"R2\" }")
            .unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("duplicate resource id")));
    }

    #[test]
    fn missing_signature_is_an_error() {
        let errs = parse_ontology(r#"activity "A" { }"#).unwrap_err();
        assert!(errs[0].message.contains("no signature"));
    }

    #[test]
    fn recovers_and_reports_multiple_errors() {
        let text = r#"
activity "A" { bogus: 3 }
resource r1 { kind: nonsense name: "R" }
agent self { kind: person name: "Self" }
"#;
        let errs = parse_ontology(text).unwrap_err();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn unknown_cross_references_parse_and_fail_validation() {
        let text = r#"
activity "A" { parent: "Missing" signature: [x] }
context for "Ghost" { resources: [nothing] }
"#;
        let o = parse_ontology(text).unwrap();
        let report = validate_ontology(&o);
        assert!(!report.is_empty());
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let text = r#"
agent self { kind: person name: "Self" }
resource cal { kind: application name: "Calendar" attributes: { colour: "blue" } }
activity "Root Job" { signature: [work: 1.5] description: "the job" }
activity "Sub Task" { parent: "Root Job" signature: [plan, "funny token"] min-score: 0.25 }
context for "Sub Task" {
  resources: [cal]
  attributes: { style: "quiet", "spaced key": "v" }
  process {
    step "First"
    if "Done" { step "Celebrate" }
    if not "Approved" { step "Revise" }
  }
}
"#;
        let parsed = parse_ontology(text).unwrap();
        let rendered = serialize_ontology(&parsed);
        let reparsed = parse_ontology(&rendered).unwrap();
        assert_eq!(parsed, reparsed);
    }

    #[test]
    fn tokenizer_rejects_garbage_without_panicking() {
        assert!(parse_ontology("activity \"A\" { signature: [@] }").is_err());
        assert!(parse_ontology("\"unterminated").is_err());
        assert!(parse_ontology("}}}}").is_err());
    }
}
