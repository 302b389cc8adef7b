//! Text formats for rules, instances and queries.
//!
//! Identifiers are ASCII alphanumerics and underscores. In term position an
//! identifier starting with an uppercase letter, or any identifier prefixed
//! by `?`, is a variable; everything else is a constant. `%` starts a comment
//! that runs to the end of the line.
//!
//! ```text
//! [r1] P(X,Y) -> P(Y,Z), P(Z,Z).
//! ```
//!
//! Head variables missing from the body are existentially quantified.

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use exrules_core::{Atom, Instance, ModelError, Rule, Term, Vocabulary};

/// Position of a token or construct in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SourceSpan {
    /// Byte offset of the first character.
    pub start: usize,
    /// Byte offset one past the last character.
    pub end: usize,
    /// 1-based.
    pub line: usize,
    /// 1-based, counted in characters.
    pub column: usize,
}

impl SourceSpan {
    fn to(self, other: SourceSpan) -> SourceSpan {
        SourceSpan { end: other.end.max(self.end), ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiagnosticKind {
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("expected {expected}, found {found}")]
    Expected { expected: &'static str, found: String },
    #[error("predicate `{name}` used with arity {found}, declared with arity {declared}")]
    ArityConflict { name: String, declared: usize, found: usize },
    #[error("constant `{name}` in rule {side}")]
    ConstantInRule { name: String, side: &'static str },
    #[error("rule has an empty body")]
    EmptyBody,
    #[error("rule has an empty head")]
    EmptyHead,
    #[error("variable `{0}` in an instance; instances are ground")]
    VariableInInstance(String),
    #[error("duplicate rule id `{0}`")]
    DuplicateRuleId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}:{}: {kind}", span.line, span.column)]
pub struct Diagnostic {
    pub span: SourceSpan,
    pub kind: DiagnosticKind,
}

/// Every diagnostic found in one text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.diagnostics.iter().enumerate() {
            if i > 0 {
                f.write_char('\n')?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl ParseError {
    /// Diagnostics prefixed with `origin`, one per line.
    pub fn render(&self, origin: &str) -> String {
        self.diagnostics.iter().map(|d| format!("{origin}:{d}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Arrow,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Splits `text` into tokens; lexical errors are reported and skipped.
fn lex(text: &str, diags: &mut Vec<Diagnostic>) -> Vec<(Tok, SourceSpan)> {
    let mut out = Vec::new();
    let (mut line, mut column) = (1, 1);
    let mut chars = text.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        let (ln, col) = (line, column);
        let span = move |end: usize| SourceSpan { start, end, line: ln, column: col };
        let tok = match c {
            '\n' => {
                line += 1;
                column = 1;
                continue;
            }
            '%' => {
                while chars.next_if(|&(_, c)| c != '\n').is_some() {}
                None
            }
            c if c.is_whitespace() => None,
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            ',' => Some(Tok::Comma),
            '.' => Some(Tok::Dot),
            '-' if chars.next_if(|&(_, c)| c == '>').is_some() => Some(Tok::Arrow),
            c if is_ident_char(c) || c == '?' => {
                let mut name = String::from(c);
                while let Some((_, c)) = chars.next_if(|&(_, c)| is_ident_char(c)) {
                    name.push(c);
                }
                if name == "?" {
                    diags.push(Diagnostic { span: span(start + 1), kind: DiagnosticKind::UnexpectedChar('?') });
                    None
                } else {
                    Some(Tok::Ident(name))
                }
            }
            other => {
                diags.push(Diagnostic {
                    span: span(start + other.len_utf8()),
                    kind: DiagnosticKind::UnexpectedChar(other),
                });
                None
            }
        };
        let end = chars.peek().map_or(text.len(), |&(i, _)| i);
        column += text[start..end].chars().count();
        if let Some(tok) = tok {
            out.push((tok, span(end)));
        }
    }
    let eof = SourceSpan { start: text.len(), end: text.len(), line, column };
    out.push((Tok::Eof, eof));
    out
}

struct RawAtom {
    pred: String,
    args: Vec<(String, SourceSpan)>,
    span: SourceSpan,
}

struct RawRule {
    id: Option<String>,
    body: Vec<RawAtom>,
    head: Vec<RawAtom>,
    span: SourceSpan,
    arrow: SourceSpan,
    end: SourceSpan,
}

struct Parser {
    toks: Vec<(Tok, SourceSpan)>,
    pos: usize,
}

type Step<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> SourceSpan {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, SourceSpan) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &'static str) -> Diagnostic {
        Diagnostic { span: self.span(), kind: DiagnosticKind::Expected { expected, found: self.peek().describe() } }
    }

    fn expect(&mut self, tok: Tok, expected: &'static str) -> Step<SourceSpan> {
        if *self.peek() == tok {
            Ok(self.bump().1)
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn ident(&mut self, expected: &'static str) -> Step<(String, SourceSpan)> {
        match self.peek() {
            Tok::Ident(_) => match self.bump() {
                (Tok::Ident(s), span) => Ok((s, span)),
                _ => unreachable!(),
            },
            _ => Err(self.unexpected(expected)),
        }
    }

    fn atom(&mut self) -> Step<RawAtom> {
        let (pred, start) = self.ident("a predicate name")?;
        if pred.starts_with('?') {
            return Err(Diagnostic {
                span: start,
                kind: DiagnosticKind::Expected { expected: "a predicate name", found: format!("`{pred}`") },
            });
        }
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                args.push(self.ident("a term")?);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        let end = self.expect(Tok::RParen, "`,` or `)`")?;
        Ok(RawAtom { pred, args, span: start.to(end) })
    }

    /// Zero or more comma-separated atoms.
    fn atoms(&mut self) -> Step<Vec<RawAtom>> {
        let mut out = Vec::new();
        if !matches!(self.peek(), Tok::Ident(_)) {
            return Ok(out);
        }
        loop {
            out.push(self.atom()?);
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                return Ok(out);
            }
        }
    }

    fn rule(&mut self) -> Step<RawRule> {
        let start = self.span();
        let id = if *self.peek() == Tok::LBracket {
            self.bump();
            let (id, _) = self.ident("a rule id")?;
            self.expect(Tok::RBracket, "`]`")?;
            Some(id)
        } else {
            None
        };
        let body = self.atoms()?;
        let arrow = self.expect(Tok::Arrow, if body.is_empty() { "an atom or `->`" } else { "`,` or `->`" })?;
        let head = self.atoms()?;
        let end = self.expect(Tok::Dot, if head.is_empty() { "an atom or `.`" } else { "`,` or `.`" })?;
        Ok(RawRule { id, body, head, span: start.to(end), arrow, end })
    }

    /// Skips past the next `.` so parsing can resume at the next statement.
    fn recover(&mut self) {
        loop {
            match self.bump().0 {
                Tok::Dot | Tok::Eof => return,
                _ => {}
            }
        }
    }

    fn at_eof(&self) -> bool {
        *self.peek() == Tok::Eof
    }
}

fn parser(text: &str, diags: &mut Vec<Diagnostic>) -> Parser {
    Parser { toks: lex(text, diags), pos: 0 }
}

fn is_variable_name(name: &str) -> bool {
    name.starts_with('?') || name.starts_with(|c: char| c.is_ascii_uppercase())
}

/// Resolves a raw atom against `vocab`; `term` decides each argument.
fn resolve(
    vocab: &mut Vocabulary,
    raw: &RawAtom,
    diags: &mut Vec<Diagnostic>,
    mut term: impl FnMut(&mut Vocabulary, &str, SourceSpan, &mut Vec<Diagnostic>) -> Option<Term>,
) -> Option<Atom> {
    let pred = match vocab.declare(&raw.pred, raw.args.len()) {
        Ok(p) => Some(p),
        Err(ModelError::ArityConflict { name, declared, found }) => {
            diags.push(Diagnostic { span: raw.span, kind: DiagnosticKind::ArityConflict { name, declared, found } });
            None
        }
        Err(e) => unreachable!("declare only reports arity conflicts: {e}"),
    };
    let mut args = Vec::with_capacity(raw.args.len());
    let mut ok = true;
    for (name, span) in &raw.args {
        match term(vocab, name, *span, diags) {
            Some(t) => args.push(t),
            None => ok = false,
        }
    }
    let pred = pred?;
    ok.then(|| Atom::new(pred, args))
}

/// Parses a rule file. Predicates are declared in `vocab` as they appear.
///
/// Rules without an explicit `[id]` get `r<k>`, with `k` the 1-based
/// position of the rule in the file.
pub fn parse_rules(text: &str, vocab: &mut Vocabulary) -> Result<Vec<Rule>, ParseError> {
    let mut diags = Vec::new();
    let mut p = parser(text, &mut diags);
    let mut rules = Vec::new();
    let mut ids = HashSet::new();
    let mut k = 0;
    while !p.at_eof() {
        k += 1;
        let raw = match p.rule() {
            Ok(r) => r,
            Err(d) => {
                diags.push(d);
                p.recover();
                continue;
            }
        };
        let id = raw.id.clone().unwrap_or_else(|| format!("r{k}"));
        if !ids.insert(id.clone()) {
            diags.push(Diagnostic { span: raw.span, kind: DiagnosticKind::DuplicateRuleId(id.clone()) });
        }
        if raw.body.is_empty() {
            diags.push(Diagnostic { span: raw.arrow, kind: DiagnosticKind::EmptyBody });
        }
        if raw.head.is_empty() {
            diags.push(Diagnostic { span: raw.end, kind: DiagnosticKind::EmptyHead });
        }
        let mut sides = Vec::with_capacity(2);
        for (side, atoms) in [("body", &raw.body), ("head", &raw.head)] {
            let resolved: Vec<Option<Atom>> = atoms
                .iter()
                .map(|a| {
                    resolve(vocab, a, &mut diags, |v, name, span, diags| {
                        if is_variable_name(name) {
                            Some(v.variable(name))
                        } else {
                            let kind = DiagnosticKind::ConstantInRule { name: name.into(), side };
                            diags.push(Diagnostic { span, kind });
                            None
                        }
                    })
                })
                .collect();
            sides.push(resolved.into_iter().collect::<Option<Vec<Atom>>>());
        }
        let head = sides.pop().flatten();
        let body = sides.pop().flatten();
        if let (Some(body), Some(head)) = (body, head) {
            if !body.is_empty() && !head.is_empty() {
                rules.push(Rule::new(id, body, head).expect("checked above"));
            }
        }
    }
    if diags.is_empty() {
        Ok(rules)
    } else {
        Err(ParseError { diagnostics: diags })
    }
}

/// Atoms separated by commas, dots or whitespace.
fn parse_atom_list(text: &str, vocab: &mut Vocabulary, allow_variables: bool) -> Result<Vec<Atom>, ParseError> {
    let mut diags = Vec::new();
    let mut p = parser(text, &mut diags);
    let mut out = Vec::new();
    while !p.at_eof() {
        if matches!(p.peek(), Tok::Comma | Tok::Dot) {
            p.bump();
            continue;
        }
        let raw = match p.atom() {
            Ok(a) => a,
            Err(d) => {
                diags.push(d);
                p.recover();
                continue;
            }
        };
        let atom = resolve(vocab, &raw, &mut diags, |v, name, span, diags| {
            if !is_variable_name(name) {
                Some(v.constant(name))
            } else if allow_variables {
                Some(v.variable(name))
            } else {
                diags.push(Diagnostic { span, kind: DiagnosticKind::VariableInInstance(name.into()) });
                None
            }
        });
        out.extend(atom);
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        Err(ParseError { diagnostics: diags })
    }
}

/// Parses ground facts.
pub fn parse_instance(text: &str, vocab: &mut Vocabulary) -> Result<Instance, ParseError> {
    parse_atom_list(text, vocab, false).map(|atoms| Instance::from_atoms(&atoms))
}

/// Parses a Boolean conjunctive query: instance syntax with variables.
/// Repeated atoms are kept once.
pub fn parse_query(text: &str, vocab: &mut Vocabulary) -> Result<Vec<Atom>, ParseError> {
    let atoms = parse_atom_list(text, vocab, true)?;
    let mut seen = HashSet::new();
    Ok(atoms.into_iter().filter(|a| seen.insert(a.clone())).collect())
}

fn join_atoms(vocab: &Vocabulary, atoms: &[Atom]) -> String {
    let mut out = String::new();
    for (i, a) in atoms.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write!(out, "{}", vocab.display_atom(a)).unwrap();
    }
    out
}

pub fn render_rule(vocab: &Vocabulary, rule: &Rule) -> String {
    format!("[{}] {} -> {}.", rule.id, join_atoms(vocab, &rule.body), join_atoms(vocab, &rule.head))
}

/// One rule per line.
pub fn render_rules(vocab: &Vocabulary, rules: &[Rule]) -> String {
    rules.iter().map(|r| render_rule(vocab, r) + "\n").collect()
}

/// One fact per line, in insertion order.
pub fn render_instance(vocab: &Vocabulary, instance: &Instance) -> String {
    instance.iter().map(|(p, args)| format!("{}.\n", vocab.display_row(p, args))).collect()
}

pub fn render_query(vocab: &Vocabulary, query: &[Atom]) -> String {
    format!("{}.\n", join_atoms(vocab, query))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(e: &ParseError) -> Vec<&DiagnosticKind> {
        e.diagnostics.iter().map(|d| &d.kind).collect()
    }

    #[test]
    fn example_rule() {
        let mut v = Vocabulary::new();
        let rules = parse_rules("P(X,Y) -> P(Y,Z), P(Z,Z) .", &mut v).unwrap();
        assert_eq!(rules.len(), 1);
        let r = &rules[0];
        assert_eq!(r.id, "r1");
        assert_eq!(r.frontier(), &[v.variable("Y")]);
        assert_eq!(r.existentials(), &[v.variable("Z")]);
    }

    #[test]
    fn constant_in_body_points_at_the_constant() {
        let mut v = Vocabulary::new();
        let text = "P(a,Y) -> Q(Y) .";
        let err = parse_rules(text, &mut v).unwrap_err();
        assert_eq!(kinds(&err), [&DiagnosticKind::ConstantInRule { name: "a".into(), side: "body" }]);
        let span = err.diagnostics[0].span;
        assert_eq!(&text[span.start..span.end], "a");
        assert_eq!((span.line, span.column), (1, 3));
    }

    #[test]
    fn empty_sides_are_reported() {
        let mut v = Vocabulary::new();
        let err = parse_rules("-> Q(X).\nP(X) -> .", &mut v).unwrap_err();
        assert_eq!(kinds(&err), [&DiagnosticKind::EmptyBody, &DiagnosticKind::EmptyHead]);
        assert_eq!(err.diagnostics[1].span.line, 2);
    }

    #[test]
    fn arity_conflict_spans_the_atom() {
        let mut v = Vocabulary::new();
        let text = "P(X) -> Q(X).\nQ(X,Y) -> P(X).";
        let err = parse_rules(text, &mut v).unwrap_err();
        assert_eq!(err.diagnostics.len(), 1);
        let d = &err.diagnostics[0];
        assert!(matches!(&d.kind, DiagnosticKind::ArityConflict { name, declared: 1, found: 2 } if name == "Q"));
        assert_eq!(&text[d.span.start..d.span.end], "Q(X,Y)");
        assert_eq!((d.span.line, d.span.column), (2, 1));
    }

    #[test]
    fn syntax_errors_recover_at_the_next_rule() {
        let mut v = Vocabulary::new();
        let err = parse_rules("P(X -> Q(X).\nR(X) -> S(X) S(X).\nT(X) -> U(X).", &mut v).unwrap_err();
        assert_eq!(err.diagnostics.len(), 2);
        assert_eq!(err.diagnostics[0].span.line, 1);
        assert_eq!(err.diagnostics[1].span.line, 2);
        assert!(v.predicate("U").is_some());
    }

    #[test]
    fn lexical_errors_carry_positions() {
        let mut v = Vocabulary::new();
        let err = parse_instance("P(a).\n  Q(b) $", &mut v).unwrap_err();
        assert_eq!(kinds(&err), [&DiagnosticKind::UnexpectedChar('$')]);
        let s = err.diagnostics[0].span;
        assert_eq!((s.line, s.column, s.start, s.end), (2, 8, 13, 14));
    }

    #[test]
    fn ids_comments_and_question_marks() {
        let mut v = Vocabulary::new();
        let text = "% transitive closure\n[trans] E(?x,?y), E(?y,Z) -> E(?x,Z). % done\n";
        let rules = parse_rules(text, &mut v).unwrap();
        assert_eq!(rules[0].id, "trans");
        assert!(rules[0].is_datalog());
        assert_eq!(render_rules(&v, &rules), "[trans] E(?x,?y), E(?y,Z) -> E(?x,Z).\n");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut v = Vocabulary::new();
        let err = parse_rules("[a] P(X) -> Q(X).\n[a] Q(X) -> P(X).", &mut v).unwrap_err();
        assert_eq!(kinds(&err), [&DiagnosticKind::DuplicateRuleId("a".into())]);
    }

    #[test]
    fn instances() {
        let mut v = Vocabulary::new();
        let i = parse_instance("End(w).", &mut v).unwrap();
        assert_eq!(i.len(), 1);
        assert!(parse_instance("", &mut v).unwrap().is_empty());
        let i = parse_instance("P(a,a).", &mut v).unwrap();
        assert_eq!(render_instance(&v, &i), "P(a,a).\n");
        let i = parse_instance("P(a,b), P(b,c)\nP(c,a)", &mut v).unwrap();
        assert_eq!(i.len(), 3);
        let err = parse_instance("P(a,X).", &mut v).unwrap_err();
        assert_eq!(kinds(&err), [&DiagnosticKind::VariableInInstance("X".into())]);
    }

    #[test]
    fn queries() {
        let mut v = Vocabulary::new();
        let q = parse_query("S0(X,Y).", &mut v).unwrap();
        assert_eq!(q.len(), 1);
        let q = parse_query("End(X), S0(Y,X).", &mut v).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].args[0], q[1].args[1]);
        let q = parse_query("G(X,X).", &mut v).unwrap();
        assert_eq!(q[0].args[0], q[0].args[1]);
        assert_eq!(render_query(&v, &q), "G(X,X).\n");
        let err = parse_query("S0(X).", &mut v).unwrap_err();
        assert!(matches!(kinds(&err)[0], DiagnosticKind::ArityConflict { .. }));
    }

    #[test]
    fn nullary_atoms() {
        let mut v = Vocabulary::new();
        let rules = parse_rules("Go() -> Done().", &mut v).unwrap();
        assert_eq!(render_rules(&v, &rules), "[r1] Go() -> Done().\n");
    }
}
