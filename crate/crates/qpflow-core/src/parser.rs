//! Text format for quasi-polynomial ODE systems.
//!
//! Systems are written as plain first-order ODEs, one equation and one
//! initial condition per variable:
//!
//! ```text
//! x' = x*(2 - x)
//! x(0) = 0.5
//! ```
//!
//! Grammar (EBNF):
//!
//! ```text
//! file      = { statement , separator } ;
//! statement = equation | initial ;
//! equation  = ident , "'" , "=" , expr ;
//! initial   = ident , "(" , "0" , ")" , "=" , expr ;
//! expr      = [ "+" | "-" ] , term , { ( "+" | "-" ) , term } ;
//! term      = factor , { ( "*" | "/" ) , factor } ;
//! factor    = primary , [ "^" , [ "+" | "-" ] , primary ] ;
//! primary   = number | ident | "(" , expr , ")" ;
//! separator = ";" | newline ;
//! ```
//!
//! `#` starts a comment running to the end of the line. Exponents must fold
//! to real constants; each additive term must reduce to a single power
//! product `c * x1^e1 * ... * xn^en` (division by a monomial negates its
//! exponents), otherwise the input is rejected as not quasi-polynomial.
//! Transcendental functions have no quasi-polynomial form and are rejected.
//!
//! The parser factors each right-hand side as `x_i * (sum of monomials)` by
//! shifting the equation's own exponent down by one, deduplicates exponent
//! rows across all equations (rows equal within 1e-12 in every entry merge),
//! drops rows whose accumulated coefficients all cancel to within 1e-14, and
//! sorts the surviving rows lexicographically so parsing is deterministic.
//!
//! A leading `{` switches to the JSON interchange format of
//! [`QpSystem::from_json`].

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::qp::{QpError, QpSystem};

/// Exponent rows closer than this in every entry are the same monomial.
const EXPONENT_MERGE_TOL: f64 = 1e-12;

/// Accumulated coefficients at most this large in magnitude are dropped.
const CANCEL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("undeclared variable '{name}' in equation for '{equation}'")]
    UndeclaredVariable { name: String, equation: String },
    #[error("initial condition for '{name}' must be strictly positive, got {value}")]
    NonPositiveInitial { name: String, value: f64 },
    #[error("equation for '{name}' is not quasi-polynomial: {reason}")]
    NotQuasiPolynomial { name: String, reason: String },
    #[error("missing initial condition for '{0}'")]
    MissingInitialCondition(String),
    #[error("duplicate {what} for '{name}'")]
    Duplicate { what: &'static str, name: String },
    #[error(transparent)]
    System(#[from] QpError),
}

// ── Lexer ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Prime,
    Equals,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Separator,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax_error(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1usize, 1usize);

    while let Some(&c) = chars.peek() {
        let (tok_line, tok_column) = (line, column);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next().expect("peeked");
            if c == '\n' {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
            c
        };
        match c {
            ' ' | '\t' | '\r' => {
                bump(&mut chars);
            }
            '#' => {
                while chars.peek().is_some_and(|&c| c != '\n') {
                    bump(&mut chars);
                }
            }
            '\n' | ';' => {
                bump(&mut chars);
                tokens.push(Token {
                    tok: Tok::Separator,
                    line: tok_line,
                    column: tok_column,
                });
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let mut name = String::new();
                while chars
                    .peek()
                    .is_some_and(|c| c.is_ascii_alphanumeric() || *c == '_')
                {
                    name.push(bump(&mut chars));
                }
                tokens.push(Token {
                    tok: Tok::Ident(name),
                    line: tok_line,
                    column: tok_column,
                });
            }
            '0'..='9' | '.' => {
                let mut literal = String::new();
                while chars.peek().is_some_and(|c| c.is_ascii_digit() || *c == '.') {
                    literal.push(bump(&mut chars));
                }
                if chars.peek().is_some_and(|&c| c == 'e' || c == 'E') {
                    literal.push(bump(&mut chars));
                    if chars.peek().is_some_and(|&c| c == '+' || c == '-') {
                        literal.push(bump(&mut chars));
                    }
                    while chars.peek().is_some_and(|c| c.is_ascii_digit()) {
                        literal.push(bump(&mut chars));
                    }
                }
                let value: f64 = literal.parse().map_err(|_| {
                    syntax_error(tok_line, tok_column, format!("invalid number '{literal}'"))
                })?;
                if !value.is_finite() {
                    return Err(syntax_error(
                        tok_line,
                        tok_column,
                        format!("number '{literal}' does not fit a double"),
                    ));
                }
                tokens.push(Token {
                    tok: Tok::Number(value),
                    line: tok_line,
                    column: tok_column,
                });
            }
            _ => {
                bump(&mut chars);
                let tok = match c {
                    '\'' => Tok::Prime,
                    '=' => Tok::Equals,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    '^' => Tok::Caret,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    other => {
                        return Err(syntax_error(
                            tok_line,
                            tok_column,
                            format!("unexpected character '{other}'"),
                        ))
                    }
                };
                tokens.push(Token {
                    tok,
                    line: tok_line,
                    column: tok_column,
                });
            }
        }
    }
    Ok(tokens)
}

// ── Expression AST ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
}

struct ExprParser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end: (usize, usize),
}

impl<'a> ExprParser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.tokens
            .get(self.pos)
            .map_or(self.end, |t| (t.line, t.column))
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), ParseError> {
        let (line, column) = self.here();
        match self.bump() {
            Some(t) if &t.tok == tok => Ok(()),
            _ => Err(syntax_error(line, column, format!("expected {what}"))),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let negated = match self.peek() {
            Some(Tok::Minus) => {
                self.bump();
                true
            }
            Some(Tok::Plus) => {
                self.bump();
                false
            }
            _ => false,
        };
        let mut acc = self.term()?;
        if negated {
            acc = Expr::Neg(Box::new(acc));
        }
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    acc = Expr::Add(Box::new(acc), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    acc = Expr::Sub(Box::new(acc), Box::new(self.term()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    acc = Expr::Mul(Box::new(acc), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    acc = Expr::Div(Box::new(acc), Box::new(self.factor()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek() == Some(&Tok::Caret) {
            self.bump();
            let negated = match self.peek() {
                Some(Tok::Minus) => {
                    self.bump();
                    true
                }
                Some(Tok::Plus) => {
                    self.bump();
                    false
                }
                _ => false,
            };
            let mut exponent = self.primary()?;
            if negated {
                exponent = Expr::Neg(Box::new(exponent));
            }
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (line, column) = self.here();
        match self.bump().map(|t| t.tok.clone()) {
            Some(Tok::Number(v)) => Ok(Expr::Num(v)),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    return Err(syntax_error(
                        line,
                        column,
                        format!("function call '{name}(...)' is not quasi-polynomial"),
                    ));
                }
                Ok(Expr::Var(name))
            }
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(inner)
            }
            _ => Err(syntax_error(line, column, "expected a number, variable, or '('")),
        }
    }
}

fn parse_expression(tokens: &[Token], fallback: (usize, usize)) -> Result<Expr, ParseError> {
    // Errors at an exhausted statement point just past its last token.
    let end = tokens
        .last()
        .map_or(fallback, |t| (t.line, t.column + 1));
    let mut parser = ExprParser { tokens, pos: 0, end };
    let expr = parser.expr()?;
    if parser.pos != tokens.len() {
        let (line, column) = parser.here();
        return Err(syntax_error(line, column, "unexpected trailing input"));
    }
    Ok(expr)
}

// ── Statements ─────────────────────────────────────────────────────────

struct SourceFile {
    /// Declared variables with their right-hand sides, in declaration order.
    equations: Vec<(String, Expr)>,
    /// Initial values keyed by variable name.
    initials: BTreeMap<String, f64>,
}

fn parse_source(text: &str) -> Result<SourceFile, ParseError> {
    let tokens = lex(text)?;
    let mut equations: Vec<(String, Expr)> = Vec::new();
    let mut initials = BTreeMap::new();

    for stmt in tokens.split(|t| t.tok == Tok::Separator) {
        if stmt.is_empty() {
            continue;
        }
        let (line, column) = (stmt[0].line, stmt[0].column);
        let Tok::Ident(name) = &stmt[0].tok else {
            return Err(syntax_error(line, column, "statement must start with a variable name"));
        };
        match stmt.get(1).map(|t| &t.tok) {
            Some(Tok::Prime) => {
                let Some(eq) = stmt.get(2) else {
                    return Err(syntax_error(line, column, "expected '=' after the prime"));
                };
                if eq.tok != Tok::Equals {
                    return Err(syntax_error(eq.line, eq.column, "expected '='"));
                }
                if equations.iter().any(|(n, _)| n == name) {
                    return Err(ParseError::Duplicate {
                        what: "equation",
                        name: name.clone(),
                    });
                }
                let rhs = parse_expression(&stmt[3..], (eq.line, eq.column + 1))?;
                equations.push((name.clone(), rhs));
            }
            Some(Tok::LParen) => {
                // name(0) = number
                let shape_ok = matches!(stmt.get(2).map(|t| &t.tok), Some(Tok::Number(v)) if *v == 0.0)
                    && stmt.get(3).map(|t| &t.tok) == Some(&Tok::RParen)
                    && stmt.get(4).map(|t| &t.tok) == Some(&Tok::Equals);
                if !shape_ok {
                    return Err(syntax_error(
                        line,
                        column,
                        "initial conditions are written 'name(0) = value'",
                    ));
                }
                let value_expr = parse_expression(&stmt[5..], (line, column))?;
                let Some(value) = fold_constant(&value_expr) else {
                    return Err(syntax_error(
                        line,
                        column,
                        "initial value must be a numeric constant",
                    ));
                };
                if initials.insert(name.clone(), value).is_some() {
                    return Err(ParseError::Duplicate {
                        what: "initial condition",
                        name: name.clone(),
                    });
                }
            }
            _ => {
                return Err(syntax_error(
                    line,
                    column,
                    "expected an equation (name' = ...) or an initial condition (name(0) = ...)",
                ))
            }
        }
    }
    Ok(SourceFile {
        equations,
        initials,
    })
}

/// Folds constant subexpressions; `None` when a variable is involved.
fn fold_constant(expr: &Expr) -> Option<f64> {
    match expr {
        Expr::Num(v) => Some(*v),
        Expr::Var(_) => None,
        Expr::Neg(e) => Some(-fold_constant(e)?),
        Expr::Add(a, b) => Some(fold_constant(a)? + fold_constant(b)?),
        Expr::Sub(a, b) => Some(fold_constant(a)? - fold_constant(b)?),
        Expr::Mul(a, b) => Some(fold_constant(a)? * fold_constant(b)?),
        Expr::Div(a, b) => Some(fold_constant(a)? / fold_constant(b)?),
        Expr::Pow(a, b) => Some(fold_constant(a)?.powf(fold_constant(b)?)),
    }
}

// ── Monomial expansion ─────────────────────────────────────────────────

#[derive(Debug, Clone)]
struct Monomial {
    coeff: f64,
    exponents: Vec<f64>,
}

struct Expansion<'a> {
    variables: &'a BTreeMap<String, usize>,
    equation: &'a str,
}

impl Expansion<'_> {
    fn not_qp(&self, reason: impl Into<String>) -> ParseError {
        ParseError::NotQuasiPolynomial {
            name: self.equation.to_string(),
            reason: reason.into(),
        }
    }

    fn expand(&self, expr: &Expr) -> Result<Vec<Monomial>, ParseError> {
        let n = self.variables.len();
        match expr {
            Expr::Num(v) => Ok(vec![Monomial {
                coeff: *v,
                exponents: vec![0.0; n],
            }]),
            Expr::Var(name) => {
                let Some(&index) = self.variables.get(name) else {
                    return Err(ParseError::UndeclaredVariable {
                        name: name.clone(),
                        equation: self.equation.to_string(),
                    });
                };
                let mut exponents = vec![0.0; n];
                exponents[index] = 1.0;
                Ok(vec![Monomial {
                    coeff: 1.0,
                    exponents,
                }])
            }
            Expr::Neg(e) => {
                let mut monomials = self.expand(e)?;
                for m in &mut monomials {
                    m.coeff = -m.coeff;
                }
                Ok(monomials)
            }
            Expr::Add(a, b) => {
                let mut monomials = self.expand(a)?;
                monomials.extend(self.expand(b)?);
                Ok(monomials)
            }
            Expr::Sub(a, b) => {
                let mut monomials = self.expand(a)?;
                monomials.extend(self.expand(b)?.into_iter().map(|mut m| {
                    m.coeff = -m.coeff;
                    m
                }));
                Ok(monomials)
            }
            Expr::Mul(a, b) => {
                let left = self.expand(a)?;
                let right = self.expand(b)?;
                let mut monomials = Vec::with_capacity(left.len() * right.len());
                for l in &left {
                    for r in &right {
                        monomials.push(Monomial {
                            coeff: l.coeff * r.coeff,
                            exponents: l
                                .exponents
                                .iter()
                                .zip(&r.exponents)
                                .map(|(x, y)| x + y)
                                .collect(),
                        });
                    }
                }
                Ok(monomials)
            }
            Expr::Div(a, b) => {
                let numerator = self.expand(a)?;
                let denominator = self.expand(b)?;
                let [d] = denominator.as_slice() else {
                    return Err(self.not_qp("division by a sum of monomials"));
                };
                if d.coeff == 0.0 {
                    return Err(self.not_qp("division by zero"));
                }
                Ok(numerator
                    .into_iter()
                    .map(|m| Monomial {
                        coeff: m.coeff / d.coeff,
                        exponents: m
                            .exponents
                            .iter()
                            .zip(&d.exponents)
                            .map(|(x, y)| x - y)
                            .collect(),
                    })
                    .collect())
            }
            Expr::Pow(base, exponent) => {
                let Some(power) = fold_constant(exponent) else {
                    return Err(self.not_qp("exponent must fold to a real constant"));
                };
                if !power.is_finite() {
                    return Err(self.not_qp("exponent is not finite"));
                }
                let expanded = self.expand(base)?;
                let [m] = expanded.as_slice() else {
                    return Err(self.not_qp("power of a sum of monomials"));
                };
                let coeff = if m.coeff == 1.0 {
                    1.0
                } else {
                    m.coeff.powf(power)
                };
                if !coeff.is_finite() {
                    return Err(self.not_qp(format!(
                        "coefficient {}^{power} is not a finite real",
                        m.coeff
                    )));
                }
                Ok(vec![Monomial {
                    coeff,
                    exponents: m.exponents.iter().map(|e| e * power).collect(),
                }])
            }
        }
    }
}

// ── Assembly into a QpSystem ───────────────────────────────────────────

/// Parses the text format (or, after a leading `{`, the JSON interchange
/// format) into a validated [`QpSystem`].
///
/// Variables map to state components in order of their equations; the `j`-th
/// row of the exponent matrix holds the `j`-th distinct quasi-monomial after
/// factoring out each equation's own variable.
pub fn parse_system(text: &str) -> Result<QpSystem, ParseError> {
    if text.trim_start().starts_with('{') {
        return Ok(QpSystem::from_json(text)?);
    }
    let source = parse_source(text)?;
    if source.equations.is_empty() {
        return Err(syntax_error(1, 1, "no equations found"));
    }

    let variables: BTreeMap<String, usize> = source
        .equations
        .iter()
        .enumerate()
        .map(|(i, (name, _))| (name.clone(), i))
        .collect();
    let n = source.equations.len();

    // Shared monomial rows and, per row, one coefficient per equation.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut coeffs: Vec<Vec<f64>> = Vec::new();
    for (i, (name, rhs)) in source.equations.iter().enumerate() {
        let expansion = Expansion {
            variables: &variables,
            equation: name,
        };
        for monomial in expansion.expand(rhs)? {
            let mut exponents = monomial.exponents;
            // The rhs is x_i times the stored monomial.
            exponents[i] -= 1.0;
            let row = rows.iter().position(|r| {
                r.iter()
                    .zip(&exponents)
                    .all(|(a, b)| (a - b).abs() <= EXPONENT_MERGE_TOL)
            });
            match row {
                Some(j) => coeffs[j][i] += monomial.coeff,
                None => {
                    rows.push(exponents);
                    let mut column = vec![0.0; n];
                    column[i] = monomial.coeff;
                    coeffs.push(column);
                }
            }
        }
    }

    // Drop monomials whose coefficients cancelled away in every equation.
    for column in &mut coeffs {
        for c in column.iter_mut() {
            if c.abs() <= CANCEL_TOL {
                *c = 0.0;
            }
        }
    }
    let mut kept: Vec<(Vec<f64>, Vec<f64>)> = rows
        .into_iter()
        .zip(coeffs)
        .filter(|(_, column)| column.iter().any(|&c| c != 0.0))
        .collect();
    if kept.is_empty() {
        // All right-hand sides are zero; keep the constant monomial so the
        // matrices stay well-formed.
        kept.push((vec![0.0; n], vec![0.0; n]));
    }
    kept.sort_by(|(ra, _), (rb, _)| {
        ra.partial_cmp(rb).expect("exponents are finite")
    });

    let num_monomials = kept.len();
    let exponents = DMatrix::from_fn(num_monomials, n, |j, k| kept[j].0[k]);
    let coefficients = DMatrix::from_fn(n, num_monomials, |i, j| kept[j].1[i]);

    let mut x0 = DVector::zeros(n);
    for (name, &i) in &variables {
        let Some(&value) = source.initials.get(name) else {
            return Err(ParseError::MissingInitialCondition(name.clone()));
        };
        if !value.is_finite() || value <= 0.0 {
            return Err(ParseError::NonPositiveInitial {
                name: name.clone(),
                value,
            });
        }
        x0[i] = value;
    }
    for name in source.initials.keys() {
        if !variables.contains_key(name) {
            return Err(ParseError::UndeclaredVariable {
                name: name.clone(),
                equation: format!("{name}(0)"),
            });
        }
    }

    Ok(QpSystem::new(coefficients, exponents, x0)?)
}

/// Shortest lossless rendering of a double (Rust's `Display` round-trips).
fn format_number(v: f64) -> String {
    format!("{v}")
}

/// Emits the canonical text form with generated variable names `x1..xn`.
/// Parsing the output yields a system whose right-hand side agrees with the
/// input at every positive state.
pub fn serialize_system(sys: &QpSystem) -> String {
    let n = sys.dim();
    let a = sys.coefficient_matrix();
    let b = sys.exponent_matrix();
    let mut out = String::new();
    for i in 0..n {
        out.push_str(&format!("x{}' = ", i + 1));
        let mut first = true;
        for j in 0..sys.monomial_count() {
            let coeff = a[(i, j)];
            if coeff == 0.0 {
                continue;
            }
            if first {
                if coeff < 0.0 {
                    out.push('-');
                }
                first = false;
            } else {
                out.push_str(if coeff < 0.0 { " - " } else { " + " });
            }
            let mut factors = Vec::new();
            for k in 0..n {
                // Undo the factored-out x_i when rendering the full term.
                let e = b[(j, k)] + if k == i { 1.0 } else { 0.0 };
                if e == 0.0 {
                    continue;
                }
                if e == 1.0 {
                    factors.push(format!("x{}", k + 1));
                } else {
                    factors.push(format!("x{}^{}", k + 1, format_number(e)));
                }
            }
            let magnitude = coeff.abs();
            if factors.is_empty() {
                out.push_str(&format_number(magnitude));
            } else {
                if magnitude != 1.0 {
                    out.push_str(&format_number(magnitude));
                    out.push('*');
                }
                out.push_str(&factors.join("*"));
            }
        }
        if first {
            out.push('0');
        }
        out.push('\n');
    }
    for i in 0..n {
        out.push_str(&format!(
            "x{}(0) = {}\n",
            i + 1,
            format_number(sys.initial_state()[i])
        ));
    }
    out
}

/// Evaluates the right-hand sides of a source text directly on the parsed
/// expression tree, without the quasi-monomial factoring. Serves as an
/// independent semantic reference for [`parse_system`].
pub fn evaluate_rhs_text(text: &str, x: &[f64]) -> Result<Vec<f64>, ParseError> {
    let source = parse_source(text)?;
    if source.equations.len() != x.len() {
        return Err(syntax_error(
            1,
            1,
            format!(
                "state has length {}, system declares {} variables",
                x.len(),
                source.equations.len()
            ),
        ));
    }
    let variables: BTreeMap<&str, f64> = source
        .equations
        .iter()
        .zip(x)
        .map(|((name, _), &value)| (name.as_str(), value))
        .collect();

    fn eval(
        expr: &Expr,
        variables: &BTreeMap<&str, f64>,
        equation: &str,
    ) -> Result<f64, ParseError> {
        Ok(match expr {
            Expr::Num(v) => *v,
            Expr::Var(name) => *variables.get(name.as_str()).ok_or_else(|| {
                ParseError::UndeclaredVariable {
                    name: name.clone(),
                    equation: equation.to_string(),
                }
            })?,
            Expr::Neg(e) => -eval(e, variables, equation)?,
            Expr::Add(a, b) => eval(a, variables, equation)? + eval(b, variables, equation)?,
            Expr::Sub(a, b) => eval(a, variables, equation)? - eval(b, variables, equation)?,
            Expr::Mul(a, b) => eval(a, variables, equation)? * eval(b, variables, equation)?,
            Expr::Div(a, b) => eval(a, variables, equation)? / eval(b, variables, equation)?,
            Expr::Pow(a, b) => {
                eval(a, variables, equation)?.powf(eval(b, variables, equation)?)
            }
        })
    }

    source
        .equations
        .iter()
        .map(|(name, rhs)| eval(rhs, &variables, name))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_dev(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale == 0.0 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    }

    /// rhs of the compiled system vs direct expression evaluation.
    fn assert_semantics_match(text: &str, states: &[Vec<f64>]) {
        let sys = parse_system(text).unwrap();
        for state in states {
            let x = DVector::from_vec(state.clone());
            let compiled = sys.rhs(&x).unwrap();
            let direct = evaluate_rhs_text(text, state).unwrap();
            for i in 0..state.len() {
                assert!(
                    rel_dev(compiled[i], direct[i]) < 1e-12,
                    "component {i} at {state:?}: {} vs {}",
                    compiled[i],
                    direct[i]
                );
            }
        }
    }

    #[test]
    fn logistic_factors_into_two_monomials() {
        let sys = parse_system("x' = x*(2 - x); x(0)=0.5").unwrap();
        assert_eq!(
            *sys.coefficient_matrix(),
            DMatrix::from_row_slice(1, 2, &[2.0, -1.0])
        );
        assert_eq!(
            *sys.exponent_matrix(),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0])
        );
        assert_eq!(sys.initial_state().as_slice(), &[0.5]);
    }

    #[test]
    fn linear_term_is_the_zero_exponent_monomial() {
        let sys = parse_system("x' = 3*x; x(0)=1").unwrap();
        assert_eq!(*sys.coefficient_matrix(), DMatrix::from_row_slice(1, 1, &[3.0]));
        assert_eq!(*sys.exponent_matrix(), DMatrix::from_row_slice(1, 1, &[0.0]));
    }

    #[test]
    fn fractional_exponents_and_shared_rows() {
        let text = "u' = u*v^0.5 - 2*u; v' = v*u; u(0)=1; v(0)=4";
        let sys = parse_system(text).unwrap();
        assert_eq!(sys.dim(), 2);
        // Monomials after factoring: the constant (from -2u), v^0.5, and u.
        assert_eq!(sys.monomial_count(), 3);
        assert_semantics_match(
            text,
            &[
                vec![1.0, 4.0],
                vec![0.25, 0.5],
                vec![2.0, 1.5],
                vec![0.1, 9.0],
            ],
        );
    }

    #[test]
    fn division_gives_negative_exponents() {
        let text = "x' = x/y; y' = y*x\nx(0)=1\ny(0)=2";
        let sys = parse_system(text).unwrap();
        assert!(sys
            .exponent_matrix()
            .row_iter()
            .any(|row| row.iter().any(|&e| e < 0.0)));
        assert_semantics_match(text, &[vec![1.0, 2.0], vec![0.3, 0.7], vec![5.0, 0.2]]);
    }

    #[test]
    fn exponent_rows_merge_within_tolerance() {
        let sys =
            parse_system("x' = x*y^0.5 + x*y^0.5000000000001; y' = y; x(0)=1; y(0)=1").unwrap();
        // Both x-terms land on one row; y contributes the constant row.
        assert_eq!(sys.monomial_count(), 2);
    }

    #[test]
    fn exact_cancellation_drops_the_monomial() {
        let sys = parse_system("x' = x*y - x*y + x; y' = y; x(0)=1; y(0)=1").unwrap();
        assert_eq!(sys.monomial_count(), 1);
        assert_eq!(*sys.exponent_matrix(), DMatrix::from_row_slice(1, 2, &[0.0, 0.0]));
    }

    #[test]
    fn rows_are_sorted_lexicographically() {
        let sys = parse_system("x' = x*y + x + x*y^2; y' = y; x(0)=1; y(0)=1").unwrap();
        let b = sys.exponent_matrix();
        for j in 1..sys.monomial_count() {
            let prev: Vec<f64> = b.row(j - 1).iter().copied().collect();
            let here: Vec<f64> = b.row(j).iter().copied().collect();
            assert!(prev < here, "rows {j} out of order");
        }
    }

    #[test]
    fn zero_rhs_round_trips() {
        let sys = parse_system("x' = 0; x(0)=1").unwrap();
        assert_eq!(*sys.coefficient_matrix(), DMatrix::from_row_slice(1, 1, &[0.0]));
        let text = serialize_system(&sys);
        assert!(text.starts_with("x1' = 0"));
        let back = parse_system(&text).unwrap();
        assert_eq!(back, sys);
    }

    #[test]
    fn serialize_round_trips_semantically() {
        let original = "x' = x*(2 - x); x(0)=0.5";
        let sys = parse_system(original).unwrap();
        let text = serialize_system(&sys);
        let back = parse_system(&text).unwrap();
        for state in [[0.5], [0.125], [3.0]] {
            let x = DVector::from_vec(state.to_vec());
            let lhs = sys.rhs(&x).unwrap();
            let rhs = back.rhs(&x).unwrap();
            assert!(rel_dev(lhs[0], rhs[0]) < 1e-12);
        }
    }

    #[test]
    fn serialize_round_trips_predator_prey() {
        let text = "x' = x*(1 - y)\ny' = y*(x - 1)\nx(0)=0.5\ny(0)=0.5";
        let sys = parse_system(text).unwrap();
        let back = parse_system(&serialize_system(&sys)).unwrap();
        assert_eq!(back, sys);
        assert_semantics_match(text, &[vec![0.5, 0.5], vec![2.0, 0.1]]);
    }

    #[test]
    fn transcendental_functions_are_rejected() {
        let err = parse_system("x' = sin(x); x(0)=1").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }));
        assert!(err.to_string().contains("not quasi-polynomial"));
    }

    #[test]
    fn division_by_sum_is_rejected() {
        let err = parse_system("x' = x/(1 + x); x(0)=1").unwrap_err();
        assert!(matches!(err, ParseError::NotQuasiPolynomial { .. }));
    }

    #[test]
    fn variable_exponent_is_rejected() {
        let err = parse_system("x' = x^x; x(0)=1").unwrap_err();
        assert!(matches!(err, ParseError::NotQuasiPolynomial { .. }));
    }

    #[test]
    fn constant_exponent_expressions_fold() {
        let text = "x' = x^(1/2); x(0)=4";
        let sys = parse_system(text).unwrap();
        assert_eq!(*sys.exponent_matrix(), DMatrix::from_row_slice(1, 1, &[-0.5]));
        assert_semantics_match(text, &[vec![4.0], vec![0.25]]);
    }

    #[test]
    fn undeclared_variable_is_reported() {
        let err = parse_system("x' = x*z; x(0)=1").unwrap_err();
        assert!(matches!(err, ParseError::UndeclaredVariable { .. }));
    }

    #[test]
    fn non_positive_initial_is_rejected() {
        let err = parse_system("x' = x; x(0)=0").unwrap_err();
        assert!(matches!(
            err,
            ParseError::NonPositiveInitial { value, .. } if value == 0.0
        ));
    }

    #[test]
    fn missing_initial_is_rejected() {
        let err = parse_system("x' = x").unwrap_err();
        assert!(matches!(err, ParseError::MissingInitialCondition(_)));
    }

    #[test]
    fn duplicate_equation_is_rejected() {
        let err = parse_system("x' = x; x' = 2*x; x(0)=1").unwrap_err();
        assert!(matches!(err, ParseError::Duplicate { what: "equation", .. }));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_system("x' = x +\nx(0)=1").unwrap_err();
        let ParseError::Syntax { line, .. } = err else {
            panic!("expected syntax error, got {err:?}");
        };
        assert_eq!(line, 1);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# the logistic equation\n\nx' = x*(2 - x)  # rhs\nx(0) = 0.5\n";
        assert!(parse_system(text).is_ok());
    }

    #[test]
    fn json_input_is_detected() {
        let sys = parse_system("x' = x*(2 - x); x(0)=0.5").unwrap();
        let parsed = parse_system(&sys.to_json()).unwrap();
        assert_eq!(parsed, sys);
    }
}
