//! A small arithmetic-expression grammar for vector fields and switching
//! functions: variables X1..X3, named parameters, `+ - * / ^`, unary minus,
//! and the functions sin, cos, exp, log, sqrt.
//!
//! Precedence is `^` over unary minus over `* /` over `+ -`; all operators
//! are left-associative except `^`, which is right-associative.

use crate::error::{Error, Result};
use nalgebra::Vector3;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuncKind {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl FuncKind {
    fn name(&self) -> &'static str {
        match self {
            FuncKind::Sin => "sin",
            FuncKind::Cos => "cos",
            FuncKind::Exp => "exp",
            FuncKind::Log => "log",
            FuncKind::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<FuncKind> {
        Some(match s {
            "sin" => FuncKind::Sin,
            "cos" => FuncKind::Cos,
            "exp" => FuncKind::Exp,
            "log" => FuncKind::Log,
            "sqrt" => FuncKind::Sqrt,
            _ => return None,
        })
    }
}

/// Parsed expression tree. Identifiers keep their source position so that
/// binding errors can point at them.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprAst {
    Const(f64),
    Ident(String, usize),
    Neg(Box<ExprAst>),
    Bin(BinOp, Box<ExprAst>, Box<ExprAst>),
    Func(FuncKind, Box<ExprAst>),
}

fn precedence(e: &ExprAst) -> u8 {
    match e {
        ExprAst::Bin(BinOp::Add | BinOp::Sub, _, _) => 1,
        ExprAst::Bin(BinOp::Mul | BinOp::Div, _, _) => 2,
        ExprAst::Neg(_) => 3,
        ExprAst::Bin(BinOp::Pow, _, _) => 4,
        _ => 5,
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrap(f: &mut fmt::Formatter<'_>, e: &ExprAst, need: bool) -> fmt::Result {
            if need {
                write!(f, "(")?;
                write!(f, "{e}")?;
                write!(f, ")")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            ExprAst::Const(c) => {
                if *c < 0.0 || c.is_nan() {
                    // negative literals only arise programmatically; print
                    // them parenthesised so reparsing yields Neg(Const)
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            ExprAst::Ident(s, _) => write!(f, "{s}"),
            ExprAst::Neg(a) => {
                write!(f, "-")?;
                wrap(f, a, precedence(a) < 3)
            }
            ExprAst::Bin(op, a, b) => {
                let p = precedence(self);
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                if *op == BinOp::Pow {
                    // right-associative
                    wrap(f, a, precedence(a) <= p)?;
                    write!(f, "{sym}")?;
                    wrap(f, b, precedence(b) < p)
                } else {
                    wrap(f, a, precedence(a) < p)?;
                    write!(f, "{sym}")?;
                    wrap(f, b, precedence(b) <= p)
                }
            }
            ExprAst::Func(k, a) => write!(f, "{}({a})", k.name()),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(u8),
    LParen,
    RParen,
    End,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(Tok, usize)> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::End, start));
        }
        let c = self.src[self.pos];
        match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                self.pos += 1;
                Ok((Tok::Op(c), start))
            }
            b'(' => {
                self.pos += 1;
                Ok((Tok::LParen, start))
            }
            b')' => {
                self.pos += 1;
                Ok((Tok::RParen, start))
            }
            b'0'..=b'9' | b'.' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_digit() || self.src[end] == b'.')
                {
                    end += 1;
                }
                // exponent part
                if end < self.src.len() && (self.src[end] | 0x20) == b'e' {
                    let mut e = end + 1;
                    if e < self.src.len() && (self.src[e] == b'+' || self.src[e] == b'-') {
                        e += 1;
                    }
                    if e < self.src.len() && self.src[e].is_ascii_digit() {
                        while e < self.src.len() && self.src[e].is_ascii_digit() {
                            e += 1;
                        }
                        end = e;
                    }
                }
                let text = std::str::from_utf8(&self.src[self.pos..end]).unwrap();
                let v: f64 = text.parse().map_err(|_| Error::SyntaxError {
                    position: start,
                    expected: "a number".into(),
                })?;
                self.pos = end;
                Ok((Tok::Num(v), start))
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
                {
                    end += 1;
                }
                let text = std::str::from_utf8(&self.src[self.pos..end]).unwrap().to_string();
                self.pos = end;
                Ok((Tok::Ident(text), start))
            }
            _ => Err(Error::SyntaxError {
                position: start,
                expected: "a number, identifier, operator, or parenthesis".into(),
            }),
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    tok_pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self> {
        let mut lexer = Lexer::new(src);
        let (tok, tok_pos) = lexer.next()?;
        Ok(Parser { lexer, tok, tok_pos })
    }

    fn advance(&mut self) -> Result<()> {
        let (tok, pos) = self.lexer.next()?;
        self.tok = tok;
        self.tok_pos = pos;
        Ok(())
    }

    fn expr(&mut self) -> Result<ExprAst> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Op(b'+') => BinOp::Add,
                Tok::Op(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.term()?;
            lhs = ExprAst::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<ExprAst> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.tok {
                Tok::Op(b'*') => BinOp::Mul,
                Tok::Op(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.factor()?;
            lhs = ExprAst::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<ExprAst> {
        if matches!(self.tok, Tok::Op(b'-')) {
            self.advance()?;
            let inner = self.factor()?;
            return Ok(ExprAst::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprAst> {
        let base = self.atom()?;
        if matches!(self.tok, Tok::Op(b'^')) {
            self.advance()?;
            let exp = self.factor()?; // right-associative, allows a^-b
            return Ok(ExprAst::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<ExprAst> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(ExprAst::Const(v))
            }
            Tok::Ident(name) => {
                let pos = self.tok_pos;
                self.advance()?;
                if let Some(k) = FuncKind::from_name(&name) {
                    if !matches!(self.tok, Tok::LParen) {
                        return Err(Error::SyntaxError {
                            position: self.tok_pos,
                            expected: format!("'(' after function `{name}`"),
                        });
                    }
                    self.advance()?;
                    let arg = self.expr()?;
                    if !matches!(self.tok, Tok::RParen) {
                        return Err(Error::SyntaxError {
                            position: self.tok_pos,
                            expected: "')'".into(),
                        });
                    }
                    self.advance()?;
                    return Ok(ExprAst::Func(k, Box::new(arg)));
                }
                Ok(ExprAst::Ident(name, pos))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                if !matches!(self.tok, Tok::RParen) {
                    return Err(Error::SyntaxError {
                        position: self.tok_pos,
                        expected: "')'".into(),
                    });
                }
                self.advance()?;
                Ok(inner)
            }
            Tok::RParen | Tok::Op(_) | Tok::End => Err(Error::SyntaxError {
                position: self.tok_pos,
                expected: "a number, identifier, or '('".into(),
            }),
        }
    }
}

/// Parse an expression string into a tree.
pub fn parse_expression(src: &str) -> Result<ExprAst> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    if !matches!(p.tok, Tok::End) {
        return Err(Error::SyntaxError {
            position: p.tok_pos,
            expected: "end of expression or an operator".into(),
        });
    }
    Ok(e)
}

/// An expression with identifiers resolved to state/parameter slots.
#[derive(Debug, Clone)]
pub enum BoundExpr {
    Const(f64),
    Var(usize),
    Param(usize),
    Neg(Box<BoundExpr>),
    Bin(BinOp, Box<BoundExpr>, Box<BoundExpr>),
    Func(FuncKind, Box<BoundExpr>),
}

/// Resolve identifiers against variable names (X1..X3) and parameter names.
pub fn bind(ast: &ExprAst, vars: &[&str], params: &[String]) -> Result<BoundExpr> {
    Ok(match ast {
        ExprAst::Const(c) => BoundExpr::Const(*c),
        ExprAst::Ident(name, pos) => {
            if let Some(i) = vars.iter().position(|v| v == name) {
                BoundExpr::Var(i)
            } else if let Some(i) = params.iter().position(|p| p == name) {
                BoundExpr::Param(i)
            } else {
                return Err(Error::UnknownIdentifier {
                    name: name.clone(),
                    position: *pos,
                });
            }
        }
        ExprAst::Neg(a) => BoundExpr::Neg(Box::new(bind(a, vars, params)?)),
        ExprAst::Bin(op, a, b) => BoundExpr::Bin(
            *op,
            Box::new(bind(a, vars, params)?),
            Box::new(bind(b, vars, params)?),
        ),
        ExprAst::Func(k, a) => BoundExpr::Func(*k, Box::new(bind(a, vars, params)?)),
    })
}

impl BoundExpr {
    /// Evaluate with the given state and parameter values.
    ///
    /// Division by magnitudes below 1e-300 and invalid log/sqrt arguments
    /// raise; everything else is total.
    pub fn eval(&self, x: &Vector3<f64>, params: &[f64]) -> Result<f64> {
        Ok(match self {
            BoundExpr::Const(c) => *c,
            BoundExpr::Var(i) => x[*i],
            BoundExpr::Param(i) => params[*i],
            BoundExpr::Neg(a) => -a.eval(x, params)?,
            BoundExpr::Bin(op, a, b) => {
                let va = a.eval(x, params)?;
                let vb = b.eval(x, params)?;
                match op {
                    BinOp::Add => va + vb,
                    BinOp::Sub => va - vb,
                    BinOp::Mul => va * vb,
                    BinOp::Div => {
                        if vb.abs() < 1e-300 {
                            return Err(Error::EvaluationFailure(
                                "division by a value below 1e-300".into(),
                            ));
                        }
                        va / vb
                    }
                    BinOp::Pow => va.powf(vb),
                }
            }
            BoundExpr::Func(k, a) => {
                let v = a.eval(x, params)?;
                match k {
                    FuncKind::Sin => v.sin(),
                    FuncKind::Cos => v.cos(),
                    FuncKind::Exp => v.exp(),
                    FuncKind::Log => {
                        if v <= 0.0 {
                            return Err(Error::EvaluationFailure(format!(
                                "log of non-positive value {v}"
                            )));
                        }
                        v.ln()
                    }
                    FuncKind::Sqrt => {
                        if v < 0.0 {
                            return Err(Error::EvaluationFailure(format!(
                                "sqrt of negative value {v}"
                            )));
                        }
                        v.sqrt()
                    }
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn variable_parses_to_ident() {
        assert_eq!(parse_expression("X2").unwrap(), ExprAst::Ident("X2".into(), 0));
    }

    #[test]
    fn hollings_response_evaluates() {
        let ast = parse_expression("a1*X1/(1 + b1*X1)").unwrap();
        let bound = bind(&ast, &["X1", "X2", "X3"], &["a1".into(), "b1".into()]).unwrap();
        let v = bound
            .eval(&Vector3::new(1.0, 0.0, 0.0), &[5.0, 3.0])
            .unwrap();
        assert!((v - 1.25).abs() < 1e-15);
    }

    #[test]
    fn unbound_identifier_is_reported_with_position() {
        let ast = parse_expression("X1*(1-X1) - f").unwrap();
        let e = bind(&ast, &["X1", "X2", "X3"], &[]).unwrap_err();
        match e {
            Error::UnknownIdentifier { name, position } => {
                assert_eq!(name, "f");
                assert_eq!(position, 12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn precedence_and_associativity() {
        let ast = parse_expression("2^3^2").unwrap();
        let bound = bind(&ast, &[], &[]).unwrap();
        assert_eq!(bound.eval(&Vector3::zeros(), &[]).unwrap(), 512.0);
        let ast = parse_expression("-2^2").unwrap();
        let bound = bind(&ast, &[], &[]).unwrap();
        assert_eq!(bound.eval(&Vector3::zeros(), &[]).unwrap(), -4.0);
        let ast = parse_expression("1 - 2 - 3").unwrap();
        let bound = bind(&ast, &[], &[]).unwrap();
        assert_eq!(bound.eval(&Vector3::zeros(), &[]).unwrap(), -4.0);
    }

    #[test]
    fn syntax_error_carries_position() {
        match parse_expression("1 + * 2").unwrap_err() {
            Error::SyntaxError { position, .. } => assert_eq!(position, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn division_by_tiny_raises() {
        let ast = parse_expression("1/(X1 - X1)").unwrap();
        let bound = bind(&ast, &["X1", "X2", "X3"], &[]).unwrap();
        let e = bound.eval(&Vector3::new(0.5, 0.0, 0.0), &[]).unwrap_err();
        assert_eq!(e.kind(), "EvaluationFailure");
    }

    fn arb_expr() -> impl Strategy<Value = ExprAst> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(ExprAst::Const),
            prop_oneof![Just("X1"), Just("X2"), Just("X3"), Just("mu"), Just("k2")]
                .prop_map(|s| ExprAst::Ident(s.to_string(), 0)),
        ];
        leaf.prop_recursive(5, 64, 8, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), prop_oneof![
                    Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul),
                    Just(BinOp::Div), Just(BinOp::Pow)
                ]).prop_map(|(a, b, op)| ExprAst::Bin(op, Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| ExprAst::Neg(Box::new(a))),
                (inner, prop_oneof![
                    Just(FuncKind::Sin), Just(FuncKind::Cos), Just(FuncKind::Exp),
                    Just(FuncKind::Log), Just(FuncKind::Sqrt)
                ]).prop_map(|(a, k)| ExprAst::Func(k, Box::new(a))),
            ]
        })
    }

    fn strip_positions(e: &ExprAst) -> ExprAst {
        match e {
            ExprAst::Ident(s, _) => ExprAst::Ident(s.clone(), 0),
            ExprAst::Const(c) => ExprAst::Const(*c),
            ExprAst::Neg(a) => ExprAst::Neg(Box::new(strip_positions(a))),
            ExprAst::Bin(op, a, b) => ExprAst::Bin(
                *op,
                Box::new(strip_positions(a)),
                Box::new(strip_positions(b)),
            ),
            ExprAst::Func(k, a) => ExprAst::Func(*k, Box::new(strip_positions(a))),
        }
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = parse_expression(&printed).unwrap();
            prop_assert_eq!(strip_positions(&reparsed), strip_positions(&e));
        }
    }
}
