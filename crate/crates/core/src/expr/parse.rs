use thiserror::Error;

use super::{BinaryOp, Expr, UnaryOp, VarSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at offset {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Tok::Plus, start)),
            b'-' => out.push((Tok::Minus, start)),
            b'*' => out.push((Tok::Star, start)),
            b'/' => out.push((Tok::Slash, start)),
            b'^' => out.push((Tok::Caret, start)),
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // Exponent only when followed by digits, so `2e` is not eaten.
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{lit}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a VarSet,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.pos + ahead).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.offset(),
            message: format!("expected {wanted}, found {}", self.peek().describe()),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() != Tok::Minus {
            return self.power();
        }
        self.bump();
        // `-<literal>` is a negative constant unless the literal is a power base.
        if let (Tok::Num(v), next) = (self.peek().clone(), self.peek_at(1)) {
            if *next != Tok::Caret {
                self.bump();
                return Ok(Expr::Const(-v));
            }
        }
        Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?)))
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let at = self.offset();
        match self.bump() {
            Tok::Num(v) if v >= 0.0 && v == v.trunc() && v <= u32::MAX as f64 => {
                Ok(Expr::Pow(Box::new(base), v as u32))
            }
            _ => Err(ParseError::Syntax {
                offset: at,
                message: "exponent must be a non-negative integer literal".into(),
            }),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    let op =
                        UnaryOp::from_function_name(&name).ok_or(ParseError::UnknownFunction {
                            name: name.clone(),
                            offset: at,
                        })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::Unary(op, Box::new(arg)));
                }
                match self.vars.index_of(&name) {
                    Some(i) => Ok(Expr::Var(self.vars.var(i))),
                    None if UnaryOp::from_function_name(&name).is_some() => {
                        Err(self.unexpected("`(` after function name"))
                    }
                    None => Err(ParseError::UnknownVariable { name, offset: at }),
                }
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            _ => Err(self.unexpected("a number, variable, function or `(`")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected("`)`"))
        }
    }
}

/// Parse `text` into an expression whose variables all come from `vars`.
///
/// Precedence, tightest first: `^`, unary minus, `* /`, `+ -`. Binary
/// operators associate to the left.
pub fn parse(text: &str, vars: &VarSet) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0, vars };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vs() -> VarSet {
        VarSet::new(["t", "x1", "x2", "u1"])
    }

    #[test]
    fn root_of_quadratic_cost_is_subtraction() {
        let e = parse("u1*x2 - 0.5*u1^2", &vs()).unwrap();
        assert!(matches!(e, Expr::Binary(BinaryOp::Sub, ..)));
    }

    #[test]
    fn sin_plus_state() {
        let e = parse("sin(t) + x1", &VarSet::new(["t", "x1"])).unwrap();
        assert_eq!(e.eval(&[0.0, 2.0]).unwrap(), 2.0);
    }

    #[test]
    fn malformed_reports_offset() {
        let err = parse("x1 +* u1", &vs()).unwrap_err();
        assert!(
            matches!(err, ParseError::Syntax { offset: 4, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn unknown_names() {
        assert_eq!(
            parse("x1 + u3", &vs()).unwrap_err(),
            ParseError::UnknownVariable {
                name: "u3".into(),
                offset: 5
            }
        );
        assert!(matches!(
            parse("log(x1)", &vs()).unwrap_err(),
            ParseError::UnknownFunction { offset: 0, .. }
        ));
    }

    #[test]
    fn power_binds_tighter_than_negation() {
        let e = parse("-x1^2", &vs()).unwrap();
        assert_eq!(e.eval(&[0.0, 3.0, 0.0, 0.0]).unwrap(), -9.0);
        let e = parse("-2^2", &vs()).unwrap();
        assert_eq!(e.eval(&[]).unwrap(), -4.0);
    }

    #[test]
    fn negation_binds_tighter_than_product() {
        let e = parse("-x1*x2", &vs()).unwrap();
        match e {
            Expr::Binary(BinaryOp::Mul, l, _) => {
                assert!(matches!(*l, Expr::Unary(UnaryOp::Neg, _)))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_exponents_and_trailing_input() {
        assert!(parse("x1^-1", &vs()).is_err());
        assert!(parse("x1^1.5", &vs()).is_err());
        assert!(parse("x1^x2", &vs()).is_err());
        assert!(parse("x1 x2", &vs()).is_err());
        assert!(parse("(x1", &vs()).is_err());
        assert!(parse("sin x1", &vs()).is_err());
        assert_eq!(parse("   ", &vs()).unwrap_err(), ParseError::Empty);
    }

    #[test]
    fn scientific_literals() {
        let e = parse("1.5e-3 * 2E2", &vs()).unwrap();
        assert!((e.eval(&[]).unwrap() - 0.3).abs() < 1e-15);
    }
}
