//! Scalar expression trees for metric components.
//!
//! The grammar is plain infix arithmetic: `+ - * /`, `^` for powers
//! (right-associative), unary minus, parentheses, function-call syntax for
//! `sin cos sinh cosh exp ln`, and coordinates referenced by their declared
//! names. There is no implicit multiplication, so the grammar parses LL(1)
//! by recursive descent. `pi` is the one built-in constant.

use crate::dual::Scalar;
use crate::error::{GeomError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum ExprNode {
    Const(f64),
    /// Index into the chart's coordinate list.
    Coord(usize),
    Add(Box<ExprNode>, Box<ExprNode>),
    Mul(Box<ExprNode>, Box<ExprNode>),
    Div(Box<ExprNode>, Box<ExprNode>),
    Pow(Box<ExprNode>, Box<ExprNode>),
    Neg(Box<ExprNode>),
    Sin(Box<ExprNode>),
    Cos(Box<ExprNode>),
    Sinh(Box<ExprNode>),
    Cosh(Box<ExprNode>),
    Exp(Box<ExprNode>),
    Ln(Box<ExprNode>),
}

impl ExprNode {
    pub fn constant(x: f64) -> Self {
        ExprNode::Const(x)
    }

    pub fn coord(i: usize) -> Self {
        ExprNode::Coord(i)
    }

    pub fn add(a: ExprNode, b: ExprNode) -> Self {
        ExprNode::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: ExprNode, b: ExprNode) -> Self {
        ExprNode::Add(Box::new(a), Box::new(ExprNode::Neg(Box::new(b))))
    }

    pub fn mul(a: ExprNode, b: ExprNode) -> Self {
        ExprNode::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: ExprNode, b: ExprNode) -> Self {
        ExprNode::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(a: ExprNode, b: ExprNode) -> Self {
        ExprNode::Pow(Box::new(a), Box::new(b))
    }

    pub fn neg(a: ExprNode) -> Self {
        ExprNode::Neg(Box::new(a))
    }

    pub fn sin(a: ExprNode) -> Self {
        ExprNode::Sin(Box::new(a))
    }

    pub fn sinh(a: ExprNode) -> Self {
        ExprNode::Sinh(Box::new(a))
    }

    /// Evaluate over any scalar type (plain f64 or dual numbers).
    pub fn eval<T: Scalar>(&self, coords: &[T]) -> T {
        match self {
            ExprNode::Const(c) => T::from_f64(*c),
            ExprNode::Coord(i) => coords[*i],
            ExprNode::Add(a, b) => a.eval(coords) + b.eval(coords),
            ExprNode::Mul(a, b) => a.eval(coords) * b.eval(coords),
            ExprNode::Div(a, b) => a.eval(coords) / b.eval(coords),
            ExprNode::Pow(a, b) => {
                let base = a.eval(coords);
                // Constant exponents keep negative bases differentiable;
                // anything else routes through exp(b ln a).
                match **b {
                    ExprNode::Const(p) => {
                        if p.fract() == 0.0 && p.abs() < 64.0 {
                            base.powi(p as i32)
                        } else {
                            base.powf_const(p)
                        }
                    }
                    ExprNode::Neg(ref inner) => {
                        if let ExprNode::Const(p) = **inner {
                            if p.fract() == 0.0 && p.abs() < 64.0 {
                                return base.powi(-(p as i32));
                            }
                            return base.powf_const(-p);
                        }
                        (b.eval(coords) * base.ln()).exp()
                    }
                    _ => (b.eval(coords) * base.ln()).exp(),
                }
            }
            ExprNode::Neg(a) => -a.eval(coords),
            ExprNode::Sin(a) => a.eval(coords).sin(),
            ExprNode::Cos(a) => a.eval(coords).cos(),
            ExprNode::Sinh(a) => a.eval(coords).sinh(),
            ExprNode::Cosh(a) => a.eval(coords).cosh(),
            ExprNode::Exp(a) => a.eval(coords).exp(),
            ExprNode::Ln(a) => a.eval(coords).ln(),
        }
    }

    /// Render in the input grammar. `parse(print(e))` reproduces `e`.
    pub fn print(&self, names: &[String]) -> String {
        self.print_prec(names, 0)
    }

    // Precedence levels: 0 add, 1 mul, 2 unary, 3 pow, 4 atom.
    fn print_prec(&self, names: &[String], prec: u8) -> String {
        let (s, my) = match self {
            ExprNode::Const(c) => (format!("{:?}", c), 4),
            ExprNode::Coord(i) => (names[*i].clone(), 4),
            ExprNode::Add(a, b) => {
                if let ExprNode::Neg(binner) = &**b {
                    (
                        format!(
                            "{} - {}",
                            a.print_prec(names, 0),
                            binner.print_prec(names, 1)
                        ),
                        0,
                    )
                } else {
                    (
                        format!("{} + {}", a.print_prec(names, 0), b.print_prec(names, 1)),
                        0,
                    )
                }
            }
            ExprNode::Mul(a, b) => (
                format!("{} * {}", a.print_prec(names, 1), b.print_prec(names, 2)),
                1,
            ),
            ExprNode::Div(a, b) => (
                format!("{} / {}", a.print_prec(names, 1), b.print_prec(names, 2)),
                1,
            ),
            ExprNode::Neg(a) => (format!("-{}", a.print_prec(names, 2)), 2),
            ExprNode::Pow(a, b) => (
                format!("{}^{}", a.print_prec(names, 4), b.print_prec(names, 2)),
                3,
            ),
            ExprNode::Sin(a) => (format!("sin({})", a.print_prec(names, 0)), 4),
            ExprNode::Cos(a) => (format!("cos({})", a.print_prec(names, 0)), 4),
            ExprNode::Sinh(a) => (format!("sinh({})", a.print_prec(names, 0)), 4),
            ExprNode::Cosh(a) => (format!("cosh({})", a.print_prec(names, 0)), 4),
            ExprNode::Exp(a) => (format!("exp({})", a.print_prec(names, 0)), 4),
            ExprNode::Ln(a) => (format!("ln({})", a.print_prec(names, 0)), 4),
        };
        if my < prec {
            format!("({})", s)
        } else {
            s
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
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
    Eof,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(Tok, usize)> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::Eof, start));
        }
        let c = self.src[self.pos] as char;
        let tok = match c {
            '+' => {
                self.pos += 1;
                Tok::Plus
            }
            '-' => {
                self.pos += 1;
                Tok::Minus
            }
            '*' => {
                self.pos += 1;
                Tok::Star
            }
            '/' => {
                self.pos += 1;
                Tok::Slash
            }
            '^' => {
                self.pos += 1;
                Tok::Caret
            }
            '(' => {
                self.pos += 1;
                Tok::LParen
            }
            ')' => {
                self.pos += 1;
                Tok::RParen
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let mut end = self.pos;
                let mut seen_e = false;
                while end < self.src.len() {
                    let ch = self.src[end] as char;
                    if ch.is_ascii_digit() || ch == '.' {
                        end += 1;
                    } else if (ch == 'e' || ch == 'E') && !seen_e {
                        seen_e = true;
                        end += 1;
                        if end < self.src.len() {
                            let s = self.src[end] as char;
                            if s == '+' || s == '-' {
                                end += 1;
                            }
                        }
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.src[self.pos..end]).unwrap();
                let v: f64 = text.parse().map_err(|_| lex_err(start, "bad number"))?;
                self.pos = end;
                Tok::Num(v)
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let mut end = self.pos;
                while end < self.src.len() {
                    let ch = self.src[end] as char;
                    if ch.is_ascii_alphanumeric() || ch == '_' {
                        end += 1;
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.src[self.pos..end]).unwrap();
                self.pos = end;
                Tok::Ident(text.to_string())
            }
            _ => return Err(lex_err(start, &format!("unexpected character `{}`", c))),
        };
        Ok((tok, start))
    }
}

fn lex_err(offset: usize, msg: &str) -> GeomError {
    GeomError::Parse {
        line: 1,
        col: offset + 1,
        offset,
        msg: msg.to_string(),
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    tok_at: usize,
    coords: &'a [String],
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, coords: &'a [String]) -> Result<Self> {
        let mut lexer = Lexer::new(src);
        let (tok, tok_at) = lexer.next()?;
        Ok(Parser {
            lexer,
            tok,
            tok_at,
            coords,
        })
    }

    fn advance(&mut self) -> Result<()> {
        let (tok, at) = self.lexer.next()?;
        self.tok = tok;
        self.tok_at = at;
        Ok(())
    }

    fn err(&self, msg: &str) -> GeomError {
        lex_err(self.tok_at, msg)
    }

    fn expr(&mut self) -> Result<ExprNode> {
        let mut lhs = self.term()?;
        loop {
            match self.tok {
                Tok::Plus => {
                    self.advance()?;
                    lhs = ExprNode::add(lhs, self.term()?);
                }
                Tok::Minus => {
                    self.advance()?;
                    lhs = ExprNode::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<ExprNode> {
        let mut lhs = self.factor()?;
        loop {
            match self.tok {
                Tok::Star => {
                    self.advance()?;
                    lhs = ExprNode::mul(lhs, self.factor()?);
                }
                Tok::Slash => {
                    self.advance()?;
                    lhs = ExprNode::div(lhs, self.factor()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<ExprNode> {
        if self.tok == Tok::Minus {
            self.advance()?;
            // Fold `-literal` into a constant so printing round-trips.
            return Ok(match self.factor()? {
                ExprNode::Const(c) => ExprNode::Const(-c),
                other => ExprNode::neg(other),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprNode> {
        let base = self.atom()?;
        if self.tok == Tok::Caret {
            self.advance()?;
            // Exponent binds a full factor so `x^-2` and `x^y^z` behave.
            let exponent = self.factor()?;
            return Ok(ExprNode::pow(base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<ExprNode> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(ExprNode::Const(v))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                if self.tok != Tok::RParen {
                    return Err(self.err("expected `)`"));
                }
                self.advance()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.advance()?;
                if self.tok == Tok::LParen {
                    let make: fn(ExprNode) -> ExprNode = match name.as_str() {
                        "sin" => |a| ExprNode::Sin(Box::new(a)),
                        "cos" => |a| ExprNode::Cos(Box::new(a)),
                        "sinh" => |a| ExprNode::Sinh(Box::new(a)),
                        "cosh" => |a| ExprNode::Cosh(Box::new(a)),
                        "exp" => |a| ExprNode::Exp(Box::new(a)),
                        "ln" => |a| ExprNode::Ln(Box::new(a)),
                        _ => return Err(self.err(&format!("unknown function `{}`", name))),
                    };
                    self.advance()?;
                    let arg = self.expr()?;
                    if self.tok != Tok::RParen {
                        return Err(self.err("expected `)`"));
                    }
                    self.advance()?;
                    Ok(make(arg))
                } else if name == "pi" {
                    Ok(ExprNode::Const(std::f64::consts::PI))
                } else if let Some(i) = self.coords.iter().position(|c| *c == name) {
                    Ok(ExprNode::Coord(i))
                } else {
                    Err(lex_err(
                        self.tok_at.saturating_sub(name.len()),
                        &format!("unknown coordinate name `{}`", name),
                    ))
                }
            }
            Tok::Eof => Err(self.err("unexpected end of expression")),
            _ => Err(self.err("expected a number, name, or `(`")),
        }
    }
}

/// Parse one expression against a declared coordinate list.
///
/// Error offsets are relative to `src`; callers embedding expressions in a
/// larger document shift them with [`shift_parse_error`].
pub fn parse_expr(src: &str, coords: &[String]) -> Result<ExprNode> {
    let mut p = Parser::new(src, coords)?;
    let e = p.expr()?;
    if p.tok != Tok::Eof {
        return Err(p.err("trailing input after expression"));
    }
    Ok(e)
}

/// Rebase a parse error produced on a slice of a larger document.
pub fn shift_parse_error(err: GeomError, line: usize, col_base: usize, offset_base: usize) -> GeomError {
    match err {
        GeomError::Parse {
            col, offset, msg, ..
        } => GeomError::Parse {
            line,
            col: col_base + col,
            offset: offset_base + offset,
            msg,
        },
        other => other,
    }
}
