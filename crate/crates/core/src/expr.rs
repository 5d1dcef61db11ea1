//! Tiny arithmetic expression evaluator for config-supplied functions.
//!
//! Used for custom cluster weights (`custom:<expr>`) and covariate-dependent
//! sensitivity functions. Supported variables: `n` (cluster size), `v1..vk`
//! (cluster-level covariates), `x1..xk` (own individual-level covariates).
//! Operators: `+ - * /`, unary minus, parentheses, `exp(...)`, `log(...)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
}

/// Variable bindings for expression evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Vars<'a> {
    pub n: f64,
    pub v: &'a [f64],
    pub x: &'a [f64],
}

impl Expr {
    pub fn parse(input: &str) -> Result<Expr> {
        let tokens = tokenize(input)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected trailing input in `{input}`"
            )));
        }
        Ok(e)
    }

    pub fn eval(&self, vars: &Vars) -> Result<f64> {
        Ok(match self {
            Expr::Num(c) => *c,
            Expr::Var(name) => lookup(name, vars)?,
            Expr::Neg(e) => -e.eval(vars)?,
            Expr::Add(a, b) => a.eval(vars)? + b.eval(vars)?,
            Expr::Sub(a, b) => a.eval(vars)? - b.eval(vars)?,
            Expr::Mul(a, b) => a.eval(vars)? * b.eval(vars)?,
            Expr::Div(a, b) => a.eval(vars)? / b.eval(vars)?,
            Expr::Exp(e) => e.eval(vars)?.exp(),
            Expr::Log(e) => e.eval(vars)?.ln(),
        })
    }
}

fn lookup(name: &str, vars: &Vars) -> Result<f64> {
    if name == "n" {
        return Ok(vars.n);
    }
    let slot = |prefix: char, pool: &[f64]| -> Result<f64> {
        let idx: usize = name[1..]
            .parse()
            .map_err(|_| Error::Expr(format!("unknown variable `{name}`")))?;
        if idx == 0 || idx > pool.len() {
            return Err(Error::Expr(format!(
                "variable `{name}` out of range ({prefix} has {} slots)",
                pool.len()
            )));
        }
        Ok(pool[idx - 1])
    };
    match name.chars().next() {
        Some('v') => slot('v', vars.v),
        Some('x') => slot('x', vars.x),
        _ => Err(Error::Expr(format!("unknown variable `{name}`"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(input: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let mut chars = input.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ' ' | '\t' => {
                chars.next();
            }
            '+' => {
                chars.next();
                out.push(Tok::Plus);
            }
            '-' => {
                chars.next();
                out.push(Tok::Minus);
            }
            '*' => {
                chars.next();
                out.push(Tok::Star);
            }
            '/' => {
                chars.next();
                out.push(Tok::Slash);
            }
            '(' => {
                chars.next();
                out.push(Tok::LParen);
            }
            ')' => {
                chars.next();
                out.push(Tok::RParen);
            }
            '0'..='9' | '.' => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' {
                        s.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::Expr(format!("bad number `{s}`")))?;
                out.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        s.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push(Tok::Ident(s));
            }
            other => return Err(Error::Expr(format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if let Some(Tok::Minus) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(Tok::LParen) = self.peek() {
                    self.pos += 1;
                    let inner = self.expr()?;
                    self.expect_rparen()?;
                    match name.as_str() {
                        "exp" => Ok(Expr::Exp(Box::new(inner))),
                        "log" => Ok(Expr::Log(Box::new(inner))),
                        other => Err(Error::Expr(format!("unknown function `{other}`"))),
                    }
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            _ => Err(Error::Expr("unexpected end of expression".into())),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::Expr("expected `)`".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, n: f64) -> f64 {
        let e = Expr::parse(src).unwrap();
        e.eval(&Vars {
            n,
            v: &[2.0, 5.0],
            x: &[1.5],
        })
        .unwrap()
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(eval("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(eval("(1 + 2) * 3", 0.0), 9.0);
        assert_eq!(eval("n / (n + 1)", 1.0), 0.5);
        assert_eq!(eval("-n + v1 * x1", 4.0), -1.0);
        assert_eq!(eval("v2 - v1", 0.0), 3.0);
    }

    #[test]
    fn functions() {
        assert!((eval("exp(0)", 0.0) - 1.0).abs() < 1e-15);
        assert!((eval("log(exp(2))", 0.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Expr::parse("n +").is_err());
        assert!(Expr::parse("q7").and_then(|e| e.eval(&Vars { n: 0.0, v: &[], x: &[] })).is_err());
        assert!(Expr::parse("2 2").is_err());
    }
}
