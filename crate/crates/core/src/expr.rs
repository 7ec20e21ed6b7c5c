//! A small grammar for naming observables.
//!
//! ```text
//! expr  := ['-'] term (('+' | '-') term)*
//! term  := number ['*' call] | call
//! call  := name '(' [arg (',' arg)*] ')'
//! arg   := integer | '[' integer (',' integer)* ']'
//! ```
//!
//! Names are `spin(x)`, `corr(x, y)`, `runcount(k, axis, n)` and
//! `random(seed, degree)`. Sites are box ranks or bracketed coordinates, as
//! in `corr(0, [1, 0])`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{run_count, Observable, RunCountSpec};
use crate::lattice::{Enumeration, Site};

/// Longest accepted expression, in bytes.
pub const MAX_EXPRESSION_LEN: usize = 4096;

/// Highest degree accepted by `random(seed, degree)`.
pub const MAX_RANDOM_DEGREE: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteRef {
    Rank(usize),
    Coords(Vec<i32>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Atom {
    Constant,
    Spin(SiteRef),
    Corr(SiteRef, SiteRef),
    RunCount { k: usize, axis: usize, n: usize },
    Random { seed: u64, degree: usize },
}

/// A parsed expression: a weighted sum of atoms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionalExpr {
    pub terms: Vec<(f64, Atom)>,
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Number(String),
    Name(String),
    Open,
    Close,
    OpenBracket,
    CloseBracket,
    Comma,
    Plus,
    Minus,
    Star,
}

fn err(col: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse { line: 1, msg: format!("column {}: {msg}", col + 1) }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b'(' => Some(Token::Open),
            b')' => Some(Token::Close),
            b'[' => Some(Token::OpenBracket),
            b']' => Some(Token::CloseBracket),
            b',' => Some(Token::Comma),
            b'+' => Some(Token::Plus),
            b'-' => Some(Token::Minus),
            b'*' => Some(Token::Star),
            _ => None,
        };
        if let Some(t) = single {
            out.push((start, t));
            i += 1;
        } else if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            out.push((start, Token::Number(src[start..i].to_string())));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Token::Name(src[start..i].to_ascii_lowercase())));
        } else {
            let ch = src[start..].chars().next().unwrap_or('?');
            return Err(err(start, format!("unexpected character {ch:?}")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|t| &t.1)
    }

    fn col(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<()> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(err(self.col(), format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<FunctionalExpr> {
        let mut terms = Vec::new();
        let mut sign = 1.0;
        if self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            sign = -1.0;
        }
        loop {
            let (w, atom) = self.term()?;
            terms.push((sign * w, atom));
            match self.peek() {
                Some(Token::Plus) => sign = 1.0,
                Some(Token::Minus) => sign = -1.0,
                None => break,
                Some(_) => return Err(err(self.col(), "expected '+', '-' or end of input")),
            }
            self.pos += 1;
        }
        Ok(FunctionalExpr { terms })
    }

    fn term(&mut self) -> Result<(f64, Atom)> {
        match self.peek().cloned() {
            Some(Token::Number(text)) => {
                let col = self.col();
                let w: f64 = text.parse().map_err(|_| err(col, format!("bad number {text:?}")))?;
                if !w.is_finite() {
                    return Err(err(col, "coefficient is not finite"));
                }
                self.pos += 1;
                if self.peek() == Some(&Token::Star) {
                    self.pos += 1;
                    Ok((w, self.call()?))
                } else {
                    Ok((w, Atom::Constant))
                }
            }
            Some(Token::Name(_)) => Ok((1.0, self.call()?)),
            _ => Err(err(self.col(), "expected a number or an observable")),
        }
    }

    fn call(&mut self) -> Result<Atom> {
        let col = self.col();
        let Some(Token::Name(name)) = self.peek().cloned() else {
            return Err(err(col, "expected an observable name"));
        };
        self.pos += 1;
        self.expect(Token::Open, "'('")?;
        let mut args = Vec::new();
        if self.peek() != Some(&Token::Close) {
            loop {
                args.push(self.arg()?);
                if self.peek() == Some(&Token::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(Token::Close, "')'")?;
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(err(col, format!("{name} takes {n} arguments, got {}", args.len())))
            }
        };
        let int = |a: &SiteRef| match a {
            SiteRef::Rank(r) => Ok(*r),
            SiteRef::Coords(_) => Err(err(col, format!("{name} takes integer arguments"))),
        };
        match name.as_str() {
            "spin" => {
                arity(1)?;
                Ok(Atom::Spin(args[0].clone()))
            }
            "corr" => {
                arity(2)?;
                Ok(Atom::Corr(args[0].clone(), args[1].clone()))
            }
            "runcount" => {
                arity(3)?;
                Ok(Atom::RunCount { k: int(&args[0])?, axis: int(&args[1])?, n: int(&args[2])? })
            }
            "random" => {
                arity(2)?;
                let degree = int(&args[1])?;
                if degree > MAX_RANDOM_DEGREE {
                    return Err(err(col, format!("degree {degree} exceeds {MAX_RANDOM_DEGREE}")));
                }
                Ok(Atom::Random { seed: int(&args[0])? as u64, degree })
            }
            other => Err(err(col, format!("unknown observable {other:?}"))),
        }
    }

    fn integer(&mut self, signed: bool) -> Result<i64> {
        let mut neg = false;
        if signed && self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            neg = true;
        }
        let col = self.col();
        match self.peek().cloned() {
            Some(Token::Number(text)) => {
                let v: i64 = text.parse().map_err(|_| err(col, format!("expected an integer, got {text:?}")))?;
                self.pos += 1;
                Ok(if neg { -v } else { v })
            }
            _ => Err(err(col, "expected an integer")),
        }
    }

    fn arg(&mut self) -> Result<SiteRef> {
        if self.peek() == Some(&Token::OpenBracket) {
            self.pos += 1;
            let mut coords = Vec::new();
            loop {
                let col = self.col();
                let v = self.integer(true)?;
                coords.push(i32::try_from(v).map_err(|_| err(col, "coordinate out of range"))?);
                if self.peek() == Some(&Token::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            self.expect(Token::CloseBracket, "']'")?;
            Ok(SiteRef::Coords(coords))
        } else {
            let col = self.col();
            let v = self.integer(false)?;
            Ok(SiteRef::Rank(usize::try_from(v).map_err(|_| err(col, "integer out of range"))?))
        }
    }
}

/// Parse an observable expression.
pub fn parse_functional(src: &str) -> Result<FunctionalExpr> {
    if src.len() > MAX_EXPRESSION_LEN {
        return Err(err(MAX_EXPRESSION_LEN, "expression too long"));
    }
    let tokens = tokenize(src)?;
    if tokens.is_empty() {
        return Err(err(0, "empty expression"));
    }
    let mut parser = Parser { tokens, pos: 0, end: src.len() };
    parser.expr()
}

fn resolve_site(site: &SiteRef, lattice: &Enumeration) -> Result<usize> {
    match site {
        SiteRef::Rank(r) => lattice.check_rank(*r).map(|_| *r),
        SiteRef::Coords(c) => {
            if c.len() != lattice.dim() {
                return Err(Error::Geometry(format!("site has {} coordinates, box dimension is {}", c.len(), lattice.dim())));
            }
            let site = Site::new(c.clone());
            lattice.rank_of(&site).ok_or_else(|| Error::Geometry(format!("site {site} is outside the box")))
        }
    }
}

impl FunctionalExpr {
    /// Bind sites to a box.
    pub fn resolve(&self, lattice: &Enumeration) -> Result<Observable> {
        let mut parts = Vec::with_capacity(self.terms.len());
        for (w, atom) in &self.terms {
            let obs = match atom {
                Atom::Constant => Observable::Constant(1.0),
                Atom::Spin(x) => Observable::Spin(resolve_site(x, lattice)?),
                Atom::Corr(x, y) => Observable::Corr(resolve_site(x, lattice)?, resolve_site(y, lattice)?),
                Atom::RunCount { k, axis, n } => {
                    Observable::RunCount(run_count(RunCountSpec { k: *k, axis: *axis, n: *n }, lattice)?)
                }
                Atom::Random { seed, degree } => Observable::random_polynomial(*seed, *degree, lattice.len()),
            };
            parts.push((*w, obs));
        }
        if let [(w, obs)] = parts.as_slice() {
            if *w == 1.0 {
                return Ok(obs.clone());
            }
        }
        Ok(Observable::Sum(parts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::Functional;
    use crate::lattice::enumerate_box;

    #[test]
    fn parses_each_form() {
        let e = parse_functional("spin(3)").unwrap();
        assert_eq!(e.terms, vec![(1.0, Atom::Spin(SiteRef::Rank(3)))]);
        let e = parse_functional("corr(0, [1,-2])").unwrap();
        assert_eq!(e.terms, vec![(1.0, Atom::Corr(SiteRef::Rank(0), SiteRef::Coords(vec![1, -2])))]);
        let e = parse_functional("RunCount(2, 0, 8)").unwrap();
        assert_eq!(e.terms, vec![(1.0, Atom::RunCount { k: 2, axis: 0, n: 8 })]);
        let e = parse_functional("random(7,3)").unwrap();
        assert_eq!(e.terms, vec![(1.0, Atom::Random { seed: 7, degree: 3 })]);
        let e = parse_functional("-2.5e0*spin(1) + 0.5 - corr(0,1)").unwrap();
        assert_eq!(
            e.terms,
            vec![
                (-2.5, Atom::Spin(SiteRef::Rank(1))),
                (0.5, Atom::Constant),
                (-1.0, Atom::Corr(SiteRef::Rank(0), SiteRef::Rank(1)))
            ]
        );
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in [
            "", "spin", "spin(", "spin()", "spin(1,2)", "spin(-1)", "spin(1.5)", "corr(1)", "foo(1)", "spin(1) spin(2)",
            "2 *", "runcount([1],0,3)", "random(1, 1000)", "spin(1)+", "spin(99999999999999999999)", "1e999", "@",
        ] {
            assert!(matches!(parse_functional(bad), Err(Error::Parse { .. })), "{bad:?}");
        }
    }

    #[test]
    fn resolves_against_a_box() {
        let lattice = enumerate_box(2, 9).unwrap();
        let obs = parse_functional("corr([0,0], [1,0])").unwrap().resolve(&lattice).unwrap();
        assert_eq!(obs, Observable::Corr(0, 4));
        let obs = parse_functional("2*spin(0) - 1").unwrap().resolve(&lattice).unwrap();
        let mut spins = vec![1i8; 9];
        assert_eq!(obs.eval(&spins), 1.0);
        spins[0] = -1;
        assert_eq!(obs.eval(&spins), -3.0);
        assert!(parse_functional("spin(9)").unwrap().resolve(&lattice).is_err());
        assert!(parse_functional("spin([5,5])").unwrap().resolve(&lattice).is_err());
        assert!(parse_functional("spin([0])").unwrap().resolve(&lattice).is_err());
    }
}
