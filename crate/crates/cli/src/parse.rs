//! Recursive-descent parser for model files.
//!
//! A model file is a sequence of newline-terminated statements:
//!
//! ```text
//! manifold dim=3 signature=(+,+,+)
//! field g : metric background
//! field phi : scalar matter
//! lagrangian kin = 1/2 * sum(i, sum(j, g^[i j] * D[phi, i] * D[phi, j])) * sqrtg
//! source tau over phi = ...
//! rule <expr> = <expr>
//! section flat { g^[i j] = delta[i j]  phi = x[0] }
//! vary rho over g = { [i j] = ... }
//! ```
//!
//! Expressions use `+ - * /`, `^` for powers (`^2`, or `^(-1/2)` with a
//! parenthesized rational), `sum(i, body)` for index sums, `D[e, i, ...]`
//! for total derivatives, `x[i]` for base coordinates, `delta[i j]` for the
//! Kronecker symbol, `sqrtg` for the metric volume factor, `g^[i j]` /
//! `g_[i j]` for fundamental and lowered metric components, and
//! `name^[...]_[...]` for tensor components. Operator precedence is the
//! usual one; `^` binds tightest and is right-associative.

use crate::lex::{lex, Diag, Pos, Tok, Token};

#[derive(Clone, Debug)]
pub enum Idx {
    Lit(usize),
    Var(String),
}

#[derive(Clone, Debug)]
pub struct IdxAst {
    pub idx: Idx,
    pub pos: Pos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
pub enum ExprAst {
    Num(u64, Pos),
    /// A field component reference: bare name, optional `^[...]`, optional
    /// `_[...]`.
    Comp {
        name: String,
        ups: Vec<IdxAst>,
        downs: Vec<IdxAst>,
        pos: Pos,
    },
    Base(IdxAst, Pos),
    Delta(IdxAst, IdxAst, Pos),
    SqrtG(Pos),
    Sum {
        var: String,
        body: Box<ExprAst>,
        pos: Pos,
    },
    Deriv {
        body: Box<ExprAst>,
        indices: Vec<IdxAst>,
        pos: Pos,
    },
    Neg(Box<ExprAst>, Pos),
    Bin {
        op: BinOp,
        lhs: Box<ExprAst>,
        rhs: Box<ExprAst>,
        pos: Pos,
    },
    Pow {
        base: Box<ExprAst>,
        num: i64,
        den: u64,
        pos: Pos,
    },
}

impl ExprAst {
    pub fn pos(&self) -> Pos {
        match self {
            ExprAst::Num(_, p)
            | ExprAst::Comp { pos: p, .. }
            | ExprAst::Base(_, p)
            | ExprAst::Delta(_, _, p)
            | ExprAst::SqrtG(p)
            | ExprAst::Sum { pos: p, .. }
            | ExprAst::Deriv { pos: p, .. }
            | ExprAst::Neg(_, p)
            | ExprAst::Bin { pos: p, .. }
            | ExprAst::Pow { pos: p, .. } => *p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoleAst {
    Matter,
    Background,
}

#[derive(Clone, Debug)]
pub enum KindAst {
    Scalar,
    Metric,
    Distortion,
    Tensor(usize, usize),
}

#[derive(Clone, Debug)]
pub struct FieldAst {
    pub name: String,
    pub kind: KindAst,
    pub role: Option<RoleAst>,
    pub external: bool,
    pub weight: Option<(i64, u64)>,
    pub positive: bool,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub enum SourceBody {
    Bare(ExprAst),
    Table(Vec<(Vec<IdxAst>, ExprAst)>),
}

#[derive(Clone, Debug)]
pub struct SourceAst {
    pub name: String,
    pub over: String,
    pub body: SourceBody,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub struct SectionAst {
    pub name: String,
    pub entries: Vec<(ExprAst, ExprAst)>,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub struct VaryAst {
    pub ext: String,
    pub over: String,
    pub entries: Vec<(Vec<IdxAst>, ExprAst)>,
    pub pos: Pos,
}

#[derive(Clone, Debug, Default)]
pub struct ModelAst {
    pub manifold: Option<(usize, Vec<i8>, Pos)>,
    pub fields: Vec<FieldAst>,
    pub lagrangians: Vec<(String, ExprAst, Pos)>,
    pub sources: Vec<SourceAst>,
    pub rules: Vec<(ExprAst, ExprAst, Pos)>,
    pub sections: Vec<SectionAst>,
    pub varies: Vec<VaryAst>,
}

pub fn parse_model(src: &str) -> Result<ModelAst, Diag> {
    let toks = lex(src)?;
    let mut p = Parser { toks: &toks, pos: 0 };
    p.model()
}

/// Parse a standalone expression (for command-line expression arguments).
pub fn parse_expr(src: &str) -> Result<ExprAst, Diag> {
    let toks = lex(src)?;
    let mut p = Parser { toks: &toks, pos: 0 };
    p.skip_newlines();
    let e = p.expr()?;
    p.skip_newlines();
    if let Some(t) = p.peek_tok() {
        return Err(Diag::new(p.here(), format!("trailing {t} after expression")));
    }
    Ok(e)
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek_tok(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek2_tok(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|t| &t.tok)
    }

    fn here(&self) -> Pos {
        match self.toks.get(self.pos) {
            Some(t) => t.pos,
            None => self
                .toks
                .last()
                .map(|t| t.pos)
                .unwrap_or(Pos { line: 1, col: 1 }),
        }
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if self.peek_tok() == Some(want) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<Pos, Diag> {
        let pos = self.here();
        match self.peek_tok() {
            Some(t) if t == want => {
                self.pos += 1;
                Ok(pos)
            }
            Some(t) => Err(Diag::new(pos, format!("expected {want} {what}, found {t}"))),
            None => Err(Diag::new(pos, format!("expected {want} {what}, found end of file"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Pos), Diag> {
        let pos = self.here();
        match self.peek_tok() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok((s, pos))
            }
            Some(t) => Err(Diag::new(pos, format!("expected {what}, found {t}"))),
            None => Err(Diag::new(pos, format!("expected {what}, found end of file"))),
        }
    }

    fn keyword(&mut self, word: &str) -> Result<Pos, Diag> {
        let pos = self.here();
        match self.peek_tok() {
            Some(Tok::Ident(s)) if s == word => {
                self.pos += 1;
                Ok(pos)
            }
            Some(t) => Err(Diag::new(pos, format!("expected `{word}`, found {t}"))),
            None => Err(Diag::new(pos, format!("expected `{word}`, found end of file"))),
        }
    }

    fn int(&mut self, what: &str) -> Result<(u64, Pos), Diag> {
        let pos = self.here();
        match self.peek_tok() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok((v, pos))
            }
            Some(t) => Err(Diag::new(pos, format!("expected {what}, found {t}"))),
            None => Err(Diag::new(pos, format!("expected {what}, found end of file"))),
        }
    }

    fn skip_newlines(&mut self) {
        while self.eat(&Tok::Newline) {}
    }

    fn end_of_statement(&mut self) -> Result<(), Diag> {
        match self.peek_tok() {
            None | Some(Tok::Newline) => {
                self.eat(&Tok::Newline);
                Ok(())
            }
            Some(t) => Err(Diag::new(self.here(), format!("expected end of line, found {t}"))),
        }
    }

    fn model(&mut self) -> Result<ModelAst, Diag> {
        let mut ast = ModelAst::default();
        loop {
            self.skip_newlines();
            let pos = self.here();
            let word = match self.peek_tok() {
                None => break,
                Some(Tok::Ident(s)) => s.clone(),
                Some(t) => {
                    return Err(Diag::new(pos, format!("expected a statement, found {t}")));
                }
            };
            match word.as_str() {
                "manifold" => {
                    self.bump();
                    if ast.manifold.is_some() {
                        return Err(Diag::new(pos, "duplicate `manifold` statement"));
                    }
                    ast.manifold = Some(self.manifold(pos)?);
                }
                "field" => {
                    self.bump();
                    ast.fields.push(self.field(pos)?);
                }
                "lagrangian" => {
                    self.bump();
                    let (name, _) = self.ident("a Lagrangian name")?;
                    self.expect(&Tok::Eq, "after the Lagrangian name")?;
                    let e = self.expr()?;
                    self.end_of_statement()?;
                    ast.lagrangians.push((name, e, pos));
                }
                "source" => {
                    self.bump();
                    ast.sources.push(self.source(pos)?);
                }
                "rule" => {
                    self.bump();
                    let lhs = self.expr()?;
                    self.expect(&Tok::Eq, "between rule sides")?;
                    let rhs = self.expr()?;
                    self.end_of_statement()?;
                    ast.rules.push((lhs, rhs, pos));
                }
                "section" => {
                    self.bump();
                    ast.sections.push(self.section(pos)?);
                }
                "vary" => {
                    self.bump();
                    ast.varies.push(self.vary(pos)?);
                }
                other => {
                    return Err(Diag::new(
                        pos,
                        format!("expected a statement keyword, found `{other}`"),
                    ));
                }
            }
        }
        Ok(ast)
    }

    fn manifold(&mut self, pos: Pos) -> Result<(usize, Vec<i8>, Pos), Diag> {
        self.keyword("dim")?;
        self.expect(&Tok::Eq, "after `dim`")?;
        let (dim, dpos) = self.int("the dimension")?;
        if dim == 0 || dim > 9 {
            return Err(Diag::new(dpos, format!("unsupported dimension {dim}")));
        }
        self.keyword("signature")?;
        self.expect(&Tok::Eq, "after `signature`")?;
        self.expect(&Tok::LParen, "to open the signature")?;
        let mut signs = Vec::new();
        loop {
            let spos = self.here();
            match self.bump().map(|t| t.tok.clone()) {
                Some(Tok::Plus) => signs.push(1),
                Some(Tok::Minus) => signs.push(-1),
                Some(t) => {
                    return Err(Diag::new(spos, format!("expected `+` or `-`, found {t}")));
                }
                None => return Err(Diag::new(spos, "unterminated signature")),
            }
            if self.eat(&Tok::RParen) {
                break;
            }
            self.expect(&Tok::Comma, "between signature entries")?;
        }
        self.end_of_statement()?;
        Ok((dim as usize, signs, pos))
    }

    fn field(&mut self, pos: Pos) -> Result<FieldAst, Diag> {
        let (name, _) = self.ident("a field name")?;
        self.expect(&Tok::Colon, "after the field name")?;
        let (kw, kpos) = self.ident("a field kind")?;
        let kind = match kw.as_str() {
            "scalar" => KindAst::Scalar,
            "metric" => KindAst::Metric,
            "distortion" => KindAst::Distortion,
            "tensor" => {
                self.expect(&Tok::LParen, "after `tensor`")?;
                let (p, _) = self.int("the contravariant valence")?;
                self.expect(&Tok::Comma, "between tensor valences")?;
                let (q, _) = self.int("the covariant valence")?;
                self.expect(&Tok::RParen, "to close the tensor kind")?;
                KindAst::Tensor(p as usize, q as usize)
            }
            other => {
                return Err(Diag::new(kpos, format!("unknown field kind `{other}`")));
            }
        };
        let mut field = FieldAst {
            name,
            kind,
            role: None,
            external: false,
            weight: None,
            positive: false,
            pos,
        };
        loop {
            match self.peek_tok() {
                None | Some(Tok::Newline) => break,
                Some(Tok::Ident(flag)) => {
                    let flag = flag.clone();
                    let fpos = self.here();
                    self.bump();
                    match flag.as_str() {
                        "matter" => field.role = Some(RoleAst::Matter),
                        "background" => field.role = Some(RoleAst::Background),
                        "external" => field.external = true,
                        "positive" => field.positive = true,
                        "weight" => {
                            self.expect(&Tok::Eq, "after `weight`")?;
                            field.weight = Some(self.rational()?);
                        }
                        other => {
                            return Err(Diag::new(
                                fpos,
                                format!("unknown field flag `{other}`"),
                            ));
                        }
                    }
                }
                Some(t) => {
                    return Err(Diag::new(
                        self.here(),
                        format!("expected a field flag or end of line, found {t}"),
                    ));
                }
            }
        }
        self.end_of_statement()?;
        Ok(field)
    }

    fn rational(&mut self) -> Result<(i64, u64), Diag> {
        let neg = self.eat(&Tok::Minus);
        let (num, _) = self.int("a rational number")?;
        let den = if self.eat(&Tok::Slash) {
            let (d, dpos) = self.int("a denominator")?;
            if d == 0 {
                return Err(Diag::new(dpos, "zero denominator"));
            }
            d
        } else {
            1
        };
        let num = num as i64;
        Ok((if neg { -num } else { num }, den))
    }

    fn source(&mut self, pos: Pos) -> Result<SourceAst, Diag> {
        let (name, _) = self.ident("a source name")?;
        self.keyword("over")?;
        let (over, _) = self.ident("a field name")?;
        self.expect(&Tok::Eq, "after the source header")?;
        let body = if self.peek_tok() == Some(&Tok::LBrace) {
            SourceBody::Table(self.component_table()?)
        } else {
            SourceBody::Bare(self.expr()?)
        };
        self.end_of_statement()?;
        Ok(SourceAst { name, over, body, pos })
    }

    /// `{ [idx ...] = expr  [idx ...] = expr  ... }` — newlines inside the
    /// braces are plain whitespace, so entries simply follow one another.
    fn component_table(&mut self) -> Result<Vec<(Vec<IdxAst>, ExprAst)>, Diag> {
        self.expect(&Tok::LBrace, "to open the component table")?;
        let mut entries = Vec::new();
        loop {
            if self.eat(&Tok::RBrace) {
                break;
            }
            self.expect(&Tok::LBracket, "to open a component pattern")?;
            let mut indices = Vec::new();
            while !self.eat(&Tok::RBracket) {
                indices.push(self.index()?);
            }
            self.expect(&Tok::Eq, "after the component pattern")?;
            let value = self.expr()?;
            entries.push((indices, value));
        }
        Ok(entries)
    }

    fn section(&mut self, pos: Pos) -> Result<SectionAst, Diag> {
        let (name, _) = self.ident("a section name")?;
        self.expect(&Tok::LBrace, "to open the section")?;
        let mut entries = Vec::new();
        loop {
            if self.eat(&Tok::RBrace) {
                break;
            }
            let lhs_pos = self.here();
            let lhs = self.primary()?;
            if !matches!(lhs, ExprAst::Comp { .. }) {
                return Err(Diag::new(lhs_pos, "expected a field component on the left"));
            }
            self.expect(&Tok::Eq, "after the component")?;
            let value = self.expr()?;
            entries.push((lhs, value));
        }
        self.end_of_statement()?;
        Ok(SectionAst { name, entries, pos })
    }

    fn vary(&mut self, pos: Pos) -> Result<VaryAst, Diag> {
        let (ext, _) = self.ident("a field name")?;
        self.keyword("over")?;
        let (over, _) = self.ident("a field name")?;
        self.expect(&Tok::Eq, "after the variation header")?;
        let entries = self.component_table()?;
        self.end_of_statement()?;
        Ok(VaryAst { ext, over, entries, pos })
    }

    fn index(&mut self) -> Result<IdxAst, Diag> {
        let pos = self.here();
        match self.peek_tok() {
            Some(Tok::Int(v)) => {
                let v = *v as usize;
                self.pos += 1;
                Ok(IdxAst { idx: Idx::Lit(v), pos })
            }
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(IdxAst { idx: Idx::Var(s), pos })
            }
            Some(t) => Err(Diag::new(pos, format!("expected an index, found {t}"))),
            None => Err(Diag::new(pos, "expected an index, found end of file")),
        }
    }

    fn expr(&mut self) -> Result<ExprAst, Diag> {
        let mut lhs = self.term()?;
        loop {
            let pos = self.here();
            let op = match self.peek_tok() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = ExprAst::Bin { op, lhs: Box::new(lhs), rhs: Box::new(rhs), pos };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<ExprAst, Diag> {
        let mut lhs = self.factor()?;
        loop {
            let pos = self.here();
            let op = match self.peek_tok() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = ExprAst::Bin { op, lhs: Box::new(lhs), rhs: Box::new(rhs), pos };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<ExprAst, Diag> {
        let pos = self.here();
        if self.eat(&Tok::Minus) {
            let inner = self.factor()?;
            return Ok(ExprAst::Neg(Box::new(inner), pos));
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprAst, Diag> {
        let base = self.primary()?;
        if self.peek_tok() != Some(&Tok::Caret) {
            return Ok(base);
        }
        let pos = self.here();
        self.bump();
        let (num, den) = self.exponent()?;
        Ok(ExprAst::Pow { base: Box::new(base), num, den, pos })
    }

    /// `^2` with a bare nonnegative integer, or `^(p/q)` with a
    /// parenthesized, possibly negative rational.
    fn exponent(&mut self) -> Result<(i64, u64), Diag> {
        match self.peek_tok() {
            Some(Tok::Int(_)) => {
                let (v, _) = self.int("an exponent")?;
                Ok((v as i64, 1))
            }
            Some(Tok::LParen) => {
                self.bump();
                let r = self.rational()?;
                self.expect(&Tok::RParen, "to close the exponent")?;
                Ok(r)
            }
            Some(t) => Err(Diag::new(
                self.here(),
                format!("expected an integer or parenthesized rational exponent, found {t}"),
            )),
            None => Err(Diag::new(self.here(), "expected an exponent, found end of file")),
        }
    }

    fn primary(&mut self) -> Result<ExprAst, Diag> {
        let pos = self.here();
        match self.peek_tok() {
            Some(Tok::Int(_)) => {
                let (v, _) = self.int("a number")?;
                Ok(ExprAst::Num(v, pos))
            }
            Some(Tok::LParen) => {
                self.bump();
                let e = self.expr()?;
                self.expect(&Tok::RParen, "to close the group")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                let name = name.clone();
                self.bump();
                match name.as_str() {
                    "x" => {
                        self.expect(&Tok::LBracket, "after `x`")?;
                        let i = self.index()?;
                        self.expect(&Tok::RBracket, "to close the coordinate")?;
                        Ok(ExprAst::Base(i, pos))
                    }
                    "delta" => {
                        self.expect(&Tok::LBracket, "after `delta`")?;
                        let a = self.index()?;
                        let b = self.index()?;
                        self.expect(&Tok::RBracket, "to close `delta`")?;
                        Ok(ExprAst::Delta(a, b, pos))
                    }
                    "sqrtg" => Ok(ExprAst::SqrtG(pos)),
                    "sum" => {
                        self.expect(&Tok::LParen, "after `sum`")?;
                        let (var, _) = self.ident("a summation index")?;
                        self.expect(&Tok::Comma, "after the summation index")?;
                        let body = self.expr()?;
                        self.expect(&Tok::RParen, "to close `sum`")?;
                        Ok(ExprAst::Sum { var, body: Box::new(body), pos })
                    }
                    "D" => {
                        self.expect(&Tok::LBracket, "after `D`")?;
                        let body = self.expr()?;
                        let mut indices = Vec::new();
                        while self.eat(&Tok::Comma) {
                            indices.push(self.index()?);
                        }
                        self.expect(&Tok::RBracket, "to close `D`")?;
                        if indices.is_empty() {
                            return Err(Diag::new(pos, "`D` needs at least one derivative index"));
                        }
                        Ok(ExprAst::Deriv { body: Box::new(body), indices, pos })
                    }
                    _ => {
                        let mut ups = Vec::new();
                        let mut downs = Vec::new();
                        // `^[` opens an index block; a bare `^` is the power
                        // operator and stays for the caller (`phi^2`).
                        if self.peek_tok() == Some(&Tok::Caret)
                            && self.peek2_tok() == Some(&Tok::LBracket)
                        {
                            self.bump();
                            self.bump();
                            while !self.eat(&Tok::RBracket) {
                                ups.push(self.index()?);
                            }
                        }
                        if self.eat(&Tok::Underscore) {
                            self.expect(&Tok::LBracket, "after `_`")?;
                            while !self.eat(&Tok::RBracket) {
                                downs.push(self.index()?);
                            }
                        }
                        Ok(ExprAst::Comp { name, ups, downs, pos })
                    }
                }
            }
            Some(t) => Err(Diag::new(pos, format!("expected an expression, found {t}"))),
            None => Err(Diag::new(pos, "expected an expression, found end of file")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_minimal_model_file() {
        let src = "\
manifold dim=2 signature=(+,+)
field g : metric background
field phi : scalar matter
lagrangian kin = 1/2 * sum(i, sum(j, g^[i j] * D[phi, i] * D[phi, j])) * sqrtg
";
        let ast = parse_model(src).unwrap();
        assert_eq!(ast.manifold.as_ref().unwrap().0, 2);
        assert_eq!(ast.fields.len(), 2);
        assert_eq!(ast.lagrangians.len(), 1);
    }

    #[test]
    fn caret_binds_tighter_than_unary_minus() {
        let e = parse_expr("-x[0]^2").unwrap();
        assert!(matches!(e, ExprAst::Neg(inner, _) if matches!(*inner, ExprAst::Pow { .. })));
    }

    #[test]
    fn a_bare_caret_after_a_component_is_the_power_operator() {
        let e = parse_expr("phi^2").unwrap();
        assert!(matches!(e, ExprAst::Pow { .. }));
        let e = parse_expr("N^[0]_[0 0]^(-2)").unwrap();
        let ExprAst::Pow { base, num, den, .. } = e else { panic!("expected a power") };
        assert!(matches!(*base, ExprAst::Comp { .. }));
        assert_eq!((num, den), (-2, 1));
    }

    #[test]
    fn rejects_trailing_input_after_an_expression() {
        let err = parse_expr("x[0] x[1]").unwrap_err();
        assert!(err.msg.contains("trailing"));
    }

    #[test]
    fn component_tables_accept_patterns_and_literals() {
        let src = "\
manifold dim=2 signature=(+,+)
field g : metric background
source eps over g = {
  [i j] = g^[i j]
  [0 0] = 1
}
";
        let ast = parse_model(src).unwrap();
        let body = match &ast.sources[0].body {
            SourceBody::Table(t) => t,
            other => panic!("expected a table, got {other:?}"),
        };
        assert_eq!(body.len(), 2);
        assert_eq!(body[0].0.len(), 2);
    }

    #[test]
    fn reports_positions_in_parse_errors() {
        let err = parse_model("manifold dim=2 signature=(+,+)\nfield : scalar\n").unwrap_err();
        assert_eq!(err.pos.line, 2);
        assert!(err.msg.contains("field name"));
    }
}
