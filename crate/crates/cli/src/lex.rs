//! Tokenizer for the model description language.
//!
//! Produces a flat token stream with line and column positions. Newlines
//! are tokens only at bracket depth zero, where they terminate statements;
//! inside any parenthesis, bracket or brace they are ordinary whitespace,
//! so long expressions can wrap. `#` starts a comment running to the end
//! of the line.

use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// A positioned diagnostic; the driver prefixes the file path.
#[derive(Debug, Error)]
#[error("{pos}: {msg}")]
pub struct Diag {
    pub pos: Pos,
    pub msg: String,
}

impl Diag {
    pub fn new(pos: Pos, msg: impl Into<String>) -> Diag {
        Diag { pos, msg: msg.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(u64),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Underscore,
    Eq,
    Comma,
    Colon,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Newline,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(v) => write!(f, "`{v}`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Caret => write!(f, "`^`"),
            Tok::Underscore => write!(f, "`_`"),
            Tok::Eq => write!(f, "`=`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBracket => write!(f, "`[`"),
            Tok::RBracket => write!(f, "`]`"),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::Newline => write!(f, "end of line"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

pub fn lex(src: &str) -> Result<Vec<Token>, Diag> {
    let chars: Vec<char> = src.chars().collect();
    let mut out: Vec<Token> = Vec::new();
    let mut depth = 0usize;
    let mut line = 1usize;
    let mut col = 1usize;
    let mut k = 0usize;
    while k < chars.len() {
        let c = chars[k];
        let pos = Pos { line, col };
        match c {
            '#' => {
                while k < chars.len() && chars[k] != '\n' {
                    k += 1;
                    col += 1;
                }
            }
            '\n' => {
                if depth == 0 && !matches!(out.last().map(|t| &t.tok), None | Some(Tok::Newline)) {
                    out.push(Token { tok: Tok::Newline, pos });
                }
                k += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                k += 1;
                col += 1;
            }
            c if c.is_ascii_alphabetic() => {
                let start = k;
                while k < chars.len() && chars[k].is_ascii_alphanumeric() {
                    k += 1;
                    col += 1;
                }
                let name: String = chars[start..k].iter().collect();
                out.push(Token { tok: Tok::Ident(name), pos });
            }
            c if c.is_ascii_digit() => {
                let start = k;
                while k < chars.len() && chars[k].is_ascii_digit() {
                    k += 1;
                    col += 1;
                }
                let digits: String = chars[start..k].iter().collect();
                let v: u64 = digits
                    .parse()
                    .map_err(|_| Diag::new(pos, format!("integer literal `{digits}` too large")))?;
                if v > i64::MAX as u64 {
                    return Err(Diag::new(pos, format!("integer literal `{digits}` too large")));
                }
                out.push(Token { tok: Tok::Int(v), pos });
            }
            _ => {
                let tok = match c {
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    '^' => Tok::Caret,
                    '_' => Tok::Underscore,
                    '=' => Tok::Eq,
                    ',' => Tok::Comma,
                    ':' => Tok::Colon,
                    '(' | '[' | '{' => {
                        depth += 1;
                        match c {
                            '(' => Tok::LParen,
                            '[' => Tok::LBracket,
                            _ => Tok::LBrace,
                        }
                    }
                    ')' | ']' | '}' => {
                        depth = depth.saturating_sub(1);
                        match c {
                            ')' => Tok::RParen,
                            ']' => Tok::RBracket,
                            _ => Tok::RBrace,
                        }
                    }
                    other => {
                        return Err(Diag::new(pos, format!("unexpected character `{other}`")));
                    }
                };
                out.push(Token { tok, pos });
                k += 1;
                col += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Tok> {
        lex(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn newlines_separate_statements_only_outside_brackets() {
        let toks = kinds("a = 1\nb = (2\n + 3)\n");
        let newlines = toks.iter().filter(|t| **t == Tok::Newline).count();
        assert_eq!(newlines, 2);
    }

    #[test]
    fn comments_run_to_end_of_line() {
        let toks = kinds("a # everything here vanishes + * /\nb");
        assert_eq!(
            toks,
            vec![
                Tok::Ident("a".into()),
                Tok::Newline,
                Tok::Ident("b".into()),
            ]
        );
    }

    #[test]
    fn positions_point_at_token_starts() {
        let toks = lex("ab +\n  cd").unwrap();
        assert_eq!((toks[0].pos.line, toks[0].pos.col), (1, 1));
        assert_eq!((toks[1].pos.line, toks[1].pos.col), (1, 4));
        assert_eq!((toks[3].pos.line, toks[3].pos.col), (2, 3));
    }

    #[test]
    fn rejects_stray_characters_with_a_position() {
        let err = lex("a = 1\nb ? 2").unwrap_err();
        assert_eq!((err.pos.line, err.pos.col), (2, 3));
        assert!(err.msg.contains('?'));
    }
}
