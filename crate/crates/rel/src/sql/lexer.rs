//! SQL lexer. Keywords are case-insensitive; string literals are
//! single-quoted with `''` escaping.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    // keywords
    Select,
    Distinct,
    From,
    Inner,
    Join,
    On,
    Where,
    Group,
    By,
    Having,
    Order,
    Asc,
    Desc,
    Limit,
    And,
    Or,
    Not,
    In,
    Like,
    Between,
    Is,
    Null,
    As,
    Count,
    Sum,
    Avg,
    Min,
    Max,
    // literals and names
    Ident(String),
    Int(i64),
    Real(f64),
    Str(String),
    // symbols
    Star,
    Plus,
    Minus,
    Slash,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    LParen,
    RParen,
    Comma,
    Dot,
    Semicolon,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Int(v) => format!("integer {v}"),
            Tok::Real(v) => format!("real {v}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Eof => "end of input".to_string(),
            other => format!("{}", keyword_or_symbol(other)),
        }
    }
}

fn keyword_or_symbol(t: &Tok) -> &'static str {
    match t {
        Tok::Select => "SELECT",
        Tok::Distinct => "DISTINCT",
        Tok::From => "FROM",
        Tok::Inner => "INNER",
        Tok::Join => "JOIN",
        Tok::On => "ON",
        Tok::Where => "WHERE",
        Tok::Group => "GROUP",
        Tok::By => "BY",
        Tok::Having => "HAVING",
        Tok::Order => "ORDER",
        Tok::Asc => "ASC",
        Tok::Desc => "DESC",
        Tok::Limit => "LIMIT",
        Tok::And => "AND",
        Tok::Or => "OR",
        Tok::Not => "NOT",
        Tok::In => "IN",
        Tok::Like => "LIKE",
        Tok::Between => "BETWEEN",
        Tok::Is => "IS",
        Tok::Null => "NULL",
        Tok::As => "AS",
        Tok::Count => "COUNT",
        Tok::Sum => "SUM",
        Tok::Avg => "AVG",
        Tok::Min => "MIN",
        Tok::Max => "MAX",
        Tok::Star => "*",
        Tok::Plus => "+",
        Tok::Minus => "-",
        Tok::Slash => "/",
        Tok::Eq => "=",
        Tok::Ne => "!=",
        Tok::Lt => "<",
        Tok::Le => "<=",
        Tok::Gt => ">",
        Tok::Ge => ">=",
        Tok::LParen => "(",
        Tok::RParen => ")",
        Tok::Comma => ",",
        Tok::Dot => ".",
        Tok::Semicolon => ";",
        _ => "?",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpannedTok {
    pub tok: Tok,
    /// Byte offset of the token start in the source text.
    pub pos: usize,
}

#[derive(Debug, Error, PartialEq)]
#[error("lex error at byte {pos}: {msg}")]
pub struct LexError {
    pub pos: usize,
    pub msg: String,
}

pub fn lex(input: &str) -> Result<Vec<SpannedTok>, LexError> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0usize;

    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match b {
            b'*' => { i += 1; Tok::Star }
            b'+' => { i += 1; Tok::Plus }
            b'-' => { i += 1; Tok::Minus }
            b'/' => { i += 1; Tok::Slash }
            b'(' => { i += 1; Tok::LParen }
            b')' => { i += 1; Tok::RParen }
            b',' => { i += 1; Tok::Comma }
            b';' => { i += 1; Tok::Semicolon }
            b'.' => { i += 1; Tok::Dot }
            b'=' => { i += 1; Tok::Eq }
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    Tok::Ne
                } else {
                    return Err(LexError { pos: i, msg: "expected '=' after '!'".into() });
                }
            }
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => { i += 2; Tok::Le }
                Some(b'>') => { i += 2; Tok::Ne }
                _ => { i += 1; Tok::Lt }
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    Tok::Ge
                } else {
                    i += 1;
                    Tok::Gt
                }
            }
            b'\'' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match bytes.get(i) {
                        None => {
                            return Err(LexError { pos: start, msg: "unterminated string".into() })
                        }
                        Some(b'\'') => {
                            if bytes.get(i + 1) == Some(&b'\'') {
                                s.push('\'');
                                i += 2;
                            } else {
                                i += 1;
                                break;
                            }
                        }
                        Some(_) => {
                            // consume one UTF-8 scalar
                            let rest = &input[i..];
                            let ch = rest.chars().next().unwrap();
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                Tok::Str(s)
            }
            b'0'..=b'9' => {
                let (tok, next) = lex_number(input, i)?;
                i = next;
                tok
            }
            _ if b == b'_' || b.is_ascii_alphabetic() => {
                let mut j = i + 1;
                while j < bytes.len()
                    && (bytes[j] == b'_' || bytes[j].is_ascii_alphanumeric())
                {
                    j += 1;
                }
                let word = &input[i..j];
                i = j;
                keyword(word).unwrap_or_else(|| Tok::Ident(word.to_string()))
            }
            _ => {
                let ch = input[i..].chars().next().unwrap();
                return Err(LexError { pos: i, msg: format!("unexpected character {ch:?}") });
            }
        };
        out.push(SpannedTok { tok, pos: start });
    }
    out.push(SpannedTok { tok: Tok::Eof, pos: bytes.len() });
    Ok(out)
}

fn lex_number(input: &str, start: usize) -> Result<(Tok, usize), LexError> {
    let bytes = input.as_bytes();
    let mut i = start;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let mut is_real = false;
    if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
        is_real = true;
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            is_real = true;
            i = j;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    let text = &input[start..i];
    if is_real {
        let v: f64 = text
            .parse()
            .map_err(|_| LexError { pos: start, msg: format!("bad real literal {text:?}") })?;
        if !v.is_finite() {
            return Err(LexError { pos: start, msg: format!("real literal out of range: {text}") });
        }
        Ok((Tok::Real(v), i))
    } else {
        let v: i64 = text.parse().map_err(|_| LexError {
            pos: start,
            msg: format!("integer literal out of range: {text}"),
        })?;
        Ok((Tok::Int(v), i))
    }
}

fn keyword(word: &str) -> Option<Tok> {
    let up = word.to_ascii_uppercase();
    Some(match up.as_str() {
        "SELECT" => Tok::Select,
        "DISTINCT" => Tok::Distinct,
        "FROM" => Tok::From,
        "INNER" => Tok::Inner,
        "JOIN" => Tok::Join,
        "ON" => Tok::On,
        "WHERE" => Tok::Where,
        "GROUP" => Tok::Group,
        "BY" => Tok::By,
        "HAVING" => Tok::Having,
        "ORDER" => Tok::Order,
        "ASC" => Tok::Asc,
        "DESC" => Tok::Desc,
        "LIMIT" => Tok::Limit,
        "AND" => Tok::And,
        "OR" => Tok::Or,
        "NOT" => Tok::Not,
        "IN" => Tok::In,
        "LIKE" => Tok::Like,
        "BETWEEN" => Tok::Between,
        "IS" => Tok::Is,
        "NULL" => Tok::Null,
        "AS" => Tok::As,
        "COUNT" => Tok::Count,
        "SUM" => Tok::Sum,
        "AVG" => Tok::Avg,
        "MIN" => Tok::Min,
        "MAX" => Tok::Max,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        lex(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn keywords_case_insensitive() {
        assert_eq!(toks("select SeLeCt SELECT")[..3], [Tok::Select, Tok::Select, Tok::Select]);
    }

    #[test]
    fn numbers() {
        assert_eq!(toks("42 4.5 1e3")[..3], [Tok::Int(42), Tok::Real(4.5), Tok::Real(1000.0)]);
    }

    #[test]
    fn string_escaping() {
        assert_eq!(toks("'it''s'")[0], Tok::Str("it's".to_string()));
    }

    #[test]
    fn ne_spellings() {
        assert_eq!(toks("!= <>")[..2], [Tok::Ne, Tok::Ne]);
    }

    #[test]
    fn bad_char_reports_position() {
        let err = lex("select @").unwrap_err();
        assert_eq!(err.pos, 7);
    }

    #[test]
    fn unterminated_string() {
        assert!(lex("'abc").is_err());
    }
}
