use num_complex::Complex64 as C64;

use super::{ParseError, ParseErrorKind, Pos};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    LBracket,
    RBracket,
    Semicolon,
    Comma,
    Equals,
    /// Numeric literal; `text` is kept so integer and real keys can be checked.
    Number { value: C64, text: String },
    Ident(String),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

fn lex_err(pos: Pos, msg: impl Into<String>) -> ParseError {
    ParseError::new(ParseErrorKind::Lexical, pos, msg)
}

fn is_number_char(c: char) -> bool {
    c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-' | 'i')
}

fn parse_real(s: &str, pos: Pos) -> Result<f64, ParseError> {
    let ok = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-'))
        && s.trim_start_matches(['+', '-']).starts_with(|c: char| c.is_ascii_digit() || c == '.');
    let v: f64 = if ok { s.parse().map_err(|_| lex_err(pos, format!("malformed number `{s}`")))? } else {
        return Err(lex_err(pos, format!("malformed number `{s}`")));
    };
    if !v.is_finite() {
        return Err(lex_err(pos, format!("number `{s}` is out of range")));
    }
    Ok(v)
}

/// `a`, `bi`, `a+bi`, `a-bi`; no whitespace inside.
pub(crate) fn parse_complex(s: &str, pos: Pos) -> Result<C64, ParseError> {
    let Some(body) = s.strip_suffix('i') else {
        return Ok(C64::new(parse_real(s, pos)?, 0.0));
    };
    let bytes = body.as_bytes();
    // split at the last sign that does not follow an exponent marker
    let split = (1..bytes.len())
        .rev()
        .find(|&k| matches!(bytes[k], b'+' | b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    match split {
        Some(k) => Ok(C64::new(parse_real(&body[..k], pos)?, parse_real(&body[k..], pos)?)),
        None => Ok(C64::new(0.0, parse_real(body, pos)?)),
    }
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut k, mut line, mut col) = (0usize, 1usize, 1usize);
    while k < chars.len() {
        let c = chars[k];
        let pos = Pos { line, column: col };
        let simple = match c {
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            ';' => Some(Tok::Semicolon),
            ',' => Some(Tok::Comma),
            '=' => Some(Tok::Equals),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, pos });
            k += 1;
            col += 1;
            continue;
        }
        if c == '\n' {
            k += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            k += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while k < chars.len() && chars[k] != '\n' {
                k += 1;
            }
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            k += 1;
            col += 1;
            loop {
                match chars.get(k) {
                    None | Some('\n') => return Err(lex_err(pos, "unterminated string")),
                    Some('"') => {
                        k += 1;
                        col += 1;
                        break;
                    }
                    Some('\\') => {
                        match chars.get(k + 1) {
                            Some(&e @ ('"' | '\\')) => s.push(e),
                            _ => return Err(lex_err(Pos { line, column: col }, "invalid escape")),
                        }
                        k += 2;
                        col += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        k += 1;
                        col += 1;
                    }
                }
            }
            out.push(Token { tok: Tok::Str(s), pos });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = k;
            while k < chars.len() && (chars[k].is_ascii_alphanumeric() || matches!(chars[k], '_' | '-')) {
                k += 1;
            }
            let s: String = chars[start..k].iter().collect();
            col += k - start;
            out.push(Token { tok: Tok::Ident(s), pos });
            continue;
        }
        if c.is_ascii_digit() || matches!(c, '+' | '-' | '.') {
            let start = k;
            while k < chars.len() && is_number_char(chars[k]) {
                k += 1;
            }
            let text: String = chars[start..k].iter().collect();
            col += k - start;
            if chars.get(k).is_some_and(|ch| ch.is_alphanumeric() || *ch == '_') {
                return Err(lex_err(pos, format!("malformed number `{text}{}`", chars[k])));
            }
            let value = parse_complex(&text, pos)?;
            out.push(Token { tok: Tok::Number { value, text }, pos });
            continue;
        }
        return Err(lex_err(pos, format!("unexpected character {c:?}")));
    }
    Ok(out)
}
