use super::DslError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Ident(String),
    Number(f64),
    Str(String),
    Cmp(super::CmpOp),
    And,
    Or,
    Not,
    LParen,
    RParen,
    Eof,
}

impl Token {
    pub(crate) fn describe(&self) -> String {
        match self {
            Token::Ident(s) => format!("column `{s}`"),
            Token::Number(n) => format!("number {n}"),
            Token::Str(s) => format!("string '{s}'"),
            Token::Cmp(op) => format!("`{}`", op.symbol()),
            Token::And => "AND".into(),
            Token::Or => "OR".into(),
            Token::Not => "NOT".into(),
            Token::LParen => "`(`".into(),
            Token::RParen => "`)`".into(),
            Token::Eof => "end of input".into(),
        }
    }
}

/// Token plus the byte offset where it starts.
pub(crate) type Spanned = (Token, usize);

pub(crate) fn tokenize(src: &str) -> Result<Vec<Spanned>, DslError> {
    use super::CmpOp::*;
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
            }
            b'(' => {
                out.push((Token::LParen, start));
                i += 1;
            }
            b')' => {
                out.push((Token::RParen, start));
                i += 1;
            }
            b'=' | b'!' | b'<' | b'>' => {
                let next = bytes.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    (b'=', Some(b'=')) => (Eq, 2),
                    (b'!', Some(b'=')) => (Ne, 2),
                    (b'<', Some(b'=')) => (Le, 2),
                    (b'>', Some(b'=')) => (Ge, 2),
                    (b'<', _) => (Lt, 1),
                    (b'>', _) => (Gt, 1),
                    _ => {
                        return Err(DslError::Lex {
                            offset: start,
                            message: format!("unexpected `{}`", c as char),
                        })
                    }
                };
                out.push((Token::Cmp(op), start));
                i += len;
            }
            b'\'' | b'"' => {
                let quote = c;
                let mut value = String::new();
                i += 1;
                loop {
                    let Some(&b) = bytes.get(i) else {
                        return Err(DslError::Lex { offset: start, message: "unterminated string".into() });
                    };
                    if b == quote {
                        i += 1;
                        break;
                    }
                    if b == b'\\' {
                        match bytes.get(i + 1) {
                            Some(&e @ (b'\\' | b'\'' | b'"')) => {
                                value.push(e as char);
                                i += 2;
                                continue;
                            }
                            _ => {
                                return Err(DslError::Lex { offset: i, message: "invalid escape".into() });
                            }
                        }
                    }
                    let ch = src[i..].chars().next().expect("in bounds");
                    value.push(ch);
                    i += ch.len_utf8();
                }
                out.push((Token::Str(value), start));
            }
            b'`' => {
                let Some(end) = src[i + 1..].find('`') else {
                    return Err(DslError::Lex { offset: start, message: "unterminated quoted column".into() });
                };
                let name = &src[i + 1..i + 1 + end];
                if name.is_empty() {
                    return Err(DslError::Lex { offset: start, message: "empty quoted column".into() });
                }
                out.push((Token::Ident(name.to_string()), start));
                i += end + 2;
            }
            b'0'..=b'9' | b'.' | b'-' => {
                if c == b'-' && !matches!(bytes.get(i + 1), Some(b'0'..=b'9' | b'.')) {
                    return Err(DslError::Lex { offset: start, message: "unexpected `-`".into() });
                }
                i += 1;
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
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| DslError::Lex {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((Token::Number(value), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.') {
                    i += 1;
                }
                let word = &src[start..i];
                let tok = match word.to_ascii_uppercase().as_str() {
                    "AND" => Token::And,
                    "OR" => Token::Or,
                    "NOT" => Token::Not,
                    _ => Token::Ident(word.to_string()),
                };
                out.push((tok, start));
            }
            _ => {
                let ch = src[i..].chars().next().expect("in bounds");
                return Err(DslError::Lex { offset: start, message: format!("unexpected character `{ch}`") });
            }
        }
    }
    out.push((Token::Eof, src.len()));
    Ok(out)
}

/// Whether `name` can be written as a bare identifier.
pub(crate) fn is_plain_ident(name: &str) -> bool {
    let mut chars = name.chars();
    let first_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    first_ok
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !matches!(name.to_ascii_uppercase().as_str(), "AND" | "OR" | "NOT")
}
