//! Tokenizer for the supported Solidity subset.
//!
//! Comments and whitespace are dropped, so nothing inside a comment can ever
//! become an AST node.

use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    HexNumber,
    Str,
    HexStr,
    Punct,
    Eof,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Byte offsets into the source.
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub column: u32,
}

impl Token {
    pub fn is(&self, text: &str) -> bool {
        matches!(self.kind, TokenKind::Ident | TokenKind::Punct) && self.text == text
    }
}

// Longest first so that maximal munch works with a linear scan.
const PUNCTS: &[&str] = &[
    ">>>=", "<<=", ">>=", "**=", ">>>", "...", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=",
    "-=", "*=", "/=", "%=", "|=", "&=", "^=", "<<", ">>", "**", "=>", "->", ":=", "(", ")", "[",
    "]", "{", "}", ";", ",", ".", "?", ":", "=", "+", "-", "*", "/", "%", "!", "~", "&", "|", "^",
    "<", ">", "@",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    // Advances over `n` bytes, keeping line/column in sync.
    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, n: usize| {
        for _ in 0..n {
            if bytes[*i] == b'\n' {
                *line += 1;
                *col = 1;
            } else if bytes[*i] & 0xC0 != 0x80 {
                *col += 1;
            }
            *i += 1;
        }
    };

    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            let (sl, sc) = (line, col);
            advance(&mut i, &mut line, &mut col, 2);
            loop {
                if i + 1 >= bytes.len() {
                    return Err(ParseError::new("unterminated block comment", sl, sc));
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    advance(&mut i, &mut line, &mut col, 2);
                    break;
                }
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }

        let start = i;
        let (tl, tc) = (line, col);

        // hex"..." / unicode"..." prefixes
        let string_prefix = ["hex", "unicode"].iter().find_map(|p| {
            let pb = p.as_bytes();
            let q = bytes.get(i + pb.len()).copied();
            (bytes[i..].starts_with(pb) && matches!(q, Some(b'"') | Some(b'\'')))
                .then_some(pb.len())
        });
        if let Some(plen) = string_prefix {
            let is_hex = bytes[i] == b'h';
            advance(&mut i, &mut line, &mut col, plen);
            scan_string(bytes, &mut i, &mut line, &mut col, tl, tc, &advance)?;
            out.push(Token {
                kind: if is_hex { TokenKind::HexStr } else { TokenKind::Str },
                text: src[start..i].to_string(),
                start,
                end: i,
                line: tl,
                column: tc,
            });
            continue;
        }

        if c.is_ascii_alphabetic() || c == b'_' || c == b'$' {
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$')
            {
                advance(&mut i, &mut line, &mut col, 1);
            }
            out.push(Token {
                kind: TokenKind::Ident,
                text: src[start..i].to_string(),
                start,
                end: i,
                line: tl,
                column: tc,
            });
            continue;
        }

        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let kind = if c == b'0' && matches!(bytes.get(i + 1), Some(b'x') | Some(b'X')) {
                advance(&mut i, &mut line, &mut col, 2);
                while i < bytes.len() && (bytes[i].is_ascii_hexdigit() || bytes[i] == b'_') {
                    advance(&mut i, &mut line, &mut col, 1);
                }
                TokenKind::HexNumber
            } else {
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == b'_'
                        || bytes[i] == b'.'
                        || bytes[i] == b'e'
                        || bytes[i] == b'E'
                        || ((bytes[i] == b'-') && matches!(bytes[i - 1], b'e' | b'E')))
                {
                    advance(&mut i, &mut line, &mut col, 1);
                }
                TokenKind::Number
            };
            out.push(Token {
                kind,
                text: src[start..i].to_string(),
                start,
                end: i,
                line: tl,
                column: tc,
            });
            continue;
        }

        if c == b'"' || c == b'\'' {
            scan_string(bytes, &mut i, &mut line, &mut col, tl, tc, &advance)?;
            out.push(Token {
                kind: TokenKind::Str,
                text: src[start..i].to_string(),
                start,
                end: i,
                line: tl,
                column: tc,
            });
            continue;
        }

        let Some(p) = PUNCTS.iter().find(|p| bytes[i..].starts_with(p.as_bytes())) else {
            return Err(ParseError::new(
                format!("unexpected character {:?}", src[i..].chars().next().unwrap_or('?')),
                tl,
                tc,
            ));
        };
        advance(&mut i, &mut line, &mut col, p.len());
        out.push(Token {
            kind: TokenKind::Punct,
            text: (*p).to_string(),
            start,
            end: i,
            line: tl,
            column: tc,
        });
    }

    out.push(Token {
        kind: TokenKind::Eof,
        text: String::new(),
        start: bytes.len(),
        end: bytes.len(),
        line,
        column: col,
    });
    Ok(out)
}

fn scan_string(
    bytes: &[u8],
    i: &mut usize,
    line: &mut u32,
    col: &mut u32,
    tl: u32,
    tc: u32,
    advance: &impl Fn(&mut usize, &mut u32, &mut u32, usize),
) -> Result<(), ParseError> {
    let quote = bytes[*i];
    advance(i, line, col, 1);
    loop {
        match bytes.get(*i) {
            None | Some(b'\n') => return Err(ParseError::new("unterminated string literal", tl, tc)),
            Some(b'\\') => advance(i, line, col, 2.min(bytes.len() - *i)),
            Some(&b) if b == quote => {
                advance(i, line, col, 1);
                return Ok(());
            }
            Some(_) => advance(i, line, col, 1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<String> {
        tokenize(src).unwrap().into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn comments_are_dropped() {
        let toks = texts("a // ecrecover(x)\n/* ecrecover */ b");
        assert_eq!(toks, vec!["a", "b", ""]);
    }

    #[test]
    fn maximal_munch() {
        assert_eq!(texts("a>>=b"), vec!["a", ">>=", "b", ""]);
        assert_eq!(texts("x:=mload(p)"), vec!["x", ":=", "mload", "(", "p", ")", ""]);
    }

    #[test]
    fn positions_track_lines() {
        let toks = tokenize("a\n  bb").unwrap();
        assert_eq!((toks[1].line, toks[1].column), (2, 3));
        assert_eq!(&"a\n  bb"[toks[1].start..toks[1].end], "bb");
    }

    #[test]
    fn strings_and_hex() {
        let toks = tokenize(r#"x = "\x19\x01"; y = hex"00ff"; z = 0x7F_FF;"#).unwrap();
        assert_eq!(toks[2].kind, TokenKind::Str);
        assert_eq!(toks[6].kind, TokenKind::HexStr);
        assert_eq!(toks[10].kind, TokenKind::HexNumber);
    }

    #[test]
    fn unterminated_string_is_an_error() {
        let err = tokenize("x = \"abc\n").unwrap_err();
        assert_eq!((err.line, err.column), (1, 5));
    }
}
