use super::diag::{DiagCode, Diagnostic, Span};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    /// Bare word: identifiers, numbers, dotted quads, `10s`, `60B`, ...
    Atom(String),
    /// Double-quoted string, escapes already processed.
    Str(Vec<u8>),
    Colon,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Eof,
}

impl TokenKind {
    pub fn describe(&self) -> String {
        match self {
            TokenKind::Atom(a) => format!("`{a}`"),
            TokenKind::Str(_) => "string literal".to_string(),
            TokenKind::Colon => "`:`".to_string(),
            TokenKind::LBrace => "`{`".to_string(),
            TokenKind::RBrace => "`}`".to_string(),
            TokenKind::LBracket => "`[`".to_string(),
            TokenKind::RBracket => "`]`".to_string(),
            TokenKind::Comma => "`,`".to_string(),
            TokenKind::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || matches!(c, ':' | '{' | '}' | '[' | ']' | ',' | '"')
}

struct Cursor {
    chars: Vec<char>,
    idx: usize,
    line: u32,
    column: u32,
    // position of the last consumed char, so EOF lands inside the text
    last: Span,
}

impl Cursor {
    fn new(src: &str) -> Self {
        Self {
            chars: src.chars().collect(),
            idx: 0,
            line: 1,
            column: 1,
            last: Span::new(1, 1),
        }
    }

    fn pos(&self) -> Span {
        Span::new(self.line, self.column)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.idx).copied()
    }

    fn at_comment(&self) -> bool {
        self.peek() == Some('/') && self.chars.get(self.idx + 1) == Some(&'/')
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.idx += 1;
        self.last = self.pos();
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }
}

/// Splits source text into tokens. Never fails outright: problems are
/// reported as diagnostics and lexing continues.
pub fn tokenize(src: &str) -> (Vec<Token>, Vec<Diagnostic>) {
    let mut cur = Cursor::new(src);
    let mut tokens = Vec::new();
    let mut diags = Vec::new();

    while let Some(c) = cur.peek() {
        let start = cur.pos();
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        if cur.at_comment() {
            while let Some(c) = cur.bump() {
                if c == '\n' {
                    break;
                }
            }
            continue;
        }
        let simple = match c {
            ':' => Some(TokenKind::Colon),
            '{' => Some(TokenKind::LBrace),
            '}' => Some(TokenKind::RBrace),
            '[' => Some(TokenKind::LBracket),
            ']' => Some(TokenKind::RBracket),
            ',' => Some(TokenKind::Comma),
            _ => None,
        };
        if let Some(kind) = simple {
            cur.bump();
            tokens.push(Token { kind, span: start });
            continue;
        }
        if c == '"' {
            cur.bump();
            match lex_string(&mut cur) {
                Ok(bytes) => tokens.push(Token {
                    kind: TokenKind::Str(bytes),
                    span: start,
                }),
                Err(d) => diags.push(d),
            }
            continue;
        }

        let mut word = String::new();
        while let Some(c) = cur.peek() {
            if is_delimiter(c) || cur.at_comment() {
                break;
            }
            word.push(c);
            cur.bump();
        }
        tokens.push(Token {
            kind: TokenKind::Atom(word),
            span: start,
        });
    }

    let eof = if tokens.is_empty() && src.is_empty() {
        Span::new(1, 1)
    } else {
        cur.last
    };
    tokens.push(Token {
        kind: TokenKind::Eof,
        span: eof,
    });
    (tokens, diags)
}

fn lex_string(cur: &mut Cursor) -> Result<Vec<u8>, Diagnostic> {
    let mut out = Vec::new();
    loop {
        let here = cur.pos();
        let Some(c) = cur.bump() else {
            return Err(Diagnostic::error(
                cur.last,
                DiagCode::Syntax,
                "unterminated string literal",
            ));
        };
        match c {
            '"' => return Ok(out),
            '\n' => {
                return Err(Diagnostic::error(
                    here,
                    DiagCode::Syntax,
                    "unterminated string literal",
                ))
            }
            '\\' => {
                let esc = cur.bump();
                match esc {
                    Some('"') => out.push(b'"'),
                    Some('\\') => out.push(b'\\'),
                    Some('n') => out.push(b'\n'),
                    Some('r') => out.push(b'\r'),
                    Some('t') => out.push(b'\t'),
                    Some('0') => out.push(0),
                    Some('x') => {
                        let hi = cur.bump().and_then(|c| c.to_digit(16));
                        let lo = cur.bump().and_then(|c| c.to_digit(16));
                        match (hi, lo) {
                            (Some(hi), Some(lo)) => out.push((hi * 16 + lo) as u8),
                            _ => {
                                return Err(Diagnostic::error(
                                    here,
                                    DiagCode::Syntax,
                                    "`\\x` escape needs two hex digits",
                                ))
                            }
                        }
                    }
                    other => {
                        return Err(Diagnostic::error(
                            here,
                            DiagCode::Syntax,
                            format!(
                                "unknown escape `\\{}`",
                                other.map(String::from).unwrap_or_default()
                            ),
                        ))
                    }
                }
            }
            c => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        let (toks, diags) = tokenize(src);
        assert!(diags.is_empty(), "{diags:?}");
        toks.into_iter().map(|t| t.kind).collect()
    }

    fn atom(s: &str) -> TokenKind {
        TokenKind::Atom(s.to_string())
    }

    #[test]
    fn splits_glued_punctuation() {
        assert_eq!(
            kinds("Platform: P1{\n type: Native }"),
            vec![
                atom("Platform"),
                TokenKind::Colon,
                atom("P1"),
                TokenKind::LBrace,
                atom("type"),
                TokenKind::Colon,
                atom("Native"),
                TokenKind::RBrace,
                TokenKind::Eof
            ]
        );
        assert_eq!(
            kinds("{SN1[5],SN2[1]}"),
            vec![
                TokenKind::LBrace,
                atom("SN1"),
                TokenKind::LBracket,
                atom("5"),
                TokenKind::RBracket,
                TokenKind::Comma,
                atom("SN2"),
                TokenKind::LBracket,
                atom("1"),
                TokenKind::RBracket,
                TokenKind::RBrace,
                TokenKind::Eof
            ]
        );
    }

    #[test]
    fn dotted_quads_and_units_are_single_atoms() {
        assert_eq!(
            kinds("IP:192.168.0.2 step:500ms"),
            vec![
                atom("IP"),
                TokenKind::Colon,
                atom("192.168.0.2"),
                atom("step"),
                TokenKind::Colon,
                atom("500ms"),
                TokenKind::Eof
            ]
        );
    }

    #[test]
    fn comments() {
        assert_eq!(
            kinds("// header\nport:1883 // trailing\n"),
            vec![atom("port"), TokenKind::Colon, atom("1883"), TokenKind::Eof]
        );
        assert_eq!(kinds("port//x"), vec![atom("port"), TokenKind::Eof]);
    }

    #[test]
    fn strings_and_escapes() {
        assert_eq!(
            kinds(r#""23C" "a\"b\\\x41""#),
            vec![
                TokenKind::Str(b"23C".to_vec()),
                TokenKind::Str(b"a\"b\\A".to_vec()),
                TokenKind::Eof
            ]
        );
        let (_, diags) = tokenize("payload:\"abc");
        assert_eq!(diags.len(), 1);
        assert_eq!((diags[0].line, diags[0].column), (1, 12));
    }

    #[test]
    fn positions() {
        let (toks, _) = tokenize("a\n  bb:");
        assert_eq!((toks[1].span.line, toks[1].span.column), (2, 3));
        assert_eq!((toks[2].span.line, toks[2].span.column), (2, 5));
    }
}
