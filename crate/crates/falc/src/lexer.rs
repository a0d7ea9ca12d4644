//! Hand-written lexer. Tokens keep their source position and lexeme so
//! that diagnostics point at real input and the token stream can be
//! reassembled into the original text.

use crate::ast::Pos;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("lex error at {pos}: {message}")]
pub struct LexError {
    pub pos: Pos,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    IntLit,
    FloatLit,
    // Keywords.
    KwInt,
    KwFloat,
    KwBool,
    KwVoid,
    KwGraph,
    KwPoint,
    KwEdge,
    KwSet,
    KwCollection,
    KwForeach,
    KwIn,
    KwIf,
    KwElse,
    KwWhile,
    KwBreak,
    KwReturn,
    KwSingle,
    KwParallel,
    KwSections,
    KwSection,
    KwTrue,
    KwFalse,
    KwMaxInt,
    // Punctuation and operators.
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Dot,
    Assign,
    PlusPlus,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    AndAnd,
    OrOr,
    Not,
    Eof,
}

impl TokenKind {
    pub fn describe(self) -> &'static str {
        use TokenKind::*;
        match self {
            Ident => "identifier",
            IntLit => "integer literal",
            FloatLit => "float literal",
            KwInt => "'int'",
            KwFloat => "'float'",
            KwBool => "'bool'",
            KwVoid => "'void'",
            KwGraph => "'Graph'",
            KwPoint => "'Point'",
            KwEdge => "'Edge'",
            KwSet => "'Set'",
            KwCollection => "'Collection'",
            KwForeach => "'foreach'",
            KwIn => "'In'",
            KwIf => "'if'",
            KwElse => "'else'",
            KwWhile => "'while'",
            KwBreak => "'break'",
            KwReturn => "'return'",
            KwSingle => "'single'",
            KwParallel => "'parallel'",
            KwSections => "'sections'",
            KwSection => "'section'",
            KwTrue => "'true'",
            KwFalse => "'false'",
            KwMaxInt => "'MAX_INT'",
            LParen => "'('",
            RParen => "')'",
            LBrace => "'{'",
            RBrace => "'}'",
            LBracket => "'['",
            RBracket => "']'",
            Semi => "';'",
            Comma => "','",
            Dot => "'.'",
            Assign => "'='",
            PlusPlus => "'++'",
            Plus => "'+'",
            Minus => "'-'",
            Star => "'*'",
            Slash => "'/'",
            Percent => "'%'",
            EqEq => "'=='",
            NotEq => "'!='",
            Lt => "'<'",
            Le => "'<='",
            Gt => "'>'",
            Ge => "'>='",
            AndAnd => "'&&'",
            OrOr => "'||'",
            Not => "'!'",
            Eof => "end of input",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub pos: Pos,
}

fn keyword(ident: &str) -> Option<TokenKind> {
    use TokenKind::*;
    Some(match ident {
        "int" => KwInt,
        "float" => KwFloat,
        "bool" => KwBool,
        "void" => KwVoid,
        "Graph" => KwGraph,
        "Point" => KwPoint,
        "Edge" => KwEdge,
        "Set" => KwSet,
        "Collection" => KwCollection,
        "foreach" => KwForeach,
        "In" => KwIn,
        "if" => KwIf,
        "else" => KwElse,
        "while" => KwWhile,
        "break" => KwBreak,
        "return" => KwReturn,
        "single" => KwSingle,
        "parallel" => KwParallel,
        "sections" => KwSections,
        "section" => KwSection,
        "true" => KwTrue,
        "false" => KwFalse,
        "MAX_INT" => KwMaxInt,
        _ => return None,
    })
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, LexError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line: u32 = 1;
    let mut col: u32 = 1;

    macro_rules! push {
        ($kind:expr, $lexeme:expr, $pos:expr) => {
            tokens.push(Token { kind: $kind, lexeme: $lexeme, pos: $pos })
        };
    }

    while i < bytes.len() {
        let c = bytes[i] as char;
        let pos = Pos { line, col };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
            }
            '/' if i + 1 < bytes.len() && bytes[i + 1] == b'/' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                let text = &src[start..i];
                col += (i - start) as u32;
                match keyword(text) {
                    Some(kw) => push!(kw, text.to_string(), pos),
                    None => push!(TokenKind::Ident, text.to_string(), pos),
                }
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
                let mut kind = TokenKind::IntLit;
                if i + 1 < bytes.len()
                    && bytes[i] == b'.'
                    && (bytes[i + 1] as char).is_ascii_digit()
                {
                    kind = TokenKind::FloatLit;
                    i += 1;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
                let text = &src[start..i];
                col += (i - start) as u32;
                push!(kind, text.to_string(), pos);
            }
            _ => {
                use TokenKind::*;
                let two = if i + 1 < bytes.len() { &src[i..i + 2] } else { "" };
                let (kind, len) = match two {
                    "++" => (PlusPlus, 2),
                    "==" => (EqEq, 2),
                    "!=" => (NotEq, 2),
                    "<=" => (Le, 2),
                    ">=" => (Ge, 2),
                    "&&" => (AndAnd, 2),
                    "||" => (OrOr, 2),
                    _ => match c {
                        '(' => (LParen, 1),
                        ')' => (RParen, 1),
                        '{' => (LBrace, 1),
                        '}' => (RBrace, 1),
                        '[' => (LBracket, 1),
                        ']' => (RBracket, 1),
                        ';' => (Semi, 1),
                        ',' => (Comma, 1),
                        '.' => (Dot, 1),
                        '=' => (Assign, 1),
                        '+' => (Plus, 1),
                        '-' => (Minus, 1),
                        '*' => (Star, 1),
                        '/' => (Slash, 1),
                        '%' => (Percent, 1),
                        '<' => (Lt, 1),
                        '>' => (Gt, 1),
                        '!' => (Not, 1),
                        other => {
                            return Err(LexError {
                                pos,
                                message: format!("unexpected character '{other}'"),
                            })
                        }
                    },
                };
                push!(kind, src[i..i + len].to_string(), pos);
                i += len;
                col += len as u32;
            }
        }
    }
    tokens.push(Token { kind: TokenKind::Eof, lexeme: String::new(), pos: Pos { line, col } });
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_foreach_header() {
        let toks = tokenize("foreach (t In graph.points) t.dist = MAX_INT;").unwrap();
        let kinds: Vec<TokenKind> = toks.iter().map(|t| t.kind).collect();
        use TokenKind::*;
        assert_eq!(
            kinds,
            vec![
                KwForeach, LParen, Ident, KwIn, Ident, Dot, Ident, RParen, Ident, Dot, Ident,
                Assign, KwMaxInt, Semi, Eof
            ]
        );
    }

    #[test]
    fn lexeme_concatenation_reconstructs_source() {
        let src = "int x = 41 + 1; // comment\nwhile (x >= 2) { x = x / 2; }";
        let toks = tokenize(src).unwrap();
        // Joining lexemes with single spaces must re-tokenize to the same
        // stream (comments and layout are the only information lost).
        let joined: Vec<String> = toks.iter().map(|t| t.lexeme.clone()).collect();
        let rejoined = joined.join(" ");
        let again = tokenize(&rejoined).unwrap();
        let a: Vec<(TokenKind, &str)> = toks.iter().map(|t| (t.kind, t.lexeme.as_str())).collect();
        let b: Vec<(TokenKind, &str)> =
            again.iter().map(|t| (t.kind, t.lexeme.as_str())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn positions_are_line_and_column() {
        let toks = tokenize("int a;\n  a = 3;").unwrap();
        assert_eq!(toks[0].pos, Pos { line: 1, col: 1 });
        assert_eq!(toks[3].pos, Pos { line: 2, col: 3 }); // 'a' on line 2
    }

    #[test]
    fn rejects_illegal_character() {
        let err = tokenize("int a = 3 @ 4;").unwrap_err();
        assert_eq!(err.pos.line, 1);
        assert!(err.message.contains('@'));
    }

    #[test]
    fn plusplus_and_comparisons() {
        let toks = tokenize("lev++; a <= b != c").unwrap();
        use TokenKind::*;
        let kinds: Vec<TokenKind> = toks.iter().map(|t| t.kind).collect();
        assert_eq!(kinds, vec![Ident, PlusPlus, Semi, Ident, Le, Ident, NotEq, Ident, Eof]);
    }
}
