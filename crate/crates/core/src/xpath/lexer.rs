use super::XPathError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Slash,
    DoubleSlash,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Dot,
    DoubleDot,
    At,
    Comma,
    DoubleColon,
    Pipe,
    Plus,
    Minus,
    Eq,
    Neq,
    Lt,
    Lte,
    Gt,
    Gte,
    /// `*` used as a multiplication operator.
    Multiply,
    /// `*` used as a name test.
    Star,
    And,
    Or,
    Mod,
    Div,
    Literal(String),
    Number(f64),
    Variable(String),
    /// A name test; may be `prefix:*`.
    Name(String),
    NodeType(String),
    FunctionName(String),
    AxisName(String),
}

impl Token {
    /// Whether a following `*` or NCName must be read as an operator.
    fn forces_operator(&self) -> bool {
        !matches!(
            self,
            Token::At
                | Token::DoubleColon
                | Token::LParen
                | Token::LBracket
                | Token::Comma
                | Token::Slash
                | Token::DoubleSlash
                | Token::Pipe
                | Token::Plus
                | Token::Minus
                | Token::Eq
                | Token::Neq
                | Token::Lt
                | Token::Lte
                | Token::Gt
                | Token::Gte
                | Token::Multiply
                | Token::And
                | Token::Or
                | Token::Mod
                | Token::Div
        )
    }
}

fn is_name_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | '\u{b7}')
}

pub(crate) fn tokenize(input: &str) -> Result<Vec<Token>, XPathError> {
    let chars: Vec<char> = input.chars().collect();
    let mut tokens: Vec<Token> = Vec::new();
    let mut i = 0;

    let err = |msg: String| XPathError::Invalid(msg);

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let operator_context = tokens.last().is_some_and(Token::forces_operator);
        let next = chars.get(i + 1).copied();
        let tok = match c {
            '/' if next == Some('/') => {
                i += 2;
                Token::DoubleSlash
            }
            '/' => {
                i += 1;
                Token::Slash
            }
            '(' => {
                i += 1;
                Token::LParen
            }
            ')' => {
                i += 1;
                Token::RParen
            }
            '[' => {
                i += 1;
                Token::LBracket
            }
            ']' => {
                i += 1;
                Token::RBracket
            }
            '.' if next == Some('.') => {
                i += 2;
                Token::DoubleDot
            }
            '.' if next.is_some_and(|d| d.is_ascii_digit()) => {
                let (n, len) = read_number(&chars[i..]);
                i += len;
                Token::Number(n)
            }
            '.' => {
                i += 1;
                Token::Dot
            }
            '@' => {
                i += 1;
                Token::At
            }
            ',' => {
                i += 1;
                Token::Comma
            }
            ':' if next == Some(':') => {
                i += 2;
                Token::DoubleColon
            }
            '|' => {
                i += 1;
                Token::Pipe
            }
            '+' => {
                i += 1;
                Token::Plus
            }
            '-' => {
                i += 1;
                Token::Minus
            }
            '=' => {
                i += 1;
                Token::Eq
            }
            '!' if next == Some('=') => {
                i += 2;
                Token::Neq
            }
            '<' if next == Some('=') => {
                i += 2;
                Token::Lte
            }
            '<' => {
                i += 1;
                Token::Lt
            }
            '>' if next == Some('=') => {
                i += 2;
                Token::Gte
            }
            '>' => {
                i += 1;
                Token::Gt
            }
            '*' => {
                i += 1;
                if operator_context {
                    Token::Multiply
                } else {
                    Token::Star
                }
            }
            '"' | '\'' => {
                let close = chars[i + 1..]
                    .iter()
                    .position(|&d| d == c)
                    .ok_or_else(|| err(format!("unterminated string literal at {i}")))?;
                let lit: String = chars[i + 1..i + 1 + close].iter().collect();
                i += close + 2;
                Token::Literal(lit)
            }
            '$' => {
                let (name, len) = read_qname(&chars[i + 1..]);
                if name.is_empty() {
                    return Err(err(format!("bad variable reference at {i}")));
                }
                i += 1 + len;
                Token::Variable(name)
            }
            d if d.is_ascii_digit() => {
                let (n, len) = read_number(&chars[i..]);
                i += len;
                Token::Number(n)
            }
            s if is_name_start(s) => {
                let (name, len) = read_qname(&chars[i..]);
                i += len;
                if operator_context {
                    match name.as_str() {
                        "and" => Token::And,
                        "or" => Token::Or,
                        "mod" => Token::Mod,
                        "div" => Token::Div,
                        other => return Err(err(format!("expected operator, found `{other}`"))),
                    }
                } else {
                    let mut j = i;
                    while j < chars.len() && chars[j].is_whitespace() {
                        j += 1;
                    }
                    let follow = chars.get(j).copied();
                    let follow2 = chars.get(j + 1).copied();
                    if follow == Some('(') {
                        match name.as_str() {
                            "comment" | "text" | "processing-instruction" | "node" => {
                                Token::NodeType(name)
                            }
                            _ => Token::FunctionName(name),
                        }
                    } else if follow == Some(':') && follow2 == Some(':') {
                        Token::AxisName(name)
                    } else if follow == Some(':') && follow2 == Some('*') && !name.contains(':') {
                        i = j + 2;
                        Token::Name(format!("{name}:*"))
                    } else {
                        Token::Name(name)
                    }
                }
            }
            other => return Err(err(format!("unexpected character `{other}` at {i}"))),
        };
        tokens.push(tok);
    }
    Ok(tokens)
}

fn read_number(chars: &[char]) -> (f64, usize) {
    let mut len = 0;
    while len < chars.len() && chars[len].is_ascii_digit() {
        len += 1;
    }
    if len < chars.len() && chars[len] == '.' {
        len += 1;
        while len < chars.len() && chars[len].is_ascii_digit() {
            len += 1;
        }
    }
    let s: String = chars[..len].iter().collect();
    (s.parse().unwrap_or(f64::NAN), len)
}

/// Reads an NCName, or a QName `prefix:local` when the colon is followed by a
/// name character.
fn read_qname(chars: &[char]) -> (String, usize) {
    let mut len = 0;
    if len < chars.len() && is_name_start(chars[len]) {
        len += 1;
        while len < chars.len() && is_name_char(chars[len]) {
            len += 1;
        }
    }
    if len > 0 && len + 1 < chars.len() && chars[len] == ':' && is_name_start(chars[len + 1]) {
        let mut l2 = len + 2;
        while l2 < chars.len() && is_name_char(chars[l2]) {
            l2 += 1;
        }
        len = l2;
    }
    (chars[..len].iter().collect(), len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_and_names_disambiguate() {
        let toks = tokenize("//div[@class='a']/*").unwrap();
        assert_eq!(toks.last(), Some(&Token::Star));
        let toks = tokenize("2 * 3").unwrap();
        assert_eq!(toks[1], Token::Multiply);
        let toks = tokenize("count(//p) div 2").unwrap();
        assert!(toks.contains(&Token::Div));
        let toks = tokenize("//div/div").unwrap();
        assert_eq!(toks[3], Token::Name("div".into()));
    }

    #[test]
    fn axis_and_node_types() {
        let toks = tokenize("following-sibling::text()").unwrap();
        assert_eq!(toks[0], Token::AxisName("following-sibling".into()));
        assert_eq!(toks[2], Token::NodeType("text".into()));
    }

    #[test]
    fn numbers_and_literals() {
        let toks = tokenize(r#"p[.5 = "x"]"#).unwrap();
        assert_eq!(toks[2], Token::Number(0.5));
        assert_eq!(toks[4], Token::Literal("x".into()));
        assert!(tokenize("'open").is_err());
    }
}
