//! Recursive-descent parser for the formula surface syntax.
//!
//! ```text
//! spec   := or
//! or     := and ("or" and)*
//! and    := until ("and" until)*
//! until  := unary ("until" until)?
//! unary  := ("not" | "always" | "eventually") unary | atom
//! atom   := "(" spec ")" | "true" | "false" | pred
//! pred   := term cmp number
//! term   := "x" "[" int "]" | "abs" "(" "x" "[" int "]" ")"
//! cmp    := "<=" | ">=" | "<" | ">"
//! ```
//!
//! `until` is right associative. Coordinates are 0-based.

use super::{Cmp, Predicate, Spec, StlError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Cmp(Cmp),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Number(n) => format!("number `{n}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Cmp(c) => format!("`{}`", c.symbol()),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

const KEYWORDS: &[&str] = &["always", "eventually", "not", "and", "or", "until", "true", "false", "abs", "x"];

fn lex(text: &str) -> Result<Vec<Spanned>, StlError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut col);
            continue;
        }
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            '<' | '>' => {
                let eq = chars.get(i + 1) == Some(&'=');
                let cmp = match (c, eq) {
                    ('<', true) => Cmp::Le,
                    ('<', false) => Cmp::Lt,
                    ('>', true) => Cmp::Ge,
                    _ => Cmp::Gt,
                };
                if eq {
                    advance(1, &mut i, &mut col);
                }
                Tok::Cmp(cmp)
            }
            c if c.is_ascii_digit() || c == '.' || ((c == '-' || c == '+') && starts_number(&chars, i + 1)) => {
                let mut j = i + 1;
                while j < chars.len() {
                    let d = chars[j];
                    let exp_sign = (d == '-' || d == '+') && matches!(chars[j - 1], 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        j += 1;
                    } else {
                        break;
                    }
                }
                let lexeme: String = chars[i..j].iter().collect();
                out.push(Spanned { tok: Tok::Number(lexeme), line: start_line, col: start_col });
                advance(j - i, &mut i, &mut col);
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                if !KEYWORDS.contains(&word.as_str()) {
                    return Err(StlError::UnknownIdentifier { name: word, line: start_line, col: start_col });
                }
                out.push(Spanned { tok: Tok::Word(word), line: start_line, col: start_col });
                advance(j - i, &mut i, &mut col);
                continue;
            }
            other => {
                return Err(StlError::Syntax {
                    line: start_line,
                    col: start_col,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push(Spanned { tok, line: start_line, col: start_col });
        advance(1, &mut i, &mut col);
    }
    out.push(Spanned { tok: Tok::End, line, col });
    Ok(out)
}

fn starts_number(chars: &[char], i: usize) -> bool {
    chars.get(i).is_some_and(|c| c.is_ascii_digit() || *c == '.')
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> StlError {
        let t = self.peek();
        StlError::Syntax { line: t.line, col: t.col, msg: format!("expected {expected}, found {}", t.tok.describe()) }
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(&self.peek().tok, Tok::Word(x) if x == w)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), StlError> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(what))
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), StlError> {
        if self.is_word(w) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&format!("`{w}`")))
        }
    }

    fn spec(&mut self) -> Result<Spec, StlError> {
        let mut lhs = self.and()?;
        while self.is_word("or") {
            self.bump();
            lhs = Spec::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Spec, StlError> {
        let mut lhs = self.until()?;
        while self.is_word("and") {
            self.bump();
            lhs = Spec::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Spec, StlError> {
        let lhs = self.unary()?;
        if self.is_word("until") {
            self.bump();
            return Ok(Spec::until(lhs, self.until()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Spec, StlError> {
        for (kw, build) in
            [("not", Spec::not as fn(Spec) -> Spec), ("always", Spec::always), ("eventually", Spec::eventually)]
        {
            if self.is_word(kw) {
                self.bump();
                return Ok(build(self.unary()?));
            }
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Spec, StlError> {
        match self.peek().tok.clone() {
            Tok::LParen => {
                self.bump();
                let inner = self.spec()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Word(w) if w == "true" => {
                self.bump();
                Ok(Spec::True)
            }
            Tok::Word(w) if w == "false" => {
                self.bump();
                Ok(Spec::False)
            }
            Tok::Word(w) if w == "x" || w == "abs" => self.predicate(),
            _ => Err(self.error("a formula")),
        }
    }

    fn predicate(&mut self) -> Result<Spec, StlError> {
        let start = self.peek().clone();
        let magnitude = self.is_word("abs");
        if magnitude {
            self.bump();
            self.expect(Tok::LParen, "`(`")?;
        }
        let index = self.coordinate()?;
        if magnitude {
            self.expect(Tok::RParen, "`)`")?;
        }
        let cmp = match self.peek().tok {
            Tok::Cmp(c) => {
                self.bump();
                c
            }
            _ => return Err(self.error("a comparison (`<=`, `>=`, `<`, `>`)")),
        };
        let bound = self.number()?;
        let p = if magnitude {
            Predicate::Magnitude { index, cmp, bound }
        } else {
            Predicate::Coordinate { index, cmp, bound }
        };
        p.validate().map_err(|e| StlError::Syntax { line: start.line, col: start.col, msg: e.to_string() })?;
        Ok(Spec::Pred(p))
    }

    fn coordinate(&mut self) -> Result<usize, StlError> {
        self.expect_word("x")?;
        self.expect(Tok::LBracket, "`[`")?;
        let t = self.peek().clone();
        let index = match &t.tok {
            Tok::Number(n) if n.chars().all(|c| c.is_ascii_digit()) => n.parse::<usize>().map_err(|e| {
                StlError::Syntax { line: t.line, col: t.col, msg: format!("bad coordinate index: {e}") }
            })?,
            _ => return Err(self.error("a non-negative integer coordinate index")),
        };
        self.bump();
        self.expect(Tok::RBracket, "`]`")?;
        Ok(index)
    }

    fn number(&mut self) -> Result<f64, StlError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Number(n) => {
                let v = n.parse::<f64>().map_err(|_| StlError::Syntax {
                    line: t.line,
                    col: t.col,
                    msg: format!("malformed number `{n}`"),
                })?;
                self.bump();
                Ok(v)
            }
            _ => Err(self.error("a number")),
        }
    }
}

/// Parses formula text into a [`Spec`].
pub fn parse_spec(text: &str) -> Result<Spec, StlError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let spec = p.spec()?;
    if p.peek().tok != Tok::End {
        return Err(p.error("end of input"));
    }
    Ok(spec)
}
