//! Constraint expressions over parameter values.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! or      := and ( "||" and )*
//! and     := eq ( "&&" eq )*
//! eq      := cmp ( ("==" | "!=") cmp )*
//! cmp     := sum ( ("<" | "<=" | ">" | ">=") sum )*
//! sum     := product ( ("+" | "-") product )*
//! product := unary ( ("*" | "/" | "%") unary )*
//! unary   := ("!" | "-") unary | atom
//! atom    := integer | "true" | "false" | string | identifier | "(" or ")"
//! ```
//!
//! Parsing yields an [`Ast`] that still refers to parameters by name.
//! [`Ast::compile`] resolves names against a parameter table and type-checks:
//! arithmetic and ordering need integers, `&&`/`||`/`!` need booleans, `==`
//! and `!=` need both sides of the same type, and the whole expression must be
//! boolean. String literals only make sense against categorical parameters.
//!
//! Division truncates toward zero and `%` takes the sign of the dividend.
//! Division or modulo by zero and overflow are evaluation errors.

use std::fmt;

use super::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AstKind {
    Int(i64),
    Bool(bool),
    Str(String),
    Param(String),
    Unary(UnOp, Box<Ast>),
    Binary(BinOp, Box<Ast>, Box<Ast>),
}

/// Parsed expression node; `pos` is the 0-based char offset in the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ast {
    pub kind: AstKind,
    pub pos: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExprErrorKind {
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("unexpected {found}, expected {expected}")]
    UnexpectedToken {
        found: String,
        expected: &'static str,
    },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unterminated string literal")]
    UnterminatedString,
    #[error("integer literal out of range")]
    IntegerOutOfRange,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("type error: {0}")]
    Type(String),
}

/// Parse or compile error, located at a 1-based column of the expression text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("column {column}: {kind}")]
pub struct ExprError {
    pub column: usize,
    pub kind: ExprErrorKind,
}

impl ExprError {
    fn at(pos: usize, kind: ExprErrorKind) -> Self {
        ExprError {
            column: pos + 1,
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("modulo by zero")]
    ModuloByZero,
    #[error("integer overflow")]
    Overflow,
    #[error("parameter value has the wrong type")]
    TypeMismatch,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Ident(String),
    Str(String),
    Op(&'static str),
    LParen,
    RParen,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Int(v) => write!(f, "integer `{v}`"),
            Tok::Ident(v) => write!(f, "identifier `{v}`"),
            Tok::Str(v) => write!(f, "string {v:?}"),
            Tok::Op(v) => write!(f, "`{v}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
        }
    }
}

const TWO_CHAR_OPS: [&str; 6] = ["==", "!=", "<=", ">=", "&&", "||"];
const ONE_CHAR_OPS: [&str; 8] = ["+", "-", "*", "/", "%", "<", ">", "!"];

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[start..i].iter().collect();
            let value = digits
                .parse::<i64>()
                .map_err(|_| ExprError::at(start, ExprErrorKind::IntegerOutOfRange))?;
            out.push((Tok::Int(value), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), start));
        } else if c == '"' || c == '\'' {
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(ExprError::at(start, ExprErrorKind::UnterminatedString)),
                    Some(&ch) if ch == c => {
                        i += 1;
                        break;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            out.push((Tok::Str(s), start));
        } else if c == '(' {
            out.push((Tok::LParen, start));
            i += 1;
        } else if c == ')' {
            out.push((Tok::RParen, start));
            i += 1;
        } else {
            let pair: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            if let Some(op) = TWO_CHAR_OPS.iter().find(|op| **op == pair) {
                out.push((Tok::Op(op), start));
                i += 2;
            } else if let Some(op) = ONE_CHAR_OPS.iter().find(|op| op.starts_with(c)) {
                out.push((Tok::Op(op), start));
                i += 1;
            } else {
                return Err(ExprError::at(start, ExprErrorKind::UnexpectedChar(c)));
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    end: usize,
}

impl Parser {
    fn peek_op(&self) -> Option<&'static str> {
        match self.toks.get(self.idx) {
            Some((Tok::Op(op), _)) => Some(op),
            _ => None,
        }
    }

    fn binary_level(
        &mut self,
        ops: &[(&str, BinOp)],
        next: fn(&mut Parser) -> Result<Ast, ExprError>,
    ) -> Result<Ast, ExprError> {
        let mut lhs = next(self)?;
        while let Some(op) = self.peek_op() {
            let Some(&(_, bin)) = ops.iter().find(|(sym, _)| *sym == op) else {
                break;
            };
            let pos = self.toks[self.idx].1;
            self.idx += 1;
            let rhs = next(self)?;
            lhs = Ast {
                kind: AstKind::Binary(bin, Box::new(lhs), Box::new(rhs)),
                pos,
            };
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Ast, ExprError> {
        self.binary_level(&[("||", BinOp::Or)], Parser::and)
    }

    fn and(&mut self) -> Result<Ast, ExprError> {
        self.binary_level(&[("&&", BinOp::And)], Parser::eq)
    }

    fn eq(&mut self) -> Result<Ast, ExprError> {
        self.binary_level(&[("==", BinOp::Eq), ("!=", BinOp::Ne)], Parser::cmp)
    }

    fn cmp(&mut self) -> Result<Ast, ExprError> {
        self.binary_level(
            &[
                ("<", BinOp::Lt),
                ("<=", BinOp::Le),
                (">", BinOp::Gt),
                (">=", BinOp::Ge),
            ],
            Parser::sum,
        )
    }

    fn sum(&mut self) -> Result<Ast, ExprError> {
        self.binary_level(&[("+", BinOp::Add), ("-", BinOp::Sub)], Parser::product)
    }

    fn product(&mut self) -> Result<Ast, ExprError> {
        self.binary_level(
            &[("*", BinOp::Mul), ("/", BinOp::Div), ("%", BinOp::Rem)],
            Parser::unary,
        )
    }

    fn unary(&mut self) -> Result<Ast, ExprError> {
        let op = match self.peek_op() {
            Some("!") => UnOp::Not,
            Some("-") => UnOp::Neg,
            _ => return self.atom(),
        };
        let pos = self.toks[self.idx].1;
        self.idx += 1;
        let inner = self.unary()?;
        Ok(Ast {
            kind: AstKind::Unary(op, Box::new(inner)),
            pos,
        })
    }

    fn atom(&mut self) -> Result<Ast, ExprError> {
        let Some((tok, pos)) = self.toks.get(self.idx).cloned() else {
            return Err(ExprError::at(self.end, ExprErrorKind::UnexpectedEnd));
        };
        self.idx += 1;
        let kind = match tok {
            Tok::Int(v) => AstKind::Int(v),
            Tok::Str(s) => AstKind::Str(s),
            Tok::Ident(name) => match name.as_str() {
                "true" => AstKind::Bool(true),
                "false" => AstKind::Bool(false),
                _ => AstKind::Param(name),
            },
            Tok::LParen => {
                let inner = self.or()?;
                match self.toks.get(self.idx) {
                    Some((Tok::RParen, _)) => {
                        self.idx += 1;
                        return Ok(inner);
                    }
                    Some((found, at)) => {
                        return Err(ExprError::at(
                            *at,
                            ExprErrorKind::UnexpectedToken {
                                found: found.to_string(),
                                expected: "`)`",
                            },
                        ))
                    }
                    None => return Err(ExprError::at(self.end, ExprErrorKind::UnexpectedEnd)),
                }
            }
            found => {
                return Err(ExprError::at(
                    pos,
                    ExprErrorKind::UnexpectedToken {
                        found: found.to_string(),
                        expected: "an operand",
                    },
                ))
            }
        };
        Ok(Ast { kind, pos })
    }
}

/// Parses constraint text into an unresolved syntax tree.
pub fn parse(text: &str) -> Result<Ast, ExprError> {
    let toks = lex(text)?;
    let end = text.chars().count();
    let mut parser = Parser { toks, idx: 0, end };
    let ast = parser.or()?;
    if let Some((found, pos)) = parser.toks.get(parser.idx) {
        return Err(ExprError::at(
            *pos,
            ExprErrorKind::UnexpectedToken {
                found: found.to_string(),
                expected: "an operator or end of expression",
            },
        ));
    }
    Ok(ast)
}

/// Static type of an expression or parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueType {
    Int,
    Bool,
    Str,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Int => "integer",
            ValueType::Bool => "boolean",
            ValueType::Str => "string",
        })
    }
}

/// Name and type of each parameter an expression may reference, by index.
pub trait ParamTable {
    fn lookup(&self, name: &str) -> Option<(usize, ValueType)>;
}

impl ParamTable for [(String, ValueType)] {
    fn lookup(&self, name: &str) -> Option<(usize, ValueType)> {
        self.iter()
            .position(|(n, _)| n == name)
            .map(|i| (i, self[i].1))
    }
}

/// Type-checked expression with parameters resolved to indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Compiled {
    Int(i64),
    Bool(bool),
    Str(String),
    Param(usize),
    Not(Box<Compiled>),
    Neg(Box<Compiled>),
    Binary(BinOp, Box<Compiled>, Box<Compiled>),
}

enum Scalar<'a> {
    Int(i64),
    Bool(bool),
    Str(&'a str),
}

impl Ast {
    /// Resolves parameters and type-checks; the result must be boolean.
    pub fn compile<T: ParamTable + ?Sized>(&self, params: &T) -> Result<Compiled, ExprError> {
        let (compiled, ty) = self.check(params)?;
        if ty != ValueType::Bool {
            return Err(ExprError::at(
                self.pos,
                ExprErrorKind::Type(format!("constraint must be boolean, found {ty}")),
            ));
        }
        Ok(compiled)
    }

    fn check<T: ParamTable + ?Sized>(
        &self,
        params: &T,
    ) -> Result<(Compiled, ValueType), ExprError> {
        let type_err = |msg: String| ExprError::at(self.pos, ExprErrorKind::Type(msg));
        Ok(match &self.kind {
            AstKind::Int(v) => (Compiled::Int(*v), ValueType::Int),
            AstKind::Bool(v) => (Compiled::Bool(*v), ValueType::Bool),
            AstKind::Str(v) => (Compiled::Str(v.clone()), ValueType::Str),
            AstKind::Param(name) => {
                let (idx, ty) = params.lookup(name).ok_or_else(|| {
                    ExprError::at(self.pos, ExprErrorKind::UnknownParam(name.clone()))
                })?;
                (Compiled::Param(idx), ty)
            }
            AstKind::Unary(op, inner) => {
                let (c, ty) = inner.check(params)?;
                match op {
                    UnOp::Not if ty == ValueType::Bool => (Compiled::Not(Box::new(c)), ty),
                    UnOp::Neg if ty == ValueType::Int => (Compiled::Neg(Box::new(c)), ty),
                    UnOp::Not => return Err(type_err(format!("`!` applied to {ty}"))),
                    UnOp::Neg => return Err(type_err(format!("unary `-` applied to {ty}"))),
                }
            }
            AstKind::Binary(op, lhs, rhs) => {
                let (l, lt) = lhs.check(params)?;
                let (r, rt) = rhs.check(params)?;
                let out = match op {
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem => {
                        if lt != ValueType::Int || rt != ValueType::Int {
                            return Err(type_err(format!(
                                "arithmetic `{}` needs integers, found {lt} and {rt}",
                                op.symbol()
                            )));
                        }
                        ValueType::Int
                    }
                    BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                        if lt != ValueType::Int || rt != ValueType::Int {
                            return Err(type_err(format!(
                                "comparison `{}` needs integers, found {lt} and {rt}",
                                op.symbol()
                            )));
                        }
                        ValueType::Bool
                    }
                    BinOp::Eq | BinOp::Ne => {
                        if lt != rt {
                            return Err(type_err(format!(
                                "`{}` compares {lt} with {rt}",
                                op.symbol()
                            )));
                        }
                        ValueType::Bool
                    }
                    BinOp::And | BinOp::Or => {
                        if lt != ValueType::Bool || rt != ValueType::Bool {
                            return Err(type_err(format!(
                                "`{}` needs booleans, found {lt} and {rt}",
                                op.symbol()
                            )));
                        }
                        ValueType::Bool
                    }
                };
                (Compiled::Binary(*op, Box::new(l), Box::new(r)), out)
            }
        })
    }

    /// Names of all referenced parameters, in order of appearance.
    pub fn params(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.kind {
            AstKind::Param(name) => out.push(name),
            AstKind::Unary(_, inner) => inner.collect_params(out),
            AstKind::Binary(_, l, r) => {
                l.collect_params(out);
                r.collect_params(out);
            }
            _ => {}
        }
    }
}

/// Canonical rendering: every compound subexpression is parenthesized, so
/// layout and redundant parentheses in the source do not matter.
impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.render(f, true)
    }
}

impl Ast {
    fn render(&self, f: &mut fmt::Formatter<'_>, top: bool) -> fmt::Result {
        match &self.kind {
            AstKind::Int(v) => write!(f, "{v}"),
            AstKind::Bool(v) => write!(f, "{v}"),
            AstKind::Str(v) => write!(f, "{}", serde_json::to_string(v).map_err(|_| fmt::Error)?),
            AstKind::Param(name) => f.write_str(name),
            AstKind::Unary(op, inner) => {
                f.write_str(match op {
                    UnOp::Not => "!",
                    UnOp::Neg => "-",
                })?;
                inner.render(f, false)
            }
            AstKind::Binary(op, l, r) => {
                if !top {
                    f.write_str("(")?;
                }
                l.render(f, false)?;
                write!(f, " {} ", op.symbol())?;
                r.render(f, false)?;
                if !top {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

impl Compiled {
    /// Evaluates a boolean expression against values indexed like the
    /// parameter table it was compiled with.
    pub fn eval_bool(&self, values: &[&Value]) -> Result<bool, EvalError> {
        match self.eval(values)? {
            Scalar::Bool(b) => Ok(b),
            _ => Err(EvalError::TypeMismatch),
        }
    }

    fn eval<'a>(&'a self, values: &[&'a Value]) -> Result<Scalar<'a>, EvalError> {
        Ok(match self {
            Compiled::Int(v) => Scalar::Int(*v),
            Compiled::Bool(v) => Scalar::Bool(*v),
            Compiled::Str(v) => Scalar::Str(v),
            Compiled::Param(i) => match values[*i] {
                Value::Int(v) => Scalar::Int(*v),
                Value::Bool(v) => Scalar::Bool(*v),
                Value::Str(v) => Scalar::Str(v),
            },
            Compiled::Not(inner) => Scalar::Bool(!inner.eval_bool(values)?),
            Compiled::Neg(inner) => Scalar::Int(
                inner
                    .eval_int(values)?
                    .checked_neg()
                    .ok_or(EvalError::Overflow)?,
            ),
            Compiled::Binary(op, l, r) => match op {
                BinOp::And => Scalar::Bool(l.eval_bool(values)? && r.eval_bool(values)?),
                BinOp::Or => Scalar::Bool(l.eval_bool(values)? || r.eval_bool(values)?),
                BinOp::Eq | BinOp::Ne => {
                    let equal = match (l.eval(values)?, r.eval(values)?) {
                        (Scalar::Int(a), Scalar::Int(b)) => a == b,
                        (Scalar::Bool(a), Scalar::Bool(b)) => a == b,
                        (Scalar::Str(a), Scalar::Str(b)) => a == b,
                        _ => return Err(EvalError::TypeMismatch),
                    };
                    Scalar::Bool(equal == (*op == BinOp::Eq))
                }
                _ => {
                    let a = l.eval_int(values)?;
                    let b = r.eval_int(values)?;
                    match op {
                        BinOp::Add => Scalar::Int(a.checked_add(b).ok_or(EvalError::Overflow)?),
                        BinOp::Sub => Scalar::Int(a.checked_sub(b).ok_or(EvalError::Overflow)?),
                        BinOp::Mul => Scalar::Int(a.checked_mul(b).ok_or(EvalError::Overflow)?),
                        BinOp::Div => {
                            if b == 0 {
                                return Err(EvalError::DivisionByZero);
                            }
                            Scalar::Int(a.checked_div(b).ok_or(EvalError::Overflow)?)
                        }
                        BinOp::Rem => {
                            if b == 0 {
                                return Err(EvalError::ModuloByZero);
                            }
                            Scalar::Int(a.checked_rem(b).ok_or(EvalError::Overflow)?)
                        }
                        BinOp::Lt => Scalar::Bool(a < b),
                        BinOp::Le => Scalar::Bool(a <= b),
                        BinOp::Gt => Scalar::Bool(a > b),
                        BinOp::Ge => Scalar::Bool(a >= b),
                        _ => unreachable!("logical operators handled above"),
                    }
                }
            },
        })
    }

    fn eval_int(&self, values: &[&Value]) -> Result<i64, EvalError> {
        match self.eval(values)? {
            Scalar::Int(v) => Ok(v),
            _ => Err(EvalError::TypeMismatch),
        }
    }
}
