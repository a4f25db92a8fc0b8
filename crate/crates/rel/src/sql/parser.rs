//! Recursive-descent parser for the supported SELECT subset.

use thiserror::Error;

use super::ast::*;
use super::lexer::{lex, LexError, SpannedTok, Tok};

#[derive(Debug, Error, PartialEq)]
pub enum SqlError {
    #[error("{0}")]
    Lex(#[from] LexError),
    #[error("parse error at byte {pos}: found {found}, expected {}", expected.join(" | "))]
    Parse { pos: usize, found: String, expected: Vec<String> },
}

pub fn parse(sql: &str) -> Result<SelectStmt, SqlError> {
    let toks = lex(sql)?;
    let mut p = Parser { toks, at: 0 };
    let stmt = p.select_stmt()?;
    p.eat_opt(&Tok::Semicolon);
    p.expect(&Tok::Eof, "end of statement")?;
    Ok(stmt)
}

struct Parser {
    toks: Vec<SpannedTok>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.at + 1).min(self.toks.len() - 1)].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].tok.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_opt(&mut self, t: &Tok) {
        self.eat(t);
    }

    fn error<T>(&self, expected: &[&str]) -> Result<T, SqlError> {
        Err(SqlError::Parse {
            pos: self.pos(),
            found: self.peek().describe(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn expect(&mut self, t: &Tok, what: &str) -> Result<(), SqlError> {
        if self.eat(t) {
            Ok(())
        } else {
            self.error(&[what])
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, SqlError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(name)
            }
            _ => self.error(&[what]),
        }
    }

    fn select_stmt(&mut self) -> Result<SelectStmt, SqlError> {
        self.expect(&Tok::Select, "SELECT")?;
        let distinct = self.eat(&Tok::Distinct);

        let mut items = vec![self.select_item()?];
        while self.eat(&Tok::Comma) {
            items.push(self.select_item()?);
        }

        let from = if self.eat(&Tok::From) { Some(self.from_clause()?) } else { None };

        let where_clause = if self.eat(&Tok::Where) { Some(self.expr()?) } else { None };

        let mut group_by = Vec::new();
        if self.eat(&Tok::Group) {
            self.expect(&Tok::By, "BY")?;
            group_by.push(self.column_ref()?);
            while self.eat(&Tok::Comma) {
                group_by.push(self.column_ref()?);
            }
        }

        let having = if self.eat(&Tok::Having) { Some(self.expr()?) } else { None };

        let mut order_by = Vec::new();
        if self.eat(&Tok::Order) {
            self.expect(&Tok::By, "BY")?;
            loop {
                let expr = self.expr()?;
                let desc = if self.eat(&Tok::Desc) {
                    true
                } else {
                    self.eat_opt(&Tok::Asc);
                    false
                };
                order_by.push(OrderItem { expr, desc });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }

        let limit = if self.eat(&Tok::Limit) {
            match self.peek().clone() {
                Tok::Int(v) if v >= 0 => {
                    self.bump();
                    Some(v as u64)
                }
                _ => return self.error(&["non-negative integer"]),
            }
        } else {
            None
        };

        Ok(SelectStmt { distinct, items, from, where_clause, group_by, having, order_by, limit })
    }

    fn select_item(&mut self) -> Result<SelectItem, SqlError> {
        if self.eat(&Tok::Star) {
            Ok(SelectItem::Star)
        } else {
            Ok(SelectItem::Expr(self.expr()?))
        }
    }

    fn from_clause(&mut self) -> Result<FromClause, SqlError> {
        let base = self.table_ref()?;
        let mut joins = Vec::new();
        loop {
            if self.eat(&Tok::Inner) {
                self.expect(&Tok::Join, "JOIN")?;
            } else if !self.eat(&Tok::Join) {
                break;
            }
            let table = self.table_ref()?;
            self.expect(&Tok::On, "ON")?;
            let on = self.expr()?;
            joins.push(Join { table, on });
        }
        Ok(FromClause { base, joins })
    }

    fn table_ref(&mut self) -> Result<TableRef, SqlError> {
        let name = self.ident("table name")?;
        let alias = if self.eat(&Tok::As) {
            Some(self.ident("alias")?)
        } else if let Tok::Ident(a) = self.peek().clone() {
            self.bump();
            Some(a)
        } else {
            None
        };
        Ok(TableRef { name, alias })
    }

    fn column_ref(&mut self) -> Result<ColumnRef, SqlError> {
        let first = self.ident("column reference")?;
        if self.eat(&Tok::Dot) {
            let column = self.ident("column name")?;
            Ok(ColumnRef { table: Some(first), column })
        } else {
            Ok(ColumnRef { table: None, column: first })
        }
    }

    fn expr(&mut self) -> Result<Expr, SqlError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.and_expr()?;
        while self.eat(&Tok::Or) {
            let right = self.and_expr()?;
            left = Expr::binary(BinOp::Or, left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.not_expr()?;
        while self.eat(&Tok::And) {
            let right = self.not_expr()?;
            left = Expr::binary(BinOp::And, left, right);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, SqlError> {
        if self.eat(&Tok::Not) {
            let inner = self.not_expr()?;
            Ok(Expr::Unary { op: UnaryOp::Not, expr: Box::new(inner) })
        } else {
            self.comparison()
        }
    }

    /// One optional comparison / IN / LIKE / BETWEEN / IS NULL over additive
    /// operands; comparisons do not chain.
    fn comparison(&mut self) -> Result<Expr, SqlError> {
        let left = self.additive()?;

        let negated = if *self.peek() == Tok::Not
            && matches!(self.peek2(), Tok::In | Tok::Like | Tok::Between)
        {
            self.bump();
            true
        } else {
            false
        };

        match self.peek().clone() {
            Tok::Eq | Tok::Ne | Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge => {
                let op = match self.bump() {
                    Tok::Eq => BinOp::Eq,
                    Tok::Ne => BinOp::Ne,
                    Tok::Lt => BinOp::Lt,
                    Tok::Le => BinOp::Le,
                    Tok::Gt => BinOp::Gt,
                    Tok::Ge => BinOp::Ge,
                    _ => unreachable!(),
                };
                let right = self.additive()?;
                Ok(Expr::binary(op, left, right))
            }
            Tok::In => {
                self.bump();
                self.expect(&Tok::LParen, "(")?;
                if *self.peek() == Tok::Select {
                    let sub = self.select_stmt()?;
                    self.expect(&Tok::RParen, ")")?;
                    Ok(Expr::InSubquery {
                        expr: Box::new(left),
                        subquery: Box::new(sub),
                        negated,
                    })
                } else {
                    let mut list = vec![self.expr()?];
                    while self.eat(&Tok::Comma) {
                        list.push(self.expr()?);
                    }
                    self.expect(&Tok::RParen, ")")?;
                    Ok(Expr::InList { expr: Box::new(left), list, negated })
                }
            }
            Tok::Like => {
                self.bump();
                let pattern = self.additive()?;
                Ok(Expr::Like { expr: Box::new(left), pattern: Box::new(pattern), negated })
            }
            Tok::Between => {
                self.bump();
                let low = self.additive()?;
                self.expect(&Tok::And, "AND")?;
                let high = self.additive()?;
                Ok(Expr::Between {
                    expr: Box::new(left),
                    low: Box::new(low),
                    high: Box::new(high),
                    negated,
                })
            }
            Tok::Is => {
                self.bump();
                let negated = self.eat(&Tok::Not);
                self.expect(&Tok::Null, "NULL")?;
                Ok(Expr::IsNull { expr: Box::new(left), negated })
            }
            _ if negated => self.error(&["IN", "LIKE", "BETWEEN"]),
            _ => Ok(left),
        }
    }

    fn additive(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let right = self.multiplicative()?;
            left = Expr::binary(op, left, right);
        }
        Ok(left)
    }

    fn multiplicative(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let right = self.unary()?;
            left = Expr::binary(op, left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, SqlError> {
        if self.eat(&Tok::Minus) {
            let inner = self.unary()?;
            Ok(Expr::Unary { op: UnaryOp::Neg, expr: Box::new(inner) })
        } else {
            self.primary()
        }
    }

    fn primary(&mut self) -> Result<Expr, SqlError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Literal(Literal::Int(v)))
            }
            Tok::Real(v) => {
                self.bump();
                Ok(Expr::Literal(Literal::Real(v)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Literal(Literal::Text(s)))
            }
            Tok::Count | Tok::Sum | Tok::Avg | Tok::Min | Tok::Max => self.agg_call(),
            Tok::Ident(_) => Ok(Expr::Column(self.column_ref()?)),
            Tok::LParen => {
                self.bump();
                if *self.peek() == Tok::Select {
                    let sub = self.select_stmt()?;
                    self.expect(&Tok::RParen, ")")?;
                    Ok(Expr::ScalarSubquery(Box::new(sub)))
                } else {
                    let inner = self.expr()?;
                    self.expect(&Tok::RParen, ")")?;
                    Ok(inner)
                }
            }
            _ => self.error(&["expression"]),
        }
    }

    fn agg_call(&mut self) -> Result<Expr, SqlError> {
        let func = match self.bump() {
            Tok::Count => AggFunc::Count,
            Tok::Sum => AggFunc::Sum,
            Tok::Avg => AggFunc::Avg,
            Tok::Min => AggFunc::Min,
            Tok::Max => AggFunc::Max,
            _ => unreachable!(),
        };
        self.expect(&Tok::LParen, "(")?;
        if func == AggFunc::Count && self.eat(&Tok::Star) {
            self.expect(&Tok::RParen, ")")?;
            return Ok(Expr::Agg(AggCall { func, distinct: false, arg: None }));
        }
        let distinct = self.eat(&Tok::Distinct);
        if distinct && func != AggFunc::Count {
            return self.error(&["expression (DISTINCT is only supported in COUNT)"]);
        }
        let arg = self.expr()?;
        self.expect(&Tok::RParen, ")")?;
        Ok(Expr::Agg(AggCall { func, distinct, arg: Some(Box::new(arg)) }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn minimal_select() {
        let ast = parse("SELECT name FROM actor").unwrap();
        assert_eq!(ast.items.len(), 1);
        assert_eq!(
            ast.items[0],
            SelectItem::Expr(Expr::column(None, "name"))
        );
        assert_eq!(ast.from.unwrap().base.name, "actor");
        assert!(!ast.distinct);
    }

    #[test]
    fn gold_query_shape() {
        let ast = parse(fixtures::GOLD_SQL).unwrap();
        assert_eq!(ast.group_by.len(), 2);
        let having = ast.having.unwrap();
        match having {
            Expr::Binary { op: BinOp::Gt, left, right } => {
                assert_eq!(*right, Expr::int(3));
                match *left {
                    Expr::Agg(AggCall { func: AggFunc::Count, distinct: true, arg: Some(arg) }) => {
                        assert_eq!(*arg, Expr::column(Some("casting"), "movieid"));
                    }
                    other => panic!("expected COUNT(DISTINCT casting.movieid), got {other:?}"),
                }
            }
            other => panic!("expected > comparison, got {other:?}"),
        }
    }

    #[test]
    fn select_from_is_parse_error_at_from() {
        let err = parse("SELECT FROM").unwrap_err();
        match err {
            SqlError::Parse { pos, found, .. } => {
                assert_eq!(pos, 7);
                assert!(found.contains("FROM"), "found = {found}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn keywords_any_case() {
        let a = parse("select name from actor").unwrap();
        let b = parse("SELECT name FROM actor").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trailing_semicolon_ok() {
        assert!(parse("SELECT name FROM actor;").is_ok());
        assert!(parse("SELECT name FROM actor; SELECT 1").is_err());
    }

    #[test]
    fn from_less_select() {
        let ast = parse("SELECT 1").unwrap();
        assert!(ast.from.is_none());
    }

    #[test]
    fn in_subquery_and_scalar_subquery() {
        let ast =
            parse("SELECT a.x FROM a WHERE a.x IN (SELECT b.y FROM b) AND a.z > (SELECT MAX(c.w) FROM c)")
                .unwrap();
        assert!(ast.where_clause.is_some());
    }

    #[test]
    fn not_in_and_not_like() {
        assert!(parse("SELECT x FROM t WHERE x NOT IN (1, 2)").is_ok());
        assert!(parse("SELECT x FROM t WHERE x NOT LIKE 'a%'").is_ok());
        assert!(parse("SELECT x FROM t WHERE x NOT BETWEEN 1 AND 2").is_ok());
        assert!(parse("SELECT x FROM t WHERE x IS NOT NULL").is_ok());
    }

    #[test]
    fn sum_distinct_rejected() {
        assert!(parse("SELECT SUM(DISTINCT x) FROM t").is_err());
    }

    #[test]
    fn star_only_for_count() {
        assert!(parse("SELECT COUNT(*) FROM t").is_ok());
        assert!(parse("SELECT SUM(*) FROM t").is_err());
    }

    #[test]
    fn chained_comparison_rejected() {
        assert!(parse("SELECT 1 WHERE 1 = 2 = 3").is_err());
    }
}
