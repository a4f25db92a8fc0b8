//! Canonical single-line printer: upper-case keywords, single spaces,
//! minimal parentheses. `parse(render(ast)) == ast` for every AST in the
//! subset.

use super::ast::*;
use crate::value::format_real;

pub fn render(stmt: &SelectStmt) -> String {
    let mut s = String::with_capacity(128);
    render_stmt(stmt, &mut s);
    s
}

fn render_stmt(stmt: &SelectStmt, out: &mut String) {
    out.push_str("SELECT ");
    if stmt.distinct {
        out.push_str("DISTINCT ");
    }
    for (i, item) in stmt.items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match item {
            SelectItem::Star => out.push('*'),
            SelectItem::Expr(e) => render_expr(e, Prec::Or, out),
        }
    }
    if let Some(from) = &stmt.from {
        out.push_str(" FROM ");
        render_table_ref(&from.base, out);
        for join in &from.joins {
            out.push_str(" JOIN ");
            render_table_ref(&join.table, out);
            out.push_str(" ON ");
            render_expr(&join.on, Prec::Or, out);
        }
    }
    if let Some(w) = &stmt.where_clause {
        out.push_str(" WHERE ");
        render_expr(w, Prec::Or, out);
    }
    if !stmt.group_by.is_empty() {
        out.push_str(" GROUP BY ");
        for (i, c) in stmt.group_by.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            render_column(c, out);
        }
    }
    if let Some(h) = &stmt.having {
        out.push_str(" HAVING ");
        render_expr(h, Prec::Or, out);
    }
    if !stmt.order_by.is_empty() {
        out.push_str(" ORDER BY ");
        for (i, o) in stmt.order_by.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            render_expr(&o.expr, Prec::Or, out);
            if o.desc {
                out.push_str(" DESC");
            }
        }
    }
    if let Some(l) = stmt.limit {
        out.push_str(&format!(" LIMIT {l}"));
    }
}

fn render_table_ref(t: &TableRef, out: &mut String) {
    out.push_str(&t.name);
    if let Some(a) = &t.alias {
        out.push_str(" AS ");
        out.push_str(a);
    }
}

fn render_column(c: &ColumnRef, out: &mut String) {
    if let Some(t) = &c.table {
        out.push_str(t);
        out.push('.');
    }
    out.push_str(&c.column);
}

/// Binding strength, loosest first. An operand is parenthesized when its own
/// level is weaker than the context it appears in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prec {
    Or,
    And,
    Not,
    Cmp,
    Add,
    Mul,
    Neg,
    Atom,
}

fn expr_prec(e: &Expr) -> Prec {
    match e {
        Expr::Binary { op, .. } => match op {
            BinOp::Or => Prec::Or,
            BinOp::And => Prec::And,
            op if op.is_comparison() => Prec::Cmp,
            BinOp::Add | BinOp::Sub => Prec::Add,
            BinOp::Mul | BinOp::Div => Prec::Mul,
            _ => unreachable!(),
        },
        Expr::Unary { op: UnaryOp::Not, .. } => Prec::Not,
        Expr::Unary { op: UnaryOp::Neg, .. } => Prec::Neg,
        Expr::InList { .. }
        | Expr::InSubquery { .. }
        | Expr::Like { .. }
        | Expr::Between { .. }
        | Expr::IsNull { .. } => Prec::Cmp,
        _ => Prec::Atom,
    }
}

fn render_expr(e: &Expr, ctx: Prec, out: &mut String) {
    let mine = expr_prec(e);
    let needs_parens = mine < ctx;
    if needs_parens {
        out.push('(');
    }
    match e {
        Expr::Column(c) => render_column(c, out),
        Expr::Literal(l) => match l {
            Literal::Int(v) => out.push_str(&v.to_string()),
            Literal::Real(v) => out.push_str(&format_real(*v)),
            Literal::Text(t) => {
                out.push('\'');
                out.push_str(&t.replace('\'', "''"));
                out.push('\'');
            }
        },
        Expr::Unary { op: UnaryOp::Not, expr } => {
            out.push_str("NOT ");
            render_expr(expr, Prec::Not, out);
        }
        Expr::Unary { op: UnaryOp::Neg, expr } => {
            out.push('-');
            // parenthesize a nested negation so `--` never appears
            render_expr(expr, Prec::Atom, out);
        }
        Expr::Binary { op, left, right } => {
            let (lctx, rctx) = if op.is_comparison() {
                // comparisons do not chain: equal-strength children re-wrap
                (Prec::Add, Prec::Add)
            } else {
                (mine, next_tighter(mine))
            };
            render_expr(left, lctx, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            render_expr(right, rctx, out);
        }
        Expr::Agg(AggCall { func, distinct, arg }) => {
            out.push_str(func.name());
            out.push('(');
            match arg {
                None => out.push('*'),
                Some(a) => {
                    if *distinct {
                        out.push_str("DISTINCT ");
                    }
                    render_expr(a, Prec::Or, out);
                }
            }
            out.push(')');
        }
        Expr::InList { expr, list, negated } => {
            render_expr(expr, Prec::Add, out);
            out.push_str(if *negated { " NOT IN (" } else { " IN (" });
            for (i, item) in list.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render_expr(item, Prec::Or, out);
            }
            out.push(')');
        }
        Expr::InSubquery { expr, subquery, negated } => {
            render_expr(expr, Prec::Add, out);
            out.push_str(if *negated { " NOT IN (" } else { " IN (" });
            render_stmt(subquery, out);
            out.push(')');
        }
        Expr::ScalarSubquery(sub) => {
            out.push('(');
            render_stmt(sub, out);
            out.push(')');
        }
        Expr::Like { expr, pattern, negated } => {
            render_expr(expr, Prec::Add, out);
            out.push_str(if *negated { " NOT LIKE " } else { " LIKE " });
            render_expr(pattern, Prec::Add, out);
        }
        Expr::Between { expr, low, high, negated } => {
            render_expr(expr, Prec::Add, out);
            out.push_str(if *negated { " NOT BETWEEN " } else { " BETWEEN " });
            render_expr(low, Prec::Add, out);
            out.push_str(" AND ");
            render_expr(high, Prec::Add, out);
        }
        Expr::IsNull { expr, negated } => {
            render_expr(expr, Prec::Add, out);
            out.push_str(if *negated { " IS NOT NULL" } else { " IS NULL" });
        }
    }
    if needs_parens {
        out.push(')');
    }
}

fn next_tighter(p: Prec) -> Prec {
    match p {
        Prec::Or => Prec::And,
        Prec::And => Prec::Not,
        Prec::Not => Prec::Cmp,
        Prec::Cmp => Prec::Add,
        Prec::Add => Prec::Mul,
        Prec::Mul => Prec::Neg,
        Prec::Neg => Prec::Atom,
        Prec::Atom => Prec::Atom,
    }
}

/// Canonical text form of an SQL string: parse then render. Two queries that
/// differ only in case, whitespace, or redundant parentheses canonicalize to
/// the same string.
pub fn canonical_sql(sql: &str) -> Result<String, super::parser::SqlError> {
    Ok(render(&super::parser::parse(sql)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::sql::parser::parse;

    #[test]
    fn render_parses_back_to_same_ast() {
        let ast = parse(fixtures::GOLD_SQL).unwrap();
        let text = render(&ast);
        let again = parse(&text).unwrap();
        assert_eq!(ast, again);
    }

    #[test]
    fn render_is_idempotent() {
        for sql in [
            fixtures::GOLD_SQL,
            fixtures::NEAR_MISS_SQL,
            "select  name   from ACTOR  where id>=2 and not name like 'a%'",
            "SELECT a.x + 2 * 3 FROM t AS a ORDER BY a.x DESC LIMIT 4",
        ] {
            let once = render(&parse(sql).unwrap());
            let twice = render(&parse(&once).unwrap());
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn canonicalizes_case_and_spacing() {
        assert_eq!(
            canonical_sql("select  name from actor").unwrap(),
            "SELECT name FROM actor"
        );
    }

    #[test]
    fn keeps_necessary_parens_only() {
        let sql = "SELECT (1 + 2) * 3, 1 + (2 * 3) FROM t";
        assert_eq!(canonical_sql(sql).unwrap(), "SELECT (1 + 2) * 3, 1 + 2 * 3 FROM t");
    }

    #[test]
    fn left_assoc_subtraction_parens() {
        // 1 - (2 - 3) must keep parens, (1 - 2) - 3 must not
        assert_eq!(canonical_sql("SELECT 1 - (2 - 3)").unwrap(), "SELECT 1 - (2 - 3)");
        assert_eq!(canonical_sql("SELECT (1 - 2) - 3").unwrap(), "SELECT 1 - 2 - 3");
    }

    #[test]
    fn real_literals_keep_their_type() {
        assert_eq!(canonical_sql("SELECT 2.0").unwrap(), "SELECT 2.0");
        assert_eq!(canonical_sql("SELECT 2.5").unwrap(), "SELECT 2.5");
        assert_eq!(canonical_sql("SELECT 1e3").unwrap(), "SELECT 1000.0");
    }

    #[test]
    fn nested_negation_never_prints_double_minus() {
        let text = canonical_sql("SELECT -(-(1))").unwrap();
        assert!(!text.contains("--"), "{text}");
        assert_eq!(parse(&text).unwrap(), parse("SELECT -(-(1))").unwrap());
    }
}
