//! Deterministic relational interpreter: executes a parsed SELECT against an
//! in-memory state with naive nested-loop joins and full materialization.
//!
//! Semantics notes (deliberate simplifications, kept consistent everywhere):
//! - comparisons involving Null are false (no three-valued logic);
//! - arithmetic propagates Null; division by zero and non-finite float
//!   results evaluate to Null;
//! - aggregates skip Null inputs; SUM/AVG/MIN/MAX of an empty or all-Null
//!   group are Null, COUNT is 0;
//! - with GROUP BY, a bare selected column takes the value from the group's
//!   first row in input order;
//! - LIKE is case-insensitive over ASCII, `%` and `_` wildcards.

use std::collections::HashMap;

use thiserror::Error;

use crate::schema::Schema;
use crate::sql::ast::*;
use crate::sql::render::render;
use crate::sql::resolve::{self, Lookup, QualifyError, ResolveError, Scope};
use crate::state::DatabaseState;
use crate::value::{Value, ValueKey};

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// True iff the query had a top-level ORDER BY.
    pub ordered: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("unknown table {0:?}")]
    UnknownTable(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("ambiguous column {0:?}")]
    AmbiguousColumn(String),
    #[error("duplicate table binding {0:?}")]
    DuplicateBinding(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("aggregate misuse: {0}")]
    AggregateMisuse(String),
    #[error("integer overflow in {0}")]
    Overflow(&'static str),
    #[error("subquery must return exactly one column")]
    SubqueryColumns,
    #[error("ORDER BY with DISTINCT must name a select item")]
    OrderByDistinct,
}

impl From<QualifyError> for ExecError {
    fn from(e: QualifyError) -> Self {
        match e {
            QualifyError::Resolve(ResolveError::AmbiguousColumn(c)) => ExecError::AmbiguousColumn(c),
            QualifyError::Resolve(ResolveError::DuplicateBinding(b)) => {
                ExecError::DuplicateBinding(b)
            }
            QualifyError::Unknown(c) => ExecError::UnknownColumn(c),
        }
    }
}

pub fn execute(
    stmt: &SelectStmt,
    schema: &Schema,
    state: &DatabaseState,
) -> Result<ResultTable, ExecError> {
    check_tables(stmt, schema)?;
    check_aggregates(stmt)?;
    let qualified = resolve::qualify(stmt, schema)?;
    run(&qualified, schema, state)
}

/// Parse + execute in one step.
pub fn execute_sql(
    sql: &str,
    schema: &Schema,
    state: &DatabaseState,
) -> Result<ResultTable, ExecError> {
    let stmt = crate::sql::parser::parse(sql)
        .map_err(|e| ExecError::Type(format!("unparseable: {e}")))?;
    execute(&stmt, schema, state)
}

fn check_tables(stmt: &SelectStmt, schema: &Schema) -> Result<(), ExecError> {
    if let Some(from) = &stmt.from {
        for tref in from.tables() {
            if schema.table(&tref.name).is_none() {
                return Err(ExecError::UnknownTable(tref.name.clone()));
            }
        }
    }
    for sub in subqueries_of(stmt) {
        check_tables(sub, schema)?;
    }
    Ok(())
}

fn subqueries_of(stmt: &SelectStmt) -> Vec<&SelectStmt> {
    let mut out = Vec::new();
    let mut stack: Vec<&Expr> = Vec::new();
    for item in &stmt.items {
        if let SelectItem::Expr(e) = item {
            stack.push(e);
        }
    }
    if let Some(from) = &stmt.from {
        for j in &from.joins {
            stack.push(&j.on);
        }
    }
    stack.extend(stmt.where_clause.iter());
    stack.extend(stmt.having.iter());
    stack.extend(stmt.order_by.iter().map(|o| &o.expr));
    while let Some(e) = stack.pop() {
        match e {
            Expr::InSubquery { expr, subquery, .. } => {
                stack.push(expr);
                out.push(subquery.as_ref());
            }
            Expr::ScalarSubquery(sub) => out.push(sub.as_ref()),
            Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } => stack.push(expr),
            Expr::Binary { left, right, .. } => {
                stack.push(left);
                stack.push(right);
            }
            Expr::Agg(AggCall { arg: Some(a), .. }) => stack.push(a),
            Expr::InList { expr, list, .. } => {
                stack.push(expr);
                stack.extend(list.iter());
            }
            Expr::Like { expr, pattern, .. } => {
                stack.push(expr);
                stack.push(pattern);
            }
            Expr::Between { expr, low, high, .. } => {
                stack.push(expr);
                stack.push(low);
                stack.push(high);
            }
            _ => {}
        }
    }
    out
}

fn check_aggregates(stmt: &SelectStmt) -> Result<(), ExecError> {
    let no_aggs = |e: &Expr, place: &str| -> Result<(), ExecError> {
        if e.contains_aggregate() {
            Err(ExecError::AggregateMisuse(format!("aggregate not allowed in {place}")))
        } else {
            Ok(())
        }
    };
    if let Some(w) = &stmt.where_clause {
        no_aggs(w, "WHERE")?;
    }
    if let Some(from) = &stmt.from {
        for j in &from.joins {
            no_aggs(&j.on, "JOIN ON")?;
        }
    }
    // no nested aggregates anywhere
    let mut exprs: Vec<&Expr> = Vec::new();
    for item in &stmt.items {
        if let SelectItem::Expr(e) = item {
            exprs.push(e);
        }
    }
    exprs.extend(stmt.having.iter());
    exprs.extend(stmt.order_by.iter().map(|o| &o.expr));
    while let Some(e) = exprs.pop() {
        match e {
            Expr::Agg(AggCall { arg: Some(a), .. }) => no_aggs(a, "another aggregate")?,
            Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } => exprs.push(expr),
            Expr::Binary { left, right, .. } => {
                exprs.push(left);
                exprs.push(right);
            }
            Expr::InList { expr, list, .. } => {
                exprs.push(expr);
                exprs.extend(list.iter());
            }
            Expr::Like { expr, pattern, .. } => {
                exprs.push(expr);
                exprs.push(pattern);
            }
            Expr::Between { expr, low, high, .. } => {
                exprs.push(expr);
                exprs.push(low);
                exprs.push(high);
            }
            _ => {}
        }
    }
    for sub in subqueries_of(stmt) {
        check_aggregates(sub)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluation machinery
// ---------------------------------------------------------------------------

struct Engine<'a> {
    schema: &'a Schema,
    state: &'a DatabaseState,
}

struct QueryEval<'a> {
    engine: &'a Engine<'a>,
    scope: Scope<'a>,
    offsets: Vec<usize>,
    /// Memoized uncorrelated subquery results, keyed by AST node address.
    sub_cache: std::cell::RefCell<HashMap<usize, std::rc::Rc<Vec<Vec<Value>>>>>,
}

enum Ctx<'a> {
    Row(&'a [Value]),
    Group(&'a [Vec<Value>]),
}

fn run(stmt: &SelectStmt, schema: &Schema, state: &DatabaseState) -> Result<ResultTable, ExecError> {
    let engine = Engine { schema, state };
    engine.select(stmt)
}

impl<'a> Engine<'a> {
    fn select(&self, stmt: &SelectStmt) -> Result<ResultTable, ExecError> {
        let scope = Scope::build(self.schema, stmt.from.as_ref()).map_err(|e| match e {
            ResolveError::AmbiguousColumn(c) => ExecError::AmbiguousColumn(c),
            ResolveError::DuplicateBinding(b) => ExecError::DuplicateBinding(b),
        })?;
        let mut offsets = Vec::with_capacity(scope.bindings.len());
        let mut width = 0usize;
        for b in &scope.bindings {
            offsets.push(width);
            width += b.table.map(|t| t.columns.len()).unwrap_or(0);
        }
        let eval = QueryEval {
            engine: self,
            scope,
            offsets,
            sub_cache: Default::default(),
        };

        // FROM / JOIN / WHERE
        let mut rows: Vec<Vec<Value>> = match &stmt.from {
            None => vec![Vec::new()],
            Some(from) => {
                let mut rows: Vec<Vec<Value>> = self
                    .state
                    .table_rows(&from.base.name)
                    .iter()
                    .cloned()
                    .collect();
                for join in &from.joins {
                    let right = self.state.table_rows(&join.table.name);
                    let mut next = Vec::new();
                    for left in &rows {
                        for r in right {
                            let mut combined = left.clone();
                            combined.extend(r.iter().cloned());
                            if eval.predicate(&join.on, &Ctx::Row(&combined))? {
                                next.push(combined);
                            }
                        }
                    }
                    rows = next;
                }
                rows
            }
        };
        if let Some(w) = &stmt.where_clause {
            let mut kept = Vec::with_capacity(rows.len());
            for row in rows {
                if eval.predicate(w, &Ctx::Row(&row))? {
                    kept.push(row);
                }
            }
            rows = kept;
        }

        let items = expand_items(stmt, &eval)?;
        let columns: Vec<String> = items.iter().map(|(name, _)| name.clone()).collect();

        // projection + optional order keys, per output row
        let mut projected: Vec<(Vec<Value>, Vec<Value>)> = Vec::new();
        let order_in_ctx = !stmt.order_by.is_empty() && !stmt.distinct;

        if stmt.is_aggregate_query() {
            let groups = self.partition(stmt, &eval, rows)?;
            for group in &groups {
                let ctx = Ctx::Group(group);
                if let Some(h) = &stmt.having {
                    if !eval.predicate(h, &ctx)? {
                        continue;
                    }
                }
                let tuple = items
                    .iter()
                    .map(|(_, e)| eval.eval(e, &ctx))
                    .collect::<Result<Vec<_>, _>>()?;
                let keys = if order_in_ctx {
                    stmt.order_by
                        .iter()
                        .map(|o| eval.eval(&o.expr, &ctx))
                        .collect::<Result<Vec<_>, _>>()?
                } else {
                    Vec::new()
                };
                projected.push((tuple, keys));
            }
        } else {
            for row in &rows {
                let ctx = Ctx::Row(row);
                let tuple = items
                    .iter()
                    .map(|(_, e)| eval.eval(e, &ctx))
                    .collect::<Result<Vec<_>, _>>()?;
                let keys = if order_in_ctx {
                    stmt.order_by
                        .iter()
                        .map(|o| eval.eval(&o.expr, &ctx))
                        .collect::<Result<Vec<_>, _>>()?
                } else {
                    Vec::new()
                };
                projected.push((tuple, keys));
            }
        }

        // DISTINCT keeps the first occurrence of each projected tuple
        if stmt.distinct {
            let mut seen = std::collections::HashSet::new();
            projected.retain(|(tuple, _)| seen.insert(ValueKey::of_row(tuple)));
            if !stmt.order_by.is_empty() {
                // order keys must be select items, evaluated on the projection
                let indices: Vec<usize> = stmt
                    .order_by
                    .iter()
                    .map(|o| {
                        items
                            .iter()
                            .position(|(_, e)| *e == o.expr)
                            .ok_or(ExecError::OrderByDistinct)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                for (tuple, keys) in &mut projected {
                    *keys = indices.iter().map(|&i| tuple[i].clone()).collect();
                }
            }
        }

        if !stmt.order_by.is_empty() {
            let desc: Vec<bool> = stmt.order_by.iter().map(|o| o.desc).collect();
            projected.sort_by(|(_, ka), (_, kb)| {
                for (i, (a, b)) in ka.iter().zip(kb.iter()).enumerate() {
                    let ord = a.sql_cmp(b);
                    let ord = if desc[i] { ord.reverse() } else { ord };
                    if !ord.is_eq() {
                        return ord;
                    }
                }
                std::cmp::Ordering::Equal
            });
        }

        let mut rows: Vec<Vec<Value>> = projected.into_iter().map(|(t, _)| t).collect();
        if let Some(limit) = stmt.limit {
            rows.truncate(limit as usize);
        }

        Ok(ResultTable { columns, rows, ordered: !stmt.order_by.is_empty() })
    }

    /// Splits rows into GROUP BY partitions (first-appearance order), or a
    /// single implicit group when there is no GROUP BY.
    fn partition(
        &self,
        stmt: &SelectStmt,
        eval: &QueryEval,
        rows: Vec<Vec<Value>>,
    ) -> Result<Vec<Vec<Vec<Value>>>, ExecError> {
        if stmt.group_by.is_empty() {
            return Ok(vec![rows]);
        }
        let mut order: Vec<Vec<Vec<Value>>> = Vec::new();
        let mut index: HashMap<Vec<ValueKey>, usize> = HashMap::new();
        for row in rows {
            let ctx = Ctx::Row(&row);
            let mut key = Vec::with_capacity(stmt.group_by.len());
            for col in &stmt.group_by {
                key.push(ValueKey::of(&eval.eval(&Expr::Column(col.clone()), &ctx)?));
            }
            match index.get(&key) {
                Some(&gi) => order[gi].push(row),
                None => {
                    index.insert(key, order.len());
                    order.push(vec![row]);
                }
            }
        }
        Ok(order)
    }
}

/// Expands select items: `*` becomes every column of the FROM product.
fn expand_items(stmt: &SelectStmt, eval: &QueryEval) -> Result<Vec<(String, Expr)>, ExecError> {
    let mut out = Vec::new();
    for item in &stmt.items {
        match item {
            SelectItem::Star => {
                if eval.scope.bindings.is_empty() {
                    return Err(ExecError::Type("SELECT * without FROM".into()));
                }
                for b in &eval.scope.bindings {
                    let table = b.table.expect("checked");
                    for c in &table.columns {
                        out.push((
                            c.name.clone(),
                            Expr::Column(ColumnRef {
                                table: Some(b.binding_name.clone()),
                                column: c.name.clone(),
                            }),
                        ));
                    }
                }
            }
            SelectItem::Expr(e) => {
                let name = match e {
                    Expr::Column(c) => c.column.clone(),
                    other => render_expr_name(other),
                };
                out.push((name, e.clone()));
            }
        }
    }
    Ok(out)
}

fn render_expr_name(e: &Expr) -> String {
    // reuse the canonical printer via a throwaway statement
    let stmt = SelectStmt {
        distinct: false,
        items: vec![SelectItem::Expr(e.clone())],
        from: None,
        where_clause: None,
        group_by: vec![],
        having: None,
        order_by: vec![],
        limit: None,
    };
    render(&stmt).trim_start_matches("SELECT ").to_string()
}

impl<'a> QueryEval<'a> {
    fn predicate(&self, e: &Expr, ctx: &Ctx) -> Result<bool, ExecError> {
        truthy(&self.eval(e, ctx)?)
    }

    fn eval(&self, e: &Expr, ctx: &Ctx) -> Result<Value, ExecError> {
        match e {
            Expr::Literal(Literal::Int(v)) => Ok(Value::Int(*v)),
            Expr::Literal(Literal::Real(v)) => Ok(Value::Real(*v)),
            Expr::Literal(Literal::Text(t)) => Ok(Value::Text(t.clone())),
            Expr::Column(col) => match ctx {
                Ctx::Row(row) => self.column_value(col, row),
                Ctx::Group(rows) => match rows.first() {
                    Some(row) => self.column_value(col, row),
                    None => Ok(Value::Null),
                },
            },
            Expr::Unary { op: UnaryOp::Not, expr } => {
                Ok(Value::Int(!self.predicate(expr, ctx)? as i64))
            }
            Expr::Unary { op: UnaryOp::Neg, expr } => match self.eval(expr, ctx)? {
                Value::Null => Ok(Value::Null),
                Value::Int(i) => i.checked_neg().map(Value::Int).ok_or(ExecError::Overflow("-")),
                Value::Real(r) => Ok(Value::Real(-r)),
                Value::Text(_) => Err(ExecError::Type("cannot negate text".into())),
            },
            Expr::Binary { op, left, right } => self.binary(*op, left, right, ctx),
            Expr::Agg(call) => match ctx {
                Ctx::Group(rows) => self.aggregate(call, rows),
                Ctx::Row(_) => Err(ExecError::AggregateMisuse(
                    "aggregate outside grouped context".into(),
                )),
            },
            Expr::InList { expr, list, negated } => {
                let x = self.eval(expr, ctx)?;
                if x.is_null() {
                    return Ok(Value::Int(0));
                }
                let mut found = false;
                for item in list {
                    if x.sql_eq(&self.eval(item, ctx)?) {
                        found = true;
                        break;
                    }
                }
                Ok(Value::Int((found != *negated) as i64))
            }
            Expr::InSubquery { expr, subquery, negated } => {
                let x = self.eval(expr, ctx)?;
                if x.is_null() {
                    return Ok(Value::Int(0));
                }
                let rows = self.subquery_rows(subquery)?;
                let found = rows.iter().any(|row| x.sql_eq(&row[0]));
                Ok(Value::Int((found != *negated) as i64))
            }
            Expr::ScalarSubquery(sub) => {
                let rows = self.subquery_rows(sub)?;
                Ok(rows.first().map(|r| r[0].clone()).unwrap_or(Value::Null))
            }
            Expr::Like { expr, pattern, negated } => {
                let v = self.eval(expr, ctx)?;
                let p = self.eval(pattern, ctx)?;
                match (v, p) {
                    (Value::Null, _) | (_, Value::Null) => Ok(Value::Int(0)),
                    (Value::Text(s), Value::Text(p)) => {
                        Ok(Value::Int((like_match(&p, &s) != *negated) as i64))
                    }
                    _ => Err(ExecError::Type("LIKE requires text operands".into())),
                }
            }
            Expr::Between { expr, low, high, negated } => {
                let x = self.eval(expr, ctx)?;
                let lo = self.eval(low, ctx)?;
                let hi = self.eval(high, ctx)?;
                if x.is_null() || lo.is_null() || hi.is_null() {
                    return Ok(Value::Int(0));
                }
                let ge = compare_vals(&x, &lo)?.map(|o| o != std::cmp::Ordering::Less);
                let le = compare_vals(&x, &hi)?.map(|o| o != std::cmp::Ordering::Greater);
                let within = ge.unwrap_or(false) && le.unwrap_or(false);
                Ok(Value::Int((within != *negated) as i64))
            }
            Expr::IsNull { expr, negated } => {
                let v = self.eval(expr, ctx)?;
                Ok(Value::Int((v.is_null() != *negated) as i64))
            }
        }
    }

    fn column_value(&self, col: &ColumnRef, row: &[Value]) -> Result<Value, ExecError> {
        match self.scope.lookup(col) {
            Lookup::Bound(bi, ci) => Ok(row[self.offsets[bi] + ci].clone()),
            Lookup::Ambiguous => Err(ExecError::AmbiguousColumn(col.column.clone())),
            Lookup::Unknown => Err(ExecError::UnknownColumn(col.column.clone())),
        }
    }

    fn binary(&self, op: BinOp, left: &Expr, right: &Expr, ctx: &Ctx) -> Result<Value, ExecError> {
        match op {
            BinOp::And => {
                let l = self.predicate(left, ctx)?;
                let r = self.predicate(right, ctx)?;
                Ok(Value::Int((l && r) as i64))
            }
            BinOp::Or => {
                let l = self.predicate(left, ctx)?;
                let r = self.predicate(right, ctx)?;
                Ok(Value::Int((l || r) as i64))
            }
            op if op.is_comparison() => {
                let l = self.eval(left, ctx)?;
                let r = self.eval(right, ctx)?;
                match compare_vals(&l, &r)? {
                    None => Ok(Value::Int(0)),
                    Some(ord) => {
                        let b = match op {
                            BinOp::Eq => ord.is_eq(),
                            BinOp::Ne => !ord.is_eq(),
                            BinOp::Lt => ord.is_lt(),
                            BinOp::Le => ord.is_le(),
                            BinOp::Gt => ord.is_gt(),
                            BinOp::Ge => ord.is_ge(),
                            _ => unreachable!(),
                        };
                        Ok(Value::Int(b as i64))
                    }
                }
            }
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                let l = self.eval(left, ctx)?;
                let r = self.eval(right, ctx)?;
                arith(op, &l, &r)
            }
            _ => unreachable!(),
        }
    }

    fn subquery_rows(&self, sub: &SelectStmt) -> Result<std::rc::Rc<Vec<Vec<Value>>>, ExecError> {
        let key = sub as *const SelectStmt as usize;
        if let Some(cached) = self.sub_cache.borrow().get(&key) {
            return Ok(cached.clone());
        }
        let result = self.engine.select(sub)?;
        if result.columns.len() != 1 {
            return Err(ExecError::SubqueryColumns);
        }
        let rc = std::rc::Rc::new(result.rows);
        self.sub_cache.borrow_mut().insert(key, rc.clone());
        Ok(rc)
    }

    fn aggregate(&self, call: &AggCall, rows: &[Vec<Value>]) -> Result<Value, ExecError> {
        match (call.func, &call.arg) {
            (AggFunc::Count, None) => Ok(Value::Int(rows.len() as i64)),
            (AggFunc::Count, Some(arg)) => {
                if call.distinct {
                    let mut seen = std::collections::HashSet::new();
                    for row in rows {
                        let v = self.eval(arg, &Ctx::Row(row))?;
                        if !v.is_null() {
                            seen.insert(ValueKey::of(&v));
                        }
                    }
                    Ok(Value::Int(seen.len() as i64))
                } else {
                    let mut n = 0i64;
                    for row in rows {
                        if !self.eval(arg, &Ctx::Row(row))?.is_null() {
                            n += 1;
                        }
                    }
                    Ok(Value::Int(n))
                }
            }
            (AggFunc::Sum, Some(arg)) => {
                let mut int_sum: Option<i64> = None;
                let mut real_sum: Option<f64> = None;
                for row in rows {
                    match self.eval(arg, &Ctx::Row(row))? {
                        Value::Null => {}
                        Value::Int(i) => match real_sum {
                            Some(ref mut r) => *r += i as f64,
                            None => {
                                let cur = int_sum.unwrap_or(0);
                                int_sum = Some(
                                    cur.checked_add(i).ok_or(ExecError::Overflow("SUM"))?,
                                );
                            }
                        },
                        Value::Real(x) => {
                            let base = real_sum.unwrap_or(int_sum.unwrap_or(0) as f64);
                            real_sum = Some(base + x);
                            int_sum = int_sum.or(Some(0));
                        }
                        Value::Text(_) => {
                            return Err(ExecError::Type("SUM over text".into()));
                        }
                    }
                }
                match (real_sum, int_sum) {
                    (Some(r), _) => Ok(Value::Real(r)),
                    (None, Some(i)) => Ok(Value::Int(i)),
                    (None, None) => Ok(Value::Null),
                }
            }
            (AggFunc::Avg, Some(arg)) => {
                let mut sum = 0f64;
                let mut n = 0usize;
                for row in rows {
                    match self.eval(arg, &Ctx::Row(row))? {
                        Value::Null => {}
                        Value::Int(i) => {
                            sum += i as f64;
                            n += 1;
                        }
                        Value::Real(x) => {
                            sum += x;
                            n += 1;
                        }
                        Value::Text(_) => return Err(ExecError::Type("AVG over text".into())),
                    }
                }
                if n == 0 {
                    Ok(Value::Null)
                } else {
                    Ok(Value::Real(sum / n as f64))
                }
            }
            (AggFunc::Min, Some(arg)) | (AggFunc::Max, Some(arg)) => {
                let take_max = call.func == AggFunc::Max;
                let mut best: Option<Value> = None;
                for row in rows {
                    let v = self.eval(arg, &Ctx::Row(row))?;
                    if v.is_null() {
                        continue;
                    }
                    best = Some(match best {
                        None => v,
                        Some(b) => {
                            let keep_new = if take_max {
                                v.sql_cmp(&b).is_gt()
                            } else {
                                v.sql_cmp(&b).is_lt()
                            };
                            if keep_new {
                                v
                            } else {
                                b
                            }
                        }
                    });
                }
                Ok(best.unwrap_or(Value::Null))
            }
            (_, None) => Err(ExecError::AggregateMisuse("only COUNT accepts *".into())),
        }
    }
}

fn truthy(v: &Value) -> Result<bool, ExecError> {
    match v {
        Value::Null => Ok(false),
        Value::Int(i) => Ok(*i != 0),
        Value::Real(r) => Ok(*r != 0.0),
        Value::Text(_) => Err(ExecError::Type("text used as a condition".into())),
    }
}

/// Comparison with Null-is-false semantics: `None` means a Null was involved.
fn compare_vals(a: &Value, b: &Value) -> Result<Option<std::cmp::Ordering>, ExecError> {
    use Value::*;
    match (a, b) {
        (Null, _) | (_, Null) => Ok(None),
        (Text(x), Text(y)) => Ok(Some(x.as_bytes().cmp(y.as_bytes()))),
        (Text(_), _) | (_, Text(_)) => {
            Err(ExecError::Type("cannot compare text with a number".into()))
        }
        (x, y) => {
            let (fx, fy) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            Ok(Some(fx.partial_cmp(&fy).expect("finite reals")))
        }
    }
}

fn arith(op: BinOp, l: &Value, r: &Value) -> Result<Value, ExecError> {
    use Value::*;
    if l.is_null() || r.is_null() {
        return Ok(Null);
    }
    match (l, r) {
        (Text(_), _) | (_, Text(_)) => Err(ExecError::Type(format!(
            "arithmetic {} over text",
            op.symbol()
        ))),
        (Int(a), Int(b)) => match op {
            BinOp::Add => a.checked_add(*b).map(Int).ok_or(ExecError::Overflow("+")),
            BinOp::Sub => a.checked_sub(*b).map(Int).ok_or(ExecError::Overflow("-")),
            BinOp::Mul => a.checked_mul(*b).map(Int).ok_or(ExecError::Overflow("*")),
            BinOp::Div => {
                if *b == 0 {
                    Ok(Null)
                } else {
                    a.checked_div(*b).map(Int).ok_or(ExecError::Overflow("/"))
                }
            }
            _ => unreachable!(),
        },
        (a, b) => {
            let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            let v = match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => {
                    if y == 0.0 {
                        return Ok(Null);
                    }
                    x / y
                }
                _ => unreachable!(),
            };
            if v.is_finite() {
                Ok(Real(v))
            } else {
                Ok(Null)
            }
        }
    }
}

/// SQL LIKE with `%` and `_`, case-insensitive over ASCII (classic greedy
/// two-pointer wildcard match, linear in practice).
fn like_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().map(fold_ascii).collect();
    let t: Vec<char> = text.chars().map(fold_ascii).collect();
    let (mut pi, mut ti) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '_' || p[pi] == t[ti]) && p[pi] != '%' {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '%' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '%' {
        pi += 1;
    }
    pi == p.len()
}

fn fold_ascii(c: char) -> char {
    if c.is_ascii_uppercase() {
        c.to_ascii_lowercase()
    } else {
        c
    }
}

/// Result-set equality: positional columns, sequences when either side is
/// ordered, multisets otherwise; reals compare within relative tolerance.
pub fn compare_results(a: &ResultTable, b: &ResultTable) -> bool {
    if a.columns.len() != b.columns.len() || a.rows.len() != b.rows.len() {
        return false;
    }
    let rows_equal = |x: &[Vec<Value>], y: &[Vec<Value>]| {
        x.iter()
            .zip(y.iter())
            .all(|(r, s)| r.iter().zip(s.iter()).all(|(v, w)| values_close(v, w)))
    };
    if a.ordered || b.ordered {
        rows_equal(&a.rows, &b.rows)
    } else {
        let sort = |rows: &[Vec<Value>]| {
            let mut copy: Vec<Vec<Value>> = rows.to_vec();
            copy.sort_by(|r, s| {
                r.iter()
                    .zip(s.iter())
                    .map(|(v, w)| v.sql_cmp(w))
                    .find(|o| !o.is_eq())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            copy
        };
        rows_equal(&sort(&a.rows), &sort(&b.rows))
    }
}

const REL_TOL: f64 = 1e-9;

fn values_close(a: &Value, b: &Value) -> bool {
    use Value::*;
    match (a, b) {
        (Null, Null) => true,
        (Text(x), Text(y)) => x == y,
        (x, y) => match (x.as_f64(), y.as_f64()) {
            (Some(fx), Some(fy)) => {
                (fx - fy).abs() <= REL_TOL * fx.abs().max(fy.abs()).max(1.0)
            }
            _ => false,
        },
    }
}
