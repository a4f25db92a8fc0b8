//! Name resolution: binds column references to FROM tables, collects the
//! schema elements a query touches, and rewrites queries into fully
//! qualified canonical form.
//!
//! Resolution is case-insensitive over ASCII, mirroring common engines;
//! resolved names always use the schema's declared spelling with aliases
//! normalized away, so downstream consumers are alias- and case-invariant.

use std::collections::BTreeSet;

use thiserror::Error;

use super::ast::*;
use crate::schema::Schema;

#[derive(Debug, Error, PartialEq)]
pub enum ResolveError {
    #[error("ambiguous column {0:?}: matches more than one FROM table")]
    AmbiguousColumn(String),
    #[error("duplicate table binding {0:?} in FROM (alias required)")]
    DuplicateBinding(String),
}

/// Tables and columns referenced by a query, resolved against a schema.
/// `invalid` holds referenced names that do not exist.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemaRefs {
    pub tables: BTreeSet<String>,
    pub columns: BTreeSet<String>,
    pub invalid: BTreeSet<String>,
}

impl SchemaRefs {
    pub fn valid_count(&self) -> usize {
        self.tables.len() + self.columns.len()
    }

    /// Valid refs as a single set of strings (`table` and `table.column`).
    pub fn valid_set(&self) -> BTreeSet<String> {
        self.tables.iter().chain(self.columns.iter()).cloned().collect()
    }
}

/// One FROM binding: the name it answers to and the schema table behind it
/// (when the table exists).
pub(crate) struct Binding<'a> {
    pub binding_name: String,
    pub table: Option<&'a crate::schema::Table>,
}

pub(crate) struct Scope<'a> {
    pub bindings: Vec<Binding<'a>>,
}

pub(crate) enum Lookup {
    /// (binding index, column index)
    Bound(usize, usize),
    Unknown,
    Ambiguous,
}

impl<'a> Scope<'a> {
    pub fn build(schema: &'a Schema, from: Option<&FromClause>) -> Result<Scope<'a>, ResolveError> {
        let mut bindings = Vec::new();
        if let Some(from) = from {
            for tref in from.tables() {
                let name = tref.binding_name().to_string();
                if bindings
                    .iter()
                    .any(|b: &Binding| b.binding_name.eq_ignore_ascii_case(&name))
                {
                    return Err(ResolveError::DuplicateBinding(name));
                }
                bindings.push(Binding { binding_name: name, table: schema.table(&tref.name) });
            }
        }
        Ok(Scope { bindings })
    }

    pub fn lookup(&self, col: &ColumnRef) -> Lookup {
        match &col.table {
            Some(qualifier) => {
                let Some(bi) = self
                    .bindings
                    .iter()
                    .position(|b| b.binding_name.eq_ignore_ascii_case(qualifier))
                else {
                    return Lookup::Unknown;
                };
                match self.bindings[bi].table.and_then(|t| t.column_index(&col.column)) {
                    Some(ci) => Lookup::Bound(bi, ci),
                    None => Lookup::Unknown,
                }
            }
            None => {
                let mut found = None;
                for (bi, b) in self.bindings.iter().enumerate() {
                    if let Some(ci) = b.table.and_then(|t| t.column_index(&col.column)) {
                        if found.is_some() {
                            return Lookup::Ambiguous;
                        }
                        found = Some((bi, ci));
                    }
                }
                match found {
                    Some((bi, ci)) => Lookup::Bound(bi, ci),
                    None => Lookup::Unknown,
                }
            }
        }
    }

    /// Base-table name (schema spelling) for a binding index.
    pub fn base_table(&self, bi: usize) -> &crate::schema::Table {
        self.bindings[bi].table.expect("bound binding has a table")
    }
}

/// Collects the tables and columns `stmt` references, resolving unqualified
/// columns against the FROM clause. Unknown names land in `invalid`; a column
/// matching several FROM tables is an error.
pub fn extract_refs(stmt: &SelectStmt, schema: &Schema) -> Result<SchemaRefs, ResolveError> {
    let mut refs = SchemaRefs::default();
    collect_stmt(stmt, schema, &mut refs)?;
    Ok(refs)
}

fn collect_stmt(
    stmt: &SelectStmt,
    schema: &Schema,
    refs: &mut SchemaRefs,
) -> Result<(), ResolveError> {
    let scope = Scope::build(schema, stmt.from.as_ref())?;

    if let Some(from) = &stmt.from {
        for tref in from.tables() {
            match schema.table(&tref.name) {
                Some(t) => {
                    refs.tables.insert(t.name.clone());
                }
                None => {
                    refs.invalid.insert(tref.name.clone());
                }
            }
        }
    }

    let visit_col = |col: &ColumnRef, refs: &mut SchemaRefs| -> Result<(), ResolveError> {
        match scope.lookup(col) {
            Lookup::Bound(bi, ci) => {
                let table = scope.base_table(bi);
                refs.columns
                    .insert(format!("{}.{}", table.name, table.columns[ci].name));
                Ok(())
            }
            Lookup::Ambiguous => Err(ResolveError::AmbiguousColumn(col.column.clone())),
            Lookup::Unknown => {
                let shown = match &col.table {
                    Some(q) => {
                        // display the base table's schema spelling when the
                        // qualifier is a known alias/table
                        let base = scope
                            .bindings
                            .iter()
                            .position(|b| b.binding_name.eq_ignore_ascii_case(q))
                            .and_then(|bi| scope.bindings[bi].table)
                            .map(|t| t.name.clone())
                            .unwrap_or_else(|| q.clone());
                        format!("{}.{}", base, col.column)
                    }
                    None => col.column.clone(),
                };
                refs.invalid.insert(shown);
                Ok(())
            }
        }
    };

    let mut stack: Vec<&Expr> = Vec::new();
    let mut subqueries: Vec<&SelectStmt> = Vec::new();

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
    if let Some(w) = &stmt.where_clause {
        stack.push(w);
    }
    if let Some(h) = &stmt.having {
        stack.push(h);
    }
    for o in &stmt.order_by {
        stack.push(&o.expr);
    }

    for g in &stmt.group_by {
        visit_col(g, refs)?;
    }

    while let Some(e) = stack.pop() {
        match e {
            Expr::Column(c) => visit_col(c, refs)?,
            Expr::Literal(_) => {}
            Expr::Unary { expr, .. } => stack.push(expr),
            Expr::Binary { left, right, .. } => {
                stack.push(left);
                stack.push(right);
            }
            Expr::Agg(AggCall { arg, .. }) => {
                if let Some(a) = arg {
                    stack.push(a);
                }
            }
            Expr::InList { expr, list, .. } => {
                stack.push(expr);
                stack.extend(list.iter());
            }
            Expr::InSubquery { expr, subquery, .. } => {
                stack.push(expr);
                subqueries.push(subquery);
            }
            Expr::ScalarSubquery(sub) => subqueries.push(sub),
            Expr::Like { expr, pattern, .. } => {
                stack.push(expr);
                stack.push(pattern);
            }
            Expr::Between { expr, low, high, .. } => {
                stack.push(expr);
                stack.push(low);
                stack.push(high);
            }
            Expr::IsNull { expr, .. } => stack.push(expr),
        }
    }

    // Subqueries resolve in their own scope (uncorrelated subset).
    for sub in subqueries {
        collect_stmt(sub, schema, refs)?;
    }
    Ok(())
}

#[derive(Debug, Error, PartialEq)]
pub enum QualifyError {
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error("unknown name {0:?}")]
    Unknown(String),
}

/// Rewrites `stmt` so every column reference is table-qualified with the
/// schema's spelling (aliases kept as the qualifier where present). Errors
/// on unknown or ambiguous names.
pub fn qualify(stmt: &SelectStmt, schema: &Schema) -> Result<SelectStmt, QualifyError> {
    let mut out = stmt.clone();
    qualify_stmt(&mut out, schema)?;
    Ok(out)
}

fn qualify_stmt(stmt: &mut SelectStmt, schema: &Schema) -> Result<(), QualifyError> {
    let scope = Scope::build(schema, stmt.from.as_ref())?;

    let qualify_col = |col: &mut ColumnRef| -> Result<(), QualifyError> {
        match scope.lookup(col) {
            Lookup::Bound(bi, ci) => {
                let binding = &scope.bindings[bi];
                let table = scope.base_table(bi);
                col.table = Some(binding.binding_name.clone());
                col.column = table.columns[ci].name.clone();
                Ok(())
            }
            Lookup::Ambiguous => {
                Err(QualifyError::Resolve(ResolveError::AmbiguousColumn(col.column.clone())))
            }
            Lookup::Unknown => Err(QualifyError::Unknown(col.column.clone())),
        }
    };

    for g in &mut stmt.group_by {
        qualify_col(g)?;
    }

    let mut exprs: Vec<&mut Expr> = Vec::new();
    for item in &mut stmt.items {
        if let SelectItem::Expr(e) = item {
            exprs.push(e);
        }
    }
    if let Some(from) = &mut stmt.from {
        for j in &mut from.joins {
            exprs.push(&mut j.on);
        }
    }
    if let Some(w) = &mut stmt.where_clause {
        exprs.push(w);
    }
    if let Some(h) = &mut stmt.having {
        exprs.push(h);
    }
    for o in &mut stmt.order_by {
        exprs.push(&mut o.expr);
    }

    let mut subqueries: Vec<&mut SelectStmt> = Vec::new();
    while let Some(e) = exprs.pop() {
        match e {
            Expr::Column(c) => qualify_col(c)?,
            Expr::Literal(_) => {}
            Expr::Unary { expr, .. } => exprs.push(expr),
            Expr::Binary { left, right, .. } => {
                exprs.push(left);
                exprs.push(right);
            }
            Expr::Agg(AggCall { arg, .. }) => {
                if let Some(a) = arg {
                    exprs.push(a);
                }
            }
            Expr::InList { expr, list, .. } => {
                exprs.push(expr);
                exprs.extend(list.iter_mut());
            }
            Expr::InSubquery { expr, subquery, .. } => {
                exprs.push(expr);
                subqueries.push(subquery);
            }
            Expr::ScalarSubquery(sub) => subqueries.push(sub),
            Expr::Like { expr, pattern, .. } => {
                exprs.push(expr);
                exprs.push(pattern);
            }
            Expr::Between { expr, low, high, .. } => {
                exprs.push(expr);
                exprs.push(low);
                exprs.push(high);
            }
            Expr::IsNull { expr, .. } => exprs.push(expr),
        }
    }
    for sub in subqueries {
        qualify_stmt(sub, schema)?;
    }
    Ok(())
}
