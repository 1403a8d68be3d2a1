//! Context store, query and command repository, effect function and
//! query-result diffing.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{CobpError, Result};
use crate::events::Event;
use crate::value::{Map, Value};

/// A row: field name to value.
pub type Record = Map;

/// A keyed table. Keys are unique by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Table {
    key_field: String,
    rows: BTreeMap<String, Record>,
}

impl Table {
    pub fn new(key_field: impl Into<String>) -> Self {
        Table {
            key_field: key_field.into(),
            rows: BTreeMap::new(),
        }
    }

    pub fn key_field(&self) -> &str {
        &self.key_field
    }

    pub fn rows(&self) -> &BTreeMap<String, Record> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// String form of a key-field value: strings verbatim, everything else as
/// canonical JSON (`3`, `[5,4]`).
pub fn key_string(v: &Value) -> String {
    match v {
        Value::Str(s) => s.clone(),
        other => other.canonical(),
    }
}

/// Immutable-snapshot table store. Cloning is cheap: tables are shared and
/// copied only when an update touches them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextStore {
    tables: BTreeMap<String, Arc<Table>>,
}

impl Serialize for ContextStore {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.tables.len()))?;
        for (name, table) in &self.tables {
            m.serialize_entry(name, table.as_ref())?;
        }
        m.end()
    }
}

impl ContextStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name).map(Arc::as_ref)
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    /// Rows of a table in key order; empty when the table does not exist.
    pub fn rows<'a>(&'a self, table: &str) -> impl Iterator<Item = (&'a str, &'a Record)> + 'a {
        self.tables
            .get(table)
            .into_iter()
            .flat_map(|t| t.rows.iter().map(|(k, r)| (k.as_str(), r)))
    }

    pub fn get(&self, table: &str, key: &str) -> Option<&Record> {
        self.tables.get(table)?.rows.get(key)
    }

    pub fn field(&self, table: &str, key: &str, field: &str) -> Option<&Value> {
        self.get(table, key)?.get(field)
    }

    pub fn create_table(&mut self, name: impl Into<String>, key_field: impl Into<String>) {
        self.tables
            .entry(name.into())
            .or_insert_with(|| Arc::new(Table::new(key_field)));
    }

    fn table_mut(&mut self, name: &str) -> Result<&mut Table, String> {
        self.tables
            .get_mut(name)
            .map(Arc::make_mut)
            .ok_or_else(|| format!("no table '{name}'"))
    }

    /// Inserts or replaces a row; its key is read from the table's key field.
    pub fn insert(&mut self, table: &str, record: Record) -> Result<String, String> {
        let t = self.table_mut(table)?;
        let key = record
            .get(&t.key_field)
            .map(key_string)
            .ok_or_else(|| format!("row for '{table}' lacks key field '{}'", t.key_field))?;
        t.rows.insert(key.clone(), record);
        Ok(key)
    }

    pub fn remove(&mut self, table: &str, key: &str) -> Result<Option<Record>, String> {
        Ok(self.table_mut(table)?.rows.remove(key))
    }

    /// Sets a non-key field on an existing row.
    pub fn set_field(
        &mut self,
        table: &str,
        key: &str,
        field: &str,
        value: Value,
    ) -> Result<(), String> {
        let t = self.table_mut(table)?;
        if field == t.key_field {
            return Err(format!("cannot rewrite key field '{field}' of '{table}'"));
        }
        let row = t
            .rows
            .get_mut(key)
            .ok_or_else(|| format!("no row '{key}' in '{table}'"))?;
        row.insert(field.to_owned(), value);
        Ok(())
    }

    /// Canonical JSON: tables, keys and fields all sorted.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("stores always serialize")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(self.digest_bytes())
    }

    pub fn digest_bytes(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        serde_json::to_writer(HashWriter(&mut h), self).expect("stores always serialize");
        h.finalize().into()
    }

    /// Parses a context-init document
    /// `{table: {"keyField": ..., "rows": [record, ...]}}`.
    pub fn from_init_json(text: &str) -> Result<Self> {
        let doc: BTreeMap<String, TableDoc> = serde_json::from_str(text)
            .map_err(|e| CobpError::InitDocument(e.to_string()))?;
        Self::from_init_doc(doc)
    }

    pub fn from_init_doc(doc: BTreeMap<String, TableDoc>) -> Result<Self> {
        let mut store = ContextStore::new();
        for (name, tdoc) in doc {
            let mut table = Table::new(tdoc.key_field.clone());
            for row in tdoc.rows {
                let key = row.get(&tdoc.key_field).map(key_string).ok_or_else(|| {
                    CobpError::InitDocument(format!(
                        "row in '{name}' lacks key field '{}'",
                        tdoc.key_field
                    ))
                })?;
                if table.rows.insert(key.clone(), row).is_some() {
                    return Err(CobpError::InitDocument(format!(
                        "duplicate key '{key}' in '{name}'"
                    )));
                }
            }
            store.tables.insert(name, Arc::new(table));
        }
        Ok(store)
    }

    /// The inverse of [`ContextStore::from_init_json`].
    pub fn to_init_doc(&self) -> BTreeMap<String, TableDoc> {
        self.tables
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    TableDoc {
                        key_field: t.key_field.clone(),
                        rows: t.rows.values().cloned().collect(),
                    },
                )
            })
            .collect()
    }
}

/// One table of a context-init document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TableDoc {
    pub key_field: String,
    #[serde(default)]
    pub rows: Vec<Record>,
}

struct HashWriter<'a>(&'a mut Sha256);

impl std::io::Write for HashWriter<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// A query answer: a stable key plus the record handed to live copies as
/// their seed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryResult {
    pub key: String,
    pub value: Record,
}

impl QueryResult {
    pub fn new(key: impl Into<String>, value: Record) -> Self {
        QueryResult {
            key: key.into(),
            value,
        }
    }

    pub fn get(&self, field: &str) -> Option<&Value> {
        self.value.get(field)
    }
}

/// Query results keyed by result key.
pub type ResultSet = BTreeMap<String, QueryResult>;

type QueryFn = Arc<dyn Fn(&ContextStore, &Map) -> Vec<QueryResult> + Send + Sync>;
type UpdateFn = Arc<dyn Fn(&mut ContextStore, &Value) -> Result<(), String> + Send + Sync>;
type EffectRule = Arc<dyn Fn(&Event) -> Vec<(String, Value)> + Send + Sync>;

/// A named pure function from a context snapshot (and bound parameters)
/// to a set of keyed results.
#[derive(Clone)]
pub struct Query {
    name: String,
    func: QueryFn,
}

impl Query {
    pub fn new<F>(name: impl Into<String>, func: F) -> Self
    where
        F: Fn(&ContextStore, &Map) -> Vec<QueryResult> + Send + Sync + 'static,
    {
        Query {
            name: name.into(),
            func: Arc::new(func),
        }
    }

    /// `SELECT * FROM table WHERE pred(row)`, keyed by the row key.
    pub fn select<F>(name: impl Into<String>, table: impl Into<String>, pred: F) -> Self
    where
        F: Fn(&Record, &ContextStore, &Map) -> bool + Send + Sync + 'static,
    {
        let table = table.into();
        Query::new(name, move |ctx, params| {
            ctx.rows(&table)
                .filter(|(_, r)| pred(r, ctx, params))
                .map(|(k, r)| QueryResult::new(k, r.clone()))
                .collect()
        })
    }

    /// A query with exactly one, context-independent result (key `"1"`).
    pub fn constant(name: impl Into<String>) -> Self {
        Query::new(name, |_, _| vec![QueryResult::new("1", Record::new())])
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Query").field("name", &self.name).finish()
    }
}

/// A named context transformation.
#[derive(Clone)]
pub struct UpdateCommand {
    name: String,
    func: UpdateFn,
}

impl UpdateCommand {
    pub fn new<F>(name: impl Into<String>, func: F) -> Self
    where
        F: Fn(&mut ContextStore, &Value) -> Result<(), String> + Send + Sync + 'static,
    {
        UpdateCommand {
            name: name.into(),
            func: Arc::new(func),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn apply(&self, store: &ContextStore, args: &Value) -> Result<ContextStore> {
        let mut next = store.clone();
        (self.func)(&mut next, args).map_err(|reason| CobpError::UpdateFailed {
            command: self.name.clone(),
            reason,
        })?;
        Ok(next)
    }
}

impl fmt::Debug for UpdateCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UpdateCommand").field("name", &self.name).finish()
    }
}

/// The query and command repository.
#[derive(Clone, Default, Debug)]
pub struct Repository {
    queries: BTreeMap<String, Query>,
    updates: BTreeMap<String, UpdateCommand>,
}

impl Repository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_query(&mut self, q: Query) -> &mut Self {
        self.queries.insert(q.name.clone(), q);
        self
    }

    pub fn add_update(&mut self, u: UpdateCommand) -> &mut Self {
        self.updates.insert(u.name.clone(), u);
        self
    }

    pub fn query(&self, name: &str) -> Result<&Query> {
        self.queries
            .get(name)
            .ok_or_else(|| CobpError::Config(format!("unknown query '{name}'")))
    }

    pub fn update(&self, name: &str) -> Result<&UpdateCommand> {
        self.updates
            .get(name)
            .ok_or_else(|| CobpError::Config(format!("unknown update command '{name}'")))
    }

    pub fn query_names(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }
}

/// Maps event labels to the update commands they trigger. Events without
/// a rule leave the context unchanged.
#[derive(Clone, Default)]
pub struct EffectMap {
    rules: BTreeMap<String, EffectRule>,
}

impl EffectMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a rule producing `(command, args)` pairs for events with
    /// this label.
    pub fn on<F>(&mut self, label: impl Into<String>, rule: F) -> &mut Self
    where
        F: Fn(&Event) -> Vec<(String, Value)> + Send + Sync + 'static,
    {
        self.rules.insert(label.into(), Arc::new(rule));
        self
    }

    /// Events with `label` call `command` with the event payload as args.
    pub fn forward(&mut self, label: impl Into<String>, command: impl Into<String>) -> &mut Self {
        let command = command.into();
        self.on(label, move |e| vec![(command.clone(), e.payload().clone())])
    }

    pub fn has_rule(&self, label: &str) -> bool {
        self.rules.contains_key(label)
    }

    pub fn commands_for(&self, e: &Event) -> Vec<(String, Value)> {
        match self.rules.get(e.label()) {
            Some(rule) if !e.is_context() => rule(e),
            _ => Vec::new(),
        }
    }

    /// Every command name any rule could emit must resolve; checked lazily
    /// at application time, this only reports labels for diagnostics.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }
}

impl fmt::Debug for EffectMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EffectMap")
            .field("labels", &self.rules.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Applies the effect of `e`: its rule's commands, in order. Identity when
/// the event has no rule.
pub fn apply_effect(
    store: &ContextStore,
    repo: &Repository,
    effects: &EffectMap,
    e: &Event,
) -> Result<ContextStore> {
    let mut current = store.clone();
    for (name, args) in effects.commands_for(e) {
        current = repo.update(&name)?.apply(&current, &args)?;
    }
    Ok(current)
}

pub fn run_query(store: &ContextStore, q: &Query, params: &Map) -> ResultSet {
    (q.func)(store, params)
        .into_iter()
        .map(|r| (r.key.clone(), r))
        .collect()
}

/// A query together with the parameters a CBT binds it with.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryBinding {
    pub query: String,
    #[serde(default)]
    pub params: Map,
}

impl QueryBinding {
    pub fn new(query: impl Into<String>) -> Self {
        QueryBinding {
            query: query.into(),
            params: Map::new(),
        }
    }

    pub fn with_params(query: impl Into<String>, params: Map) -> Self {
        QueryBinding {
            query: query.into(),
            params,
        }
    }

    /// Name used in diffs and `CTX.Ended` notices: the bare query name, or
    /// `Name{params}` when parameters are bound.
    pub fn key(&self) -> String {
        if self.params.is_empty() {
            self.query.clone()
        } else {
            format!("{}{}", self.query, Value::Map(self.params.clone()).canonical())
        }
    }

    pub fn evaluate(&self, store: &ContextStore, repo: &Repository) -> Result<ResultSet> {
        Ok(run_query(store, repo.query(&self.query)?, &self.params))
    }
}

/// Per-query result changes between two snapshots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct QueryDelta {
    pub added: ResultSet,
    pub removed: ResultSet,
}

impl QueryDelta {
    pub fn between(before: &ResultSet, after: &ResultSet) -> Self {
        QueryDelta {
            added: after
                .iter()
                .filter(|(k, _)| !before.contains_key(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            removed: before
                .iter()
                .filter(|(k, _)| !after.contains_key(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

/// Result changes keyed by [`QueryBinding::key`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct QueryDiff {
    pub per_query: BTreeMap<String, QueryDelta>,
}

impl QueryDiff {
    pub fn delta(&self, binding_key: &str) -> Option<&QueryDelta> {
        self.per_query.get(binding_key)
    }

    pub fn is_empty(&self) -> bool {
        self.per_query.values().all(QueryDelta::is_empty)
    }
}

/// Compares query results on two snapshots, by result key.
pub fn diff_queries(
    before: &ContextStore,
    after: &ContextStore,
    repo: &Repository,
    bindings: &[QueryBinding],
) -> Result<QueryDiff> {
    let mut diff = QueryDiff::default();
    for b in bindings {
        let delta = QueryDelta::between(&b.evaluate(before, repo)?, &b.evaluate(after, repo)?);
        diff.per_query.insert(b.key(), delta);
    }
    Ok(diff)
}
