//! Parser for the step vocabulary the emitted SQL uses, so the embedded
//! store can interpret script statements directly: key/value reads and
//! writes, transaction control, and the prep statements.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOp {
    Begin,
    SetIsolation(String),
    Select { table: String, key: i64 },
    Update { table: String, key: i64, value: i64 },
    Insert { table: String, key: i64, value: i64 },
    DropTable(String),
    CreateTable(String),
    Commit,
    Rollback,
    /// Anything the vocabulary does not cover.
    Other(String),
}

/// Parses one statement. The grammar is deliberately the emitted shapes
/// only; unknown statements come back as `Other` rather than an error so
/// foreign prep can pass through to real endpoints.
pub fn parse_step(sql: &str) -> StepOp {
    let s = sql.trim().trim_end_matches(';').trim();
    let upper = s.to_ascii_uppercase();
    if upper == "BEGIN" || upper == "START TRANSACTION" {
        return StepOp::Begin;
    }
    if upper == "COMMIT" {
        return StepOp::Commit;
    }
    if upper == "ROLLBACK" {
        return StepOp::Rollback;
    }
    if let Some(rest) = strip_prefix_ci(s, "SET TRANSACTION ISOLATION LEVEL ") {
        return StepOp::SetIsolation(rest.trim().to_string());
    }
    if let Some(rest) = strip_prefix_ci(s, "DROP TABLE IF EXISTS ") {
        return StepOp::DropTable(rest.trim().to_string());
    }
    if let Some(rest) = strip_prefix_ci(s, "DROP TABLE ") {
        return StepOp::DropTable(rest.trim().to_string());
    }
    if let Some(rest) = strip_prefix_ci(s, "CREATE TABLE ") {
        let table = rest.split_whitespace().next().unwrap_or("").trim_end_matches('(');
        if !table.is_empty() {
            return StepOp::CreateTable(table.to_string());
        }
    }
    if let Some(op) = parse_select(s) {
        return op;
    }
    if let Some(op) = parse_update(s) {
        return op;
    }
    if let Some(op) = parse_insert(s) {
        return op;
    }
    StepOp::Other(s.to_string())
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len() && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}

// SELECT * FROM {table} WHERE k={key}
fn parse_select(s: &str) -> Option<StepOp> {
    let rest = strip_prefix_ci(s, "SELECT ")?;
    let from = find_ci(rest, " FROM ")?;
    let after_from = &rest[from + 6..];
    let mut parts = after_from.split_whitespace();
    let table = parts.next()?.to_string();
    let where_pos = find_ci(after_from, "WHERE")?;
    let cond = &after_from[where_pos + 5..];
    let key = parse_key_condition(cond)?;
    Some(StepOp::Select { table, key })
}

// UPDATE {table} SET v={value} WHERE k={key}
fn parse_update(s: &str) -> Option<StepOp> {
    let rest = strip_prefix_ci(s, "UPDATE ")?;
    let mut parts = rest.split_whitespace();
    let table = parts.next()?.to_string();
    let set_pos = find_ci(rest, " SET ")?;
    let after_set = &rest[set_pos + 5..];
    let where_pos = find_ci(after_set, "WHERE")?;
    let assign = after_set[..where_pos].trim().trim_end_matches(',');
    let value = parse_assignment(assign, "v")?;
    let key = parse_key_condition(&after_set[where_pos + 5..])?;
    Some(StepOp::Update { table, key, value })
}

// INSERT INTO {table} VALUES ({key}, {value})
fn parse_insert(s: &str) -> Option<StepOp> {
    let rest = strip_prefix_ci(s, "INSERT INTO ")?;
    let mut parts = rest.split_whitespace();
    let table = parts.next()?.to_string();
    let open = rest.find('(')?;
    let close = rest.rfind(')')?;
    if close <= open {
        return None;
    }
    let mut nums = rest[open + 1..close].split(',');
    let key: i64 = nums.next()?.trim().parse().ok()?;
    let value: i64 = nums.next()?.trim().parse().ok()?;
    Some(StepOp::Insert { table, key, value })
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.to_ascii_uppercase();
    h.find(&needle.to_ascii_uppercase())
}

// "k={n}" with optional whitespace
fn parse_key_condition(cond: &str) -> Option<i64> {
    parse_assignment(cond.trim(), "k")
}

fn parse_assignment(text: &str, column: &str) -> Option<i64> {
    let eq = text.find('=')?;
    let (lhs, rhs) = text.split_at(eq);
    if !lhs.trim().eq_ignore_ascii_case(column) {
        return None;
    }
    rhs[1..].trim().parse().ok()
}

/// Write values encode their origin: transaction id times 1000 plus the
/// global step number, so a later read identifies exactly which write it
/// observed. Value 0 is the seeded initial version.
pub fn encode_value(txn: u32, global_seq: usize) -> i64 {
    txn as i64 * 1000 + global_seq as i64
}

/// Splits an encoded value back into (transaction, global step). Zero is
/// the initial version; values that cannot have been emitted decode to
/// `None`.
pub fn decode_value(value: i64) -> Option<(u32, usize)> {
    if value <= 0 {
        return None;
    }
    let txn = value / 1000;
    let seq = value % 1000;
    if txn == 0 {
        return None;
    }
    Some((txn as u32, seq as usize))
}
