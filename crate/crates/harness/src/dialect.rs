//! SQL dialect registry: statement templates for prep and steps plus the
//! error-message patterns that sort forced rollbacks into rule, deadlock,
//! and timeout classes. Unknown endpoints fall back to the generic ANSI
//! profile.

use popcheck_sim::IsolationLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Rule,
    Deadlock,
    Timeout,
    Other,
}

#[derive(Debug, Clone)]
pub struct SqlDialect {
    pub name: &'static str,
    pub begin: &'static str,
    pub commit: &'static str,
    pub rollback: &'static str,
    /// `{level}` placeholder.
    pub set_isolation: &'static str,
    /// Whether SET TRANSACTION must precede BEGIN (MySQL style) instead
    /// of following it (PostgreSQL style).
    pub isolation_before_begin: bool,
    /// `{table}` placeholder.
    pub drop_table: &'static str,
    pub create_table: &'static str,
    /// Range-partitioned parent table, when the engine supports it.
    pub create_partitioned_table: Option<&'static str>,
    /// `{table} {partition} {from} {to}` placeholders.
    pub create_partition: Option<&'static str>,
    /// `{table} {key} {value}` placeholders.
    pub insert_row: &'static str,
    /// `{table} {key}` placeholders.
    pub select_row: &'static str,
    /// `{table} {key} {value}` placeholders.
    pub update_row: &'static str,
    pub err_rule: &'static [&'static str],
    pub err_deadlock: &'static [&'static str],
    pub err_timeout: &'static [&'static str],
}

impl SqlDialect {
    pub fn render_set_isolation(&self, level: IsolationLevel) -> String {
        self.set_isolation.replace("{level}", level.sql())
    }

    pub fn render_drop(&self, table: &str) -> String {
        self.drop_table.replace("{table}", table)
    }

    pub fn render_create(&self, table: &str) -> String {
        self.create_table.replace("{table}", table)
    }

    pub fn render_insert(&self, table: &str, key: i64, value: i64) -> String {
        self.insert_row
            .replace("{table}", table)
            .replace("{key}", &key.to_string())
            .replace("{value}", &value.to_string())
    }

    pub fn render_select(&self, table: &str, key: i64) -> String {
        self.select_row
            .replace("{table}", table)
            .replace("{key}", &key.to_string())
    }

    pub fn render_update(&self, table: &str, key: i64, value: i64) -> String {
        self.update_row
            .replace("{table}", table)
            .replace("{key}", &key.to_string())
            .replace("{value}", &value.to_string())
    }

    /// Sorts an error message into the dialect's semantic classes.
    pub fn classify_error(&self, message: &str) -> ErrorClass {
        let m = message.to_ascii_lowercase();
        let hit = |pats: &[&str]| pats.iter().any(|p| m.contains(p));
        if hit(self.err_deadlock) {
            ErrorClass::Deadlock
        } else if hit(self.err_timeout) {
            ErrorClass::Timeout
        } else if hit(self.err_rule) {
            ErrorClass::Rule
        } else {
            ErrorClass::Other
        }
    }
}

const ANSI: SqlDialect = SqlDialect {
    name: "ansi",
    begin: "BEGIN",
    commit: "COMMIT",
    rollback: "ROLLBACK",
    set_isolation: "SET TRANSACTION ISOLATION LEVEL {level}",
    isolation_before_begin: false,
    drop_table: "DROP TABLE IF EXISTS {table}",
    create_table: "CREATE TABLE {table} (k INT PRIMARY KEY, v INT)",
    create_partitioned_table: Some("CREATE TABLE {table} (k INT PRIMARY KEY, v INT) PARTITION BY RANGE (k)"),
    create_partition: Some(
        "CREATE TABLE {table}_p{partition} PARTITION OF {table} FOR VALUES FROM ({from}) TO ({to})",
    ),
    insert_row: "INSERT INTO {table} VALUES ({key}, {value})",
    select_row: "SELECT * FROM {table} WHERE k={key}",
    update_row: "UPDATE {table} SET v={value} WHERE k={key}",
    err_rule: &["could not serialize", "serialization failure", "concurrent update"],
    err_deadlock: &["deadlock"],
    err_timeout: &["timeout", "timed out"],
};

const POSTGRES: SqlDialect = SqlDialect {
    name: "postgres",
    err_rule: &[
        "could not serialize",
        "serialization failure",
        "concurrent update",
        "concurrent delete",
    ],
    err_deadlock: &["deadlock detected"],
    err_timeout: &["statement timeout", "lock timeout", "timeout"],
    ..ANSI
};

const MYSQL: SqlDialect = SqlDialect {
    name: "mysql",
    begin: "START TRANSACTION",
    isolation_before_begin: true,
    create_partitioned_table: None,
    create_partition: None,
    err_rule: &["could not serialize", "serialization failure"],
    err_deadlock: &["deadlock found"],
    err_timeout: &["lock wait timeout", "timeout"],
    ..ANSI
};

const DIALECTS: [&SqlDialect; 3] = [&ANSI, &POSTGRES, &MYSQL];

pub fn dialects() -> impl Iterator<Item = &'static SqlDialect> {
    DIALECTS.into_iter()
}

pub fn dialect(name: &str) -> Option<&'static SqlDialect> {
    DIALECTS.iter().find(|d| d.name == name).copied()
}

/// Named dialect, or the ANSI fallback for unknown endpoints.
pub fn dialect_or_ansi(name: &str) -> &'static SqlDialect {
    dialect(name).unwrap_or(&ANSI)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ansi_statement_shapes() {
        let d = dialect("ansi").unwrap();
        assert_eq!(d.render_select("t1", 0), "SELECT * FROM t1 WHERE k=0");
        assert_eq!(d.render_update("t1", 0, 2005), "UPDATE t1 SET v=2005 WHERE k=0");
        assert_eq!(d.render_insert("t1", 1, 0), "INSERT INTO t1 VALUES (1, 0)");
        assert_eq!(
            d.render_create("t1"),
            "CREATE TABLE t1 (k INT PRIMARY KEY, v INT)"
        );
    }

    #[test]
    fn unknown_name_falls_back_to_ansi() {
        assert_eq!(dialect_or_ansi("oracle-ish").name, "ansi");
    }

    #[test]
    fn error_classification() {
        let d = dialect("ansi").unwrap();
        assert_eq!(
            d.classify_error("ERROR: could not serialize access: concurrent committed write"),
            ErrorClass::Rule
        );
        assert_eq!(d.classify_error("deadlock detected"), ErrorClass::Deadlock);
        assert_eq!(d.classify_error("lock timeout"), ErrorClass::Timeout);
        assert_eq!(d.classify_error("boom"), ErrorClass::Other);
    }

    #[test]
    fn every_dialect_is_fully_populated() {
        for d in dialects() {
            for s in [
                d.begin,
                d.commit,
                d.rollback,
                d.set_isolation,
                d.drop_table,
                d.create_table,
                d.insert_row,
                d.select_row,
                d.update_row,
            ] {
                assert!(!s.is_empty(), "{} has an empty statement form", d.name);
            }
            assert!(!d.err_rule.is_empty());
            assert!(!d.err_deadlock.is_empty());
            assert!(!d.err_timeout.is_empty());
        }
    }
}
