"""Data-source connectivity and runtime catalog introspection.

The core interface never hard-codes a schema: everything it needs (tables,
columns, declared types, keys, defaults) is read from the engine's own
catalog at request time.  The reference engine is the embedded file-based
SQLite driver from the standard library.  Schemas ported from network engines
keep their original column declarations by quoting the whole type name in the
DDL; SQLite stores and reports the quoted text verbatim, so the catalog sees
``bigint(20) unsigned`` or ``enum('red','green')`` exactly as such an engine
would report it.

Engine-level permissions are mapped onto SQLite by opening the database file
read-only for db users listed in the source's ``read_only_db_users``.
"""

from __future__ import annotations

import re
import sqlite3
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import HdbError


class CatalogError(HdbError):
    pass


class DataSourceUnavailable(CatalogError):
    def __init__(self, source: "DataSourceConfig", cause: str = ""):
        self.source_name = source.name
        self.location_label = source.location_label()
        self.cause = cause
        super().__init__(self.diagnostic())

    def diagnostic(self) -> str:
        return f"unable_to_connect_to_db_source({self.location_label}-{self.source_name})"


class ConnectionLost(CatalogError):
    pass


class NoSuchTable(CatalogError):
    pass


@dataclass
class DataSourceConfig:
    name: str
    location: str
    db_user: str = ""
    db_password: str = ""
    read_only_tables: frozenset[str] = frozenset()
    read_only_db_users: frozenset[str] = frozenset()

    def location_label(self) -> str:
        stem = Path(self.location).stem
        return stem or self.location


@dataclass(frozen=True)
class TypeDesc:
    base: str  # integer|bigint|float|text|tinytext|date|datetime|enum|blob|other
    width: int | None = None
    unsigned: bool = False
    enum_values: tuple[str, ...] | None = None
    raw: str = ""

    @property
    def display(self) -> str:
        """Declared type as shown on the table page, 'unsigned' abbreviated."""
        return self.raw.replace("unsigned", "uns.")


INTEGER_BASES = frozenset({"integer", "bigint"})
TEXTAREA_BASES = frozenset({"text", "tinytext"})

_BASE_SYNONYMS = {
    "int": "integer",
    "integer": "integer",
    "bigint": "bigint",
    "float": "float",
    "double": "float",
    "real": "float",
    "text": "text",
    "tinytext": "tinytext",
    "date": "date",
    "datetime": "datetime",
    "timestamp": "datetime",
    "blob": "blob",
}

_TYPE_RE = re.compile(r"^\s*([A-Za-z]+)\s*(?:\(\s*(\d+)\s*\))?\s*(unsigned)?\s*$", re.IGNORECASE)
_ENUM_RE = re.compile(r"^\s*enum\s*\((.*)\)\s*$", re.IGNORECASE | re.DOTALL)
_ENUM_VALUE_RE = re.compile(r"'((?:[^']|'')*)'")


def parse_declared_type(text: str) -> TypeDesc:
    """Parse a declared column type.  Total: unknown shapes become other(text)."""
    text = text or ""
    enum_match = _ENUM_RE.match(text)
    if enum_match:
        values = tuple(v.replace("''", "'") for v in _ENUM_VALUE_RE.findall(enum_match.group(1)))
        if values:
            return TypeDesc(base="enum", enum_values=values, raw=text)
        return TypeDesc(base="other", raw=text)
    m = _TYPE_RE.match(text)
    if m:
        base = _BASE_SYNONYMS.get(m.group(1).lower())
        if base is not None:
            width = int(m.group(2)) if m.group(2) else None
            return TypeDesc(base=base, width=width, unsigned=bool(m.group(3)), raw=text)
    return TypeDesc(base="other", raw=text)


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    type: TypeDesc
    nullable: bool
    key: str = "none"  # primary | unique | index | none
    default: str | None = None
    auto_increment: bool = False


@dataclass(frozen=True)
class TableMeta:
    db: str
    name: str
    columns: tuple[ColumnMeta, ...]
    read_only: bool = False

    def column(self, name: str) -> ColumnMeta | None:
        for col in self.columns:
            if col.name == name:
                return col
        return None

    @property
    def primary_key(self) -> ColumnMeta | None:
        for col in self.columns:
            if col.key == "primary":
                return col
        return None

    @property
    def auto_column(self) -> ColumnMeta | None:
        for col in self.columns:
            if col.auto_increment:
                return col
        return None


def _q(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def open_source(cfg: DataSourceConfig, db_user: str | None = None,
                db_password: str | None = None) -> "Connection":
    """Open a connection to one data source as the given db user."""
    user = cfg.db_user if db_user is None else db_user
    read_only = user in cfg.read_only_db_users
    try:
        if cfg.location == ":memory:":
            raw = sqlite3.connect(":memory:", check_same_thread=False)
        else:
            mode = "ro" if read_only else "rw"
            raw = sqlite3.connect(f"file:{cfg.location}?mode={mode}", uri=True,
                                  check_same_thread=False)
        raw.isolation_level = None  # explicit transactions only
        raw.execute("SELECT 1").fetchone()
    except sqlite3.Error as ex:
        raise DataSourceUnavailable(cfg, str(ex)) from ex
    return Connection(cfg, user, raw, read_only)


class Connection:
    """One live connection to a data source, bound to one db user."""

    def __init__(self, cfg: DataSourceConfig, db_user: str, raw: sqlite3.Connection,
                 read_only: bool):
        self.cfg = cfg
        self.db = cfg.name
        self.db_user = db_user
        self.read_only = read_only
        self._raw = raw
        self._lock = threading.RLock()
        self._closed = False

    def close(self) -> None:
        self._closed = True
        self._raw.close()

    def _execute(self, text: str, params=()):
        if self._closed:
            raise ConnectionLost(f"connection to {self.db} is closed")
        try:
            return self._raw.execute(text, params)
        except sqlite3.ProgrammingError as ex:
            raise ConnectionLost(str(ex)) from ex

    # -- catalog -----------------------------------------------------------

    def table_names(self) -> list[str]:
        rows = self._execute(
            "SELECT name FROM sqlite_master WHERE type = 'table'"
            " AND name NOT LIKE 'sqlite_%' ORDER BY name"
        ).fetchall()
        return [r[0] for r in rows]

    def list_tables(self) -> list[TableMeta]:
        return [self.describe_table(name) for name in self.table_names()]

    def describe_table(self, name: str) -> TableMeta:
        row = self._execute(
            "SELECT sql FROM sqlite_master WHERE type = 'table' AND name = ?", (name,)
        ).fetchone()
        if row is None:
            raise NoSuchTable(f"{self.db}.{name}")
        create_sql = row[0] or ""
        info = self._execute(f"PRAGMA table_info({_q(name)})").fetchall()
        keys = self._key_kinds(name, info)
        pk_cols = [r for r in info if r[5]]
        rowid_table = "WITHOUT ROWID" not in create_sql.upper()
        columns = []
        for cid, col_name, decl_type, notnull, default, pk in info:
            type_desc = parse_declared_type(decl_type)
            auto = (
                bool(pk)
                and len(pk_cols) == 1
                and rowid_table
                and type_desc.base in INTEGER_BASES
            )
            columns.append(ColumnMeta(
                name=col_name,
                type=type_desc,
                nullable=not notnull and not pk,
                key=keys.get(col_name, "none"),
                default=_strip_default(default),
                auto_increment=auto,
            ))
        read_only = name in self.cfg.read_only_tables
        return TableMeta(db=self.db, name=name, columns=tuple(columns), read_only=read_only)

    def _key_kinds(self, table: str, info) -> dict[str, str]:
        kinds: dict[str, str] = {}
        for row in info:
            if row[5]:
                kinds[row[1]] = "primary"
        for idx in self._execute(f"PRAGMA index_list({_q(table)})").fetchall():
            idx_name, unique = idx[1], idx[2]
            cols = self._execute(f"PRAGMA index_info({_q(idx_name)})").fetchall()
            if not cols:
                continue
            first = cols[0][2]
            if first is None or first in kinds:
                continue
            kinds[first] = "unique" if unique and len(cols) == 1 else "index"
        return kinds

    def row_count(self, name: str) -> int:
        if name not in self.table_names():
            raise NoSuchTable(f"{self.db}.{name}")
        return self._execute(f"SELECT COUNT(*) FROM {_q(name)}").fetchone()[0]

    # -- statement execution -----------------------------------------------

    def query(self, stmt) -> tuple[list[str], list[tuple]]:
        with self._lock:
            cur = self._execute(stmt.text, stmt.params)
            columns = [d[0] for d in cur.description] if cur.description else []
            return columns, cur.fetchall()

    def execute(self, stmt) -> int:
        with self._lock:
            cur = self._execute(stmt.text, stmt.params)
            return cur.rowcount

    def execute_insert(self, meta: TableMeta, stmt):
        """Run an insert and return the new row's key value, if recoverable."""
        with self._lock:
            self._execute(stmt.text, stmt.params)
            auto = meta.auto_column
            if auto is not None:
                got = self._execute(
                    f"SELECT {_q(auto.name)} FROM {_q(meta.name)}"
                    " WHERE rowid = last_insert_rowid()"
                ).fetchone()
                return got[0] if got else None
            return None

    def transaction(self):
        return _Transaction(self)

    def executescript(self, script: str) -> None:
        self._raw.executescript(script)


class _Transaction:
    def __init__(self, conn: Connection):
        self._conn = conn

    def __enter__(self):
        self._conn._lock.acquire()
        self._conn._execute("BEGIN IMMEDIATE")
        return self._conn

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self._conn._execute("COMMIT")
            else:
                self._conn._execute("ROLLBACK")
        finally:
            self._conn._lock.release()
        return False


def _strip_default(value) -> str | None:
    if value is None:
        return None
    text = str(value)
    if len(text) >= 2 and text.startswith("'") and text.endswith("'"):
        return text[1:-1].replace("''", "'")
    return text


class SourcePool:
    """A small per-source pool of connections, keyed by db user."""

    def __init__(self, cfg: DataSourceConfig, size: int = 4):
        self.cfg = cfg
        self.size = size
        self._idle: dict[str, list[Connection]] = {}
        self._lock = threading.Lock()

    def acquire(self, db_user: str | None = None) -> Connection:
        user = self.cfg.db_user if db_user is None else db_user
        with self._lock:
            idle = self._idle.get(user)
            if idle:
                return idle.pop()
        return open_source(self.cfg, user)

    def release(self, conn: Connection) -> None:
        with self._lock:
            idle = self._idle.setdefault(conn.db_user, [])
            if len(idle) < self.size:
                idle.append(conn)
                return
        conn.close()

    def close_all(self) -> None:
        with self._lock:
            for conns in self._idle.values():
                for conn in conns:
                    conn.close()
            self._idle.clear()
