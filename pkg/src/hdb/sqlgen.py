"""Parameterized SQL generation from catalog metadata.

Every statement is built from a :class:`~hdb.catalog.TableMeta` plus typed
values; user data only ever travels through placeholders, never through
statement text.  Update and delete refuse empty filters so a metadata-driven
form can never synthesize a table-wide mutation.
"""

from __future__ import annotations

import datetime
import re
from dataclasses import dataclass, field

from .catalog import ColumnMeta, INTEGER_BASES, TableMeta
from .errors import HdbError


class SqlGenError(HdbError):
    pass


class EmptyIdentifier(SqlGenError):
    pass


class ReadOnlyTable(SqlGenError):
    pass


class UnknownColumn(SqlGenError):
    pass


class AssignedAutoIncrement(SqlGenError):
    pass


class MissingRequired(SqlGenError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"required column {column!r} has no value")


class EmptyFilterForbidden(SqlGenError):
    pass


class InvalidValue(SqlGenError):
    def __init__(self, column: str, reason: str):
        self.column = column
        super().__init__(f"bad value for {column!r}: {reason}")


@dataclass(frozen=True)
class Dialect:
    name: str
    quote: str = '"'
    placeholder: str = "?"
    # Engines whose auto-increment only fires for their native key form need
    # the key filled by an engine-side expression inside the insert itself.
    auto_increment_subquery: bool = True


EMBEDDED = Dialect("embedded")


@dataclass(frozen=True)
class SqlStatement:
    text: str
    params: tuple = ()


RELATIONS = {
    "eq": "=",
    "ne": "<>",
    "lt": "<",
    "le": "<=",
    "gt": ">",
    "ge": ">=",
    "like": "LIKE",
}


@dataclass(frozen=True)
class RowFilter:
    conjuncts: tuple[tuple[str, str, object], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "conjuncts", tuple(self.conjuncts))
        for column, relation, _ in self.conjuncts:
            if relation not in RELATIONS:
                raise SqlGenError(f"unknown relation {relation!r} on {column!r}")

    def __bool__(self):
        return bool(self.conjuncts)


def eq(column: str, value) -> RowFilter:
    return RowFilter(((column, "eq", value),))


def quote_identifier(name: str, dialect: Dialect = EMBEDDED) -> str:
    if not name:
        raise EmptyIdentifier("identifier must be non-empty")
    q = dialect.quote
    return q + name.replace(q, q + q) + q


_DATE_RE = re.compile(r"^(\d{4})-(\d{1,2})-(\d{1,2})$")
_DATETIME_RE = re.compile(r"^(\d{4})-(\d{1,2})-(\d{1,2})[ T](\d{1,2}):(\d{2})(?::(\d{2}))?$")


def coerce_value(col: ColumnMeta, value):
    """Convert a raw (usually form-string) value per the declared type."""
    if value is None:
        return None
    base = col.type.base
    try:
        if base in INTEGER_BASES:
            n = int(value)
            if col.type.unsigned and n < 0:
                raise InvalidValue(col.name, "negative value for unsigned column")
            return n
        if base == "float":
            x = float(value)
            if col.type.unsigned and x < 0:
                raise InvalidValue(col.name, "negative value for unsigned column")
            return x
        if base == "enum":
            text = str(value)
            if text not in (col.type.enum_values or ()):
                raise InvalidValue(col.name, f"{text!r} is not one of {col.type.enum_values}")
            return text
        if base == "date":
            text = str(value)
            m = _DATE_RE.match(text)
            if not m:
                raise InvalidValue(col.name, "expected YYYY-M-D or YYYY-MM-DD")
            datetime.date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
            return text
        if base == "datetime":
            text = str(value)
            m = _DATETIME_RE.match(text) or _DATE_RE.match(text)
            if not m:
                raise InvalidValue(col.name, "expected a date, optionally with H:MM[:SS]")
            return text
        if base == "blob":
            return value if isinstance(value, (bytes, bytearray)) else str(value)
        return value
    except InvalidValue:
        raise
    except (TypeError, ValueError) as ex:
        raise InvalidValue(col.name, str(ex)) from ex


def _check_columns(meta: TableMeta, names) -> None:
    for name in names:
        if meta.column(name) is None:
            raise UnknownColumn(f"{meta.name} has no column {name!r}")


def _where(meta: TableMeta, filter: RowFilter, dialect: Dialect) -> tuple[str, list]:
    _check_columns(meta, (c for c, _, _ in filter.conjuncts))
    parts, params = [], []
    for column, relation, value in filter.conjuncts:
        parts.append(f"{quote_identifier(column, dialect)} {RELATIONS[relation]} {dialect.placeholder}")
        params.append(coerce_value(meta.column(column), value))
    return " AND ".join(parts), params


def gen_insert(meta: TableMeta, assigns: dict, dialect: Dialect = EMBEDDED) -> SqlStatement:
    if meta.read_only:
        raise ReadOnlyTable(f"{meta.db}.{meta.name} is read-only")
    _check_columns(meta, assigns)
    auto = meta.auto_column
    if auto is not None and auto.name in assigns:
        raise AssignedAutoIncrement(f"{auto.name} is assigned by the engine")
    for col in meta.columns:
        if col.auto_increment or col.nullable or col.default is not None:
            continue
        if assigns.get(col.name) is None:
            raise MissingRequired(col.name)

    columns, values, params = [], [], []
    if auto is not None and dialect.auto_increment_subquery:
        table = quote_identifier(meta.name, dialect)
        key = quote_identifier(auto.name, dialect)
        columns.append(key)
        values.append(f"(SELECT COALESCE(MAX({key}), 0) + 1 FROM {table})")
    for col in meta.columns:
        if col.name not in assigns or col.auto_increment:
            continue
        columns.append(quote_identifier(col.name, dialect))
        values.append(dialect.placeholder)
        params.append(coerce_value(col, assigns[col.name]))

    table = quote_identifier(meta.name, dialect)
    if not columns:
        return SqlStatement(f"INSERT INTO {table} DEFAULT VALUES", ())
    return SqlStatement(
        f"INSERT INTO {table} ({', '.join(columns)}) VALUES ({', '.join(values)})",
        tuple(params),
    )


def gen_select(meta: TableMeta, columns="all", filter: RowFilter | None = None,
               limit: int | None = None, dialect: Dialect = EMBEDDED) -> SqlStatement:
    if columns == "all":
        names = [c.name for c in meta.columns]
    else:
        names = list(columns)
        _check_columns(meta, names)
    filter = filter or RowFilter()
    select_list = ", ".join(quote_identifier(n, dialect) for n in names)
    text = f"SELECT {select_list} FROM {quote_identifier(meta.name, dialect)}"
    params: list = []
    if filter:
        clause, params = _where(meta, filter, dialect)
        text += f" WHERE {clause}"
    pk = meta.primary_key
    if pk is not None:
        text += f" ORDER BY {quote_identifier(pk.name, dialect)}"
    if limit is not None:
        text += f" LIMIT {int(limit)}"
    return SqlStatement(text, tuple(params))


def gen_update(meta: TableMeta, assigns: dict, filter: RowFilter,
               dialect: Dialect = EMBEDDED) -> SqlStatement:
    if meta.read_only:
        raise ReadOnlyTable(f"{meta.db}.{meta.name} is read-only")
    if not filter:
        raise EmptyFilterForbidden("update requires a non-empty filter")
    _check_columns(meta, assigns)
    auto = meta.auto_column
    if auto is not None and auto.name in assigns:
        raise AssignedAutoIncrement(f"{auto.name} is assigned by the engine")
    sets, params = [], []
    for col in meta.columns:
        if col.name not in assigns:
            continue
        value = assigns[col.name]
        if value is None and not col.nullable:
            raise MissingRequired(col.name)
        sets.append(f"{quote_identifier(col.name, dialect)} = {dialect.placeholder}")
        params.append(coerce_value(col, value))
    if not sets:
        raise SqlGenError("update with no assignments")
    clause, where_params = _where(meta, filter, dialect)
    text = (
        f"UPDATE {quote_identifier(meta.name, dialect)} SET {', '.join(sets)}"
        f" WHERE {clause}"
    )
    return SqlStatement(text, tuple(params) + tuple(where_params))


def gen_delete(meta: TableMeta, filter: RowFilter, dialect: Dialect = EMBEDDED) -> SqlStatement:
    if meta.read_only:
        raise ReadOnlyTable(f"{meta.db}.{meta.name} is read-only")
    if not filter:
        raise EmptyFilterForbidden("delete requires a non-empty filter")
    clause, params = _where(meta, filter, dialect)
    return SqlStatement(
        f"DELETE FROM {quote_identifier(meta.name, dialect)} WHERE {clause}",
        tuple(params),
    )
