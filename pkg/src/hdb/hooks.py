"""Site extensibility registry.

A hook is a site-supplied function matched against a (db, table, column)
pattern; it alters one specific interaction point (an input default, a
textarea size, a cell turned into a link, the operation set of a table, a
whole custom page, or a derived-fill job).  Adding a hook for one column
never changes behaviour for columns its matcher does not cover, which is what
lets a deployment's schema evolve without touching existing extensions.

Resolution picks the most specific matching entry: exact column beats a
column-suffix match beats any-column, then exact table beats any-table, then
exact db beats any-db.  Ties go to the earliest registration.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from datetime import datetime
from enum import Enum

from .errors import HdbError


class HookError(HdbError):
    pass


class SignatureMismatch(HookError):
    pass


class _Any:
    def __repr__(self):
        return "ANY"


ANY = _Any()


@dataclass(frozen=True)
class Suffix:
    text: str


@dataclass(frozen=True)
class HookMatcher:
    db: object = ANY
    table: object = ANY
    column: object = ANY

    def matches(self, db, table, column) -> bool:
        if self.db is not ANY and self.db != db:
            return False
        if self.table is not ANY and self.table != table:
            return False
        if self.column is not ANY:
            if isinstance(self.column, Suffix):
                if not isinstance(column, str) or not column.endswith(self.column.text):
                    return False
            elif self.column != column:
                return False
        return True

    @property
    def specificity(self) -> tuple[int, int, int]:
        col = 0 if self.column is ANY else (1 if isinstance(self.column, Suffix) else 2)
        tbl = 0 if self.table is ANY else 1
        db = 0 if self.db is ANY else 1
        return (col, tbl, db)

    @property
    def is_catch_all(self) -> bool:
        return self.db is ANY and self.table is ANY and self.column is ANY


class HookKind(Enum):
    INPUT_DEFAULT_VALUE = "input_default_value"
    INPUT_TEXTAREA_SIZE = "input_textarea_size"
    OUTPUT_LINK = "output_link"
    OP_OVERRIDE = "op_override"
    PAGE_HANDLER = "page_handler"
    DERIVED_FILL = "derived_fill"


# Positional arity each hook callable must accept.
_ARITY = {
    HookKind.INPUT_DEFAULT_VALUE: 4,   # (db, table, column, clock)
    HookKind.INPUT_TEXTAREA_SIZE: 3,   # (db, table, column)
    HookKind.OUTPUT_LINK: 4,           # (db, table, column, value)
    HookKind.OP_OVERRIDE: 3,           # (db, table, ops)
    HookKind.PAGE_HANDLER: 4,          # (session, view, form, cat)
}

# Attributes a derived-fill job object must carry (see hdb.bridge).
_DERIVED_FILL_FIELDS = ("trigger", "program", "steps", "outputs")


@dataclass(frozen=True)
class _Entry:
    kind: HookKind
    matcher: HookMatcher
    fn: object
    seq: int


class HookRegistry:
    def __init__(self):
        self._entries: list[_Entry] = []

    def register(self, kind: HookKind, matcher: HookMatcher, fn, *, allow_catch_all=False) -> "HookRegistry":
        """Append one entry; the callable's shape is checked eagerly."""
        if kind is HookKind.DERIVED_FILL:
            for attr in _DERIVED_FILL_FIELDS:
                if not hasattr(fn, attr):
                    raise SignatureMismatch(f"derived_fill entry lacks {attr!r}")
        else:
            _check_arity(kind, fn)
        if matcher.is_catch_all and not allow_catch_all and kind is not HookKind.PAGE_HANDLER:
            raise HookError("refusing a catch-all matcher; narrow db, table or column")
        self._entries.append(_Entry(kind, matcher, fn, len(self._entries)))
        return self

    def register_handler(self, name: str, fn) -> "HookRegistry":
        """Register a named page handler for custom view operations."""
        return self.register(HookKind.PAGE_HANDLER, HookMatcher(column=name), fn)

    def resolve(self, kind: HookKind, db=None, table=None, column=None):
        """Most specific matching entry, earliest registration breaking ties."""
        best: _Entry | None = None
        for entry in self._entries:
            if entry.kind is not kind or not entry.matcher.matches(db, table, column):
                continue
            if best is None or entry.matcher.specificity > best.matcher.specificity:
                best = entry
        return best.fn if best else None

    def handler(self, name: str):
        return self.resolve(HookKind.PAGE_HANDLER, column=name)

    def entries(self) -> list[_Entry]:
        return list(self._entries)


def _check_arity(kind: HookKind, fn) -> None:
    if not callable(fn):
        raise SignatureMismatch(f"{kind.value} hook is not callable")
    try:
        sig = inspect.signature(fn)
    except (TypeError, ValueError):
        return  # builtins without introspectable signatures: trust the caller
    required = _ARITY[kind]
    positional = 0
    for param in sig.parameters.values():
        if param.kind is inspect.Parameter.VAR_POSITIONAL:
            return
        if param.kind in (inspect.Parameter.POSITIONAL_ONLY, inspect.Parameter.POSITIONAL_OR_KEYWORD):
            positional += 1
    defaults = sum(
        1 for p in sig.parameters.values()
        if p.default is not inspect.Parameter.empty
        and p.kind in (inspect.Parameter.POSITIONAL_ONLY, inspect.Parameter.POSITIONAL_OR_KEYWORD)
    )
    if not (positional - defaults <= required <= positional):
        raise SignatureMismatch(
            f"{kind.value} hook must accept {required} arguments, {fn!r} takes {positional}"
        )


def default_value(reg: HookRegistry, clock: datetime, db, table, column, on_error=None) -> str | None:
    """Input default for one column via the hook chain; failures degrade to none."""
    fn = reg.resolve(HookKind.INPUT_DEFAULT_VALUE, db, table, column)
    if fn is None:
        return None
    try:
        value = fn(db, table, column, clock)
    except Exception as ex:
        if on_error:
            on_error(f"input_default_value hook failed on {db}.{table}.{column}: {ex}")
        return None
    return None if value is None else str(value)


def textarea_dims(reg: HookRegistry, db, table, column) -> tuple[int, int] | None:
    fn = reg.resolve(HookKind.INPUT_TEXTAREA_SIZE, db, table, column)
    if fn is None:
        return None
    try:
        dims = fn(db, table, column)
        if dims is None:
            return None
        rows, cols = dims
        return (int(rows), int(cols))
    except Exception:
        return None


def linkify(reg: HookRegistry, db, table, column, value, on_error=None) -> str | None:
    """URL for one result cell, or None for plain rendering."""
    fn = reg.resolve(HookKind.OUTPUT_LINK, db, table, column)
    if fn is None:
        return None
    try:
        url = fn(db, table, column, value)
    except Exception as ex:
        if on_error:
            on_error(f"output_link hook failed on {db}.{table}.{column}: {ex}")
        return None
    return None if url is None else str(url)


def date_default(db, table, column, clock: datetime) -> str:
    """The shipped current-date default: Y-M-D with no zero padding."""
    return f"{clock.year}-{clock.month}-{clock.day}"
