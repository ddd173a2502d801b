"""The five standard table operations.

input inserts one row, update and delete mutate filtered rows, query is a
filtered select and all is the maximal select.  Which of these a table offers
is derived from its metadata (the configured read-only tables keep only the
read operations) and can be narrowed by an op_override hook.  Mutations are
recorded in the configured audit table; audit failures never block the
mutation itself.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum

from . import doctree, hooks as hookmod, sqlgen
from .catalog import Connection, TEXTAREA_BASES, TableMeta
from .doctree import DocNode, el
from .errors import HdbError
from .hooks import HookKind, HookRegistry
from .sqlgen import MissingRequired, RowFilter


class OpsError(HdbError):
    pass


class OperationNotAvailable(OpsError):
    pass


class OperationKind(Enum):
    INPUT = "input"
    UPDATE = "update"
    DELETE = "delete"
    QUERY = "query"
    ALL = "all"


STANDARD_ORDER = (
    OperationKind.INPUT, OperationKind.UPDATE, OperationKind.DELETE,
    OperationKind.QUERY, OperationKind.ALL,
)
READ_KINDS = (OperationKind.QUERY, OperationKind.ALL)
MUTATING_KINDS = frozenset({OperationKind.INPUT, OperationKind.UPDATE, OperationKind.DELETE})

DEFAULT_TEXTAREA = (4, 60)
DEFAULT_PAGE_LIMIT = 500
AUDIT_SUMMARY_CAP = 1024


@dataclass(frozen=True)
class RowsAffected:
    n: int
    key: object = None


@dataclass(frozen=True)
class ResultSet:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    truncated: bool = False


OpResult = object  # RowsAffected | ResultSet


@dataclass(frozen=True)
class AuditRecord:
    user: str
    at: str
    db: str
    table: str
    op: OperationKind
    summary: str

    def __post_init__(self):
        if self.op not in MUTATING_KINDS:
            raise OpsError("reads are not audited")


def available_ops(meta: TableMeta, hooks: HookRegistry | None = None) -> list[OperationKind]:
    """Operations offered for one table, in the fixed canonical order."""
    base = list(READ_KINDS) if meta.read_only else list(STANDARD_ORDER)
    if hooks is not None:
        fn = hooks.resolve(HookKind.OP_OVERRIDE, meta.db, meta.name, None)
        if fn is not None:
            overridden = fn(meta.db, meta.name, list(base))
            wanted = {k if isinstance(k, OperationKind) else OperationKind(k) for k in overridden}
            base = [k for k in STANDARD_ORDER if k in wanted]
            if meta.read_only:
                # hooks may shrink but never re-enable writes on read-only tables
                base = [k for k in base if k in READ_KINDS]
    return base


def build_input_form(meta: TableMeta, hooks: HookRegistry, clock: datetime, *,
                     action: str = "", upload_columns=frozenset(),
                     on_diagnostic=None) -> DocNode:
    """The insert form: one control per column, defaults via the hook chain."""
    if OperationKind.INPUT not in available_ops(meta, hooks):
        raise OperationNotAvailable(f"input is not available on {meta.db}.{meta.name}")
    controls = assign_controls(meta, hooks, clock, upload_columns=upload_columns,
                               on_diagnostic=on_diagnostic)
    has_upload = bool(set(upload_columns) & {c.name for c in meta.columns})
    return el(
        "form", controls, el("p", el("input", type="submit", value="Insert")),
        method="post", action=action,
        enctype="multipart/form-data" if has_upload else None,
        data_hdb_enhance="input-form upload-form" if has_upload else "input-form",
    )


def assign_controls(meta: TableMeta, hooks: HookRegistry, clock: datetime, *,
                    values: dict | None = None, upload_columns=frozenset(),
                    on_diagnostic=None) -> DocNode:
    """Column controls shared by the input form and the update assigns form.

    With ``values`` given (update pre-fill) the hook defaults do not apply;
    otherwise each column's default comes from the hook chain, then from the
    column's declared default.
    """
    rows = []
    for col in meta.columns:
        rows.append(el(
            "tr",
            el("th", el("label", col.name, for_=f"f-{col.name}")),
            el("td", _control(meta, col, hooks, clock, values, upload_columns, on_diagnostic)),
        ))
    return el("table", *rows, class_="assign-grid")


def _control(meta, col, hooks, clock, values, upload_columns, on_diagnostic) -> DocNode:
    prefill = None
    if values is not None:
        current = values.get(col.name)
        prefill = "" if current is None else str(current)
    else:
        prefill = hookmod.default_value(hooks, clock, meta.db, meta.name, col.name,
                                        on_error=on_diagnostic)
        if prefill is None:
            prefill = col.default
    required = "1" if (not col.nullable and col.default is None and not col.auto_increment) else None

    if col.auto_increment:
        # engine-assigned: visible but inert, and never submitted (no name)
        value = prefill if (values is not None and prefill) else "automatic"
        return el("input", type="text", value=value, disabled="disabled", id=f"f-{col.name}")
    if col.name in upload_columns and values is None:
        return el("input", type="file", name=col.name, id=f"f-{col.name}",
                  data_hdb_required=required)
    if col.type.base == "enum":
        options = [
            el("option", v, value=v, selected=("selected" if prefill == v else None))
            for v in col.type.enum_values
        ]
        return el("select", *options, name=col.name, id=f"f-{col.name}",
                  data_hdb_required=required)
    if col.type.base in TEXTAREA_BASES:
        dims = hookmod.textarea_dims(hooks, meta.db, meta.name, col.name) or DEFAULT_TEXTAREA
        return el("textarea", prefill or "", name=col.name, id=f"f-{col.name}",
                  rows=dims[0], cols=dims[1], data_hdb_required=required)
    return el("input", type="text", name=col.name, id=f"f-{col.name}",
              value=prefill, data_hdb_required=required)


def filter_controls(meta: TableMeta, *, values: dict | None = None) -> DocNode:
    """Filter form grid: per column a relation menu and a value field."""
    values = values or {}
    rows = []
    for col in meta.columns:
        rel_options = [
            el("option", rel, value=rel,
               selected=("selected" if values.get(f"{col.name}.rel") == rel else None))
            for rel in sqlgen.RELATIONS
        ]
        rows.append(el(
            "tr",
            el("th", el("label", col.name)),
            el("td", el("select", *rel_options, name=f"{col.name}.rel")),
            el("td", el("input", type="text", name=col.name, value=values.get(col.name))),
        ))
    return el("table", *rows, class_="filter-grid")


def decode_assigns(meta: TableMeta, form: dict) -> dict:
    """Form fields (named by column) to an assigns map.

    Empty strings mean NULL for nullable columns, "use the declared default"
    for defaulted columns, and MissingRequired otherwise.
    """
    assigns: dict = {}
    for col in meta.columns:
        if col.name not in form:
            continue
        raw = form[col.name]
        if raw == "":
            if col.nullable:
                assigns[col.name] = None
            elif col.default is not None or col.auto_increment:
                continue
            else:
                raise MissingRequired(col.name)
        else:
            assigns[col.name] = raw
    return assigns


def decode_filter(meta: TableMeta, form: dict, prefix: str = "") -> RowFilter:
    conjuncts = []
    for col in meta.columns:
        raw = form.get(prefix + col.name)
        if raw is None or raw == "":
            continue
        relation = form.get(f"{prefix}{col.name}.rel", "eq")
        conjuncts.append((col.name, relation, raw))
    return RowFilter(tuple(conjuncts))


def execute_op(session, conn: Connection, meta: TableMeta, kind: OperationKind,
               form: dict, *, hooks: HookRegistry, page_limit: int = DEFAULT_PAGE_LIMIT,
               auditor: "Auditor | None" = None, clock: datetime | None = None,
               extra_assigns: dict | None = None) -> OpResult:
    """Decode the form for one operation kind, run it, audit mutations.

    ``extra_assigns`` carries derived-fill values computed from an upload;
    they are merged after decoding and may never collide with a user field.
    """
    if kind not in available_ops(meta, hooks):
        raise OperationNotAvailable(f"{kind.value} is not available on {meta.db}.{meta.name}")

    if kind is OperationKind.INPUT:
        assigns = decode_assigns(meta, form)
        if extra_assigns:
            collisions = set(assigns) & set(extra_assigns)
            if collisions:
                raise OpsError(f"derived values would overwrite user fields: {sorted(collisions)}")
            assigns.update(extra_assigns)
        stmt = sqlgen.gen_insert(meta, assigns)
        key = conn.execute_insert(meta, stmt)
        audit_mutation(auditor, session, meta, kind, stmt, clock)
        return RowsAffected(1, key=key)

    if kind is OperationKind.UPDATE:
        assigns = decode_assigns(meta, {k: v for k, v in form.items() if not k.startswith("where.")})
        filter = decode_filter(meta, form, prefix="where.")
        stmt = sqlgen.gen_update(meta, assigns, filter)
        n = conn.execute(stmt)
        audit_mutation(auditor, session, meta, kind, stmt, clock)
        return RowsAffected(n)

    if kind is OperationKind.DELETE:
        filter = decode_filter(meta, form, prefix="where.")
        if not filter:
            filter = decode_filter(meta, form)
        stmt = sqlgen.gen_delete(meta, filter)
        n = conn.execute(stmt)
        audit_mutation(auditor, session, meta, kind, stmt, clock)
        return RowsAffected(n)

    if kind is OperationKind.QUERY:
        filter = decode_filter(meta, form)
        stmt = sqlgen.gen_select(meta, filter=filter, limit=page_limit + 1)
        columns, rows = conn.query(stmt)
        return _result(columns, rows, page_limit)

    assert kind is OperationKind.ALL
    stmt = sqlgen.gen_select(meta, limit=page_limit + 1)
    columns, rows = conn.query(stmt)
    return _result(columns, rows, page_limit)


def _result(columns, rows, page_limit) -> ResultSet:
    truncated = len(rows) > page_limit
    return ResultSet(tuple(columns), tuple(rows[:page_limit]), truncated)


def audit_mutation(auditor, session, meta, kind, stmt, clock=None) -> None:
    if auditor is None:
        return
    user = getattr(getattr(session, "user", None), "hdb_name", "") or ""
    at = (clock or datetime.now()).isoformat(sep=" ", timespec="seconds")
    summary = f"{stmt.text} with {stmt.params!r}"[:AUDIT_SUMMARY_CAP]
    auditor.record(AuditRecord(user=user, at=at, db=meta.db, table=meta.name,
                               op=kind, summary=summary))


def record_audit(conn: Connection, audit_meta: TableMeta, rec: AuditRecord,
                 on_diagnostic=None) -> None:
    """Append one audit row; failures downgrade to a diagnostic."""
    try:
        writable = replace(audit_meta, read_only=False)
        stmt = sqlgen.gen_insert(writable, {
            "user": rec.user, "at": rec.at, "db": rec.db,
            "table": rec.table, "op": rec.op.value, "summary": rec.summary,
        })
        conn.execute_insert(writable, stmt)
    except Exception as ex:
        if on_diagnostic:
            on_diagnostic(f"audit record could not be written: {ex}")


class Auditor:
    """Binds the configured audit table to a connection for the request."""

    def __init__(self, conn: Connection, meta: TableMeta, on_diagnostic=None):
        self.conn = conn
        self.meta = meta
        self.on_diagnostic = on_diagnostic

    def record(self, rec: AuditRecord) -> None:
        record_audit(self.conn, self.meta, rec, self.on_diagnostic)
