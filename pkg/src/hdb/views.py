"""Named higher-level objects spanning multiple tables or multiple rows.

A view declares its participating columns, equality join keys, and an ordered
operation list: standard table operations, a batch-input operation that turns
one form into many inserts, and custom operations handled by a registered
page handler.  Views live in configuration and extension code, never in the
database; the registry is built at startup and immutable afterwards.

Batch input is atomic: either every row of the submission is stored or none.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime

from . import ops as opsmod, sqlgen
from .catalog import TableMeta
from .doctree import DocNode, Page, el
from .errors import HdbError
from .hooks import HookRegistry
from .ops import OperationKind, ResultSet
from .sqlgen import RowFilter, quote_identifier


class ViewError(HdbError):
    pass


class UnknownColumnInView(ViewError):
    pass


class DuplicateViewName(ViewError):
    pass


class UnregisteredHandler(ViewError):
    pass


class NoSuchView(ViewError):
    pass


class NoSuchViewOp(ViewError):
    pass


class EmptyBatch(ViewError):
    pass


class RowInvalid(ViewError):
    def __init__(self, index: int, cause: str):
        self.index = index
        self.cause = cause
        super().__init__(f"row {index}: {cause}")


class HandlerFailure(ViewError):
    def __init__(self, message: str):
        super().__init__(message)


@dataclass(frozen=True)
class ColumnRef:
    db: str
    table: str
    column: str

    @property
    def qualified(self) -> str:
        return f"{self.db}.{self.table}.{self.column}"


@dataclass(frozen=True)
class Standard:
    kind: OperationKind

    @property
    def name(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class BatchInput:
    shared: tuple[ColumnRef, ...]
    per_row: tuple[ColumnRef, ...]
    max_rows: int = 24

    name = "input"

    def __post_init__(self):
        object.__setattr__(self, "shared", tuple(self.shared))
        object.__setattr__(self, "per_row", tuple(self.per_row))


@dataclass(frozen=True)
class Custom:
    name: str
    handler: str


@dataclass(frozen=True)
class ViewDef:
    name: str
    columns: tuple[ColumnRef, ...]
    join_keys: tuple[tuple[ColumnRef, ColumnRef], ...] = ()
    ops: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "join_keys", tuple(self.join_keys))
        object.__setattr__(self, "ops", tuple(self.ops))

    def tables(self) -> list[tuple[str, str]]:
        seen: list[tuple[str, str]] = []
        for ref in self.columns:
            key = (ref.db, ref.table)
            if key not in seen:
                seen.append(key)
        return seen

    def op_named(self, name: str):
        for op in self.ops:
            if op.name == name:
                return op
        return None


@dataclass
class ViewContext:
    """Everything view operations need from the surrounding request."""

    cat: object                      # .describe(db, table); .connection(db) ctx manager
    hooks: HookRegistry
    page_limit: int = 500
    clock: datetime | None = None
    auditor: object | None = None
    on_diagnostic: object | None = None
    render_result: object | None = None  # (title, ResultSet) -> Page


class ViewRegistry:
    def __init__(self):
        self._views: dict[str, ViewDef] = {}

    def register_view(self, view: ViewDef, cat, hooks: HookRegistry) -> None:
        """Validate a definition eagerly and make it available on the home page."""
        if view.name in self._views:
            raise DuplicateViewName(view.name)
        metas: dict[tuple[str, str], TableMeta] = {}
        for ref in view.columns:
            meta = metas.get((ref.db, ref.table))
            if meta is None:
                meta = cat.describe(ref.db, ref.table)
                metas[(ref.db, ref.table)] = meta
            if meta.column(ref.column) is None:
                raise UnknownColumnInView(ref.qualified)
        tables = set(metas)
        for left, right in view.join_keys:
            for ref in (left, right):
                if (ref.db, ref.table) not in tables:
                    raise UnknownColumnInView(f"join key {ref.qualified} is outside the view")
                if metas[(ref.db, ref.table)].column(ref.column) is None:
                    raise UnknownColumnInView(f"join key {ref.qualified}")
        for op in view.ops:
            self._validate_op(view, op, hooks)
        self._views[view.name] = view

    def _validate_op(self, view: ViewDef, op, hooks: HookRegistry) -> None:
        if isinstance(op, Custom):
            if hooks.handler(op.handler) is None:
                raise UnregisteredHandler(op.handler)
        elif isinstance(op, BatchInput):
            refs = op.shared + op.per_row
            if not op.per_row:
                raise ViewError(f"{view.name}: batch input needs per-row columns")
            targets = {(r.db, r.table) for r in refs}
            if len(targets) != 1:
                raise ViewError(f"{view.name}: batch input must target a single table")
            known = set(view.columns)
            for ref in refs:
                if ref not in known:
                    raise UnknownColumnInView(ref.qualified)
        elif isinstance(op, Standard):
            if op.kind in opsmod.MUTATING_KINDS and len(view.tables()) != 1:
                raise ViewError(f"{view.name}: {op.kind.value} over a multi-table view")
            if op.kind in (OperationKind.QUERY, OperationKind.ALL):
                dbs = {db for db, _ in view.tables()}
                if len(dbs) != 1:
                    raise ViewError(f"{view.name}: query spans multiple data sources")
                _join_order(view)  # raises when tables are not connected
        else:
            raise ViewError(f"{view.name}: unknown operation {op!r}")

    def get(self, name: str) -> ViewDef:
        view = self._views.get(name)
        if view is None:
            raise NoSuchView(name)
        return view

    def views(self) -> list[ViewDef]:
        return list(self._views.values())

    def __len__(self):
        return len(self._views)


def view_status(view: ViewDef, cat) -> str | None:
    """None when all columns still resolve; otherwise a diagnostic message."""
    try:
        for ref in view.columns:
            if cat.describe(ref.db, ref.table).column(ref.column) is None:
                return f"view {view.name}: column {ref.qualified} no longer exists"
    except HdbError as ex:
        return f"view {view.name}: {ex}"
    return None


def batch_target(op: BatchInput) -> tuple[str, str]:
    ref = (op.per_row + op.shared)[0]
    return (ref.db, ref.table)


def batch_input(session, view: ViewDef, shared: dict, rows: list[dict],
                ctx: ViewContext) -> int:
    """Insert one row per submitted group, atomically, under shared values."""
    op = next((o for o in view.ops if isinstance(o, BatchInput)), None)
    if op is None:
        raise NoSuchViewOp(f"{view.name} has no batch input operation")
    if not rows:
        raise EmptyBatch(f"no rows submitted to {view.name}")
    if len(rows) > op.max_rows:
        raise RowInvalid(op.max_rows + 1, f"batch larger than {op.max_rows} rows")
    db, table = batch_target(op)
    meta = ctx.cat.describe(db, table)
    statements = []
    with ctx.cat.connection(db) as conn:
        with conn.transaction():
            for index, row in enumerate(rows, start=1):
                merged = dict(shared)
                merged.update(row)
                try:
                    assigns = opsmod.decode_assigns(meta, merged)
                    stmt = sqlgen.gen_insert(meta, assigns)
                    conn.execute_insert(meta, stmt)
                except HdbError as ex:
                    raise RowInvalid(index, str(ex)) from ex
                statements.append(stmt)
    for stmt in statements:
        opsmod.audit_mutation(ctx.auditor, session, meta, OperationKind.INPUT, stmt, ctx.clock)
    return len(statements)


def decode_batch_form(view: ViewDef, form: dict) -> tuple[dict, list[dict]]:
    """Split `shared.<col>` and `row<i>.<col>` fields; all-blank rows vanish."""
    op = next((o for o in view.ops if isinstance(o, BatchInput)), None)
    if op is None:
        raise NoSuchViewOp(f"{view.name} has no batch input operation")
    shared = {}
    for ref in op.shared:
        value = form.get(f"shared.{ref.column}")
        if value is not None:
            shared[ref.column] = value
    rows = []
    for i in range(1, op.max_rows + 1):
        row = {}
        present = False
        for ref in op.per_row:
            value = form.get(f"row{i}.{ref.column}")
            if value is not None:
                row[ref.column] = value
                if value != "":
                    present = True
        if present:
            rows.append(row)
    return shared, rows


def build_batch_form(view: ViewDef, ctx: ViewContext, *, action: str = "",
                     row_groups: int | None = None) -> DocNode:
    """The multi-row input form: shared fields once, then row groups."""
    op = next((o for o in view.ops if isinstance(o, BatchInput)), None)
    if op is None:
        raise NoSuchViewOp(f"{view.name} has no batch input operation")
    db, table = batch_target(op)
    meta = ctx.cat.describe(db, table)
    groups = row_groups or op.max_rows

    def control(ref: ColumnRef, field_name: str):
        col = meta.column(ref.column)
        prefill = None
        if ctx.clock is not None:
            from . import hooks as hookmod
            prefill = hookmod.default_value(ctx.hooks, ctx.clock, ref.db, ref.table,
                                            ref.column, on_error=ctx.on_diagnostic)
        if col is not None and col.type.base == "enum":
            options = [el("option", v, value=v) for v in col.type.enum_values]
            return el("select", *options, name=field_name)
        return el("input", type="text", name=field_name, value=prefill)

    shared_rows = [
        el("tr", el("th", ref.column), el("td", control(ref, f"shared.{ref.column}")))
        for ref in op.shared
    ]
    body = [el("fieldset", el("legend", "Shared"), el("table", *shared_rows))] if shared_rows else []
    header = el("tr", *[el("th", ref.column) for ref in op.per_row], el("th", "row"))
    data_rows = [
        el("tr", *[el("td", control(ref, f"row{i}.{ref.column}")) for ref in op.per_row],
           el("td", str(i)))
        for i in range(1, groups + 1)
    ]
    body.append(el("table", header, *data_rows, class_="batch-grid"))
    body.append(el("p", el("input", type="submit", value="Insert rows")))
    return el("form", *body, method="post", action=action, data_hdb_enhance="input-form")


def _join_order(view: ViewDef):
    """Join plan: each table after the first must connect via a join key."""
    tables = view.tables()
    joined = [tables[0]]
    plan = []
    remaining = tables[1:]
    while remaining:
        progressed = False
        for candidate in list(remaining):
            conds = []
            for left, right in view.join_keys:
                lt, rt = (left.db, left.table), (right.db, right.table)
                if lt == candidate and rt in joined:
                    conds.append((left, right))
                elif rt == candidate and lt in joined:
                    conds.append((right, left))
            if conds:
                plan.append((candidate, conds))
                joined.append(candidate)
                remaining.remove(candidate)
                progressed = True
        if not progressed:
            raise ViewError(f"{view.name}: tables not connected by join keys")
    return tables[0], plan


def view_select(view: ViewDef, ctx: ViewContext, form: dict | None = None) -> ResultSet:
    """query / all over the view's column set, joined by its keys."""
    form = form or {}
    first, plan = _join_order(view)
    metas = {(db, t): ctx.cat.describe(db, t) for db, t in view.tables()}

    def qref(ref: ColumnRef) -> str:
        return f"{quote_identifier(ref.table)}.{quote_identifier(ref.column)}"

    select_list = ", ".join(qref(ref) for ref in view.columns)
    text = f"SELECT {select_list} FROM {quote_identifier(first[1])}"
    for (db, table), conds in plan:
        on = " AND ".join(f"{qref(a)} = {qref(b)}" for a, b in conds)
        text += f" JOIN {quote_identifier(table)} ON {on}"
    params = []
    conjuncts = []
    for ref in view.columns:
        raw = form.get(ref.qualified)
        if raw is None or raw == "":
            continue
        relation = form.get(f"{ref.qualified}.rel", "eq")
        if relation not in sqlgen.RELATIONS:
            raise ViewError(f"unknown relation {relation!r}")
        col = metas[(ref.db, ref.table)].column(ref.column)
        conjuncts.append(f"{qref(ref)} {sqlgen.RELATIONS[relation]} ?")
        params.append(sqlgen.coerce_value(col, raw))
    if conjuncts:
        text += " WHERE " + " AND ".join(conjuncts)
    text += f" LIMIT {int(ctx.page_limit) + 1}"
    stmt = sqlgen.SqlStatement(text, tuple(params))
    with ctx.cat.connection(first[0]) as conn:
        _, rows = conn.query(stmt)
    labels = tuple(ref.qualified for ref in view.columns)
    truncated = len(rows) > ctx.page_limit
    return ResultSet(labels, tuple(rows[:ctx.page_limit]), truncated)


def dispatch_view_op(session, view: ViewDef, op_name: str, form: dict,
                     ctx: ViewContext) -> Page:
    """Run one view operation and produce its page."""
    op = view.op_named(op_name)
    if op is None:
        raise NoSuchViewOp(f"{view.name} has no operation {op_name!r}")

    if isinstance(op, Custom):
        handler = ctx.hooks.handler(op.handler)
        if handler is None:
            raise UnregisteredHandler(op.handler)
        try:
            return handler(session, view, form, ctx.cat)
        except HdbError:
            raise
        except Exception as ex:
            raise HandlerFailure(f"handler {op.handler!r} failed: {ex}") from ex

    if isinstance(op, BatchInput):
        shared, rows = decode_batch_form(view, form)
        n = batch_input(session, view, shared, rows, ctx)
        return Page(
            title=f"{view.name}: rows stored",
            body=(el("p", f"{n} rows stored."),),
        )

    assert isinstance(op, Standard)
    if op.kind in (OperationKind.QUERY, OperationKind.ALL):
        result = view_select(view, ctx, form if op.kind is OperationKind.QUERY else None)
        if ctx.render_result is not None:
            return ctx.render_result(f"{view.name}: {op.kind.value}", result)
        return Page(title=f"{view.name}: {op.kind.value}", body=(_plain_result(result),))

    # mutating standard op over a single-table view
    (db, table) = view.tables()[0]
    meta = ctx.cat.describe(db, table)
    with ctx.cat.connection(db) as conn:
        result = opsmod.execute_op(session, conn, meta, op.kind, form,
                                   hooks=ctx.hooks, page_limit=ctx.page_limit,
                                   auditor=ctx.auditor, clock=ctx.clock)
    if isinstance(result, ResultSet) and ctx.render_result is not None:
        return ctx.render_result(f"{view.name}: {op.kind.value}", result)
    body: tuple
    if isinstance(result, ResultSet):
        body = (_plain_result(result),)
    else:
        body = (el("p", f"{result.n} rows affected."),)
    return Page(title=f"{view.name}: {op.kind.value}", body=body)


def _plain_result(result: ResultSet) -> DocNode:
    header = el("tr", *[el("th", c) for c in result.columns])
    rows = [
        el("tr", *[el("td", "" if v is None else str(v)) for v in row])
        for row in result.rows
    ]
    return el("table", header, *rows, data_hdb_enhance="result-table")


def artifact_display_handler(db: str, table: str, key_column: str, link_column: str):
    """Factory for a stored-artifact display operation.

    The returned handler takes the row key from the form, resolves the
    file-link column on that row, and produces a page embedding the stored
    artifact's reference.  Register it under a handler name and attach it to
    a view as a Custom operation (conventionally named ``disp``).
    """

    def handler(session, view, form, cat) -> Page:
        key = form.get(key_column)
        if key is None or key == "":
            raise HandlerFailure(f"supply {key_column} to pick the row to display")
        meta = cat.describe(db, table)
        stmt = sqlgen.gen_select(meta, columns=[link_column],
                                 filter=sqlgen.eq(key_column, key), limit=1)
        with cat.connection(db) as conn:
            _, rows = conn.query(stmt)
        if not rows or rows[0][0] in (None, ""):
            raise HandlerFailure(f"no stored artifact on {table}.{link_column} for {key}")
        stored = str(rows[0][0])
        return Page(
            title=f"{view.name}: {key_column} {key}",
            body=(
                el("p", f"Stored artifact for {key_column} {key}:"),
                el("p", el("code", stored), class_="artifact-ref"),
            ),
        )

    return handler
