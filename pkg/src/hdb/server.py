"""Request handling: routing, the six page types, diagnostics, uploads.

The application core is transport-independent: :meth:`App.handle` maps one
:class:`Request` to one :class:`Response`, so the same code serves the
threaded listener, the single-request stdio mode, and in-process tests.

Every authenticated page carries the persistent navigation block and any
pending diagnostics for the session, delivered exactly once.  Unauthenticated
requests to anything but the login page and static assets are sent to the
login page and never see data.
"""

from __future__ import annotations

import email
import logging
import mimetypes
import os
import re
import sqlite3
import threading
import urllib.parse
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources, util as importutil
from pathlib import Path

from . import SERVED_BY, auth, bridge, catalog, hooks as hookmod, ops, sqlgen, views as viewmod
from .auth import IpWindow, ServerMeta, Session, SessionIdle, SessionStore
from .catalog import Connection, DataSourceConfig, DataSourceUnavailable, NoSuchTable, SourcePool
from .config import InvalidConfig, ServerConfig
from .doctree import DocNode, Page, Raw, el, render_page
from .errors import HdbError
from .hooks import HookKind, HookMatcher, HookRegistry
from .ops import OperationKind, ResultSet, RowsAffected
from .views import ViewContext, ViewRegistry

log = logging.getLogger("hdb")


class ServerError(HdbError):
    pass


class NotFound(ServerError):
    pass


class UploadTooLarge(ServerError):
    pass


class PathSanitizationFailure(ServerError):
    pass


class DiskFull(ServerError):
    pass


class BadRequest(ServerError):
    pass


SESSION_COOKIE = "hdb_session"


# -- request / response ---------------------------------------------------------


@dataclass
class UploadPart:
    filename: str
    content: bytes


@dataclass
class Request:
    method: str
    path: str
    query: dict[str, str] = field(default_factory=dict)
    form: dict[str, object] = field(default_factory=dict)  # str | UploadPart
    headers: dict[str, str] = field(default_factory=dict)
    cookies: dict[str, str] = field(default_factory=dict)
    peer: str = "127.0.0.1"

    @property
    def fields(self) -> dict:
        merged = dict(self.query)
        merged.update(self.form)
        return merged


@dataclass
class Response:
    status: int = 200
    body: bytes = b""
    content_type: str = "text/html; charset=utf-8"
    headers: list[tuple[str, str]] = field(default_factory=list)
    set_cookies: list[str] = field(default_factory=list)


def parse_request_body(content_type: str, body: bytes) -> dict:
    """Decode a form body: urlencoded or multipart/form-data."""
    if not content_type:
        return {}
    main = content_type.split(";", 1)[0].strip().lower()
    if main == "application/x-www-form-urlencoded":
        pairs = urllib.parse.parse_qsl(body.decode("utf-8", "replace"), keep_blank_values=True)
        return dict(pairs)
    if main == "multipart/form-data":
        message = email.message_from_bytes(
            b"MIME-Version: 1.0\r\nContent-Type: " + content_type.encode() + b"\r\n\r\n" + body
        )
        if not message.is_multipart():
            raise BadRequest("multipart body did not parse")
        form: dict[str, object] = {}
        for part in message.get_payload():
            name = part.get_param("name", header="content-disposition")
            if name is None:
                continue
            filename = part.get_param("filename", header="content-disposition")
            payload = part.get_payload(decode=True) or b""
            if filename is not None:
                form[name] = UploadPart(filename=filename, content=payload)
            else:
                form[name] = payload.decode("utf-8", "replace")
        return form
    raise BadRequest(f"unsupported content type {main!r}")


# -- routing ---------------------------------------------------------------------


@dataclass(frozen=True)
class RouteMatch:
    name: str
    params: dict


_ROUTES = [
    (re.compile(r"^/$"), "root", ()),
    (re.compile(r"^/login$"), "login", ()),
    (re.compile(r"^/logout$"), "logout", ()),
    (re.compile(r"^/home$"), "home", ()),
    (re.compile(r"^/profile$"), "profile", ()),
    (re.compile(r"^/db/([^/]+)$"), "database", ("db",)),
    (re.compile(r"^/db/([^/]+)/table/([^/]+)$"), "table", ("db", "table")),
    (re.compile(r"^/db/([^/]+)/table/([^/]+)/op/([^/]+)$"), "table_op", ("db", "table", "kind")),
    (re.compile(r"^/view/([^/]+)$"), "view", ("view",)),
    (re.compile(r"^/view/([^/]+)/op/([^/]+)$"), "view_op", ("view", "op")),
    (re.compile(r"^/static/(.+)$"), "static", ("asset",)),
]


def route(path: str) -> RouteMatch:
    """Deterministic path-to-action mapping; unknown paths raise NotFound."""
    for pattern, name, keys in _ROUTES:
        m = pattern.match(path)
        if m:
            params = {k: urllib.parse.unquote(v) for k, v in zip(keys, m.groups())}
            return RouteMatch(name, params)
    raise NotFound(path)


# -- shared state ------------------------------------------------------------------


class DiagnosticStore:
    """Session-scoped deliver-once messages shown atop the next page."""

    def __init__(self):
        self._lock = threading.Lock()
        self._pending: dict[str, list[str]] = {}

    def push(self, session_id: str, message: str) -> None:
        with self._lock:
            self._pending.setdefault(session_id, []).append(message)

    def drain(self, session_id: str) -> list[str]:
        with self._lock:
            return self._pending.pop(session_id, [])


class ConnectionManager:
    """Pools per data source; availability is re-probed on demand."""

    def __init__(self, sources: list[DataSourceConfig], pool_size: int = 4):
        self._sources = {cfg.name: cfg for cfg in sources}
        self._pools = {cfg.name: SourcePool(cfg, pool_size) for cfg in sources}

    def source_names(self) -> list[str]:
        return sorted(self._sources)

    def probe(self) -> list[DataSourceUnavailable]:
        failures = []
        for cfg in self._sources.values():
            try:
                catalog.open_source(cfg).close()
            except DataSourceUnavailable as ex:
                failures.append(ex)
        return failures

    @contextmanager
    def connection(self, db: str, db_user: str | None = None):
        cfg = self._sources.get(db)
        if cfg is None:
            raise NotFound(f"no data source named {db}")
        pool = self._pools[db]
        conn = pool.acquire(db_user)
        try:
            yield conn
        finally:
            pool.release(conn)

    def describe(self, db: str, table: str, db_user: str | None = None):
        with self.connection(db, db_user) as conn:
            return conn.describe_table(table)

    def cat_for(self, db_user: str | None = None) -> "SessionCat":
        return SessionCat(self, db_user)


class SessionCat:
    """Catalog access running as one db user (the views-layer protocol)."""

    def __init__(self, manager: ConnectionManager, db_user: str | None):
        self._manager = manager
        self._db_user = db_user

    def describe(self, db, table):
        return self._manager.describe(db, table, self._db_user)

    def connection(self, db):
        return self._manager.connection(db, self._db_user)


# -- uploads -----------------------------------------------------------------------


@dataclass(frozen=True)
class UploadRecord:
    stored_path: str  # relative to upload_root
    original_name: str
    size: int
    stored_at: str


_SAFE_CHARS = re.compile(r"[^A-Za-z0-9._-]")


def sanitize_filename(name: str, fallback: str = "file") -> str:
    """Reduce a client-supplied name to a safe basename; never a path."""
    name = name.replace("\\", "/").rsplit("/", 1)[-1]
    name = _SAFE_CHARS.sub("_", name)
    name = name.lstrip(".-")
    if len(name) > 80:
        stem, _, ext = name.rpartition(".")
        name = (stem[:70] + ("." + ext if ext else ""))[:80]
    return name or fallback


def store_upload(upload_root: str | Path, db: str, table: str, column: str,
                 original_name: str, content: bytes, *,
                 max_bytes: int | None = None,
                 clock: datetime | None = None) -> UploadRecord:
    """Store one uploaded file at its canonical location.

    ``{upload_root}/{db}/{table}/{column}/{UTC timestamp}_{sanitized name}``;
    the returned relative path is what goes into the file-link column.
    """
    if max_bytes is not None and len(content) > max_bytes:
        raise UploadTooLarge(f"{len(content)} bytes exceeds the {max_bytes} byte cap")
    root = Path(upload_root).resolve()
    segments = [sanitize_filename(s, fallback="_") for s in (db, table, column)]
    stamp = (clock or datetime.now(timezone.utc)).strftime("%Y%m%dT%H%M%S%f")
    name = f"{stamp}_{sanitize_filename(original_name)}"
    directory = root.joinpath(*segments)
    target = directory / name
    resolved_dir = directory.resolve() if directory.exists() else directory
    candidate = (resolved_dir / name)
    if not _inside(root, candidate):
        raise PathSanitizationFailure(f"{original_name!r} escapes the upload root")
    try:
        directory.mkdir(parents=True, exist_ok=True)
        counter = 0
        while target.exists():
            counter += 1
            target = directory / f"{stamp}_{counter}_{sanitize_filename(original_name)}"
        if not _inside(root, target):
            raise PathSanitizationFailure(f"{original_name!r} escapes the upload root")
        target.write_bytes(content)
    except OSError as ex:
        if ex.errno == 28:  # ENOSPC
            raise DiskFull(str(ex)) from ex
        raise
    stored_at = (clock or datetime.now(timezone.utc)).isoformat(sep=" ", timespec="seconds")
    return UploadRecord(
        stored_path=str(target.relative_to(root)),
        original_name=original_name,
        size=len(content),
        stored_at=stored_at,
    )


def _inside(root: Path, candidate: Path) -> bool:
    try:
        candidate.relative_to(root)
        return True
    except ValueError:
        return False


# -- extensions ----------------------------------------------------------------------


@dataclass
class SiteEnv:
    """What an extension module's setup() receives."""

    hooks: HookRegistry
    views: ViewRegistry
    cat: SessionCat
    config: ServerConfig

    def register_derived_fill(self, spec: bridge.DerivedFillSpec) -> None:
        db, table, column = spec.trigger
        meta = self.cat.describe(db, table)
        if meta.column(column) is None:
            raise InvalidConfig(f"derived fill trigger {db}.{table}.{column} does not exist")
        for output in spec.outputs:
            if meta.column(output) is None:
                raise InvalidConfig(f"derived fill output column {output!r} is not in {table}")
            if output == column:
                raise InvalidConfig(f"derived fill may not overwrite its trigger {column!r}")
        self.hooks.register(HookKind.DERIVED_FILL,
                            HookMatcher(db=db, table=table, column=column), spec)


def load_extension(path: Path, env: SiteEnv) -> None:
    spec = importutil.spec_from_file_location(f"hdb_site_{path.stem}", path)
    if spec is None or spec.loader is None:
        raise InvalidConfig(f"cannot load extension {path}")
    module = importutil.module_from_spec(spec)
    spec.loader.exec_module(module)
    if not hasattr(module, "setup"):
        raise InvalidConfig(f"extension {path} has no setup(site) function")
    module.setup(env)


# -- the application -----------------------------------------------------------------


class App:
    def __init__(self, config: ServerConfig, *, hooks: HookRegistry | None = None,
                 views: ViewRegistry | None = None, clock=None):
        self.config = config
        self.hooks = hooks if hooks is not None else HookRegistry()
        self.views = views if views is not None else ViewRegistry()
        self.clock = clock or datetime.now
        self.diagnostics = DiagnosticStore()
        self.manager = ConnectionManager(config.sources, config.pool_size)
        self.users = config.users_by_name()
        self.last_page: Page | None = None

        root = Path(config.upload_root)
        try:
            root.mkdir(parents=True, exist_ok=True)
            probe = root / ".hdb-write-probe"
            probe.write_text("")
            probe.unlink()
        except OSError as ex:
            raise InvalidConfig(f"upload_root {root} is not writable: {ex}") from ex

        persist = None
        if isinstance(config.auth_mode, IpWindow):
            Path(config.state_dir).mkdir(parents=True, exist_ok=True)
            persist = Path(config.state_dir) / "ip_windows.json"
        self.sessions = SessionStore(persist)

        env = SiteEnv(hooks=self.hooks, views=self.views,
                      cat=self.manager.cat_for(None), config=config)
        for ext in config.extensions:
            load_extension(Path(ext), env)

        self.manager.probe()  # startup connectivity check; failures become diagnostics

    # -- entry point -------------------------------------------------------------

    def handle(self, req: Request) -> Response:
        self.last_page = None
        try:
            match = route(req.path)
        except NotFound:
            return self._error_page(req, None, 404, f"No such page: {req.path}")
        if match.name == "static":
            return self._static(match.params["asset"])
        if match.name == "login":
            return self._login(req)
        now = self.clock()
        session = auth.validate(self.config.auth_mode, self.sessions, self.users,
                                req.peer, req.cookies.get(SESSION_COOKIE), now)
        if match.name == "root":
            return _redirect("/home" if session else "/login")
        if session is None:
            return _redirect("/login")
        if match.name == "logout":
            return self._logout(req, session)
        handler = getattr(self, f"_page_{match.name}")
        try:
            return handler(req, session, **match.params)
        except NotFound as ex:
            return self._error_page(req, session, 404, str(ex))
        except (catalog.NoSuchTable, viewmod.NoSuchView, viewmod.NoSuchViewOp) as ex:
            return self._error_page(req, session, 404, str(ex))
        except DataSourceUnavailable as ex:
            self.diagnostics.push(session.id, ex.diagnostic())
            return self._error_page(req, session, 503, str(ex))
        except viewmod.HandlerFailure as ex:
            self.diagnostics.push(session.id, str(ex))
            return self._error_page(req, session, 500, str(ex))
        except (HdbError,) as ex:
            return self._error_page(req, session, 400, str(ex))
        except sqlite3.Error as ex:
            log.exception("engine error for %s", req.path)
            return self._error_page(req, session, 500, f"engine error: {ex}")

    # -- page assembly -------------------------------------------------------------

    def _server_meta(self) -> ServerMeta:
        return ServerMeta(title=self.config.title, version=SERVED_BY,
                          host=self.config.host, port=self.config.port)

    def _chrome(self, session: Session | None, title: str, body: tuple) -> Page:
        head_extra = (
            el("link", rel="stylesheet", href="/static/hdb.css"),
            el("script", src="/static/hdb.js", defer="defer"),
        )
        blocks: list[DocNode] = []
        if session is not None:
            blocks.append(el(
                "div",
                el("a", "Home", href="/home"), " ",
                el("a", "Profile", href="/profile"), " ",
                el("a", "Log out", href="/logout"),
                class_="nav",
            ))
            messages = self.diagnostics.drain(session.id)
            if messages:
                blocks.append(el("div", *[el("p", m) for m in messages], class_="diagnostics"))
        blocks.append(el("h1", title))
        return Page(title=title, head_extra=head_extra, body=tuple(blocks) + tuple(body))

    def _respond(self, page: Page, status: int = 200, set_cookies=()) -> Response:
        self.last_page = page
        return Response(status=status, body=render_page(page).encode(),
                        set_cookies=list(set_cookies))

    def _page(self, session, title: str, body: tuple, status: int = 200,
              set_cookies=()) -> Response:
        return self._respond(self._chrome(session, title, body), status, set_cookies)

    def _error_page(self, req: Request, session, status: int, message: str) -> Response:
        if session is None:
            page = Page(title="Error", head_extra=(
                el("link", rel="stylesheet", href="/static/hdb.css"),
            ), body=(el("h1", "Error"), el("p", message, class_="error")))
            return self._respond(page, status)
        return self._page(session, "Error", (el("p", message, class_="error"),), status)

    # -- authentication ---------------------------------------------------------------

    def _login_page(self, message: str | None = None, status: int = 200) -> Response:
        body: list[DocNode] = [el("h1", self.config.title)]
        if message:
            body.append(el("div", el("p", message), class_="diagnostics"))
        body.append(el(
            "form",
            el("p", el("label", "User name ", for_="user"),
               el("input", type="text", name="user", id="user")),
            el("p", el("label", "Password ", for_="password"),
               el("input", type="password", name="password", id="password")),
            el("p", el("input", type="submit", value="Log in")),
            method="post", action="/login",
        ))
        page = Page(title="Log in", head_extra=(
            el("link", rel="stylesheet", href="/static/hdb.css"),
        ), body=tuple(body))
        return self._respond(page, status)

    def _login(self, req: Request) -> Response:
        if req.method != "POST":
            return self._login_page()
        now = self.clock()
        try:
            session = auth.login(self.sessions, self.users,
                                 str(req.form.get("user", "")), str(req.form.get("password", "")),
                                 req.peer, now, self.config.auth_mode)
        except auth.InvalidCredentials as ex:
            return self._login_page(str(ex), status=403)
        for failure in self.manager.probe():
            self.diagnostics.push(session.id, failure.diagnostic())
        cookie = f"{SESSION_COOKIE}={session.id}; Path=/; HttpOnly"
        return _redirect("/home", set_cookies=[cookie])

    def _logout(self, req: Request, session: Session) -> Response:
        self.sessions.remove(session.id)
        if isinstance(self.config.auth_mode, IpWindow):
            self.sessions.drop_window(req.peer)
        expired = f"{SESSION_COOKIE}=; Path=/; Max-Age=0"
        return _redirect("/login", set_cookies=[expired])

    # -- the six page types --------------------------------------------------------------

    def _page_home(self, req: Request, session: Session) -> Response:
        body: list[DocNode] = [el("h2", "Databases")]
        items = [
            el("li", el("a", name, href=f"/db/{name}"))
            for name in self.manager.source_names()
        ]
        body.append(el("ul", *items))
        all_views = self.views.views()
        if all_views:
            body.append(el("h2", "Views"))
            entries = []
            cat = self._cat(session)
            for view in all_views:
                stale = viewmod.view_status(view, cat)
                if stale:
                    self.diagnostics.push(session.id, stale)
                entries.append(el("li", el("a", view.name, href=f"/view/{view.name}")))
            body.append(el("ul", *entries))
        return self._page(session, self.config.title, tuple(body))

    def _page_profile(self, req: Request, session: Session) -> Response:
        block = auth.profile_page(session, self._server_meta())
        return self._page(session, "User Profile", (block,))

    def _page_database(self, req: Request, session: Session, db: str) -> Response:
        rows = []
        with self._connection(session, db) as conn:
            for meta in conn.list_tables():
                links = [
                    el("a", f"[{kind.value}]",
                       href=f"/db/{db}/table/{meta.name}/op/{kind.value}", class_="op")
                    for kind in ops.available_ops(meta, self.hooks)
                ]
                cells = [el("td", el("a", meta.name, href=f"/db/{db}/table/{meta.name}"))]
                cells.extend(el("td", link) for link in links)
                rows.append(el("tr", *cells))
        return self._page(session, db, (el("table", *rows, class_="db-tables"),))

    def _page_table(self, req: Request, session: Session, db: str, table: str) -> Response:
        with self._connection(session, db) as conn:
            meta = conn.describe_table(table)
            count = conn.row_count(table)
        header = el("p", f"{db}.{table} has {count} rows.", class_="table-head")
        grid_rows = [el("tr", *[el("th", h) for h in
                                ("Name", "Defn. Type", "Null", "Key", "Def", "Extra")])]
        key_names = {"primary": "PRI", "unique": "UNI", "index": "MUL", "none": ""}
        for col in meta.columns:
            grid_rows.append(el(
                "tr",
                el("td", col.name),
                el("td", col.type.display),
                el("td", "YES" if col.nullable else "NO"),
                el("td", key_names[col.key]),
                el("td", col.default or ""),
                el("td", "autoinc" if col.auto_increment else ""),
            ))
        op_links = [
            el("a", f"[{kind.value}]", href=f"/db/{db}/table/{table}/op/{kind.value}", class_="op")
            for kind in ops.available_ops(meta, self.hooks)
        ]
        body = (
            header,
            el("p", "Table columns:"),
            el("table", *grid_rows, class_="meta-grid"),
            el("p", *_spaced(op_links)),
        )
        return self._page(session, f"{db}.{table}", body)

    # -- table operations ------------------------------------------------------------------

    def _page_table_op(self, req: Request, session: Session, db: str, table: str,
                       kind: str) -> Response:
        try:
            op_kind = OperationKind(kind)
        except ValueError:
            raise NotFound(f"no operation named {kind}")
        with self._connection(session, db) as conn:
            meta = conn.describe_table(table)
            if op_kind not in ops.available_ops(meta, self.hooks):
                raise ops.OperationNotAvailable(
                    f"{op_kind.value} is not available on {db}.{table}")
            title = f"{db}.{table}: {op_kind.value}"
            if op_kind is OperationKind.INPUT:
                return self._op_input(req, session, conn, meta, title)
            if op_kind is OperationKind.UPDATE:
                return self._op_update(req, session, conn, meta, title)
            if op_kind is OperationKind.DELETE:
                return self._op_delete(req, session, conn, meta, title)
            if op_kind is OperationKind.QUERY:
                return self._op_query(req, session, conn, meta, title)
            result = ops.execute_op(session, conn, meta, OperationKind.ALL, {},
                                    hooks=self.hooks, page_limit=self.config.page_limit)
            return self._result_page(session, title, meta, result)

    def _op_input(self, req, session, conn, meta, title) -> Response:
        upload_columns = self._upload_columns(meta.db, meta.name)
        if req.method != "POST":
            form_doc = ops.build_input_form(
                meta, self.hooks, self.clock(), upload_columns=upload_columns,
                on_diagnostic=lambda m: self.diagnostics.push(session.id, m))
            return self._page(session, title, (form_doc,))
        form = dict(req.form)
        extra = self._handle_uploads(session, meta, form, upload_columns)
        result = ops.execute_op(session, conn, meta, OperationKind.INPUT, form,
                                hooks=self.hooks, page_limit=self.config.page_limit,
                                auditor=self._auditor(session), clock=self.clock(),
                                extra_assigns=extra)
        note = "1 row stored." if result.key is None else f"1 row stored with key {result.key}."
        return self._page(session, title, (
            el("p", note),
            el("p", el("a", "Back to table", href=f"/db/{meta.db}/table/{meta.name}")),
        ))

    def _op_update(self, req, session, conn, meta, title) -> Response:
        phase = req.form.get("phase", "")
        if req.method != "POST":
            return self._filter_page(session, meta, title, "Select the row to update",
                                     phase="filter")
        if phase == "filter":
            filter = ops.decode_filter(meta, req.form)
            if not filter:
                raise sqlgen.EmptyFilterForbidden("update requires a filter")
            stmt = sqlgen.gen_select(meta, filter=filter, limit=2)
            columns, rows = conn.query(stmt)
            if len(rows) != 1:
                self.diagnostics.push(
                    session.id,
                    "no rows match the filter" if not rows else
                    "more than one row matches; narrow the filter")
                return self._filter_page(session, meta, title, "Select the row to update",
                                         phase="filter", values=dict(req.form))
            row = dict(zip(columns, rows[0]))
            hidden = _hidden_filter_fields(meta, row, filter)
            controls = ops.assign_controls(meta, self.hooks, self.clock(), values=row)
            form_doc = el("form", controls, *hidden,
                          el("input", type="hidden", name="phase", value="apply"),
                          el("p", el("input", type="submit", value="Update")),
                          method="post", action="", data_hdb_enhance="input-form")
            return self._page(session, title, (form_doc,))
        if phase == "apply":
            result = ops.execute_op(session, conn, meta, OperationKind.UPDATE,
                                    {k: v for k, v in req.form.items() if k != "phase"},
                                    hooks=self.hooks, auditor=self._auditor(session),
                                    clock=self.clock())
            return self._page(session, title, (
                el("p", f"{result.n} row(s) updated."),
                el("p", el("a", "Back to table", href=f"/db/{meta.db}/table/{meta.name}")),
            ))
        raise BadRequest("unknown update phase")

    def _op_delete(self, req, session, conn, meta, title) -> Response:
        phase = req.form.get("phase", "")
        if req.method != "POST":
            return self._filter_page(session, meta, title, "Select rows to delete",
                                     phase="filter")
        if phase == "filter":
            filter = ops.decode_filter(meta, req.form)
            if not filter:
                raise sqlgen.EmptyFilterForbidden("delete requires a filter")
            stmt = sqlgen.gen_select(meta, filter=filter, limit=self.config.page_limit)
            _, rows = conn.query(stmt)
            if not rows:
                self.diagnostics.push(session.id, "no rows match the filter")
                return self._filter_page(session, meta, title, "Select rows to delete",
                                         phase="filter", values=dict(req.form))
            hidden = [
                el("input", type="hidden", name=f"where.{c}", value=str(v))
                for c, _, v in filter.conjuncts
            ] + [
                el("input", type="hidden", name=f"where.{c}.rel", value=r)
                for c, r, _ in filter.conjuncts
            ]
            form_doc = el("form", *hidden,
                          el("input", type="hidden", name="phase", value="apply"),
                          el("p", el("input", type="submit", value="Delete")),
                          method="post", action="", data_hdb_enhance="delete-form")
            return self._page(session, title, (
                el("p", f"{len(rows)} row(s) will be deleted."), form_doc,
            ))
        if phase == "apply":
            result = ops.execute_op(session, conn, meta, OperationKind.DELETE,
                                    {k: v for k, v in req.form.items() if k != "phase"},
                                    hooks=self.hooks, auditor=self._auditor(session),
                                    clock=self.clock())
            return self._page(session, title, (
                el("p", f"{result.n} row(s) deleted."),
                el("p", el("a", "Back to table", href=f"/db/{meta.db}/table/{meta.name}")),
            ))
        raise BadRequest("unknown delete phase")

    def _op_query(self, req, session, conn, meta, title) -> Response:
        if req.method != "POST":
            return self._filter_page(session, meta, title, "Query", phase=None)
        result = ops.execute_op(session, conn, meta, OperationKind.QUERY, dict(req.form),
                                hooks=self.hooks, page_limit=self.config.page_limit)
        return self._result_page(session, title, meta, result)

    def _filter_page(self, session, meta, title, legend, *, phase,
                     values=None) -> Response:
        controls = ops.filter_controls(meta, values=values)
        children = [el("p", legend, class_="legend"), controls]
        if phase:
            children.append(el("input", type="hidden", name="phase", value=phase))
        children.append(el("p", el("input", type="submit", value="Apply")))
        form_doc = el("form", *children, method="post", action="")
        return self._page(session, title, (form_doc,))

    def _result_page(self, session, title, meta, result: ResultSet) -> Response:
        return self._page(session, title, self._result_body(session, meta, result))

    def _result_body(self, session, meta, result: ResultSet) -> tuple:
        header = el("tr", *[el("th", c) for c in result.columns])
        rows = []
        for raw_row in result.rows:
            cells = []
            for name, value in zip(result.columns, raw_row):
                text = "" if value is None else str(value)
                db, table, column = self._cell_target(meta, name)
                url = hookmod.linkify(
                    self.hooks, db, table, column, value,
                    on_error=lambda m: self.diagnostics.push(session.id, m))
                cells.append(el("td", el("a", text, href=url) if url else text))
            rows.append(el("tr", *cells))
        table_doc = el("table", header, *rows, data_hdb_enhance="result-table")
        body: list[DocNode] = [el("p", f"{len(result.rows)} row(s).", class_="result-count")]
        if result.truncated:
            body.append(el("p", "Results truncated to the page limit; refine the query.",
                           class_="notice"))
        body.append(table_doc)
        return tuple(body)

    @staticmethod
    def _cell_target(meta, column_label):
        if meta is not None:
            return meta.db, meta.name, column_label
        parts = column_label.split(".")
        if len(parts) == 3:
            return parts[0], parts[1], parts[2]
        return None, None, column_label

    # -- view pages ------------------------------------------------------------------------

    def _page_view(self, req: Request, session: Session, view: str) -> Response:
        vdef = self.views.get(view)
        stale = viewmod.view_status(vdef, self._cat(session))
        if stale:
            self.diagnostics.push(session.id, stale)
        column_items = [el("li", ref.qualified) for ref in vdef.columns]
        op_links = [
            el("a", f"[{op.name}]", href=f"/view/{view}/op/{op.name}", class_="op")
            for op in vdef.ops
        ]
        body = (
            el("h2", "Columns"),
            el("ul", *column_items),
            el("p", *_spaced(op_links)) if op_links else el("p"),
        )
        return self._page(session, view, body)

    def _page_view_op(self, req: Request, session: Session, view: str, op: str) -> Response:
        vdef = self.views.get(view)
        ctx = self._view_ctx(session)
        op_def = vdef.op_named(op)
        if op_def is None:
            raise viewmod.NoSuchViewOp(f"{view} has no operation {op!r}")
        if req.method != "POST" and isinstance(op_def, viewmod.BatchInput):
            form_doc = viewmod.build_batch_form(vdef, ctx, action="")
            return self._page(session, f"{view}: input", (form_doc,))
        if req.method != "POST" and isinstance(op_def, viewmod.Standard) \
                and op_def.kind is OperationKind.QUERY:
            form_doc = _view_filter_form(vdef)
            return self._page(session, f"{view}: query", (form_doc,))
        page = viewmod.dispatch_view_op(session, vdef, op, dict(req.fields), ctx)
        merged = self._chrome(session, page.title, page.body)
        merged = replace(merged, head_extra=merged.head_extra + tuple(page.head_extra))
        return self._respond(merged)

    def _view_ctx(self, session: Session) -> ViewContext:
        def render_result(title, result):
            return Page(title=title, body=self._result_body(session, None, result))

        return ViewContext(
            cat=self._cat(session),
            hooks=self.hooks,
            page_limit=self.config.page_limit,
            clock=self.clock(),
            auditor=self._auditor(session),
            on_diagnostic=lambda m: self.diagnostics.push(session.id, m),
            render_result=render_result,
        )

    # -- uploads and derived fill --------------------------------------------------------------

    def _upload_columns(self, db: str, table: str) -> frozenset[str]:
        columns = {c for d, t, c in self.config.upload_columns if (d, t) == (db, table)}
        for entry in self.hooks.entries():
            if entry.kind is HookKind.DERIVED_FILL:
                d, t, c = entry.fn.trigger
                if (d, t) == (db, table):
                    columns.add(c)
        return frozenset(columns)

    def _handle_uploads(self, session, meta, form: dict, upload_columns) -> dict:
        """Store uploaded parts, then run any derived-fill jobs they trigger."""
        extra: dict = {}
        for name, value in list(form.items()):
            if not isinstance(value, UploadPart):
                continue
            if not value.filename:
                form[name] = ""
                continue
            if name not in upload_columns:
                raise BadRequest(f"column {name!r} does not accept file uploads")
            record = store_upload(self.config.upload_root, meta.db, meta.name, name,
                                  value.filename, value.content,
                                  max_bytes=self.config.upload_max)
            form[name] = record.stored_path
            spec = self.hooks.resolve(HookKind.DERIVED_FILL, meta.db, meta.name, name)
            if spec is not None:
                absolute = Path(self.config.upload_root) / record.stored_path
                derived = bridge.run_derived_fill(
                    spec, absolute, upload_root=self.config.upload_root,
                    clock=self.clock(),
                    on_diagnostic=lambda m: self.diagnostics.push(session.id, m))
                extra.update(derived)
        return extra

    # -- plumbing -------------------------------------------------------------------------------

    def _cat(self, session: Session) -> SessionCat:
        db_user, _ = auth.db_credentials(session)
        return self.manager.cat_for(db_user)

    def _connection(self, session: Session, db: str):
        db_user, _ = auth.db_credentials(session)
        return self.manager.connection(db, db_user)

    def _auditor(self, session: Session):
        if self.config.audit_table is None:
            return None
        db, table = self.config.audit_table
        cfg = self.manager._sources.get(db)
        if cfg is None:
            return None
        return _LazyAuditor(self.manager, db, table,
                            lambda m: self.diagnostics.push(session.id, m))

    def _static(self, asset: str) -> Response:
        if self.config.static_root is not None:
            root = Path(self.config.static_root)
            target = (root / asset)
            try:
                resolved = target.resolve()
                resolved.relative_to(root.resolve())
            except (ValueError, OSError):
                return Response(status=404, body=b"not found", content_type="text/plain")
            if resolved.is_file():
                return _file_response(asset, resolved.read_bytes())
            return Response(status=404, body=b"not found", content_type="text/plain")
        packaged = resources.files("hdb") / "static" / asset
        if "/" in asset or "\\" in asset or asset.startswith("."):
            return Response(status=404, body=b"not found", content_type="text/plain")
        try:
            return _file_response(asset, packaged.read_bytes())
        except (FileNotFoundError, OSError):
            return Response(status=404, body=b"not found", content_type="text/plain")


class _LazyAuditor:
    """Opens the audit connection only when a mutation actually happens."""

    def __init__(self, manager: ConnectionManager, db: str, table: str, on_diagnostic):
        self._manager = manager
        self._db = db
        self._table = table
        self._on_diagnostic = on_diagnostic

    def record(self, rec: ops.AuditRecord) -> None:
        try:
            with self._manager.connection(self._db) as conn:
                meta = conn.describe_table(self._table)
                ops.record_audit(conn, meta, rec, self._on_diagnostic)
        except HdbError as ex:
            self._on_diagnostic(f"audit record could not be written: {ex}")


def _redirect(location: str, set_cookies=()) -> Response:
    return Response(status=303, headers=[("Location", location)],
                    body=b"", set_cookies=list(set_cookies))


def _file_response(asset: str, content: bytes) -> Response:
    ctype = mimetypes.guess_type(asset)[0] or "application/octet-stream"
    return Response(status=200, body=content, content_type=ctype)


def _spaced(nodes) -> list:
    out: list = []
    for node in nodes:
        if out:
            out.append(" ")
        out.append(node)
    return out


def _hidden_filter_fields(meta, row: dict, filter) -> list:
    pk = meta.primary_key
    if pk is not None and row.get(pk.name) is not None:
        return [el("input", type="hidden", name=f"where.{pk.name}", value=str(row[pk.name]))]
    fields = []
    for column, relation, value in filter.conjuncts:
        fields.append(el("input", type="hidden", name=f"where.{column}", value=str(value)))
        fields.append(el("input", type="hidden", name=f"where.{column}.rel", value=relation))
    return fields


def _view_filter_form(vdef) -> DocNode:
    rows = []
    for ref in vdef.columns:
        rel_options = [el("option", rel, value=rel) for rel in sqlgen.RELATIONS]
        rows.append(el(
            "tr",
            el("th", ref.qualified),
            el("td", el("select", *rel_options, name=f"{ref.qualified}.rel")),
            el("td", el("input", type="text", name=ref.qualified)),
        ))
    return el("form", el("table", *rows, class_="filter-grid"),
              el("p", el("input", type="submit", value="Apply")),
              method="post", action="")
