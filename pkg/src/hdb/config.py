"""Deployment configuration.

A flat, line-oriented ``key = value`` format with repeated ``kind name { .. }``
blocks for data sources and users, in the style of classic service-daemon
configuration files.  Parsed by a small recursive-descent parser: a file is a
sequence of items, an item is an assignment or a block, and a block contains
items again.

Example::

    title = Scibs DBs 0.2
    port = 8080
    auth_mode = session_idle
    upload_root = ./uploads
    audit = scibsdb.Input

    source scibsdb
    {
        location = ./scibsdb.db
        db_user = nicos
    }

    user nicos
    {
        password_hash = pbkdf2-sha256$...
        db_user = nicos
    }
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .auth import IpWindow, SessionIdle, UserEntry
from .catalog import DataSourceConfig
from .errors import HdbError


class InvalidConfig(HdbError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


DEFAULT_PORT = 8080
DEFAULT_REQUEST_TIMEOUT = 30
DEFAULT_PAGE_LIMIT = 500
DEFAULT_POOL_SIZE = 4
DEFAULT_UPLOAD_MAX = 2 * 1024 ** 3  # uploads of substantial size are expected


@dataclass
class ServerConfig:
    port: int = DEFAULT_PORT
    request_timeout: int = DEFAULT_REQUEST_TIMEOUT
    auth_mode: object = field(default_factory=SessionIdle)
    sources: list[DataSourceConfig] = field(default_factory=list)
    users: list[UserEntry] = field(default_factory=list)
    upload_root: Path = Path("uploads")
    audit_table: tuple[str, str] | None = None
    read_only: list[tuple[str, str]] = field(default_factory=list)
    page_limit: int = DEFAULT_PAGE_LIMIT
    title: str = "hdb server"
    host: str = "localhost"
    static_root: Path | None = None
    upload_columns: list[tuple[str, str, str]] = field(default_factory=list)
    extensions: list[Path] = field(default_factory=list)
    state_dir: Path = Path(".")
    pool_size: int = DEFAULT_POOL_SIZE
    upload_max: int = DEFAULT_UPLOAD_MAX

    def source(self, name: str) -> DataSourceConfig | None:
        for cfg in self.sources:
            if cfg.name == name:
                return cfg
        return None

    def users_by_name(self) -> dict[str, UserEntry]:
        return {u.hdb_name: u for u in self.users}


# -- parsing -------------------------------------------------------------------


@dataclass
class _Line:
    number: int
    text: str


class _Parser:
    """Recursive descent over meaningful lines."""

    def __init__(self, text: str):
        self._lines = [
            _Line(i + 1, stripped)
            for i, raw in enumerate(text.splitlines())
            if (stripped := raw.split("#", 1)[0].strip())
        ]
        self._pos = 0

    def _peek(self) -> _Line | None:
        return self._lines[self._pos] if self._pos < len(self._lines) else None

    def _next(self) -> _Line:
        line = self._lines[self._pos]
        self._pos += 1
        return line

    def parse(self) -> list:
        items = self._items(top=True)
        if self._peek() is not None:
            raise InvalidConfig(f"line {self._peek().number}: unexpected '}}'")
        return items

    def _items(self, top: bool) -> list:
        items = []
        while True:
            line = self._peek()
            if line is None or line.text == "}":
                return items
            items.append(self._item(top))

    def _item(self, top: bool):
        line = self._next()
        if "=" in line.text:
            key, _, value = line.text.partition("=")
            return ("set", line.number, key.strip(), value.strip())
        words = line.text.split()
        brace_inline = words and words[-1] == "{"
        if brace_inline:
            words = words[:-1]
        if len(words) != 2:
            raise InvalidConfig(f"line {line.number}: expected 'key = value' or 'kind name {{'")
        kind, name = words
        if not brace_inline:
            opener = self._peek()
            if opener is None or opener.text != "{":
                raise InvalidConfig(f"line {line.number}: block {kind} {name} needs a '{{'")
            self._next()
        body = self._items(top=False)
        closer = self._peek()
        if closer is None or closer.text != "}":
            raise InvalidConfig(f"line {line.number}: block {kind} {name} is never closed")
        self._next()
        return ("block", line.number, kind, name, body)


def _as_int(number: int, key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise InvalidConfig(f"line {number}: {key} must be an integer, got {value!r}") from None


def _dotted(number: int, key: str, value: str, parts: int) -> tuple:
    pieces = tuple(p.strip() for p in value.split("."))
    if len(pieces) != parts or not all(pieces):
        shape = ".".join(["db", "table", "column"][:parts])
        raise InvalidConfig(f"line {number}: {key} must look like {shape}")
    return pieces


def parse_config(text: str, base_dir: str | Path = ".") -> ServerConfig:
    base = Path(base_dir)
    items = _Parser(text).parse()
    cfg = ServerConfig(state_dir=base)
    mode_name = "session_idle"
    session_timeout = None
    window_validity = None
    source_blocks: list[tuple[int, str, dict]] = []
    user_blocks: list[tuple[int, str, dict]] = []

    for item in items:
        if item[0] == "block":
            _, number, kind, name, body = item
            entries = {}
            for sub in body:
                if sub[0] != "set":
                    raise InvalidConfig(f"line {sub[1]}: nested blocks are not allowed")
                entries[sub[2]] = sub[3]
            if kind == "source":
                source_blocks.append((number, name, entries))
            elif kind == "user":
                user_blocks.append((number, name, entries))
            else:
                raise InvalidConfig(f"line {number}: unknown block kind {kind!r}")
            continue

        _, number, key, value = item
        if key == "port":
            cfg.port = _as_int(number, key, value)
        elif key == "request_timeout":
            cfg.request_timeout = _as_int(number, key, value)
        elif key == "auth_mode":
            mode_name = value
        elif key == "session_timeout":
            session_timeout = _as_int(number, key, value)
        elif key == "window_validity":
            window_validity = _as_int(number, key, value)
        elif key == "upload_root":
            cfg.upload_root = base / value
        elif key == "static_root":
            cfg.static_root = base / value
        elif key == "state_dir":
            cfg.state_dir = base / value
        elif key == "page_limit":
            cfg.page_limit = _as_int(number, key, value)
        elif key == "pool_size":
            cfg.pool_size = _as_int(number, key, value)
        elif key == "upload_max":
            cfg.upload_max = _as_int(number, key, value)
        elif key == "title":
            cfg.title = value
        elif key == "host":
            cfg.host = value
        elif key == "audit":
            cfg.audit_table = _dotted(number, key, value, 2)
        elif key == "read_only":
            cfg.read_only.append(_dotted(number, key, value, 2))
        elif key == "upload_column":
            cfg.upload_columns.append(_dotted(number, key, value, 3))
        elif key == "extension":
            cfg.extensions.append(base / value)
        else:
            raise InvalidConfig(f"line {number}: unknown key {key!r}")

    if mode_name == "session_idle":
        cfg.auth_mode = SessionIdle(session_timeout) if session_timeout else SessionIdle()
    elif mode_name == "ip_window":
        cfg.auth_mode = IpWindow(window_validity) if window_validity else IpWindow()
    else:
        raise InvalidConfig(f"auth_mode must be session_idle or ip_window, got {mode_name!r}")

    if not 1 <= cfg.port <= 65535:
        raise InvalidConfig(f"port {cfg.port} is out of range")

    if cfg.audit_table is not None and cfg.audit_table not in cfg.read_only:
        cfg.read_only.append(cfg.audit_table)

    read_only_by_db: dict[str, set[str]] = {}
    for db, table in cfg.read_only:
        read_only_by_db.setdefault(db, set()).add(table)

    seen_sources = set()
    for number, name, entries in source_blocks:
        if name in seen_sources:
            raise InvalidConfig(f"line {number}: duplicate source {name!r}")
        seen_sources.add(name)
        if "location" not in entries:
            raise InvalidConfig(f"line {number}: source {name} has no location")
        location = entries["location"]
        if location != ":memory:":
            location = str(base / location)
        ro_users = frozenset(
            u.strip() for u in entries.get("read_only_db_users", "").split(",") if u.strip()
        )
        cfg.sources.append(DataSourceConfig(
            name=name,
            location=location,
            db_user=entries.get("db_user", ""),
            db_password=entries.get("db_password", ""),
            read_only_tables=frozenset(read_only_by_db.get(name, set())),
            read_only_db_users=ro_users,
        ))

    seen_users = set()
    for number, name, entries in user_blocks:
        if name in seen_users:
            raise InvalidConfig(f"line {number}: duplicate user {name!r}")
        seen_users.add(name)
        if "password_hash" not in entries:
            raise InvalidConfig(
                f"line {number}: user {name} needs password_hash (plaintext is refused)"
            )
        if "password" in entries:
            raise InvalidConfig(f"line {number}: plaintext passwords are refused; use password_hash")
        cfg.users.append(UserEntry(
            hdb_name=name,
            password_hash=entries["password_hash"],
            db_user=entries.get("db_user", name),
            db_password=entries.get("db_password", ""),
        ))

    return cfg


def load_config(path: str | Path) -> ServerConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as ex:
        raise InvalidConfig(f"cannot read {path}: {ex}") from ex
    return parse_config(text, base_dir=path.parent)
