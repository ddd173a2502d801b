"""Login, session lifecycle, and the user-to-db-user mapping.

Two authentication modes exist and a deployment picks exactly one.  In
SessionIdle mode a session stays alive as long as interactions keep arriving
within the idle timeout; each interaction resets the interval.  In IpWindow
mode the credentials are associated with the peer address at login and stay
valid for a fixed window (typically a working day), surviving restarts via a
small persistence file.

Every catalog statement in a session runs as the db user the hdb user is
mapped to, so hdb can never be less restrictive than the engine itself.
Passwords are stored only as salted PBKDF2 hashes.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .doctree import DocNode, el
from .errors import HdbError


class AuthError(HdbError):
    pass


class InvalidCredentials(AuthError):
    def __init__(self):
        super().__init__("invalid credentials")


@dataclass
class UserEntry:
    hdb_name: str
    password_hash: str
    db_user: str
    db_password: str = ""


@dataclass(frozen=True)
class SessionIdle:
    timeout: int = 1800


@dataclass(frozen=True)
class IpWindow:
    validity: int = 8 * 3600


AuthMode = object  # SessionIdle | IpWindow


@dataclass
class Session:
    id: str
    user: UserEntry
    login_time: datetime
    peer: str
    last_activity: datetime


def new_session_id() -> str:
    return "-".join(secrets.token_hex(2) for _ in range(4))


_PBKDF2_ITERATIONS = 60_000


def hash_password(password: str, *, iterations: int = _PBKDF2_ITERATIONS,
                  salt: bytes | None = None) -> str:
    salt = salt if salt is not None else secrets.token_bytes(16)
    digest = hashlib.pbkdf2_hmac("sha256", password.encode(), salt, iterations)
    return f"pbkdf2-sha256${iterations}${salt.hex()}${digest.hex()}"


def verify_password(password: str, stored: str) -> bool:
    try:
        scheme, iterations, salt_hex, digest_hex = stored.split("$")
        if scheme != "pbkdf2-sha256":
            return False
        digest = hashlib.pbkdf2_hmac(
            "sha256", password.encode(), bytes.fromhex(salt_hex), int(iterations)
        )
        return hmac.compare_digest(digest.hex(), digest_hex)
    except (ValueError, TypeError):
        return False


class SessionStore:
    """Live sessions plus, in IpWindow mode, the per-peer credential windows.

    All operations take the store lock; nothing here calls out while holding
    it, so touch/lookup/insert/expire are linearizable.
    """

    def __init__(self, persist_path: str | Path | None = None):
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        self._windows: dict[str, tuple[str, float]] = {}  # peer -> (user, expiry epoch)
        self._persist_path = Path(persist_path) if persist_path else None
        self._load_windows()

    # -- sessions ----------------------------------------------------------

    def create(self, user: UserEntry, peer: str, now: datetime) -> Session:
        session = Session(id=new_session_id(), user=user, login_time=now,
                          peer=peer, last_activity=now)
        with self._lock:
            self._sessions[session.id] = session
        return session

    def get(self, session_id: str | None) -> Session | None:
        if not session_id:
            return None
        with self._lock:
            return self._sessions.get(session_id)

    def touch(self, session: Session, now: datetime) -> None:
        with self._lock:
            session.last_activity = now

    def remove(self, session_id: str) -> None:
        with self._lock:
            self._sessions.pop(session_id, None)

    def session_for_peer(self, peer: str) -> Session | None:
        with self._lock:
            for session in self._sessions.values():
                if session.peer == peer:
                    return session
        return None

    # -- ip windows ----------------------------------------------------------

    def record_window(self, user: UserEntry, peer: str, expiry: datetime) -> None:
        with self._lock:
            self._windows[peer] = (user.hdb_name, expiry.timestamp())
            self._save_windows()

    def window_for(self, peer: str) -> tuple[str, float] | None:
        with self._lock:
            return self._windows.get(peer)

    def drop_window(self, peer: str) -> None:
        with self._lock:
            self._windows.pop(peer, None)
            self._save_windows()

    def _load_windows(self) -> None:
        if self._persist_path and self._persist_path.exists():
            try:
                self._windows = {
                    peer: (entry[0], float(entry[1]))
                    for peer, entry in json.loads(self._persist_path.read_text()).items()
                }
            except (ValueError, OSError):
                self._windows = {}

    def _save_windows(self) -> None:
        if self._persist_path:
            self._persist_path.write_text(json.dumps(self._windows))


def login(store: SessionStore, users: dict[str, UserEntry], name: str, password: str,
          peer: str, now: datetime, mode: AuthMode) -> Session:
    """Check credentials and open a session.

    The failure message never reveals which part was wrong.
    """
    user = users.get(name)
    if user is None or not verify_password(password, user.password_hash):
        raise InvalidCredentials()
    session = store.create(user, peer, now)
    if isinstance(mode, IpWindow):
        expiry = datetime.fromtimestamp(now.timestamp() + mode.validity)
        store.record_window(user, peer, expiry)
    return session


def validate(mode: AuthMode, store: SessionStore, users: dict[str, UserEntry],
             peer: str, session_id: str | None, now: datetime) -> Session | None:
    """Resolve the request to a live session, or None when expired/absent."""
    if isinstance(mode, SessionIdle):
        session = store.get(session_id)
        if session is None:
            return None
        if (now - session.last_activity).total_seconds() > mode.timeout:
            store.remove(session.id)
            return None
        store.touch(session, now)
        return session

    assert isinstance(mode, IpWindow)
    window = store.window_for(peer)
    if window is None:
        return None
    user_name, expiry = window
    if expiry < now.timestamp():
        store.drop_window(peer)
        return None
    session = store.get(session_id) or store.session_for_peer(peer)
    if session is not None and session.peer == peer:
        return session
    user = users.get(user_name)
    if user is None:
        return None
    return store.create(user, peer, now)


def db_credentials(session: Session) -> tuple[str, str]:
    """The engine credentials every statement in this session runs under."""
    return (session.user.db_user, session.user.db_password)


@dataclass(frozen=True)
class ServerMeta:
    title: str
    version: str
    host: str
    port: int


def profile_page(session: Session, server_meta: ServerMeta) -> DocNode:
    """The session profile block."""
    lines = [
        f"Logged-in on hdb server: {server_meta.title}",
        f"With user name: {session.user.hdb_name}",
        f"Database user name: {session.user.db_user}",
        f"Login time: {session.login_time.isoformat(sep=' ', timespec='seconds')}",
        f"Peer: {session.peer}",
        f"Pages are served by: {server_meta.version}",
        f"Server: {server_meta.host}:{server_meta.port}",
        f"Session: {session.id}",
    ]
    return el(
        "div",
        el("h2", "User Profile"),
        *[el("p", line) for line in lines],
        class_="profile",
    )
