"""Slave-process bridge and the derived-field autofill pipeline.

An external interpreter is spawned with its standard streams attached;
structured expressions are serialized in call syntax onto its input and the
output belonging to each evaluation is delimited by a sentinel: after every
expression the bridge writes a unique string expression, which a conforming
slave echoes verbatim, marking the end of that evaluation's stdout.

The slave contract is minimal: read newline-terminated expressions on stdin,
write results to stdout, diagnostics to stderr, echo a bare string
expression's value verbatim, and exit on ``quit()``.

Derived fill drives a slave over an uploaded file and parses ``name=value``
lines from the analysis output into column values; columns whose parse kind
is an artifact path have their files moved under the upload root.  A failing
or timed-out analysis degrades to NULL-filled derived columns plus a
diagnostic: the upload itself is the primary datum and analysis can be rerun.
"""

from __future__ import annotations

import os
import re
import shutil
import subprocess
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import HdbError


class BridgeError(HdbError):
    pass


class SpawnFailure(BridgeError):
    pass


class InvalidName(BridgeError):
    pass


class EvalTimeout(BridgeError):
    pass


class SlaveExited(BridgeError):
    def __init__(self, code):
        self.code = code
        super().__init__(f"slave exited with code {code}")


# -- expressions -------------------------------------------------------------

_NAME_RE = re.compile(r"^[A-Za-z._][A-Za-z0-9._]*$")


@dataclass(frozen=True)
class Num:
    value: float | int


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Ident:
    name: str


@dataclass(frozen=True)
class Vec:
    elements: tuple

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))


@dataclass(frozen=True)
class Call:
    function: str
    args: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))


@dataclass(frozen=True)
class Assign:
    target: Ident
    value: object


Expr = object  # Num | Str | Ident | Vec | Call | Assign


def serialize(expr) -> str:
    """Expression to slave input text, one trailing newline."""
    return _ser(expr) + "\n"


def _ser(expr) -> str:
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Str):
        escaped = expr.value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(expr, Ident):
        if not _NAME_RE.match(expr.name):
            raise InvalidName(expr.name)
        return expr.name
    if isinstance(expr, Vec):
        return "c(" + ",".join(_ser(e) for e in expr.elements) + ")"
    if isinstance(expr, Call):
        if not _NAME_RE.match(expr.function):
            raise InvalidName(expr.function)
        return expr.function + "(" + ",".join(_ser(a) for a in expr.args) + ")"
    if isinstance(expr, Assign):
        return f"{_ser(expr.target)} <- {_ser(expr.value)}"
    raise BridgeError(f"not an expression: {expr!r}")


# -- slave process ------------------------------------------------------------

class _StreamReader(threading.Thread):
    def __init__(self, stream):
        super().__init__(daemon=True)
        self._stream = stream
        self._lines: list[str] = []
        self._cond = threading.Condition()
        self.start()

    def run(self):
        for raw in self._stream:
            with self._cond:
                self._lines.append(raw.rstrip("\n"))
                self._cond.notify_all()
        with self._cond:
            self._cond.notify_all()

    def mark(self) -> int:
        with self._cond:
            return len(self._lines)

    def since(self, mark: int) -> list[str]:
        with self._cond:
            return self._lines[mark:]

    def wait_for(self, predicate, deadline: float):
        """Lines up to (not including) the first one matching predicate."""
        with self._cond:
            scanned = 0
            while True:
                for i in range(scanned, len(self._lines)):
                    if predicate(self._lines[i]):
                        return i
                scanned = len(self._lines)
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._cond.wait(min(remaining, 0.2))


class SlaveProcess:
    def __init__(self, command: str, args: list[str], proc: subprocess.Popen):
        self.command = command
        self.args = list(args)
        self._proc = proc
        self._stdout = _StreamReader(proc.stdout)
        self._stderr = _StreamReader(proc.stderr)
        self._busy = threading.Lock()
        self._killed = False

    @property
    def pid(self) -> int:
        return self._proc.pid

    @property
    def state(self):
        if self._killed:
            return "killed"
        code = self._proc.poll()
        if code is None:
            return "running"
        return ("exited", code)

    def send(self, text: str) -> None:
        try:
            self._proc.stdin.write(text)
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as ex:
            raise SlaveExited(self._proc.poll()) from ex

    def kill(self) -> None:
        self._killed = True
        if self._proc.poll() is None:
            self._proc.kill()
        self._proc.wait()


@dataclass(frozen=True)
class EvalResult:
    output: str
    warnings: str
    elapsed: float


def spawn(command: str, args: list[str] | None = None) -> SlaveProcess:
    args = list(args or [])
    try:
        proc = subprocess.Popen(
            [command, *args],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
            text=True, bufsize=1,
        )
    except OSError as ex:
        raise SpawnFailure(f"{command}: {ex}") from ex
    return SlaveProcess(command, args, proc)


def eval(slave: SlaveProcess, expr, timeout: float = 30.0) -> EvalResult:
    """Evaluate one expression, capturing its stdout and stderr.

    At most one evaluation may be in flight per slave.
    """
    if not slave._busy.acquire(blocking=False):
        raise BridgeError("an evaluation is already in flight on this slave")
    try:
        if slave.state != "running":
            raise SlaveExited(slave._proc.poll())
        sentinel = f"hdb-eval-{uuid.uuid4().hex}"
        out_mark = slave._stdout.mark()
        err_mark = slave._stderr.mark()
        started = time.monotonic()
        deadline = started + timeout
        slave.send(serialize(expr))
        slave.send(serialize(Str(sentinel)))
        hit = slave._stdout.wait_for(lambda line: line == sentinel, deadline)
        elapsed = time.monotonic() - started
        if hit is None:
            if slave.state == "running":
                slave.kill()
                raise EvalTimeout(f"no sentinel within {timeout}s; slave killed")
            raise SlaveExited(slave._proc.poll())
        output = "\n".join(slave._stdout.since(out_mark)[: hit - out_mark])
        # stderr carries no sentinel; give its reader a short settle window so
        # diagnostics the slave flushed before answering are not lost to
        # thread scheduling
        settle_deadline = time.monotonic() + 0.2
        last = slave._stderr.mark()
        while time.monotonic() < settle_deadline:
            time.sleep(0.02)
            current = slave._stderr.mark()
            if current == last:
                break
            last = current
        warnings = "\n".join(slave._stderr.since(err_mark))
        return EvalResult(output=output, warnings=warnings, elapsed=elapsed)
    finally:
        slave._busy.release()


def shutdown(slave: SlaveProcess, grace: float = 5.0) -> int | None:
    """Ask the slave to quit; escalate to kill after the grace period."""
    state = slave.state
    if isinstance(state, tuple):
        return state[1]
    if state == "killed":
        return slave._proc.poll()
    try:
        slave.send(serialize(Call("quit")))
    except SlaveExited:
        pass
    try:
        slave._proc.wait(timeout=grace)
        slave._proc.stdin.close()
        return slave._proc.returncode
    except subprocess.TimeoutExpired:
        slave.kill()
        return slave._proc.poll()


# -- derived fill --------------------------------------------------------------

UPLOAD_PLACEHOLDER = "{upload}"


class ParseNumber:
    def __repr__(self):
        return "ParseNumber"


class ParseString:
    def __repr__(self):
        return "ParseString"


PARSE_NUMBER = ParseNumber()
PARSE_STRING = ParseString()


@dataclass(frozen=True)
class ArtifactPath:
    subdir: str


@dataclass(frozen=True)
class DerivedFillSpec:
    trigger: tuple[str, str, str]          # (db, table, upload column)
    program: tuple[str, ...]               # command + args
    steps: tuple                           # Expr templates with {upload} in Str values
    outputs: dict                          # column -> ParseNumber|ParseString|ArtifactPath
    timeout: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "program", tuple(self.program))
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "outputs", dict(self.outputs))


def substitute_upload(expr, path: str):
    """Template instantiation: replace the placeholder inside Str values."""
    if isinstance(expr, Str):
        return Str(expr.value.replace(UPLOAD_PLACEHOLDER, path))
    if isinstance(expr, Vec):
        return Vec(tuple(substitute_upload(e, path) for e in expr.elements))
    if isinstance(expr, Call):
        return Call(expr.function, tuple(substitute_upload(a, path) for a in expr.args))
    if isinstance(expr, Assign):
        return Assign(expr.target, substitute_upload(expr.value, path))
    return expr


def run_derived_fill(spec: DerivedFillSpec, uploaded_path: str | Path, *,
                     upload_root: str | Path, clock: datetime | None = None,
                     on_diagnostic=None) -> dict:
    """Run the analysis for one upload and map its output onto columns.

    Always returns one entry per output column; failures leave columns None.
    """
    def diag(message):
        if on_diagnostic:
            on_diagnostic(message)

    nulls = {column: None for column in spec.outputs}
    try:
        slave = spawn(spec.program[0], list(spec.program[1:]))
    except SpawnFailure as ex:
        diag(f"derived fill skipped, analysis process failed to start: {ex}")
        return nulls

    lines: list[str] = []
    try:
        for step in spec.steps:
            result = eval(slave, substitute_upload(step, str(uploaded_path)),
                          timeout=spec.timeout)
            lines.extend(result.output.splitlines())
    except (EvalTimeout, SlaveExited, BridgeError) as ex:
        diag(f"derived fill failed, columns left empty: {ex}")
        return nulls
    finally:
        shutdown(slave)

    reported: dict[str, str] = {}
    for line in lines:
        name, sep, value = line.partition("=")
        if sep:
            reported[name.strip()] = value.strip()

    values: dict = {}
    for column, kind in spec.outputs.items():
        raw = reported.get(column)
        if raw is None:
            diag(f"analysis reported no value for derived column {column}")
            values[column] = None
        elif isinstance(kind, ParseNumber):
            values[column] = _parse_number(column, raw, diag)
        elif isinstance(kind, ArtifactPath):
            values[column] = _store_artifact(column, raw, kind, upload_root, clock, diag)
        else:
            values[column] = raw
    return values


def _parse_number(column, raw, diag):
    try:
        return int(raw)
    except ValueError:
        try:
            return float(raw)
        except ValueError:
            diag(f"derived column {column} is not numeric: {raw!r}")
            return None


def _store_artifact(column, raw, kind: ArtifactPath, upload_root, clock, diag):
    source = Path(raw)
    if not source.is_file():
        diag(f"analysis artifact for {column} does not exist: {raw}")
        return None
    root = Path(upload_root).resolve()
    stamp = (clock or datetime.now(timezone.utc)).strftime("%Y%m%dT%H%M%S%f")
    target_dir = (root / kind.subdir).resolve()
    if not str(target_dir).startswith(str(root) + os.sep) and target_dir != root:
        diag(f"artifact subdir escapes the upload root: {kind.subdir}")
        return None
    target_dir.mkdir(parents=True, exist_ok=True)
    name = f"{stamp}_{source.name}"
    target = target_dir / name
    counter = 0
    while target.exists():
        counter += 1
        target = target_dir / f"{stamp}_{counter}_{source.name}"
    shutil.move(str(source), str(target))
    return str(target.relative_to(root))
