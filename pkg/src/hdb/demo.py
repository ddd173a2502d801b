"""Quickstart deployment generator.

``python3 -m hdb.demo DIR`` writes a runnable deployment into DIR: a seeded
demo database, a site extension showing the common hooks and a batch-input
view, and a configuration file. Then::

    hdb --config DIR/hdb.conf

Log in as ``demo`` with the password printed on creation.
"""

from __future__ import annotations

import argparse
import secrets
import sqlite3
import sys
from pathlib import Path

from .auth import hash_password

DDL = """
CREATE TABLE "Compound" (
  "CompID" "bigint(20) unsigned" NOT NULL PRIMARY KEY,
  "CompName" tinytext,
  "CompMr" "float unsigned" NOT NULL,
  "pKa" float,
  "EduID" "bigint(20) unsigned",
  "CompNote" text
);
CREATE TABLE "Experiment" (
  "ExpID" "bigint(20) unsigned" NOT NULL PRIMARY KEY,
  "PlateID" "bigint(20) unsigned" NOT NULL,
  "StartTime" datetime,
  "SetDate" date,
  "Well" tinytext,
  "Score" float,
  "Status" "enum('ok','contaminated','dead')",
  "ExpNote" text
);
CREATE TABLE "Input" (
  "user" tinytext, "at" datetime, "db" tinytext,
  "table" tinytext, "op" tinytext, "summary" text
);
"""

COMPOUNDS = [
    (1, "Nemadipine-A", 360.4, 3.2, 108525, "induces a marked phenotype"),
    (2, "aspirin", 180.16, 3.5, 200101, None),
    (3, "caffeine", 194.19, 14.0, 200102, None),
    (4, "quinine", 324.42, 8.5, None, "bitter"),
]

SITE = '''"""Site extension for the demo deployment."""

from hdb.hooks import HookKind, HookMatcher, Suffix, date_default
from hdb.ops import OperationKind
from hdb.views import BatchInput, ColumnRef, Standard, ViewDef


def ligand_link(db, table, column, value):
    return f"https://ligands.example/entry/{value}" if value else None


def setup(site):
    site.hooks.register(
        HookKind.INPUT_DEFAULT_VALUE,
        HookMatcher(db="demodb", column=Suffix("Date")),
        date_default,
    )
    site.hooks.register(
        HookKind.OUTPUT_LINK,
        HookMatcher(db="demodb", table="Compound", column="EduID"),
        ligand_link,
    )

    def E(column):
        return ColumnRef("demodb", "Experiment", column)

    site.views.register_view(
        ViewDef(
            name="observations",
            columns=(E("ExpID"), E("PlateID"), E("StartTime"), E("Well"),
                     E("Score"), E("Status")),
            ops=(
                BatchInput(shared=(E("PlateID"), E("StartTime")),
                           per_row=(E("Well"), E("Score"), E("Status")),
                           max_rows=8),
                Standard(OperationKind.ALL),
            ),
        ),
        site.cat, site.hooks,
    )
'''

CONF = """title = hdb demo
port = 8080
auth_mode = session_idle
session_timeout = 1800
upload_root = uploads
audit = demodb.Input
extension = site.py

source demodb
{{
    location = demo.db
    db_user = demo
}}

user demo
{{
    password_hash = {password_hash}
    db_user = demo
}}
"""


def create(target: Path, password: str | None = None) -> str:
    """Write the demo deployment; returns the login password."""
    target.mkdir(parents=True, exist_ok=True)
    password = password or secrets.token_urlsafe(8)
    db_path = target / "demo.db"
    if db_path.exists():
        db_path.unlink()
    conn = sqlite3.connect(db_path)
    conn.executescript(DDL)
    conn.executemany('INSERT INTO "Compound" VALUES (?, ?, ?, ?, ?, ?)', COMPOUNDS)
    conn.commit()
    conn.close()
    (target / "site.py").write_text(SITE)
    (target / "hdb.conf").write_text(
        CONF.format(password_hash=hash_password(password))
    )
    (target / "uploads").mkdir(exist_ok=True)
    return password


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hdb.demo", description="write a runnable hdb demo deployment")
    parser.add_argument("directory", type=Path)
    parser.add_argument("--password", help="login password (random when omitted)")
    args = parser.parse_args(argv)
    password = create(args.directory, args.password)
    print(f"demo deployment written to {args.directory}")
    print(f"  run:      hdb --config {args.directory / 'hdb.conf'}")
    print(f"  log in:   demo / {password}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
