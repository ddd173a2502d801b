"""Acceptance suite.

One test per acceptance criterion, each at its stated tolerance, printing one
pass line on success (pytest's failure line is the fail line).  Fixtures are
seeded exactly as the reference deployment describes them: the 210-row
Compound table, the read-only audit table, the 18-column SpecScan table with
7 user-entered fields, and the date-suffix default hook.
"""

import random
import re
import sys
import time
from pathlib import Path

import pytest

from hdb.auth import IpWindow, SessionIdle
from hdb.bridge import (
    ArtifactPath, Assign, Call, DerivedFillSpec, Ident, PARSE_NUMBER, PARSE_STRING, Str,
)
from hdb.doctree import render
from hdb.hooks import ANY, HookKind, HookMatcher, HookRegistry, Suffix, date_default
from hdb.ops import OperationKind
from hdb.server import store_upload
from hdb.sqlgen import AssignedAutoIncrement
from hdb.views import BatchInput, ColumnRef, Standard, ViewDef, ViewRegistry

from appfix import FakeClock, make_deployment
from client import text_of
from dbfix import SPECSCAN_DERIVED_FIELDS, SPECSCAN_USER_FIELDS, raw_query
from oracle import assert_roundtrip, parse_html
from trees import random_tree

MOCK = str(Path(__file__).parent / "fixtures" / "mock_slave.py")


def report(name: str):
    print(f"ACCEPTANCE {name}: PASS")


class TestSchemaFidelity:
    def test_compound_table_page(self, tmp_path):
        started = time.monotonic()
        dep = make_deployment(tmp_path)
        client = dep.client()
        client.login()
        html = text_of(client.get("/db/scibsdb/table/Compound"))
        assert "has 210 rows" in html
        comp_id_row = re.search(r"<tr><td>CompID</td>.*?</tr>", html).group(0)
        assert ">NO<" in comp_id_row          # not nullable
        assert ">PRI<" in comp_id_row         # primary key
        assert ">autoinc<" in comp_id_row     # auto-increment
        comp_name_row = re.search(r"<tr><td>CompName</td>.*?</tr>", html).group(0)
        assert ">YES<" in comp_name_row       # nullable
        assert ">tinytext<" in comp_name_row
        assert time.monotonic() - started < 5.0
        report("schema fidelity")


class TestOperationGating:
    def test_database_page_op_links(self, tmp_path):
        started = time.monotonic()
        dep = make_deployment(tmp_path, dbs=("labdb",), audit=("labdb", "Input"))
        client = dep.client()
        client.login()
        html = text_of(client.get("/db/labdb"))
        rows = {m.group(1): m.group(0)
                for m in re.finditer(r'<tr><td><a href="/db/labdb/table/(\w+)">.*?</tr>', html)}
        assert set(rows) == {"Experiment", "ExternalDataSource", "Input",
                             "Mix", "MixIngredient", "Plate"}
        for table, row in rows.items():
            expected = 2 if table == "Input" else 5
            assert row.count('class="op"') == expected, table
        input_ops = re.findall(r"\[(\w+)\]", rows["Input"])
        assert input_ops == ["query", "all"]
        assert time.monotonic() - started < 1.0
        report("operation gating")


class TestHtmlWellFormedness:
    def test_thousand_fuzzed_trees_and_served_pages(self, tmp_path):
        started = time.monotonic()
        rng = random.Random(20070824)
        failures = 0
        for _ in range(1000):
            tree = random_tree(rng)
            assert_roundtrip(tree, render(tree))
        # every page a client produces is round-trip checked by the client
        # itself (the whole suite runs that way); demonstrate it live here.
        dep = make_deployment(tmp_path, dbs=("scibsdb", "labdb"))
        client = dep.client()
        client.login()
        for path in ("/home", "/profile", "/db/scibsdb", "/db/labdb",
                     "/db/scibsdb/table/Compound", "/db/scibsdb/table/Compound/op/input",
                     "/db/scibsdb/table/Compound/op/query", "/db/scibsdb/table/Compound/op/all",
                     "/db/labdb/table/Input", "/nope"):
            client.get(path)
        assert client.pages_checked >= 9
        assert failures == 0
        assert time.monotonic() - started < 60.0
        report("html well-formedness")


class TestCrudRoundTrip:
    def test_randomized_cycles_with_audit(self, tmp_path):
        started = time.monotonic()
        dep = make_deployment(tmp_path)
        client = dep.client()
        client.login()
        rng = random.Random(7)
        mutations = 0
        for i in range(100):
            form = {
                "CompName": f"acc-{i}-{rng.randrange(10**6)}",
                "CompMr": str(round(rng.uniform(1, 999), 3)),
                "pKa": str(round(rng.uniform(0, 14), 2)),
                "EduID": str(rng.randrange(1, 10**7)),
                "CompNote": rng.choice(["", "note text", "αβγ"]),
            }
            response = client.post("/db/scibsdb/table/Compound/op/input", dict(form))
            key = int(re.search(r"stored with key (\d+)", text_of(response)).group(1))
            mutations += 1
            rows = raw_query(dep.db_path("scibsdb"),
                             'SELECT "CompName", "CompMr", "pKa", "EduID", "CompNote"'
                             ' FROM "Compound" WHERE "CompID" = ?', (key,))
            assert rows == [(
                form["CompName"], pytest.approx(float(form["CompMr"])),
                pytest.approx(float(form["pKa"])), int(form["EduID"]),
                form["CompNote"] or None,
            )]
        # the engine-assigned key is never accepted from the form
        from hdb.catalog import open_source
        from dbfix import source
        conn = open_source(source("scibsdb", dep.db_path("scibsdb")))
        from hdb.sqlgen import gen_insert
        with pytest.raises(AssignedAutoIncrement):
            gen_insert(conn.describe_table("Compound"), {"CompID": "1", "CompMr": "1"})
        response = client.post("/db/scibsdb/table/Compound/op/input",
                               {"CompID": "9999", "CompMr": "1"})
        assert response.status == 400
        audit_rows = raw_query(dep.db_path("scibsdb"), 'SELECT COUNT(*) FROM "Input"')[0][0]
        assert audit_rows == mutations
        assert time.monotonic() - started < 30.0
        report("crud round trip")


class TestHookBehavior:
    def test_date_columns_prefilled_others_not(self, tmp_path):
        reg = HookRegistry()
        reg.register(HookKind.INPUT_DEFAULT_VALUE,
                     HookMatcher(db="ni_lhh", table=ANY, column=Suffix("Date")),
                     date_default)
        dep = make_deployment(tmp_path, dbs=("ni_lhh",), audit=None, hooks=reg)
        client = dep.client()
        client.login()
        html = text_of(client.get("/db/ni_lhh/table/Experiment/op/input"))
        parsed = parse_html(html)

        controls = []

        def walk(nodes):
            for node in nodes:
                if isinstance(node, tuple) and node[0] == "el":
                    if node[1] in ("input", "textarea", "select"):
                        controls.append(node)
                    walk(node[3])

        walk(parsed)
        named = [c for c in controls if dict(c[2]).get("name")]
        date_columns = {"SetDate", "HarvestDate"}
        seen_dates = set()
        for control in named:
            attrs = dict(control[2])
            name = attrs["name"]
            if name in date_columns:
                assert attrs.get("value") == "2007-8-24", name
                seen_dates.add(name)
            elif control[1] == "input":
                assert not attrs.get("value"), f"{name} unexpectedly prefilled"
            elif control[1] == "textarea":
                assert control[3] == (), f"{name} unexpectedly prefilled"
        assert seen_dates == date_columns
        report("hook behavior")


class TestAuthModes:
    def test_session_idle_expiry_and_reset(self, tmp_path):
        clock = FakeClock()
        dep = make_deployment(tmp_path, auth_mode=SessionIdle(timeout=2), clock=clock)
        client = dep.client()
        client.login()
        clock.advance(3)
        response = client.get("/home")
        assert response.status == 303
        assert dict(response.headers)["Location"] == "/login"

        client2 = dep.client()
        client2.login()
        for _ in range(10):
            clock.advance(1)
            assert client2.get("/home").status == 200
        report("auth modes: session idle")

    def test_ip_window_validity(self, tmp_path):
        clock = FakeClock()
        dep = make_deployment(tmp_path, auth_mode=IpWindow(validity=5), clock=clock)
        client = dep.client(peer="10.0.0.7")
        client.login()
        clock.advance(3)
        assert client.get("/home").status == 200
        clock.advance(3)  # t = 6 > validity
        response = client.get("/home")
        assert response.status == 303
        assert dict(response.headers)["Location"] == "/login"
        report("auth modes: ip window")


def observations_view():
    E = lambda c: ColumnRef("labdb", "Experiment", c)
    return ViewDef(
        name="observations",
        columns=(E("ExpID"), E("PlateID"), E("StartTime"), E("Well"),
                 E("Score"), E("Status")),
        ops=(BatchInput(shared=(E("PlateID"), E("StartTime")),
                        per_row=(E("Well"), E("Score"), E("Status")), max_rows=24),),
    )


def batch_form(corrupt_row=None):
    form = {"shared.PlateID": "1", "shared.StartTime": "2007-8-24 10:00"}
    for i in range(1, 7):
        status = "sideways" if corrupt_row == i else "ok"
        form[f"row{i}.Well"] = f"A{i}"
        form[f"row{i}.Score"] = str(0.5 * i)
        form[f"row{i}.Status"] = status
    return form


class TestBatchAtomicity:
    def test_six_rows_then_corrupt_batch(self, tmp_path):
        reg = HookRegistry()
        views = ViewRegistry()
        dep = make_deployment(tmp_path, dbs=("labdb",), audit=("labdb", "Input"),
                              hooks=reg, views=views)
        views.register_view(observations_view(), dep.app.manager.cat_for(None), reg)
        client = dep.client()
        client.login()

        response = client.post("/view/observations/op/input", batch_form())
        assert "6 rows stored." in text_of(response)
        rows = raw_query(dep.db_path("labdb"),
                         'SELECT "PlateID", "StartTime" FROM "Experiment"')
        assert len(rows) == 6
        assert set(rows) == {(1, "2007-8-24 10:00")}

        response = client.post("/view/observations/op/input", batch_form(corrupt_row=3))
        assert response.status == 400
        count = raw_query(dep.db_path("labdb"), 'SELECT COUNT(*) FROM "Experiment"')[0][0]
        assert count == 6  # exactly the first batch; the corrupt one stored 0
        report("batch atomicity")


class TestDiagnostics:
    def test_unreachable_source_reported_once(self, tmp_path):
        dep = make_deployment(tmp_path, bad_source="ni_lhh")
        client = dep.client()
        client.login()
        first = text_of(client.get("/home"))
        assert re.search(r"unable_to_connect_to_db_source\(", first)
        second = text_of(client.get("/home"))
        assert "unable_to_connect_to_db_source(" not in second
        report("diagnostics")


def specscan_fill_spec(*mock_args, timeout=20.0):
    return DerivedFillSpec(
        trigger=("scibsdb", "SpecScan", "ScanLoc"),
        program=(sys.executable, MOCK, *mock_args),
        steps=(
            Assign(Ident("x"), Call("scan_load", [Str("{upload}")])),
            Call("scan_report", [Ident("x")]),
        ),
        outputs={
            "SpectraNof": PARSE_NUMBER, "ScanStart": PARSE_NUMBER,
            "ScanEnd": PARSE_NUMBER, "MzMin": PARSE_NUMBER, "MzMax": PARSE_NUMBER,
            "MassMin": PARSE_NUMBER, "MassMax": PARSE_NUMBER,
            "PrfMethod": PARSE_STRING, "PrfStep": PARSE_NUMBER,
            "ScanAICLoc": ArtifactPath("derived/aic"),
            "ScanIMGLoc": ArtifactPath("derived/img"),
        },
        timeout=timeout,
    )


SCAN_FORM_FIELDS = {
    "ScanName": "scan-accept", "ScanDate": "2007-8-24", "ScanOperator": "pt",
    "ScanSample": "s-12", "ScanMode": "positive", "ScanNote": "acceptance",
}


class TestDerivedFill:
    def test_seven_user_fields_yield_full_row(self, tmp_path):
        started = time.monotonic()
        reg = HookRegistry()
        dep = make_deployment(tmp_path, hooks=reg)
        reg.register(HookKind.DERIVED_FILL,
                     HookMatcher(db="scibsdb", table="SpecScan", column="ScanLoc"),
                     specscan_fill_spec())
        client = dep.client()
        client.login()
        fields = dict(SCAN_FORM_FIELDS)
        fields["ScanLoc"] = ("scan.cdf", b"netcdf bytes for acceptance")
        response = client.post_multipart("/db/scibsdb/table/SpecScan/op/input", fields)
        assert "1 row stored" in text_of(response)

        columns = SPECSCAN_USER_FIELDS + SPECSCAN_DERIVED_FIELDS
        assert len(columns) == 18
        select = ", ".join(f'"{c}"' for c in columns)
        rows = raw_query(dep.db_path("scibsdb"), f'SELECT {select} FROM "SpecScan"')
        assert len(rows) == 1
        row = dict(zip(columns, rows[0]))
        for column in columns:
            assert row[column] is not None, f"{column} should be populated"
        for artifact_column in ("ScanAICLoc", "ScanIMGLoc"):
            stored = Path(dep.config.upload_root) / row[artifact_column]
            assert stored.is_file(), artifact_column
            assert stored.resolve().is_relative_to(Path(dep.config.upload_root).resolve())
        assert time.monotonic() - started < 10.0
        report("bridge derived fill")

    def test_eval_timeout_degrades_to_nulls(self, tmp_path):
        reg = HookRegistry()
        dep = make_deployment(tmp_path, hooks=reg)
        reg.register(HookKind.DERIVED_FILL,
                     HookMatcher(db="scibsdb", table="SpecScan", column="ScanLoc"),
                     specscan_fill_spec("--hang", timeout=1.0))
        client = dep.client()
        client.login()
        fields = dict(SCAN_FORM_FIELDS)
        fields["ScanLoc"] = ("scan.cdf", b"bytes")
        response = client.post_multipart("/db/scibsdb/table/SpecScan/op/input", fields)
        html = text_of(response)
        assert "1 row stored" in html  # the insert still succeeds
        assert html.count("derived fill failed") == 1  # exactly one diagnostic
        derived_select = ", ".join(f'"{c}"' for c in SPECSCAN_DERIVED_FIELDS)
        rows = raw_query(dep.db_path("scibsdb"), f'SELECT {derived_select} FROM "SpecScan"')
        assert set(rows[0]) == {None}
        user_rows = raw_query(dep.db_path("scibsdb"),
                              'SELECT "ScanName", "ScanLoc" FROM "SpecScan"')
        assert user_rows[0][0] == "scan-accept"
        assert user_rows[0][1]  # the upload itself is stored
        assert "derived fill failed" not in text_of(client.get("/home"))  # delivered once
        report("bridge derived fill timeout")


class TestBrowserEnhancementWiring:
    """[SECONDARY] server side of the browser bundle.

    The DOM behaviours themselves (sorting both directions as a permutation,
    delete confirmation, required-field blocking, upload progress) run under
    the frontend's own vitest suite against exactly this markup; the
    script-free versions of every flow are what the whole primary suite
    exercises.  Here we pin the contract between the two: the bundle is
    served and the server emits the activation markers.
    """

    def test_bundle_served_and_markers_emitted(self, tmp_path):
        dep = make_deployment(tmp_path,
                              upload_columns=[("scibsdb", "SpecScan", "ScanLoc")])
        client = dep.client()
        client.login()

        bundle = client.get("/static/hdb.js")
        assert bundle.status == 200
        script = bundle.body.decode()
        for behavior in ("result-table", "delete-form", "input-form",
                         "upload-form", "hdb-filter-box", "data-hdb-required"):
            assert behavior in script, behavior

        page = text_of(client.get("/db/scibsdb/table/Compound/op/all"))
        assert 'src="/static/hdb.js"' in page
        assert 'data-hdb-enhance="result-table"' in page

        form = text_of(client.get("/db/scibsdb/table/SpecScan/op/input"))
        assert 'data-hdb-enhance="input-form upload-form"' in form
        assert 'data-hdb-required="1"' in form

        step = client.post("/db/scibsdb/table/Compound/op/delete",
                           {"phase": "filter", "CompID": "7"})
        assert 'data-hdb-enhance="delete-form"' in text_of(step)
        report("browser enhancement wiring (secondary)")


HOSTILE_NAME_PARTS = [
    "../", "..\\", "/", "\\", "\x00", "\n", "\r", "\t", "~", "$", "|", ";",
    ":", "*", "?", "\"", "<", ">", "%2e%2e", "...", " ", "\x1b[2J", "克",
]


class TestUploadSafety:
    def test_thousand_hostile_names_stay_inside_root(self, tmp_path):
        rng = random.Random(13)
        root = tmp_path / "uploads"
        root.mkdir()
        resolved_root = root.resolve()
        for i in range(1000):
            name = "".join(rng.choice(HOSTILE_NAME_PARTS)
                           for _ in range(rng.randint(1, 8)))
            name += rng.choice(["evil", "passwd", "x.cdf", ""])
            record = store_upload(root, "db", "t", "c", name, b"payload")
            stored = (root / record.stored_path).resolve()
            assert stored.is_file()
            assert stored.is_relative_to(resolved_root), name
        report("upload safety")
