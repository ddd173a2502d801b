import random
from datetime import datetime

import pytest

from hdb.catalog import open_source
from hdb.hooks import ANY, HookKind, HookMatcher, HookRegistry, Suffix, date_default
from hdb.ops import (
    Auditor,
    AuditRecord,
    OperationKind,
    OperationNotAvailable,
    ResultSet,
    RowsAffected,
    available_ops,
    build_input_form,
    decode_assigns,
    decode_filter,
    execute_op,
    record_audit,
)
from hdb.sqlgen import AssignedAutoIncrement, MissingRequired
from hdb.doctree import render

from dbfix import raw_query, seed_lab, seed_ni_lhh, seed_scibs, source
from oracle import assert_roundtrip, parse_html

CLOCK = datetime(2007, 8, 24, 14, 22, 40)


@pytest.fixture
def lab(tmp_path):
    path = tmp_path / "labloc.db"
    seed_lab(path)
    return open_source(source("labdb", path))


@pytest.fixture
def scibs(tmp_path):
    path = tmp_path / "scibsdb.db"
    seed_scibs(path)
    return open_source(source("scibsdb", path))


@pytest.fixture
def reg():
    return HookRegistry()


def find_elements(parsed, tag, acc=None):
    acc = [] if acc is None else acc
    for node in parsed:
        if isinstance(node, tuple) and node[0] == "el":
            if node[1] == tag:
                acc.append(node)
            find_elements(node[3], tag, acc)
    return acc


class TestAvailableOps:
    def test_writable_table_has_all_five(self, lab, reg):
        meta = lab.describe_table("Experiment")
        assert [k.value for k in available_ops(meta, reg)] == [
            "input", "update", "delete", "query", "all",
        ]

    def test_read_only_table_has_read_ops_only(self, lab, reg):
        meta = lab.describe_table("Input")
        assert [k.value for k in available_ops(meta, reg)] == ["query", "all"]

    def test_op_override_hook_removes_delete(self, lab, reg):
        reg.register(
            HookKind.OP_OVERRIDE, HookMatcher(db="labdb", table="Mix"),
            lambda db, table, ops: [k for k in ops if k is not OperationKind.DELETE],
        )
        meta = lab.describe_table("Mix")
        assert [k.value for k in available_ops(meta, reg)] == ["input", "update", "query", "all"]
        # other tables untouched
        other = lab.describe_table("Plate")
        assert len(available_ops(other, reg)) == 5

    def test_hooks_never_grow_read_only_set(self, lab, reg):
        reg.register(
            HookKind.OP_OVERRIDE, HookMatcher(db="labdb", table="Input"),
            lambda db, table, ops: list(OperationKind),
        )
        meta = lab.describe_table("Input")
        assert all(k.value in ("query", "all") for k in available_ops(meta, reg))


class TestBuildInputForm:
    def test_enum_renders_select_with_exact_options(self, lab, reg):
        meta = lab.describe_table("Experiment")
        form = build_input_form(meta, reg, CLOCK)
        parsed = parse_html(render(form))
        selects = find_elements(parsed, "select")
        status = [s for s in selects if ("name", "Status") in s[2]]
        assert len(status) == 1
        options = find_elements([status[0]], "option")
        assert [dict(o[2])["value"] for o in options] == ["ok", "contaminated", "dead"]

    def test_auto_increment_not_editable_not_submitted(self, lab, reg):
        meta = lab.describe_table("Experiment")
        parsed = parse_html(render(build_input_form(meta, reg, CLOCK)))
        inputs = find_elements(parsed, "input")
        auto = [i for i in inputs if dict(i[2]).get("value") == "automatic"]
        assert len(auto) == 1
        attrs = dict(auto[0][2])
        assert "disabled" in attrs
        assert "name" not in attrs

    def test_date_hook_prefills_unpadded(self, tmp_path, reg):
        path = tmp_path / "nilhhloc.db"
        seed_ni_lhh(path)
        conn = open_source(source("ni_lhh", path))
        reg.register(HookKind.INPUT_DEFAULT_VALUE,
                     HookMatcher(db="ni_lhh", column=Suffix("Date")), date_default)
        meta = conn.describe_table("Experiment")
        parsed = parse_html(render(build_input_form(meta, reg, CLOCK)))
        inputs = {dict(i[2]).get("name"): dict(i[2]) for i in find_elements(parsed, "input")}
        assert inputs["SetDate"]["value"] == "2007-8-24"
        assert inputs["HarvestDate"]["value"] == "2007-8-24"
        assert "value" not in inputs["Temp"]

    def test_textarea_for_text_columns_with_default_size(self, lab, reg):
        meta = lab.describe_table("Experiment")
        parsed = parse_html(render(build_input_form(meta, reg, CLOCK)))
        areas = {dict(a[2])["name"]: dict(a[2]) for a in find_elements(parsed, "textarea")}
        assert areas["ExpNote"]["rows"] == "4"
        assert areas["ExpNote"]["cols"] == "60"
        assert "Well" in areas  # tinytext

    def test_textarea_hook_overrides_size(self, lab, reg):
        reg.register(HookKind.INPUT_TEXTAREA_SIZE, HookMatcher(column="ExpNote"),
                     lambda d, t, c: (10, 80))
        meta = lab.describe_table("Experiment")
        parsed = parse_html(render(build_input_form(meta, reg, CLOCK)))
        areas = {dict(a[2])["name"]: dict(a[2]) for a in find_elements(parsed, "textarea")}
        assert areas["ExpNote"]["rows"] == "10"
        assert areas["ExpNote"]["cols"] == "80"

    def test_not_available_on_read_only(self, lab, reg):
        meta = lab.describe_table("Input")
        with pytest.raises(OperationNotAvailable):
            build_input_form(meta, reg, CLOCK)

    def test_form_passes_roundtrip(self, lab, reg):
        meta = lab.describe_table("Experiment")
        form = build_input_form(meta, reg, CLOCK)
        assert_roundtrip(form, render(form))

    def test_required_marker_on_non_nullable(self, lab, reg):
        meta = lab.describe_table("Experiment")
        parsed = parse_html(render(build_input_form(meta, reg, CLOCK)))
        inputs = {dict(i[2]).get("name"): dict(i[2]) for i in find_elements(parsed, "input")}
        assert inputs["PlateID"].get("data-hdb-required") == "1"

    def test_declared_default_prefills_when_no_hook(self, tmp_path, reg):
        import sqlite3
        path = tmp_path / "defs.db"
        raw = sqlite3.connect(path)
        raw.execute("CREATE TABLE Settings (Temp float DEFAULT 21.5, Name text)")
        raw.close()
        conn = open_source(source("defs", path, read_only_tables=set()))
        meta = conn.describe_table("Settings")
        parsed = parse_html(render(build_input_form(meta, reg, CLOCK)))
        inputs = {dict(i[2]).get("name"): dict(i[2]) for i in find_elements(parsed, "input")}
        assert inputs["Temp"]["value"] == "21.5"

    def test_hook_wins_over_declared_default(self, tmp_path, reg):
        import sqlite3
        path = tmp_path / "defs2.db"
        raw = sqlite3.connect(path)
        raw.execute("CREATE TABLE Settings (Temp float DEFAULT 21.5)")
        raw.close()
        conn = open_source(source("defs", path, read_only_tables=set()))
        reg.register(HookKind.INPUT_DEFAULT_VALUE, HookMatcher(column="Temp"),
                     lambda d, t, c, clock: "37.0")
        meta = conn.describe_table("Settings")
        parsed = parse_html(render(build_input_form(meta, reg, CLOCK)))
        inputs = {dict(i[2]).get("name"): dict(i[2]) for i in find_elements(parsed, "input")}
        assert inputs["Temp"]["value"] == "37.0"


class TestDecode:
    def test_empty_string_nullable_becomes_null(self, lab):
        meta = lab.describe_table("Experiment")
        assigns = decode_assigns(meta, {"PlateID": "1", "Well": "", "ExpNote": ""})
        assert assigns == {"PlateID": "1", "Well": None, "ExpNote": None}

    def test_empty_string_required_raises(self, lab):
        meta = lab.describe_table("Experiment")
        with pytest.raises(MissingRequired):
            decode_assigns(meta, {"PlateID": ""})

    def test_filter_decoding(self, lab):
        meta = lab.describe_table("Experiment")
        f = decode_filter(meta, {"PlateID": "3", "PlateID.rel": "ge", "Well": ""})
        assert f.conjuncts == (("PlateID", "ge", "3"),)


def session_stub(name="nicos"):
    class User:
        hdb_name = name
    class Session:
        user = User()
    return Session()


def auditor_for(conn, on_diag=None):
    return Auditor(conn, conn.describe_table("Input"), on_diag)


class TestExecuteOp:
    def test_input_inserts_and_audits(self, lab, reg):
        meta = lab.describe_table("Mix")
        before = lab.row_count("Input")
        result = execute_op(session_stub(), lab, meta, OperationKind.INPUT,
                            {"MixName": "agar", "MixNote": ""},
                            hooks=reg, auditor=auditor_for(lab), clock=CLOCK)
        assert isinstance(result, RowsAffected) and result.n == 1
        assert lab.row_count("Input") == before + 1

    def test_delete_on_read_only_table_unavailable(self, lab, reg):
        meta = lab.describe_table("Input")
        with pytest.raises(OperationNotAvailable):
            execute_op(session_stub(), lab, meta, OperationKind.DELETE, {}, hooks=reg)

    def test_all_returns_every_row_under_limit(self, scibs, reg):
        meta = scibs.describe_table("Compound")
        result = execute_op(session_stub(), scibs, meta, OperationKind.ALL, {},
                            hooks=reg, page_limit=500)
        assert isinstance(result, ResultSet)
        assert len(result.rows) == 210
        assert not result.truncated

    def test_truncation_above_page_limit(self, scibs, reg):
        meta = scibs.describe_table("Compound")
        result = execute_op(session_stub(), scibs, meta, OperationKind.ALL, {},
                            hooks=reg, page_limit=50)
        assert len(result.rows) == 50
        assert result.truncated

    def test_query_with_filter(self, scibs, reg):
        meta = scibs.describe_table("Compound")
        result = execute_op(session_stub(), scibs, meta, OperationKind.QUERY,
                            {"CompID": "5", "CompID.rel": "le"}, hooks=reg)
        assert len(result.rows) == 5

    def test_update_via_where_fields(self, scibs, reg):
        meta = scibs.describe_table("Compound")
        result = execute_op(session_stub(), scibs, meta, OperationKind.UPDATE,
                            {"pKa": "9.9", "where.CompID": "3"}, hooks=reg)
        assert result.n == 1
        assert raw_query(scibs.cfg.location,
                         'SELECT "pKa" FROM "Compound" WHERE "CompID" = 3') == [(9.9,)]

    def test_auto_increment_never_accepted(self, scibs, reg):
        meta = scibs.describe_table("Compound")
        with pytest.raises(AssignedAutoIncrement):
            execute_op(session_stub(), scibs, meta, OperationKind.INPUT,
                       {"CompID": "999", "CompMr": "1.0"}, hooks=reg)

    def test_extra_assigns_collision_rejected(self, scibs, reg):
        meta = scibs.describe_table("Compound")
        with pytest.raises(Exception) as err:
            execute_op(session_stub(), scibs, meta, OperationKind.INPUT,
                       {"CompMr": "1.0"}, hooks=reg, extra_assigns={"CompMr": 2.0})
        assert "overwrite" in str(err.value)


class TestAudit:
    def test_audit_row_content(self, lab, reg):
        meta = lab.describe_table("Mix")
        execute_op(session_stub("alice"), lab, meta, OperationKind.INPUT,
                   {"MixName": "x"}, hooks=reg, auditor=auditor_for(lab), clock=CLOCK)
        rows = raw_query(lab.cfg.location, 'SELECT "user", "op", "table" FROM "Input"')
        assert rows == [("alice", "input", "Mix")]

    def test_unconfigured_audit_is_noop(self, lab, reg):
        meta = lab.describe_table("Mix")
        execute_op(session_stub(), lab, meta, OperationKind.INPUT,
                   {"MixName": "y"}, hooks=reg, auditor=None)
        assert lab.row_count("Input") == 0

    def test_two_mutations_two_rows_in_order(self, lab, reg):
        meta = lab.describe_table("Mix")
        for i, at in enumerate([datetime(2007, 8, 24, 10), datetime(2007, 8, 24, 11)]):
            execute_op(session_stub(), lab, meta, OperationKind.INPUT,
                       {"MixName": f"m{i}"}, hooks=reg, auditor=auditor_for(lab), clock=at)
        rows = raw_query(lab.cfg.location, 'SELECT "at" FROM "Input" ORDER BY rowid')
        assert rows == [("2007-08-24 10:00:00",), ("2007-08-24 11:00:00",)]

    def test_audit_failure_downgrades_to_diagnostic(self, lab, reg, tmp_path):
        # an audit table that vanished after configuration
        diag = []
        meta = lab.describe_table("Input")
        broken = meta.__class__(db=meta.db, name="Gone", columns=meta.columns, read_only=False)
        rec = AuditRecord("u", "2007-08-24 10:00:00", "labdb", "Mix",
                          OperationKind.INPUT, "s")
        record_audit(lab, broken, rec, on_diagnostic=diag.append)
        assert len(diag) == 1

    def test_reads_are_not_audited(self, scibs, reg):
        meta = scibs.describe_table("Compound")
        execute_op(session_stub(), scibs, meta, OperationKind.ALL, {},
                   hooks=reg, auditor=auditor_for(scibs))
        assert scibs.row_count("Input") == 0


class TestSubmitRequery:
    def test_randomized_insert_requery_cycles(self, scibs, reg):
        meta = scibs.describe_table("Compound")
        rng = random.Random(42)
        for _ in range(100):
            form = {
                "CompName": f"cyc-{rng.randrange(10**6)}",
                "CompMr": str(round(rng.uniform(1, 999), 3)),
                "pKa": str(round(rng.uniform(0, 14), 2)),
                "EduID": str(rng.randrange(1, 10**7)),
                "CompNote": rng.choice(["", "note"]),
            }
            result = execute_op(session_stub(), scibs, meta, OperationKind.INPUT,
                                dict(form), hooks=reg)
            got = execute_op(session_stub(), scibs, meta, OperationKind.QUERY,
                             {"CompID": str(result.key)}, hooks=reg)
            row = dict(zip(got.columns, got.rows[0]))
            assert row["CompName"] == form["CompName"]
            assert row["CompMr"] == pytest.approx(float(form["CompMr"]))
            assert row["EduID"] == int(form["EduID"])
            assert row["CompNote"] == (form["CompNote"] or None)
