from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atmosphere.errors import (
    PatternSemanticError,
    PatternSyntaxError,
    UnsupportedFeatureError,
)
from atmosphere.patterns import (
    Binding,
    CountAgg,
    CurrentTimestamp,
    Duration,
    FieldPath,
    FieldRef,
    Literal,
    PatternDef,
    Predicate,
    StarOf,
    parse_pattern,
    parse_patterns,
    print_pattern,
    validate_pattern,
)

from .listings import LISTING_ORDER, LISTING_TEXTS


def test_all_nine_listings_parse(subtests=None):
    for name in LISTING_ORDER:
        pattern = parse_pattern(LISTING_TEXTS[name])
        assert pattern.name == name
        assert pattern.insert_into == name
        assert pattern.tags["domainName"] == "Fog"


def test_surveillance_unit_shape():
    p = parse_pattern(LISTING_TEXTS["SurveillanceUnit"])
    assert p == PatternDef(
        name="SurveillanceUnit",
        tags={"domainName": "Fog"},
        insert_into="SurveillanceUnit",
        select=(
            FieldRef(FieldPath("a1", "timestamp"), "timestamp"),
            FieldRef(FieldPath("a1", "floor"), "floor"),
        ),
        bindings=(
            Binding(
                alias="a1",
                stream="ExternalLightByFloor",
                predicates=(
                    Predicate(FieldPath("a1", "count"), ">=", Literal(4)),
                ),
            ),
        ),
        window=None,
        group_by=(),
    )


def test_external_light_by_floor_shape():
    p = parse_pattern(LISTING_TEXTS["ExternalLightByFloor"])
    assert p.window == Duration(10, "minutes")
    assert p.group_by == (FieldPath("a1", "floor"),)
    assert p.select == (
        CurrentTimestamp("timestamp"),
        FieldRef(FieldPath("a1", "floor"), "floor"),
        CountAgg(FieldPath("a1", "isOn"), "count"),
    )
    assert p.bindings[0].predicates == (
        Predicate(FieldPath("a1", "isOn"), "=", Literal(True)),
    )


def test_medicine_stock_break_shape():
    p = parse_pattern(LISTING_TEXTS["MedicineStockBreak"])
    assert len(p.bindings) == 3
    assert p.window == Duration(24, "hours")
    a1, a2, a3 = p.bindings
    assert (a1.alias, a1.stream, a1.predicates) == ("a1", "VeryHighDemandByLaboratory", ())
    assert a2.predicates == (
        Predicate(FieldPath("a2", "id"), "=", FieldPath("a1", "id")),
    )
    assert a3.predicates == (
        Predicate(FieldPath("a3", "id"), "=", FieldPath("a2", "id")),
    )


def test_listing_thresholds_and_windows_match_literals():
    def single_predicate_literal(name):
        (binding,) = parse_pattern(LISTING_TEXTS[name]).bindings
        (pred,) = binding.predicates
        return pred.op, pred.rhs.value

    assert single_predicate_literal("SurveillanceUnit") == (">=", 4)
    assert single_predicate_literal("VeryHighDemandByLaboratory") == (">", 1000)
    assert single_predicate_literal("StockShortageByPharmacy") == ("<=", 5)
    assert single_predicate_literal("RespiratoryUseByHospital") == (">=", 1)
    windows = {
        "ExternalLightByFloor": Duration(10, "minutes"),
        "DemandByLaboratory": Duration(1, "hours"),
        "StockByPharmacy": Duration(1, "hours"),
        "UseByHospital": Duration(1, "hours"),
        "MedicineStockBreak": Duration(24, "hours"),
    }
    for name, expected in windows.items():
        assert parse_pattern(LISTING_TEXTS[name]).window == expected


def test_print_parse_fixpoint_on_listings():
    for name in LISTING_ORDER:
        pattern = parse_pattern(LISTING_TEXTS[name])
        assert parse_pattern(print_pattern(pattern)) == pattern


def test_minimal_pattern_round_trip():
    text = '@Name("P") @Tag(name="domainName", value="x") insert into Out select a1.* from pattern [(every a1 = In)]'
    pattern = parse_pattern(text)
    assert pattern.select == (StarOf("a1"),)
    assert parse_pattern(print_pattern(pattern)) == pattern


def test_pattern_file_with_multiple_patterns():
    text = "\n\n".join(LISTING_TEXTS[name] for name in LISTING_ORDER)
    patterns = parse_patterns(text)
    assert [p.name for p in patterns] == LISTING_ORDER


class TestSemanticErrors:
    def test_forward_correlation_reference(self):
        text = (
            '@Name("P") @Tag(name="domainName", value="x") insert into X '
            "select a1.* from pattern [(every a1 = Y(a1.id = a2.id))]"
        )
        with pytest.raises(PatternSemanticError, match="not declared earlier"):
            parse_pattern(text)

    def test_duplicate_alias(self):
        text = (
            '@Name("P") @Tag(name="domainName", value="x") insert into X '
            "select a1.* from pattern [(every (a1 = Y and a1 = Z))]"
        )
        with pytest.raises(PatternSemanticError, match="duplicate alias"):
            parse_pattern(text)

    def test_group_by_without_window(self):
        text = (
            '@Name("P") @Tag(name="domainName", value="x") insert into X '
            "select a1.f as f from pattern [(every a1 = Y)] group by a1.f"
        )
        with pytest.raises(PatternSemanticError, match="group by requires"):
            parse_pattern(text)

    def test_count_without_window(self):
        text = (
            '@Name("P") @Tag(name="domainName", value="x") insert into X '
            "select count(a1.f) as c from pattern [(every a1 = Y)]"
        )
        with pytest.raises(PatternSemanticError, match="count"):
            parse_pattern(text)

    def test_predicate_alias_must_match_binding(self):
        text = (
            '@Name("P") @Tag(name="domainName", value="x") insert into X '
            "select a1.* from pattern [(every (a1 = Y and a2 = Z(a1.f = 1)))]"
        )
        with pytest.raises(PatternSemanticError, match="enclosing alias"):
            parse_pattern(text)

    def test_missing_domain_name_tag(self):
        text = '@Name("P") insert into X select a1.* from pattern [(every a1 = Y)]'
        with pytest.raises(PatternSemanticError, match="domainName"):
            parse_pattern(text)

    def test_select_alias_must_resolve(self):
        text = (
            '@Name("P") @Tag(name="domainName", value="x") insert into X '
            "select a9.f as f from pattern [(every a1 = Y)]"
        )
        with pytest.raises(PatternSemanticError, match="unknown alias"):
            parse_pattern(text)

    def test_bad_target_tag(self):
        text = (
            '@Name("P") @Tag(name="domainName", value="x") '
            '@Tag(name="target", value="moon") '
            "insert into X select a1.* from pattern [(every a1 = Y)]"
        )
        with pytest.raises(PatternSemanticError, match="target"):
            parse_pattern(text)


class TestUnsupportedConstructs:
    BASE = '@Name("P") @Tag(name="domainName", value="x") insert into X '

    @pytest.mark.parametrize(
        "text,needle",
        [
            ("select a1.* from pattern [(every (a1 = Y or a2 = Z))]", "or"),
            ("select a1.* from pattern [(every a1 = Y -> a2 = Z)]", "followed-by"),
            ("select a1.* from pattern [(every a1 = Y(a1.f = 1 or a1.g = 2))]", "or"),
            ("select a1.* from pattern [not a1 = Y]", "not"),
            ("select a1.* from pattern [(every a1 = Y)].win:length(5 seconds)", "win:length"),
            ("select a1.* from pattern [(every a1 = Y)].std:groupwin(a1.f)", "std"),
            ("select avg(a1.f) as m from pattern [(every a1 = Y)]", "avg"),
            ("select sum(a1.f) as m from pattern [(every a1 = Y)]", "sum"),
            ("select a1.* from pattern [(every a1 = Y)] where a1.f = 1", "where"),
            ("select a1.* from pattern [(every a1 = Y(a1.f == 1))]", "=="),
            ("select a1.* from pattern [(every a1 = Y)].win:time_batch(2 days)", "days"),
        ],
    )
    def test_named_unsupported_errors(self, text, needle):
        with pytest.raises(UnsupportedFeatureError) as err:
            parse_pattern(self.BASE + text)
        assert needle in str(err.value)


class TestSyntaxErrors:
    def test_error_carries_line_and_column(self):
        text = '@Name("P")\n@Tag(name="domainName", value="x")\ninsert into X\nselect a1.floor from pattern [(every a1 = Y)]'
        with pytest.raises(PatternSyntaxError) as err:
            parse_pattern(text)
        # 'from' sits where 'as' was required
        assert err.value.line == 4
        assert err.value.column == 17

    def test_unbalanced_brackets_rejected(self):
        text = (
            '@Name("P") @Tag(name="domainName", value="x") insert into X '
            "select a1.* from pattern [(every a1 = Y(a1.isOn = true))]]"
        )
        with pytest.raises(PatternSyntaxError):
            parse_pattern(text)

    def test_unterminated_string(self):
        with pytest.raises(PatternSyntaxError):
            parse_pattern("@Name(\"P) insert into X select a1.* from pattern [(every a1 = Y)]")


class TestCaseSensitivity:
    def test_keywords_case_insensitive(self):
        text = (
            '@Name("P") @Tag(name="domainName", value="x") INSERT INTO X '
            "SELECT a1.* FROM PATTERN [(EVERY a1 = Y)]"
        )
        assert parse_pattern(text).insert_into == "X"

    def test_identifiers_case_sensitive(self):
        text = (
            '@Name("P") @Tag(name="domainName", value="x") insert into X '
            "select a1.isOn as isOn from pattern [(every a1 = Y)]"
        )
        p = parse_pattern(text)
        assert p.select[0].path.field == "isOn"


# -- randomized round-trip ---------------------------------------------------

_ident = st.from_regex(r"[a-z][A-Za-z0-9_]{0,5}", fullmatch=True)
_literal = st.one_of(
    st.integers(min_value=-10_000, max_value=10_000).map(Literal),
    st.floats(min_value=-100, max_value=100, allow_nan=False).map(Literal),
    st.booleans().map(Literal),
    st.from_regex(r"[a-z ]{0,8}", fullmatch=True).map(Literal),
)
_op = st.sampled_from(["=", "!=", "<", "<=", ">", ">="])


@st.composite
def _pattern_defs(draw):
    n_bindings = draw(st.integers(1, 3))
    aliases = [f"b{i}" for i in range(n_bindings)]
    bindings = []
    for i, alias in enumerate(aliases):
        preds = []
        for _ in range(draw(st.integers(0, 2))):
            lhs = FieldPath(alias, draw(_ident))
            if i > 0 and draw(st.booleans()):
                rhs = FieldPath(draw(st.sampled_from(aliases[:i])), draw(_ident))
            else:
                rhs = draw(_literal)
            preds.append(Predicate(lhs, draw(_op), rhs))
        bindings.append(Binding(alias, "S" + draw(_ident), tuple(preds)))
    conjunction = n_bindings > 1
    window = None
    if draw(st.booleans()):
        window = Duration(draw(st.integers(1, 48)), draw(st.sampled_from(["seconds", "minutes", "hours"])))
    select: list = []
    used_names: set[str] = set()

    def fresh_name():
        while True:
            name = draw(_ident)
            if name not in used_names:
                used_names.add(name)
                return name

    for _ in range(draw(st.integers(1, 3))):
        kind = draw(st.sampled_from(["field", "ts", "star"]))
        if kind == "field":
            select.append(FieldRef(FieldPath(draw(st.sampled_from(aliases)), draw(_ident)), fresh_name()))
        elif kind == "ts":
            if any(isinstance(s, CurrentTimestamp) for s in select):
                continue
            select.append(CurrentTimestamp(fresh_name()))
        else:
            select.append(StarOf(draw(st.sampled_from(aliases))))
    if not select:
        select.append(StarOf(aliases[0]))
    group_by: tuple = ()
    if window is not None and not conjunction:
        if draw(st.booleans()):
            select.append(CountAgg(FieldPath(aliases[0], draw(_ident)), fresh_name()))
        if draw(st.booleans()):
            group_by = tuple(
                FieldPath(aliases[0], draw(_ident)) for _ in range(draw(st.integers(1, 2)))
            )
    tags = {"domainName": draw(_ident)}
    if draw(st.booleans()):
        tags["target"] = draw(st.sampled_from(["edge", "fog", "cloud", "user"]))
    return validate_pattern(
        PatternDef(
            name="P" + draw(_ident),
            tags=tags,
            insert_into="O" + draw(_ident),
            select=tuple(select),
            bindings=tuple(bindings),
            window=window,
            group_by=group_by,
        )
    )


@settings(max_examples=200, deadline=None)
@given(pattern=_pattern_defs())
def test_random_pattern_round_trip(pattern):
    assert parse_pattern(print_pattern(pattern)) == pattern
