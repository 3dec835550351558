import numpy as np
import pytest
from hypothesis import given, strategies as st

from affordseg.core import AFFORDANCES, PartLabelMap
from affordseg.transfer import (
    TableParseError,
    TransferEntry,
    TransferTable,
    bundled_table,
    candidate_patterns,
    parse_table,
    resolve,
    resolve_map,
)

HEADER = "pattern\t" + "\t".join(AFFORDANCES)


def row(pattern, *values):
    vals = list(values) + [0] * (15 - len(values))
    return pattern + "\t" + "\t".join(str(v) for v in vals)


def vec(**kw):
    v = [0.0] * 15
    for k, x in kw.items():
        v[AFFORDANCES.index(k.replace("_", "-"))] = x
    return tuple(v)


def test_reference_rows_parse():
    table = parse_table("\n".join([HEADER, row("*/knob", 1, 1, 0.5, 0, 1, 0, 0, 0),
                                   row("pot", 1, 0, 0.5, 0, 1, 0, 0, 0)]))
    knob = dict(zip(AFFORDANCES, table.get("*/knob")))
    assert [knob[a] for a in AFFORDANCES[:8]] == [1, 1, 0.5, 0, 1, 0, 0, 0]
    pot = dict(zip(AFFORDANCES, table.get("pot")))
    assert (pot["obstruct"], pot["pinch-pull"], pot["break"], pot["grasp"]) == (1, 0, 0.5, 1)


def test_bundled_table_carries_reference_rows():
    t = bundled_table()
    assert t.get("*/knob")[:8] == (1, 1, 0.5, 0, 1, 0, 0, 0)
    assert t.get("*/top")[:8] == (0, 0, 0, 0.5, 0, 0, 0, 1)
    assert t.get("pot")[:8] == (1, 0, 0.5, 0, 1, 0, 0, 0)


def test_space_separated_cells_and_comments():
    t = parse_table("# comment\n" + HEADER + "\n\n*/knob  1 1 0.5 0 1 0 0 0 0 0 0 0 0 0 0\n")
    assert t.get("*/knob")[2] == 0.5


@pytest.mark.parametrize("bad_line,match", [
    (row("pot", 0.7), "0.7"),
    (row("pot", "x"), "non-numeric"),
    ("pot 1 1", "expected 15"),
    (row("a/*/b", 1), "wildcard"),
])
def test_bad_rows_name_the_line(bad_line, match):
    with pytest.raises(TableParseError, match=match) as err:
        parse_table("# c\n" + HEADER + "\n" + bad_line + "\n")
    assert err.value.line == 3


def test_duplicate_pattern_rejected():
    with pytest.raises(TableParseError, match="duplicate") as err:
        parse_table("\n".join([HEADER, row("pot", 1), row("pot", 0)]))
    assert err.value.line == 3


def test_unknown_column_named():
    header = HEADER.replace("walk", "fly")
    with pytest.raises(TableParseError, match="'fly'"):
        parse_table(header + "\n")


def test_alias_header_columns():
    header = HEADER.replace("observe", "read/watch").replace("tip-push", "tip/push")
    t = parse_table(header + "\n" + row("tv", *([0] * 11 + [1])))
    assert t.get("tv")[AFFORDANCES.index("observe")] == 1


def test_entry_limit():
    lines = [HEADER] + [row(f"obj{i}", 1) for i in range(501)]
    with pytest.raises(TableParseError, match="500"):
        parse_table("\n".join(lines))
    assert len(parse_table("\n".join(lines[:501]))) == 500


def test_round_trip_through_tsv():
    t = bundled_table()
    assert parse_table(t.to_tsv()).entries == t.entries


def test_candidate_order():
    assert candidate_patterns("a/b/c") == ["a/b/c", "*/b/c", "b/c", "*/c", "c", "*"]
    assert candidate_patterns("unicorn") == ["unicorn", "*"]


def test_specific_beats_wildcard():
    t = TransferTable([TransferEntry("*/drawer", vec(obstruct=1)),
                       TransferEntry("cabinet/drawer", vec(hook_pull=1))])
    assert resolve(t, "cabinet/drawer") == vec(hook_pull=1)
    assert resolve(t, "desk/drawer") == vec(obstruct=1)


def test_wildcard_matches_deep_prefix():
    t = TransferTable([TransferEntry("*/knob", vec(pinch_pull=1))])
    assert resolve(t, "cabinet/drawer/knob") == vec(pinch_pull=1)


def test_no_match_is_none():
    t = TransferTable([TransferEntry("pot", vec(grasp=1))])
    assert resolve(t, "unicorn") is None
    assert resolve(t.with_entry(TransferEntry("*", vec(walk=1))), "unicorn") == vec(walk=1)


segment = st.sampled_from(["cabinet", "drawer", "knob", "door", "top", "leg"])
paths = st.lists(segment, min_size=1, max_size=4).map("/".join)


@given(paths, st.data())
def test_adding_more_specific_pattern_takes_over(path, data):
    cands = candidate_patterns(path)
    present = data.draw(st.lists(st.sampled_from(cands), unique=True))
    entries = [TransferEntry(p, vec(walk=1)) for p in present]
    table = TransferTable(entries)
    hit = next((i for i, p in enumerate(cands) if p in present), len(cands))
    if hit == 0:
        return
    new = cands[data.draw(st.integers(0, hit - 1))]
    marker = vec(sit=1)
    bigger = table.with_entry(TransferEntry(new, marker))
    assert resolve(bigger, path) == marker
    assert resolve(bigger, path) == resolve(bigger, path)


def _pot_table():
    return parse_table("\n".join([HEADER, row("pot", 1, 0, 0.5, 0, 1, 0, 0, 0)]))


def test_resolve_map_all_pot():
    target, mask = resolve_map(_pot_table(), PartLabelMap(np.ones((2, 2), np.uint16), {1: "pot"}))
    assert mask.valid.tolist() == [[1, 1], [1, 1]]
    assert np.all(target.channel("obstruct") == 1)
    assert np.all(target.channel("break") == 0.5)


def test_resolve_map_unlabeled():
    target, mask = resolve_map(_pot_table(), PartLabelMap(np.zeros((2, 2), np.uint16), {}))
    assert not mask.valid.any()
    assert not target.values.any()


def test_resolve_map_mixed(rng):
    idx = rng.integers(0, 3, size=(6, 5)).astype(np.uint16)
    target, mask = resolve_map(_pot_table(), PartLabelMap(idx, {1: "pot", 2: "xyz"}))
    assert np.array_equal(mask.valid, (idx == 1).astype(np.uint8))
    assert np.all(target.values[:, idx != 1] == 0)
    assert np.all(target.values[:, idx == 1] == np.array(_pot_table().get("pot"))[:, None])
