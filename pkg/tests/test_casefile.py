import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from oedgrid.casefile import (
    CaseFile, branch_to_admittance, builtin_case_path, case_to_network, load_case,
    model_from_json, model_to_json, parse_case, parse_case_text,
)
from oedgrid.errors import CaseFormatError, MalformedRow, MissingBlock, UnsupportedFeature, ZeroImpedance

TWO_BUS = """function mpc = two
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
  1  3  0   0   0 0 1 1 0 230 1 1.1 0.9;
  2  1  50  10  0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1  0 0 300 -300 1 100 1 400 0;
];
mpc.branch = [
  1  2  0.01  0.1  0  0 0 0 0 0 1 -360 360;
];
"""

# reference g and b of the case-5 lines in canonical order
TABLE_TRUTH = [(3.523, -35.235), (3.257, -32.569), (15.470, -154.703), (9.168, -91.676),
               (3.334, -33.337), (3.334, -33.337)]


def test_two_bus_case():
    case = parse_case_text(TWO_BUS)
    assert isinstance(case, CaseFile)
    model = case_to_network(case)
    net = model.network
    assert net.n_buses == 2 and net.lines == ((0, 1),) and net.generators == (0,)
    g, b = branch_to_admittance(0.01, 0.1)
    assert np.allclose(model.y_true, [g, b])
    assert net.p_demand.tolist() == [0.0, 0.5] and net.q_demand.tolist() == [0.0, 0.1]
    assert model.u_dataset.size == 0


def test_case5_dimensions(case5):
    net = case5.network
    assert (net.n_buses, net.n_lines, len(net.generators)) == (5, 6, 4)
    assert net.bus_ids == (1, 2, 3, 4, 5)
    assert case5.u_dataset.size == 6


def test_case5_truth_matches_table(y_true):
    ref = np.array(TABLE_TRUTH).ravel()
    assert np.all(np.abs(y_true - ref) <= 1e-3 * np.abs(ref))


def test_branch_admittance():
    assert branch_to_admittance(0.0, 1.0) == (0.0, -1.0)
    assert branch_to_admittance(1.0, 0.0) == (1.0, 0.0)
    with pytest.raises(ZeroImpedance):
        branch_to_admittance(0.0, 0.0)


def test_missing_block():
    text = TWO_BUS.split("mpc.branch")[0]
    with pytest.raises(MissingBlock):
        parse_case_text(text)


def test_malformed_row_reports_line():
    text = TWO_BUS.replace("2  1  50  10", "2  1  5x0  10")
    with pytest.raises(MalformedRow) as err:
        parse_case_text(text)
    assert err.value.line == 7


def test_in_service_zero_impedance_branch():
    with pytest.raises(ZeroImpedance):
        parse_case_text(TWO_BUS.replace("0.01  0.1", "0  0"))


def test_invalid_branch_status():
    with pytest.raises(UnsupportedFeature):
        parse_case_text(TWO_BUS.replace("0 0 0 0 0 1 -360", "0 0 0 0 0 2 -360"))


def test_unknown_bus_reference():
    with pytest.raises(MalformedRow):
        parse_case_text(TWO_BUS.replace("1  2  0.01", "1  7  0.01"))


def test_parse_file_and_builtin(tmp_path, case5):
    p = tmp_path / "two.m"
    p.write_text(TWO_BUS)
    assert parse_case(p).bus.shape == (2, 13)
    assert np.array_equal(load_case(builtin_case_path()).y_true, case5.y_true)
    bad = tmp_path / "bad.m"
    bad.write_bytes(b"\xff\xfe mpc.bus = [")
    with pytest.raises(CaseFormatError):
        parse_case(bad)


def test_json_round_trip(tmp_path, case5):
    data = model_to_json(case5)
    again = model_from_json(json.loads(json.dumps(data)))
    assert model_to_json(again) == data
    p = tmp_path / "case5.json"
    p.write_text(json.dumps(data))
    loaded = load_case(p)
    assert np.array_equal(loaded.y_true, case5.y_true)
    assert loaded.network.lines == case5.network.lines


def test_other_slack_bus():
    with pytest.raises(CaseFormatError):
        case_to_network(parse_case_text(TWO_BUS), slack_bus=2)
    with pytest.raises(ValueError):
        case_to_network(parse_case_text(TWO_BUS), slack_box="tight")


_tokens = st.sampled_from(["mpc.bus", "mpc.gen", "mpc.branch", "mpc.baseMVA", "=", "[", "]",
                           ";", "\n", "%", " ", "1", "-2.5", "1e3", "x", "0", "..."])


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.one_of(st.text(max_size=200), st.lists(_tokens, max_size=80).map("".join),
                 st.integers(0, len(TWO_BUS)).map(lambda i: TWO_BUS[:i])))
def test_parser_is_total(text):
    try:
        out = parse_case_text(text)
    except CaseFormatError as exc:
        assert exc.line is None or exc.line >= 1
    else:
        assert isinstance(out, CaseFile)
