import numpy as np
import pytest

from linlmp import (
    Branch,
    Bus,
    BusKind,
    CaseParseError,
    Generator,
    Network,
    NetworkValidationError,
    build_admittance,
    build_linear_admittance,
    format_network,
    merge_ratings,
    parse_case,
    parse_network,
    parse_ratings,
    scale_load,
)
from conftest import CASE2_TEXT, spec_two_bus

MINIMAL = """function mpc = mini
mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 138 1 1.06 0.94;
2 1 50 10 0 0 1 1 0 138 1 1.06 0.94;
];
mpc.gen = [
1 50 5 90 -90 1.0 100 1 200 0;
];
mpc.branch = [
1 2 0.02 0.06 0.05 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
2 0 0 3 0.02 15 0;
];
"""


class TestParseCase:
    def test_minimal_two_bus(self):
        net = parse_case(MINIMAL)
        assert net.n_bus == 2
        assert net.n_branch == 1
        assert len(net.generators) == 1
        assert net.base_mva == 100.0

    def test_per_unit_conversion(self):
        net = parse_case(MINIMAL)
        bus2 = net.buses[1]
        assert bus2.p_demand == 0.5
        assert bus2.q_demand == 0.1
        g = net.generators[0]
        assert g.p_max == 2.0
        assert g.q_min == -0.9
        assert g.p_start == 0.5

    def test_cost_rescaling(self):
        # linear per-MW cost scales by base, quadratic by base squared
        net = parse_case(MINIMAL)
        g = net.generators[0]
        assert g.cost_a == pytest.approx(15 * 100)
        assert g.cost_b == pytest.approx(0.02 * 100 * 100)

    def test_reactive_cost_defaults_to_active_quadratic(self):
        net = parse_case(MINIMAL)
        g = net.generators[0]
        assert g.cost_c == g.cost_b

    def test_reactive_cost_block_parsed_when_present(self):
        text = MINIMAL.replace(
            "2 0 0 3 0.02 15 0;\n];",
            "2 0 0 3 0.02 15 0;\n2 0 0 3 0.005 0 0;\n];",
        )
        net = parse_case(text)
        assert net.generators[0].cost_c == pytest.approx(0.005 * 100 * 100)

    def test_dangling_branch_reference(self):
        text = MINIMAL.replace("1 2 0.02", "1 999 0.02")
        with pytest.raises(NetworkValidationError, match="999"):
            parse_case(text)

    def test_malformed_row_names_line(self):
        text = MINIMAL.replace("1 2 0.02 0.06", "1 2 bogus 0.06")
        with pytest.raises(CaseParseError, match="line"):
            parse_case(text)

    def test_missing_reference_bus(self):
        text = MINIMAL.replace("1 3 0 0", "1 2 0 0")
        with pytest.raises(NetworkValidationError, match="reference"):
            parse_case(text)

    def test_disconnected_graph(self):
        text = MINIMAL.replace(
            "2 1 50 10 0 0 1 1 0 138 1 1.06 0.94;",
            "2 1 50 10 0 0 1 1 0 138 1 1.06 0.94;\n"
            "3 1 10 0 0 0 1 1 0 138 1 1.06 0.94;",
        )
        with pytest.raises(NetworkValidationError, match="connected"):
            parse_case(text)

    def test_out_of_service_branch_dropped(self):
        text = CASE2_TEXT.replace(
            "1 2 0.01 0.1 0.04 300 0 0 0 0 1 -360 360;",
            "1 2 0.01 0.1 0.04 300 0 0 0 0 1 -360 360;\n"
            "1 2 0.05 0.5 0.00 0 0 0 0 0 0 -360 360;",
        )
        assert parse_case(text).n_branch == 1

    def test_missing_table(self):
        with pytest.raises(CaseParseError, match="gencost"):
            parse_case(MINIMAL.replace("mpc.gencost", "mpc.other"))


class TestInvariants:
    def test_voltage_bounds(self):
        with pytest.raises(NetworkValidationError):
            Bus(1, BusKind.LOAD, 0, 0, 0, 0, 1.1, 0.9)

    def test_zero_series_impedance(self):
        with pytest.raises(NetworkValidationError, match="impedance"):
            Branch(1, 2, 0.0, 0.0, 0.0)

    def test_nonpositive_tap(self):
        with pytest.raises(NetworkValidationError, match="tap"):
            Branch(1, 2, 0.01, 0.1, 0.0, tap=0.0)

    def test_negative_flow_limit(self):
        with pytest.raises(NetworkValidationError, match="limit"):
            Branch(1, 2, 0.01, 0.1, 0.0, flow_limit=-1.0)

    def test_inverted_generator_bounds(self):
        with pytest.raises(NetworkValidationError):
            Generator(1, 1.0, 0.5, -1.0, 1.0, 0.0, 0.0, 0.0)

    def test_negative_quadratic_cost(self):
        with pytest.raises(NetworkValidationError):
            Generator(1, 0.0, 1.0, -1.0, 1.0, 0.0, -1.0, 0.0)


class TestAdmittance:
    def test_pure_reactance_oracle(self):
        # independent complex arithmetic: y = 1/(jx) = -j10
        net = Network(
            buses=(
                Bus(1, BusKind.REFERENCE, 0, 0, 0, 0, 0.9, 1.1),
                Bus(2, BusKind.LOAD, 0, 0, 0, 0, 0.9, 1.1),
            ),
            branches=(Branch(1, 2, 0.0, 0.1, 0.0),),
            generators=(Generator(1, 0, 1, -1, 1, 0, 0, 0),),
            base_mva=100.0,
        )
        adm = build_admittance(net)
        expected_b = np.array([[-10.0, 10.0], [10.0, -10.0]])
        np.testing.assert_allclose(adm.y_full.imag, expected_b, atol=1e-12)
        np.testing.assert_allclose(adm.y_full.real, 0.0, atol=1e-12)

    def test_bus_shunt_moves_only_full_diagonal(self):
        net = spec_two_bus()
        adm = build_admittance(net)
        assert adm.y_full[0, 0].imag == pytest.approx(-10.1)
        assert adm.y_full[1, 1].imag == pytest.approx(-10.1)
        assert adm.y_series[0, 0].imag == pytest.approx(-10.0)

    def test_no_shunts_makes_pair_equal(self):
        net = Network(
            buses=(
                Bus(1, BusKind.REFERENCE, 0, 0, 0, 0, 0.9, 1.1),
                Bus(2, BusKind.LOAD, 0, 0, 0, 0, 0.9, 1.1),
            ),
            branches=(Branch(1, 2, 0.02, 0.1, 0.0),),
            generators=(Generator(1, 0, 1, -1, 1, 0, 0, 0),),
            base_mva=100.0,
        )
        adm = build_admittance(net)
        np.testing.assert_array_equal(adm.y_full, adm.y_series)

    def test_row_sums_zero_without_shunts(self):
        net = parse_case(MINIMAL.replace("0.02 0.06 0.05", "0.02 0.06 0.0"))
        adm = build_admittance(net)
        assert np.max(np.abs(adm.y_full.sum(axis=1))) < 1e-10

    def test_series_column_sums_zero(self, case118):
        adm = build_linear_admittance(case118)
        assert np.max(np.abs(adm.y_series.sum(axis=0))) < 1e-10

    def test_deterministic(self, case118):
        a1 = build_admittance(case118)
        a2 = build_admittance(case118)
        assert np.array_equal(a1.y_full, a2.y_full)
        assert np.array_equal(a1.y_series, a2.y_series)

    def test_linear_pair_matches_standard_without_taps(self, case2):
        std = build_admittance(case2)
        lin = build_linear_admittance(case2)
        np.testing.assert_allclose(std.y_series, lin.y_series, atol=1e-14)
        np.testing.assert_allclose(std.y_full, lin.y_full, atol=1e-14)


class TestScaleLoad:
    def test_identity(self, case2):
        assert scale_load(case2, 1.0) == case2

    def test_scaling(self, case118):
        pd0, qd0 = case118.demand_vectors()
        scaled = scale_load(case118, 0.95)
        pd, qd = scaled.demand_vectors()
        assert pd.sum() == pytest.approx(0.95 * pd0.sum())
        assert qd.sum() == pytest.approx(0.95 * qd0.sum())

    def test_double(self, case2):
        assert scale_load(case2, 2.0).buses[1].p_demand == 2.0

    def test_nonpositive_factor(self, case2):
        with pytest.raises(ValueError):
            scale_load(case2, 0.0)
        with pytest.raises(ValueError):
            scale_load(case2, -1.0)


class TestNativeFormat:
    def test_round_trip(self, case2):
        assert parse_network(format_network(case2)) == case2

    def test_round_trip_118(self, case118_rated):
        assert parse_network(format_network(case118_rated)) == case118_rated

    def test_bad_header(self):
        with pytest.raises(CaseParseError):
            parse_network("something else\n")


class TestRatings:
    def test_positional_merge(self, case2):
        net = merge_ratings(case2, [(1, 2, 150.0)])
        assert net.branches[0].flow_limit == pytest.approx(1.5)

    def test_reversed_endpoints_match(self, case2):
        net = merge_ratings(case2, [(2, 1, 150.0)])
        assert net.branches[0].flow_limit == pytest.approx(1.5)

    def test_endpoint_fallback_out_of_order(self, case3):
        ratings = [(2, 3, 120.0), (1, 2, 110.0), (1, 3, 130.0)]
        net = merge_ratings(case3, ratings)
        limits = [br.flow_limit for br in net.branches]
        assert limits == [pytest.approx(1.1), pytest.approx(1.3), pytest.approx(1.2)]

    def test_parallel_branches_assigned_in_order(self):
        text = CASE2_TEXT.replace(
            "1 2 0.01 0.1 0.04 300 0 0 0 0 1 -360 360;",
            "1 2 0.01 0.1 0.04 0 0 0 0 0 1 -360 360;\n"
            "1 2 0.02 0.2 0.04 0 0 0 0 0 1 -360 360;",
        )
        net = parse_case(text)
        net = merge_ratings(net, [(1, 2, 100.0), (1, 2, 200.0)])
        assert net.branches[0].flow_limit == pytest.approx(1.0)
        assert net.branches[1].flow_limit == pytest.approx(2.0)

    def test_zero_rating_unconstrained(self, case2):
        net = merge_ratings(case2, [(1, 2, 0.0)])
        assert net.branches[0].flow_limit is None

    def test_unmatched_rating_rejected(self, case2):
        with pytest.raises(NetworkValidationError, match="no unmatched branch"):
            merge_ratings(case2, [(7, 9, 100.0)])

    def test_parse_ratings_rejects_garbage(self):
        with pytest.raises(CaseParseError):
            parse_ratings("1 2\n")
