import pytest
from hypothesis import given
from hypothesis import strategies as st

from tgtod.complexity import cost_model, format_breakdown, slotted_cost_model


def test_reference_example():
    cb = cost_model(10**6, 1000, 1000)
    assert cb.direct == 10**18
    assert cb.tgtod == 2_001_000
    assert cb.mean_cluster_size == 1000


def test_one_cluster_per_node():
    cb = cost_model(50, 7, 50)
    assert cb.mean_cluster_size == 1
    assert cb.tgtod == 1 + 50**2 + 7**2


def test_slotted_variant_substitutes_slots():
    cb = slotted_cost_model(9, 6, 3, 2)
    assert cb.n_temporal == 3 and cb.temporal_unit == "slots"
    assert cb.tgtod == 3 + 9 + 9


def test_mean_cluster_size_rounds_up():
    assert cost_model(10, 1, 3).mean_cluster_size == 4


def test_huge_inputs_stay_exact():
    cb = cost_model(10**12, 10**6, 10**6)
    assert cb.direct == 10**36


@given(st.integers(1, 10**9), st.integers(1, 10**6), st.data())
def test_cost_ordering(n, t, data):
    # the chain direct >= split >= hier is not unconditional: it needs
    # N, T >= 2 for the first step and N^2 >= M^2 + C^2 for the second
    c = data.draw(st.integers(1, n))
    cb = cost_model(n, t, c)
    m = cb.mean_cluster_size
    assert cb.hier_split >= cb.tgtod
    if n >= 2 and t >= 2:
        assert cb.direct >= cb.space_time_split
    assert (cb.space_time_split >= cb.hier_split) == (n * n >= m * m + c * c)


def test_ordering_breaks_at_the_edges():
    assert cost_model(1, 1, 1).direct < cost_model(1, 1, 1).space_time_split
    cb = cost_model(20, 3, 20)
    assert cb.hier_split > cb.space_time_split


@pytest.mark.parametrize("n,t,c", [(10, 5, 0), (10, 5, 11), (10, 0, 2)])
def test_invalid_inputs(n, t, c):
    with pytest.raises(ValueError):
        cost_model(n, t, c)


def test_format_lists_four_rows():
    text = format_breakdown(cost_model(10**6, 1000, 1000))
    lines = text.splitlines()
    assert len(lines) == 5
    assert lines[-1].split("=")[1].strip() == "2,001,000"
