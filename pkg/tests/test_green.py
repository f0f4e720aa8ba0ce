import numpy as np
import pytest

from homfluct import green
from homfluct.errors import DomainError

# lattice Green function of -Laplace at the origin, d = 3: the walk Green
# function 1.5163860592... divided by 2d (high-order quadrature, cross-checked
# against order doubling below)
WATSON_G0 = 0.2527310098586630


@pytest.fixture(scope="module")
def table():
    return green.GreenTable(d=3, lam=0.0, radius=10)


def test_watson_value_and_order_doubling():
    value, err = green.green_value((0, 0, 0), 0.0, 3)
    assert abs(value - WATSON_G0) < 1e-4
    assert err < 1e-6  # order-doubling agreement


def test_symmetry_under_flips_and_permutations(table):
    # sign flips are exact by construction; permutations agree up to the
    # floating-point summation order of the tensor contraction
    assert table((1, 2, 0)) == table((-1, 2, 0)) == table((1, -2, 0))
    assert abs(table((1, 2, 0)) - table((0, 2, 1))) < 1e-13
    assert abs(table((3, 1, 2)) - table((2, 3, 1))) < 1e-13


def test_delta_identity_on_box(table):
    pts = np.stack(np.meshgrid(*([np.arange(-4, 5)] * 3), indexing="ij"),
                   axis=-1).reshape(-1, 3)
    worst = max(abs(table.delta_residual(x)) for x in pts)
    assert worst < 1e-8


def test_monotone_in_mass_at_origin():
    vals = [green.green_value((0, 0, 0), lam, 3, quad_order=6)[0]
            for lam in (0.0, 0.01, 0.1, 1.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_domain_errors():
    with pytest.raises(DomainError):
        green.green_value((0, 0), 0.0, 2)
    with pytest.raises(DomainError):
        green.green_value((0, 0, 0), -0.5, 3)
    with pytest.raises(DomainError):
        green.hessian_l2_sum(0, 1, 0.0, 1)


def test_hessian_from_table_matches_second_differences(table):
    x = np.array([2, 1, 0])
    e = np.eye(3, dtype=int)
    direct = (table(x + e[0] - e[1]) - table(x + e[0])
              - table(x - e[1]) + table(x))
    assert green.grad_grad_green(0, 1, x, 0.0, table=table) == direct


def test_hessian_row_sums_decay(table_large=None):
    tab = green.GreenTable(d=3, lam=0.0, radius=18)
    sums = [abs(green.hessian_row_sum(tab, 0, 1, R)) for R in (4, 8, 16)]
    assert sums[0] > sums[1] > sums[2]
    # expected decay ~ R^{1-d} = R^{-2}: a doubling should shrink by ~4
    assert sums[1] < 0.5 * sums[0]
    assert sums[2] < 0.5 * sums[1]


def test_hessian_l2_sum_positive_and_stable(table):
    for (i, j) in ((0, 0), (0, 1), (1, 2)):
        S, tail = green.hessian_l2_sum(i, j, 0.0, 8, table=table)
        assert S > 0
        assert tail < 0.01 * S
    tab = green.GreenTable(d=3, lam=0.0, radius=26)
    S12, _ = green.hessian_l2_sum(0, 1, 0.0, 24, table=tab)
    S12_half, _ = green.hessian_l2_sum(0, 1, 0.0, 12, table=tab)
    assert abs(S12 - S12_half) < 0.01 * S12  # R-doubling stability to 1%


def test_hessian_l2_sum_symmetric_in_roles(table):
    S_ij, _ = green.hessian_l2_sum(0, 1, 0.0, 8, table=table)
    S_ji, _ = green.hessian_l2_sum(1, 0, 0.0, 8, table=table)
    assert abs(S_ij - S_ji) < 1e-10 * S_ij


def test_large_mass_localizes():
    # with a large mass the sum is dominated by the nearest terms
    tab = green.GreenTable(d=3, lam=25.0, radius=8)
    S, _ = green.hessian_l2_sum(0, 1, 25.0, 6, table=tab)
    near = sum(
        tab.hessian(0, 1, np.array(p)) ** 2
        for p in [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1),
                  (-1, 0, 0), (0, -1, 0), (0, 0, -1), (1, -1, 0), (-1, 1, 0)]
    )
    assert abs(S - near) < 0.05 * S


def test_triple_gradient_decay_fit():
    res = green.triple_grad_decay_check([0.0, 0.01, 0.1, 1.0], R=14)
    for lam, fit in res.items():
        assert fit["exponent"] <= -4.0 + 0.3, (lam, fit)
    consts = [fit["constant"] for fit in res.values()]
    assert max(consts) <= 2.0 * min(consts)  # uniform in the mass


def test_triple_gradient_symmetric_and_finite_at_unit_mass():
    tab = green.GreenTable(d=3, lam=1.0, radius=4)
    vals = green._triple_gradient_values(tab, (1, 1, 0))
    assert np.all(np.isfinite(vals))
    # y-slot indices commute (both are y-differences of the same function)
    assert np.allclose(vals, np.swapaxes(vals, 0, 2), atol=1e-12)


def test_green_table_radius_guard(table):
    with pytest.raises(DomainError):
        table((11, 0, 0))
