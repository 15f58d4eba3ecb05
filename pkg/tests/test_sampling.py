import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from compoundsp.problem import CompoundProblem, OuterMap, RandomFn, linear_fn, phi_identity, phi_sum_positive, psi_identity
from compoundsp.sampling import (
    GrowthSchedule,
    ScheduleError,
    gaussian_hinge_instance,
    saa_objective,
    saa_rate_experiment,
    schedule_generate,
    schedule_validate,
)
from compoundsp.sets import Box
from compoundsp.streams import (
    EmpiricalRows,
    FiniteMixture,
    Gaussian,
    SampleBatch,
    SampleStream,
    Stacked,
    read_rows_csv,
    role_seed_sequence,
)


# streams


DISTS = [
    EmpiricalRows([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]),
    Gaussian([0.0, 1.0], [1.0, 4.0]),
    FiniteMixture([0.3, 0.7], [Gaussian([0.0], [1.0]), EmpiricalRows([[5.0], [6.0]])]),
    Stacked([Gaussian([0.0], [1.0]), EmpiricalRows([[1.0], [2.0]])]),
]


@pytest.mark.parametrize("dist", DISTS, ids=lambda d: type(d).__name__)
def test_replay_is_bit_identical(dist):
    a = SampleStream(dist, 42, "xi").draw(257)
    b = SampleStream(dist, 42, "xi").draw(257)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("dist", DISTS, ids=lambda d: type(d).__name__)
def test_split_draws_equal_one_draw(dist):
    s1, s2 = SampleStream(dist, 7, "eta"), SampleStream(dist, 7, "eta")
    whole = s1.draw(100)
    parts = np.vstack([s2.draw(13), s2.draw(0), s2.draw(87)])
    assert np.array_equal(whole, parts)


def test_roles_give_distinct_streams():
    g = Gaussian([0.0], [1.0])
    rows = {r: SampleStream(g, 0, r).draw(2000)[:, 0] for r in ("xi", "eta", "residual-xi", "residual-eta")}
    keys = list(rows)
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            a, b = rows[keys[i]], rows[keys[j]]
            assert not np.array_equal(a, b)
            assert abs(np.corrcoef(a, b)[0, 1]) < 0.1
    assert role_seed_sequence(0, "xi").spawn_key != role_seed_sequence(0, "eta").spawn_key


def test_extend_keeps_prefix_and_counter():
    s = SampleStream(Gaussian([0.0], [1.0]), 3, "xi")
    b1 = s.extend(None, 4)
    b2 = s.extend(b1, 12)
    assert b1.is_prefix_of(b2) and b2.size == 12 and s.counter == 12
    with pytest.raises(ValueError):
        s.extend(b2, 5)
    with pytest.raises(ValueError):
        b2.rows[0, 0] = 1.0


def test_gaussian_moments_and_ks():
    x = SampleStream(Gaussian([1.0, -2.0], [4.0, 0.25]), 11, "xi").draw(40000)
    assert np.allclose(x.mean(0), [1.0, -2.0], atol=0.03)
    assert np.allclose(x.var(0), [4.0, 0.25], rtol=0.03)
    assert stats.kstest((x[:, 0] - 1.0) / 2.0, "norm").pvalue > 1e-3


def test_empirical_rows_resample_uniformly():
    x = SampleStream(EmpiricalRows([[0.0], [1.0], [2.0]]), 5, "xi").draw(30000)[:, 0]
    counts = np.bincount(x.astype(int), minlength=3) / x.size
    assert np.allclose(counts, 1 / 3, atol=0.01)


def test_mixture_weights():
    m = FiniteMixture([0.25, 0.75], [EmpiricalRows([[0.0]]), EmpiricalRows([[1.0]])])
    x = SampleStream(m, 9, "xi").draw(40000)[:, 0]
    assert x.mean() == pytest.approx(0.75, abs=0.01)


def test_stacked_blocks():
    s = Stacked([Gaussian([0.0, 0.0], [1.0, 1.0]), EmpiricalRows([[7.0]])])
    assert s.dim == 3 and s.blocks == [slice(0, 2), slice(2, 3)]
    assert np.all(SampleStream(s, 0, "xi").draw(10)[:, 2] == 7.0)


def test_read_rows_csv(tmp_path):
    p = tmp_path / "rows.csv"
    p.write_text("1.5,2\n-3,4e-1\n")
    assert np.array_equal(read_rows_csv(p), [[1.5, 2.0], [-3.0, 0.4]])


# schedule


def test_default_schedule_example():
    s = GrowthSchedule(horizon=10)
    seq = schedule_generate(s)
    assert seq[3] == 32 and seq[4] == 45 == math.ceil(4 * 5 ** 1.5)
    # direct inequality check at each k past the warm-up
    for k in range(s.k_bar + 1, 11):
        prev, cur = seq[k - 2], seq[k - 1]
        assert max(prev + 1, s.c2 * k ** 1.5) <= cur <= prev / (1 - s.c3 / k)
    assert schedule_validate(seq, s)


def test_warm_up_rule():
    seq = schedule_generate(GrowthSchedule(N_init=10, c2=1.0, horizon=3))
    assert seq == [10, 12, 15]


def test_constant_schedule_fails_lower_bound():
    s = GrowthSchedule(horizon=6)
    chk = schedule_validate([50] * 6, s)
    assert not chk and chk.first_violation == 4 and "lower" in chk.reason


def test_infeasible_parameters_report_first_k():
    s = GrowthSchedule(c2=1e6, c3=0.1, horizon=10)
    with pytest.raises(ScheduleError) as err:
        schedule_generate(s)
    # independent replay of the rule to find the first violation
    seq, k_bad = [4], None
    for k in range(2, 11):
        floor_k = math.ceil(1e6 * k ** 1.5)
        if k <= 3:
            seq.append(max(seq[-1] + k, floor_k))
            continue
        if max(seq[-1] + 1, floor_k) > seq[-1] / (1 - 0.1 / k):
            k_bad = k
            break
        seq.append(max(seq[-1] + 1, floor_k))
    assert err.value.k == k_bad == 4


def test_doubling_fails_ratio_bound():
    s = GrowthSchedule(c1=0.25, c2=1.0, c3=1.0, k_bar=2, horizon=8)
    chk = schedule_validate([2 ** k for k in range(1, 9)], s)
    assert not chk and chk.first_violation == 3 and "ratio" in chk.reason


def test_short_sequence_is_vacuously_valid():
    assert schedule_validate([1, 1, 1], GrowthSchedule())


def test_invalid_schedule_parameters():
    with pytest.raises(ValueError):
        GrowthSchedule(c3=3.0, k_bar=3)
    with pytest.raises(ValueError):
        GrowthSchedule(c1=0.0)


@settings(max_examples=100, deadline=None)
@given(c1=st.floats(0.05, 1.0), c2=st.floats(0.1, 50.0), k_bar=st.integers(2, 6),
       frac=st.floats(0.0, 0.999), N_init=st.integers(1, 100))
def test_generated_schedules_validate(c1, c2, k_bar, frac, N_init):
    s = GrowthSchedule(c1=c1, c2=c2, c3=frac * k_bar, k_bar=k_bar, N_init=N_init, horizon=40)
    try:
        seq = schedule_generate(s)
    except ScheduleError:
        return
    assert schedule_validate(seq, s)
    assert all(b > a for a, b in zip(seq, seq[1:]))


# SAA evaluation


def shift_problem():
    G = linear_fn(lambda xi: np.ones((xi.shape[0], 1, 1)), lambda xi: -xi[:, :1], 1)
    return CompoundProblem(OuterMap(psi_identity(), phi_identity(1)), G, RandomFn.absent(), Box([-5.0], [5.0]))


def test_saa_linear_reduction():
    xi = np.array([[1.0], [2.0], [6.0]])
    assert saa_objective(shift_problem(), xi, xi, np.array([0.5])) == pytest.approx(0.5 - 3.0)


def test_saa_hand_example():
    G = linear_fn(lambda xi: xi[:, :1, None], lambda xi: np.zeros((xi.shape[0], 1)), 1)
    F = linear_fn(lambda xi: np.zeros((xi.shape[0], 1, 1)), lambda xi: -xi[:, :1], 1)
    p = CompoundProblem(OuterMap(psi_identity(), phi_sum_positive(2)), G, F, Box([-5.0], [5.0]))
    v = saa_objective(p, SampleBatch([[1.0], [2.0]]), SampleBatch([[3.0], [5.0]]), np.array([2.0]))
    assert v == 0.0
    v = saa_objective(p, SampleBatch([[1.0], [2.0]]), SampleBatch([[3.0], [5.0]]), np.array([3.0]))
    assert v == pytest.approx(0.5 * (0 + 2.0))


def test_saa_single_sample_and_empty_batch():
    p = shift_problem()
    assert saa_objective(p, np.array([[2.0]]), np.array([[9.0]]), np.array([1.0])) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        saa_objective(p, np.zeros((0, 1)), np.zeros((1, 1)), np.array([1.0]))


def test_rate_experiment_exact_when_deterministic():
    G = linear_fn(lambda xi: np.ones((xi.shape[0], 1, 1)), lambda xi: np.zeros((xi.shape[0], 1)), 1)
    p = CompoundProblem(OuterMap(psi_identity(), phi_identity(1)), G, RandomFn.absent(), Box([-1.0], [1.0]),
                        Gaussian([0.0], [1.0]))
    t = saa_rate_experiment(p, lambda x: float(x[0]), np.array([0.3]), [10, 100], 5, 0)
    assert t.exact and t.slope is None and max(t.mean_abs_error) <= 1e-15


def test_rate_experiment_flags_single_trial_and_needs_two_sizes():
    p, x, theta = gaussian_hinge_instance()
    t = saa_rate_experiment(p, theta, x, [10, 100], 1, 0)
    assert t.high_variance and len(t.mean_abs_error) == 2
    assert t.to_csv().splitlines()[0] == "N,mean_abs_error"
    with pytest.raises(ValueError):
        saa_rate_experiment(p, theta, x, [10], 3, 0)


def test_gaussian_hinge_oracle_value():
    _, x, theta = gaussian_hinge_instance()
    assert theta(x) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
