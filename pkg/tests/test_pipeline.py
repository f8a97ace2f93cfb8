import math

import numpy as np
import pytest

from rilab.errors import PreconditionError
from rilab.lattice import CompactSetSpec
from rilab.pipeline import bootstrap_median_diff, fit_u_bar, profile_distance_pipeline

A = CompactSetSpec.from_dict({"kind": "box", "lower": [-1, -1, -1], "upper": [1, 1, 1]})


def test_fit_u_bar_recovers_parameter(rng):
    h = rng.uniform(0, 1, 500)
    u, ub = 2.0, 5.5
    field = (math.sqrt(u) + (math.sqrt(ub) - math.sqrt(u)) * h) ** 2
    assert fit_u_bar(field, h, u) == pytest.approx(ub, rel=1e-6)
    noisy = field + rng.normal(0, 0.05, field.shape)
    assert fit_u_bar(noisy, h, u) == pytest.approx(ub, rel=2e-2)


def test_bootstrap_se_scales():
    rng = np.random.default_rng(3)
    a, b = rng.normal(0, 1, 400), rng.normal(0, 1, 400)
    se = bootstrap_median_diff(a, b, 500, seed=1)
    # sd of a median difference for n = 400 normals is about sqrt(2 pi / (2 * 400))
    assert 0.5 * math.sqrt(math.pi / 400) < se < 2 * math.sqrt(math.pi / 400)
    assert se == bootstrap_median_diff(a, b, 500, seed=1)


def test_rejects_R_below_M():
    with pytest.raises(PreconditionError):
        profile_distance_pipeline(A, 4, 2.0, 1.0, 1.0)


@pytest.fixture(scope="module")
def small_run():
    return profile_distance_pipeline(A, 4, 2.0, 2.0, 3.0, u_bar=6.0, max_replicas=120, min_hits=1,
                                     seed=2, k=5, N_ref=12, n_boot=200)


def test_pipeline_rows(small_run):
    res = small_run
    assert not res.u_bar_fitted and res.u_bar == 6.0
    assert len(res.rows) == res.summary["replicas"]
    assert sum(r["occurred"] for r in res.rows) == res.summary["hits"]
    assert all(r["d_R"] >= abs(r["mass_gap"]) - 1e-9 for r in res.rows)
    assert res.summary["self_distance"] == pytest.approx(0.0, abs=1e-8)
    halves = {r["half"] for r in res.rows}
    assert halves == {"calibration", "evaluation"}


def test_pipeline_is_reproducible(small_run):
    again = profile_distance_pipeline(A, 4, 2.0, 2.0, 3.0, u_bar=6.0, max_replicas=120, min_hits=1,
                                      seed=2, k=5, N_ref=12, n_boot=200)
    assert [r["d_R"] for r in again.rows] == [r["d_R"] for r in small_run.rows]
