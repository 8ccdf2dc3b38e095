import numpy as np
import pytest

from semicomp import Dataset, SimulationConfig, simulate_setting


def aalen_johansen(records, times, tie_shift=1e-9):
    """Brute-force Aalen-Johansen state occupation for the illness-death model.

    ``records`` are (t_obs, r_obs, delta_t, delta_r) tuples; returns
    P(T <= t) = p1(t) + p3(t) at each time in ``times``. Written with plain
    loops and a 4x4 transition matrix, independent of the package code.
    """
    subj = []
    for t, r, dt, dr in records:
        if dr and r >= t:
            r = t - tie_shift
        subj.append((float(t), float(r), int(dt), int(dr)))
    jumps = set()
    for t, r, dt, dr in subj:
        if dr:
            jumps.add(r)
            if dt:
                jumps.add(t)
        elif dt:
            jumps.add(t)
    jumps = sorted(jumps)
    p = np.array([1.0, 0.0, 0.0, 0.0])
    path = []
    for u in jumps:
        at0 = sum(1 for t, r, dt, dr in subj if (r if dr else t) >= u)
        at2 = sum(1 for t, r, dt, dr in subj if dr and r < u <= t)
        n01 = sum(1 for t, r, dt, dr in subj if not dr and dt and t == u)
        n02 = sum(1 for t, r, dt, dr in subj if dr and r == u)
        n23 = sum(1 for t, r, dt, dr in subj if dr and dt and t == u)
        P = np.eye(4)
        if at0:
            P[0, 1] = n01 / at0
            P[0, 2] = n02 / at0
            P[0, 0] = 1 - P[0, 1] - P[0, 2]
        if at2:
            P[2, 3] = n23 / at2
            P[2, 2] = 1 - P[2, 3]
        p = p @ P
        path.append((u, p[1] + p[3]))
    out = []
    for t in times:
        val = 0.0
        for u, f in path:
            if u <= t:
                val = f
        out.append(val)
    return np.array(out)


def make_dataset(rows, covariates=None, **kwargs):
    """Dataset from (arm, t_obs, r_obs, delta_t, delta_r) rows."""
    rows = list(rows)
    n = len(rows)
    cov = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=float).reshape(n, -1)
    return Dataset(
        ids=[f"s{i}" for i in range(n)],
        arm=[r[0] for r in rows],
        t_obs=[r[1] for r in rows],
        r_obs=[r[2] for r in rows],
        delta_t=[r[3] for r in rows],
        delta_r=[r[4] for r in rows],
        covariates=cov,
        **kwargs,
    )


@pytest.fixture(scope="session")
def setting1_500():
    return simulate_setting(SimulationConfig(setting_id=1, n=500, seed=11))


@pytest.fixture(scope="session")
def setting1_large():
    return simulate_setting(SimulationConfig(setting_id=1, n=10_000, seed=12))


@pytest.fixture
def small_uncensored():
    """Twelve single-arm subjects, no censoring, one R == T tie."""
    rows = [
        (1, 0.8, 0.8, 1, 0), (1, 1.3, 0.4, 1, 1), (1, 2.0, 2.0, 1, 1), (1, 2.6, 1.1, 1, 1),
        (1, 3.1, 3.1, 1, 0), (1, 3.5, 1.9, 1, 1), (1, 4.2, 4.2, 1, 0), (1, 4.4, 2.7, 1, 1),
        (1, 5.0, 5.0, 1, 0), (1, 5.9, 3.3, 1, 1), (1, 6.3, 6.3, 1, 0), (1, 7.7, 5.2, 1, 1),
    ]
    return make_dataset(rows)
