"""Smoke test for the `polaron` extension module.

Build and install first, e.g. `maturin develop --release -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py` (or `pytest python/`).
"""

import json
import math

import polaron


def test_silbey_harris_and_ladder():
    bath = polaron.Bath.discretize(alpha=0.5, lam=1.5, num_modes=24)
    delta = 0.05
    delta_r, f = polaron.sh_solve(bath, delta)
    assert 0.0 < delta_r < delta
    assert len(f) == bath.num_modes

    reports = polaron.solve_ladder(bath, delta, n_max=3)
    assert [r.state.num_polarons for r in reports] == [1, 2, 3]
    energies = [r.energy for r in reports]
    assert energies[0] >= energies[1] >= energies[2]
    assert all(r.converged for r in reports)

    c1 = polaron.coherence(reports[0].state)
    assert abs(c1 + delta_r / delta) < 1e-6 * delta_r / delta
    c3 = polaron.coherence(reports[2].state)
    assert -1.0 <= c3 < c1 < 0.0


def test_gradient_matches_finite_differences():
    bath = polaron.Bath.discretize(alpha=0.3, lam=2.0, num_modes=6)
    state = polaron.State([1.0, -0.3], [[0.2, 0.1, 0.05, 0.0, -0.1, 0.3], [0.1, -0.2, 0.0, 0.4, 0.2, -0.1]])
    delta = 0.2
    _, grad_f = polaron.gradient(state, bath, delta)
    h = 1e-6
    rows = state.rows
    for k in range(bath.num_modes):
        up = [r[:] for r in rows]
        dn = [r[:] for r in rows]
        up[1][k] += h
        dn[1][k] -= h
        e_up = polaron.energy(polaron.State(state.weights, up), bath, delta)
        e_dn = polaron.energy(polaron.State(state.weights, dn), bath, delta)
        assert abs((e_up - e_dn) / (2 * h) - grad_f[1][k]) < 1e-7


def test_wigner_and_moments():
    bath = polaron.Bath.discretize(alpha=0.2, lam=2.0, num_modes=8)
    state = polaron.sh_solve(bath, 0.1)[1]
    st = polaron.State([1.0], [state])
    x = polaron.symmetric_grid(2.0, 201)
    diag = polaron.wigner_diag(st, bath, 0, x)
    series = polaron.wigner_from_moments(st, bath, 0, x, m_max=10, channel="spin_up")
    assert max(abs(0.5 * s - d) for s, d in zip(series, diag)) < 1e-6
    off = polaron.wigner_offdiag(st, bath, 0, x)
    assert all(a == b for a, b in zip(off, reversed(off)))
    moments = polaron.mode_moments(st, bath, 0, m_max=3)
    assert abs(moments[0][0] - 1.0) < 1e-14


def test_oracles():
    assert abs(polaron.toulouse_coherence(0.01, 0.0) - 0.08452) < 5e-6
    dr = 2.7e-4
    assert abs(polaron.onepolaron_thermal(dr, 0.01, dr / 2) - dr / 0.01 * math.tanh(1.0)) < 1e-12
    e, c = polaron.ed_ground([0.5], [0.0], 0.2, fock_cutoff=8)
    assert abs(e + 0.1) < 1e-10 and abs(c + 1.0) < 1e-9


def test_errors_and_serialization():
    try:
        polaron.toulouse_coherence(0.01, -1.0)
    except polaron.DomainError:
        pass
    else:
        raise AssertionError("negative temperature accepted")
    try:
        polaron.Bath.discretize(alpha=0.5, lam=0.9, num_modes=4)
    except ValueError:
        pass
    else:
        raise AssertionError("lambda <= 1 accepted")

    bath = polaron.Bath.discretize(alpha=0.5, lam=2.0, num_modes=4)
    again = polaron.Bath.from_json(bath.to_json())
    assert again.omegas == bath.omegas and again.couplings == bath.couplings
    state = polaron.State([1.0, 0.5], [[0.1] * 4, [-0.1] * 4])
    assert json.loads(state.to_json())["C"] == [1.0, 0.5]
    assert polaron.State.from_json(state.to_json()).rows == state.rows


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok  {name}")
