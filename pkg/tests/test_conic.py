import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robmono.conic import (ClarabelBackend, ProgramBuilder, ScsBackend, Status, get_backend,
                           hermitian_to_real, smat, svec)

BACKENDS = [ClarabelBackend(), ScsBackend()]
IDS = ["clarabel", "scs"]


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_svec_round_trip_and_inner_product(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    X = X + X.T
    Y = rng.standard_normal((n, n))
    Y = Y + Y.T
    np.testing.assert_allclose(smat(svec(X), n), X, atol=1e-12)
    assert svec(X) @ svec(Y) == pytest.approx(np.trace(X @ Y), abs=1e-9)


@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_hermitian_embedding_spectrum(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    H = A + A.conj().T
    ev = np.linalg.eigvalsh(H)
    ev_real = np.linalg.eigvalsh(hermitian_to_real(H))
    np.testing.assert_allclose(ev_real, np.sort(np.repeat(ev, 2)), atol=1e-9)


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
def test_lp(backend):
    # min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0  -> (1.6, 1.2)
    pb = ProgramBuilder(2)
    pb.c[:] = [-1, -1]
    pb.add("nonneg", [4, 6, 0, 0], [[-1, -2], [-3, -1], [1, 0], [0, 1]])
    res = backend.solve(pb.build())
    assert res.status is Status.OPTIMAL
    np.testing.assert_allclose(res.x, [1.6, 1.2], atol=1e-5)


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
def test_soc(backend):
    # min t  s.t. ||(x - 3, x + 1)|| <= t  -> x = 1, t = 2 sqrt 2
    pb = ProgramBuilder(2)
    pb.c[:] = [0, 1]
    pb.add("soc", [0, -3, 1], [[0, 1], [1, 0], [1, 0]])
    res = backend.solve(pb.build())
    assert res.status is Status.OPTIMAL
    assert res.objective == pytest.approx(2 * np.sqrt(2), abs=1e-5)


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
def test_psd_min_eigenvalue(backend):
    # max t s.t. M - t I >= 0 is lambda_min(M)
    rng = np.random.default_rng(3)
    A = rng.standard_normal((4, 4))
    M = A + A.T
    pb = ProgramBuilder(1)
    pb.c[:] = [-1]
    pb.add_psd(M, -np.eye(4)[None])
    res = backend.solve(pb.build())
    assert res.status is Status.OPTIMAL
    assert res.x[0] == pytest.approx(np.linalg.eigvalsh(M)[0], abs=1e-5)


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
def test_hermitian_psd(backend):
    rng = np.random.default_rng(4)
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    H = A + A.conj().T
    pb = ProgramBuilder(1)
    pb.c[:] = [-1]
    pb.add_hermitian_psd(H, -np.eye(3)[None].astype(complex))
    res = backend.solve(pb.build())
    assert res.x[0] == pytest.approx(np.linalg.eigvalsh(H)[0], abs=1e-5)


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
def test_exp_cone(backend):
    # max x s.t. (x, 1, 2) in K_exp  -> x = log 2
    pb = ProgramBuilder(1)
    pb.c[:] = [-1]
    pb.add("exp", [0, 1, 2], [[1], [0], [0]])
    res = backend.solve(pb.build())
    assert res.status is Status.OPTIMAL
    assert res.x[0] == pytest.approx(np.log(2), abs=1e-5)


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
def test_infeasible(backend):
    pb = ProgramBuilder(1)
    pb.add("nonneg", [-1, -1], [[1], [-1]])  # x >= 1 and x <= -1
    assert backend.solve(pb.build()).status is Status.INFEASIBLE


def test_builder_rejects_bad_sizes():
    pb = ProgramBuilder(2)
    with pytest.raises(ValueError):
        pb.add("psd", np.zeros(4), np.zeros((4, 2)), size=2)
    with pytest.raises(ValueError):
        pb.add("banana", [0], [[0, 0]])


def test_residual_detects_violation():
    pb = ProgramBuilder(1)
    pb.add("nonneg", [1], [[-1]])  # 1 - x >= 0
    prog = pb.build()
    assert prog.residual(np.array([0.5])) == 0
    assert prog.residual(np.array([1.5])) == pytest.approx(0.5)


def test_get_backend():
    assert isinstance(get_backend(None), ClarabelBackend)
    assert isinstance(get_backend("scs"), ScsBackend)
    with pytest.raises(ValueError):
        get_backend("mosek")
