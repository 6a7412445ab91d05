import os
import subprocess
import sys

import numpy as np
import pytest

from drcme import _backend, _fallback

core = pytest.importorskip("drcme._core")


@pytest.fixture
def pts():
    rng = np.random.default_rng(0)
    return rng.standard_normal((40, 3)), rng.standard_normal((25, 3))


def test_compiled_backend_selected_by_default():
    assert _backend.BACKEND == "cython"


def test_distances_agree(pts):
    A, B = pts
    np.testing.assert_allclose(core.sq_euclidean(A, B), _fallback.sq_euclidean(A, B), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(core.pairwise_distances(A), _fallback.pairwise_distances(A), rtol=1e-14)


@pytest.mark.parametrize("h", [0.3, 1.0, 7.0])
def test_gram_agrees(pts, h):
    A, B = pts
    np.testing.assert_allclose(core.gaussian_gram(A, B, h), _fallback.gaussian_gram(A, B, h), rtol=1e-12, atol=1e-14)


def test_symmetric_gram_agrees(pts):
    A, _ = pts
    G = core.gaussian_gram_sym(A, 0.8)
    np.testing.assert_array_equal(G, G.T)
    np.testing.assert_array_equal(np.diag(G), 1.0)
    np.testing.assert_allclose(G, _fallback.gaussian_gram_sym(A, 0.8), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(G, core.gaussian_gram(A, A, 0.8), rtol=1e-15)


@pytest.mark.parametrize("density", [1.0, 0.5, 0.05, 0.0])
def test_quad_forms_agree(density):
    rng = np.random.default_rng(1)
    M = rng.standard_normal((30, 30))
    Q = M @ M.T
    U = rng.standard_normal((12, 30)) * (rng.random((12, 30)) < density)
    np.testing.assert_allclose(core.quad_forms(Q, U), _fallback.quad_forms(Q, U), rtol=1e-11, atol=1e-11)


def test_dense_quad_forms_use_blas(monkeypatch):
    calls = []
    monkeypatch.setattr(_backend._impl, "quad_forms", lambda Q, U: calls.append(1) or np.zeros(len(U)), raising=False)
    Q = np.eye(50)
    _backend.quad_forms(Q, np.ones((3, 50)))
    assert calls == []
    sparse = np.zeros((3, 50))
    sparse[:, 0] = 1.0
    _backend.quad_forms(Q, sparse)
    assert calls == [1]


def test_wrappers_accept_noncontiguous(pts):
    A, _ = pts
    At = np.asfortranarray(A)
    np.testing.assert_array_equal(_backend.sq_euclidean(At, At[::2]), core.sq_euclidean(A, np.ascontiguousarray(A[::2])))


def test_environment_forces_fallback():
    env = dict(os.environ, DRCME_BACKEND="python")
    res = subprocess.run(
        [sys.executable, "-c", "import drcme; print(drcme.BACKEND)"], env=env, capture_output=True, text=True, check=True
    )
    assert res.stdout.strip() == "python"


def test_statistics_identical_across_backends():
    code = (
        "from drcme.datagen import DgpSpec, generate;"
        "from drcme.permutation import run_permutation_tests;"
        "d = generate(DgpSpec('dgp_effect', n=200, seed=2, beta=1.0));"
        "r = run_permutation_tests(d, ['date', 'dr-date', 'dr-dett'], N=2, m=30, seed=1);"
        "print(repr([(k, v.observed.mmd_squared, v.p_value) for k, v in r.items()]))"
    )
    outs = {}
    for b in ("cython", "python"):
        env = dict(os.environ, DRCME_BACKEND=b)
        outs[b] = eval(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout)
    for (k1, v1, p1), (k2, v2, p2) in zip(outs["cython"], outs["python"]):
        assert k1 == k2 and p1 == p2 and v1 == pytest.approx(v2, rel=1e-9)
