import numpy as np
import pytest

from oracles import topk_bruteforce
from skim import _kernels_py, kernels

BACKENDS = [_kernels_py]
try:
    from skim import _kernels
    BACKENDS.append(_kernels)
except ImportError:
    pass


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_compiled_extension_built():
    # the installed package ships the extension; the fallback exists for source trees without a compiler
    pytest.importorskip("skim._kernels")
    assert len(BACKENDS) == 2


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_topk_matches_bruteforce(impl, dtype, rng):
    for _ in range(100):
        rows, cols = int(rng.integers(1, 5)), int(rng.integers(0, 30))
        scores = rng.integers(-3, 4, size=(rows, cols)).astype(dtype)
        k = int(rng.integers(0, 35))
        got = impl.topk_rows(scores, k)
        for r in range(rows):
            assert got[r].tolist() == topk_bruteforce(scores[r][:, None], np.ones(1), k)


def test_nll_matches_reference(rng):
    logits = rng.normal(0, 3, size=(17, 260))
    targets = rng.integers(0, 260, 17)
    nll, probs = kernels.log_softmax_nll(logits, targets)
    ref = np.log(np.exp(logits).sum(1)) - logits[np.arange(17), targets]
    assert np.allclose(nll, ref, rtol=1e-12)
    assert np.allclose(probs.sum(1), 1.0, atol=1e-12)


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled extension not built")
    py, cy = BACKENDS
    s = rng.normal(size=(64, 300)).astype(np.float32)
    assert np.array_equal(py.topk_rows(s, 32), cy.topk_rows(s, 32))
    assert np.array_equal(py.topk_rows(s.astype(np.float64), 300), cy.topk_rows(s.astype(np.float64), 300))


def test_uniform_logits_exact():
    nll, _ = kernels.log_softmax_nll(np.zeros((3, 260), np.float32), np.array([0, 5, 259]))
    assert np.allclose(nll, np.log(260), rtol=1e-7)
