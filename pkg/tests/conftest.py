import numpy as np
import pytest

from enmkl.kernels import KernelSpec, block_from_matrix, gram
from enmkl.solver import MklProblem

# acceptance id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(k, ok, detail):
    ACCEPTANCE[k] = (bool(ok), detail)
    print(f"ACCEPTANCE {k}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_problem(seed, n=30, M=3, p=4, width=1.0, noise=0.1):
    """Gaussian blocks on overlapping coordinate pairs with a random response."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(size=(n, p))
    blocks = []
    for m in range(M):
        mask = (m % p, (m + 1) % p)
        blocks.append(gram(KernelSpec("gaussian", width=width, coordinate_mask=mask), xs, index=m))
    y = np.sin(3 * xs[:, 0]) + xs[:, 1] ** 2 + noise * rng.standard_normal(n)
    return MklProblem(y=y, blocks=tuple(blocks), xs=xs)


def linear_blocks(seed, n=20, dims=(2, 3, 2), shared=None):
    """Linear-kernel blocks on separate feature groups; returns (blocks, features)."""
    rng = np.random.default_rng(seed)
    feats = [rng.standard_normal((n, k)) for k in dims]
    if shared is not None:
        for f in feats[1:]:
            f[:, 0] += shared * feats[0][:, 0]
    blocks = [block_from_matrix(f @ f.T, index=m) for m, f in enumerate(feats)]
    # undo the max-diagonal normalization so features match the blocks exactly
    feats = [f * np.sqrt(b.normalization) for f, b in zip(feats, blocks)]
    return blocks, feats


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
