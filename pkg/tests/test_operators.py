import numpy as np
import pytest
from conftest import linear_blocks
from oracles import angle_rho, cca_rho, dense_irrepresentable, feature_irrepresentable, gevp_kappa

from enmkl.errors import InvalidInputError
from enmkl.harness import GeneratorConfig, gen_problem
from enmkl.kernels import KernelSpec, block_from_matrix, gram
from enmkl.operators import (
    cov_apply,
    incoherence,
    irrepresentable_score,
    kappa_min,
    resolvent_solve,
    rho,
)
from enmkl.solver import MklProblem, RegPenalty


def test_cov_apply_examples():
    b = block_from_matrix(np.eye(2))
    np.testing.assert_allclose(cov_apply([b], {0: np.array([2.0, 4.0])}, 0), [1.0, 2.0])
    np.testing.assert_array_equal(cov_apply([b], {0: np.zeros(2)}, 0), 0.0)
    two = cov_apply([b, b], {0: np.array([2.0, 4.0]), 1: np.array([2.0, 4.0])}, 0)
    np.testing.assert_allclose(two, [2.0, 4.0])


def test_cov_apply_dimension_check():
    b = block_from_matrix(np.eye(2))
    with pytest.raises(InvalidInputError):
        cov_apply([b], {0: np.ones(3)}, 0)
    with pytest.raises(InvalidInputError):
        cov_apply([b], {0: np.ones(2)}, 4)


def test_cov_apply_symmetry():
    blocks, _ = linear_blocks(1, n=15)
    rng = np.random.default_rng(2)
    f, g = rng.standard_normal(15), rng.standard_normal(15)
    # <f_0, S_01 g_1> = <g_1, S_10 f_0> in H-inner products
    lhs = f @ blocks[0].matrix @ cov_apply(blocks, {1: g}, 0)
    rhs = g @ blocks[1].matrix @ cov_apply(blocks, {0: f}, 1)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_resolvent_examples():
    b = block_from_matrix(np.eye(2))
    out = resolvent_solve([b], [0], 1.0, {0: np.array([2.0, 2.0])})
    np.testing.assert_allclose(out[0], [4 / 3, 4 / 3], rtol=1e-14)
    z = block_from_matrix(np.zeros((3, 3)))
    out = resolvent_solve([z, z], [0, 1], 0.5, {0: np.ones(3), 1: 2 * np.ones(3)})
    np.testing.assert_allclose(out[1], 4 * np.ones(3))
    assert np.all(resolvent_solve([b], [0], 1.0, {})[0] == 0.0)
    with pytest.raises(InvalidInputError):
        resolvent_solve([b], [0], 0.0, {0: np.ones(2)})


def test_resolvent_residual_and_round_trip():
    blocks, _ = linear_blocks(3, n=18, dims=(3, 2, 4))
    rng = np.random.default_rng(4)
    idx = [0, 2]
    g = {m: rng.standard_normal(18) for m in idx}
    lam2 = 0.3
    c = resolvent_solve(blocks, idx, lam2, g)
    total = sum(blocks[m].matrix @ c[m] for m in idx)
    for m in idx:
        assert np.linalg.norm(lam2 * c[m] + total / 18 - g[m]) <= 1e-10
    # applying (S_II + lambda2) to the solution gives back the right-hand side
    back = {m: lam2 * c[m] + cov_apply(blocks, c, m) for m in idx}
    for m in idx:
        np.testing.assert_allclose(back[m], g[m], atol=1e-8)


def _linear_problem(seed, n=20, dims=(2, 3, 2, 2), active=(0, 1), shared=None):
    blocks, feats = linear_blocks(seed, n=n, dims=dims, shared=shared)
    rng = np.random.default_rng(seed + 100)
    truth = [rng.standard_normal(n) if m in active else np.zeros(n) for m in range(len(blocks))]
    prob = MklProblem(y=np.zeros(n), blocks=tuple(blocks), truth=tuple(truth))
    return prob, feats, truth


@pytest.mark.parametrize("seed", range(5))
def test_irrepresentable_matches_dense_and_feature_oracles(seed):
    prob, feats, truth = _linear_problem(seed, shared=0.7)
    pen = RegPenalty(0.2, 0.05)
    got = irrepresentable_score(prob, (0, 1), pen)
    mats = [b.matrix for b in prob.blocks]
    dense = dense_irrepresentable(mats, truth, (0, 1), 0.2, 0.05)
    feat = feature_irrepresentable(feats, truth, (0, 1), 0.2, 0.05)
    for m in (2, 3):
        assert got.per_inactive[m] == pytest.approx(dense[m], abs=1e-8)
        assert got.per_inactive[m] == pytest.approx(feat[m], abs=1e-8)
    assert got.max_score == max(got.per_inactive.values())
    assert got.condition_elastic_ok == (got.max_score < 1)


def test_irrepresentable_zero_when_exactly_orthogonal():
    n = 8
    k1, k2 = np.zeros((n, n)), np.zeros((n, n))
    k1[:4, :4] = np.eye(4) * 0.5
    k2[4:, 4:] = np.eye(4) * 0.5
    blocks = (block_from_matrix(k1, 0), block_from_matrix(k2, 1))
    truth = (np.ones(n), np.zeros(n))
    prob = MklProblem(y=np.zeros(n), blocks=blocks, truth=truth)
    assert irrepresentable_score(prob, (0,), RegPenalty(0.1, 0.1)).per_inactive[1] == 0.0


def test_irrepresentable_shrinks_on_independent_blocks():
    # population score is 0; the sample score decays with n
    meds = []
    for n in (125, 250, 500):
        vals = [
            irrepresentable_score(
                gen_problem(GeneratorConfig(M=4, d=2, n_train=n, n_test=5, seed=s)).problem,
                (0, 1),
                RegPenalty(0.1, 0.01),
            ).max_score
            for s in range(4)
        ]
        meds.append(np.median(vals))
    assert meds[0] > meds[1] > meds[2]
    assert meds[2] < 0.25


def test_irrepresentable_duplicate_tends_to_one():
    rng = np.random.default_rng(5)
    xs = rng.uniform(size=(30, 2))
    b = gram(KernelSpec("gaussian", width=0.5), xs, 0)
    dup = gram(KernelSpec("gaussian", width=0.5), xs, 1)
    truth = (rng.standard_normal(30), np.zeros(30))
    prob = MklProblem(y=np.zeros(30), blocks=(b, dup), truth=truth)
    norm = np.sqrt(truth[0] @ b.matrix @ truth[0])
    scores = []
    for lam2 in (1e-3, 1e-5, 1e-7):
        lam1 = np.sqrt(lam2)
        s = irrepresentable_score(prob, (0,), RegPenalty(lam1, lam2)).per_inactive[1]
        # contraction bound: |S (S + lam2)^-1| <= 1
        assert s <= 1.0 + 2 * lam2 / lam1 * norm + 1e-9
        scores.append(s)
    assert abs(scores[-1] - 1.0) < abs(scores[0] - 1.0)
    assert scores[-1] == pytest.approx(1.0, abs=1e-2)


@pytest.mark.parametrize("seed", range(10))
def test_irrepresentable_grows_with_ratio(seed):
    prob, _, _ = _linear_problem(seed, shared=0.5)
    lo = irrepresentable_score(prob, (0, 1), RegPenalty(0.2, 0.05))
    hi = irrepresentable_score(prob, (0, 1), RegPenalty(0.1, 0.05))
    for m, v in lo.per_inactive.items():
        if v > 0:
            assert hi.per_inactive[m] > v


def test_irrepresentable_errors():
    prob, _, _ = _linear_problem(0)
    with pytest.raises(InvalidInputError):
        irrepresentable_score(prob, (0, 2), RegPenalty(0.1, 0.1))
    with pytest.raises(InvalidInputError):
        irrepresentable_score(prob, (0,), RegPenalty(0.1, 0.0))
    bare = MklProblem(y=prob.y, blocks=prob.blocks)
    with pytest.raises(InvalidInputError):
        irrepresentable_score(bare, (0,), RegPenalty(0.1, 0.1))


def test_l1_variant_is_reported():
    prob, _, truth = _linear_problem(3, shared=0.5)
    got = irrepresentable_score(prob, (0, 1), RegPenalty(0.2, 0.05), l1_variant=True)
    mats = [b.matrix for b in prob.blocks]
    # lambda2 = 1e-8 and no ratio term: the dense oracle with lam2/lam1 -> 0
    dense = dense_irrepresentable(mats, truth, (0, 1), 1e30, 1e-8)
    for m in (2, 3):
        assert got.condition_l1[m] == pytest.approx(dense[m], rel=1e-6)


# -------------------------------------------------------------- kappa, rho


def test_kappa_trivial_cases():
    blocks, _ = linear_blocks(0, n=12, dims=(3, 2))
    assert kappa_min(blocks, [0])[0] == pytest.approx(1.0)
    dup = [blocks[0], block_from_matrix(blocks[0].matrix, 1)]
    assert kappa_min(dup, [0, 1])[0] <= 1e-8
    n = 8
    k1, k2 = np.zeros((n, n)), np.zeros((n, n))
    k1[:4, :4] = np.eye(4)
    k2[4:, 4:] = np.eye(4)
    assert kappa_min([block_from_matrix(k1), block_from_matrix(k2)], [0, 1])[0] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_kappa_matches_gevp(seed):
    blocks, _ = linear_blocks(seed, n=20, dims=(2, 3, 2), shared=0.8)
    value, argmin = kappa_min(blocks, [0, 1, 2])
    assert value == pytest.approx(gevp_kappa([b.matrix for b in blocks]), abs=1e-8)
    # the returned minimizer attains the value
    fs = [blocks[m].matrix @ argmin[m] for m in (0, 1, 2)]
    ratio = np.sum(np.sum(fs, axis=0) ** 2) / sum(f @ f for f in fs)
    assert ratio == pytest.approx(value, abs=1e-8)


def test_kappa_polynomial_blocks_match_gevp():
    rng = np.random.default_rng(8)
    xs = rng.uniform(size=(20, 3))
    blocks = [
        gram(KernelSpec("polynomial", degree=2, coordinate_mask=(0, 1)), xs, 0),
        gram(KernelSpec("polynomial", degree=2, coordinate_mask=(1, 2)), xs, 1),
    ]
    assert kappa_min(blocks, [0, 1])[0] == pytest.approx(gevp_kappa([b.matrix for b in blocks]), abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_rho_matches_cca_and_angles(seed):
    blocks, feats = linear_blocks(seed, n=20, dims=(2, 3, 2, 2), shared=0.6)
    got = rho(blocks, [0, 2])
    assert got == pytest.approx(cca_rho(np.hstack([feats[0], feats[2]]), np.hstack([feats[1], feats[3]])), abs=1e-8)
    mats = [b.matrix for b in blocks]
    assert got == pytest.approx(angle_rho([mats[0], mats[2]], [mats[1], mats[3]]), abs=1e-8)


def test_rho_extremes_and_errors():
    blocks, _ = linear_blocks(0, n=12, dims=(3, 2))
    dup = [blocks[0], block_from_matrix(blocks[0].matrix, 1)]
    assert rho(dup, [0]) >= 1 - 1e-8
    n = 8
    k1, k2 = np.zeros((n, n)), np.zeros((n, n))
    k1[:4, :4] = np.eye(4)
    k2[4:, 4:] = np.eye(4)
    assert rho([block_from_matrix(k1), block_from_matrix(k2)], [0]) <= 1e-8
    with pytest.raises(InvalidInputError):
        rho(dup, [0, 1])
    with pytest.raises(InvalidInputError):
        kappa_min(dup, [])


def test_appending_duplicate_moves_constants_the_right_way():
    blocks, _ = linear_blocks(2, n=20, dims=(2, 3, 2), shared=0.5)
    base = incoherence(blocks, [0, 1])
    more = incoherence(blocks + [block_from_matrix(blocks[0].matrix, 3)], [0, 1])
    assert more.rho >= base.rho - 1e-12
    assert more.rho >= 1 - 1e-8
    assert 0 <= base.kappa_min <= 1 and 0 <= base.rho <= 1
    assert base.generalized_incoherence == pytest.approx((1 - base.rho**2) * base.kappa_min)
    assert incoherence(blocks, [0, 1, 2]).rho == 0.0
    # growing I can only lower kappa
    assert kappa_min(blocks, [0, 1, 2])[0] <= kappa_min(blocks, [0, 1])[0] + 1e-12
