import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def test_pearson_examples():
    from img2rna.stats import pearson

    assert pearson([1, 2, 3, 4], [2, 4, 6, 8]) == 1.0
    assert pearson([1, 2, 3], [6, 4, 2]) == -1.0
    assert pearson([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8, abs=1e-12)


def test_pearson_zero_variance_carries_gene_id():
    from img2rna.stats import pearson
    from img2rna.exceptions import UndefinedCorrelationError

    with pytest.raises(UndefinedCorrelationError) as e:
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], gene_id="G0042")
    assert e.value.gene_id == "G0042"
    assert "G0042" in str(e.value)


def test_pearson_properties(rng):
    from img2rna.stats import pearson

    for _ in range(200):
        n = int(rng.integers(2, 1000))
        x, y = rng.normal(size=n), rng.normal(size=n)
        r = pearson(x, y)
        assert pearson(x, x) == pytest.approx(1.0, abs=1e-12)
        a, b = rng.normal() * 10, rng.normal()
        assert pearson(a * x + b, y) == pytest.approx(np.sign(a) * r, abs=1e-12)

        # Direct formula oracle
        dx, dy = x - x.mean(), y - y.mean()
        oracle = (dx @ dy) / np.sqrt((dx @ dx) * (dy @ dy))
        assert r == pytest.approx(oracle, abs=1e-12)
        assert -1.0 <= r <= 1.0


def test_pearson_pvalue_examples():
    from img2rna.stats import pearson_pvalue
    from img2rna.exceptions import InputError

    assert pearson_pvalue(0.0, 5) == 1.0
    assert pearson_pvalue(0.6, 12) == pytest.approx(0.0392, abs=1e-3)
    assert pearson_pvalue(1.0, 10) == 0.0
    assert pearson_pvalue(-1.0, 10) == 0.0
    with pytest.raises(InputError):
        pearson_pvalue(0.5, 2)


def test_pearson_pvalue_matches_independent_t_oracle():
    from scipy import stats
    from img2rna.stats import pearson_pvalue

    # scipy's own Pearson test uses the exact beta distribution of r
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0])
    y = np.array([2.0, 1.0, 4.0, 3.0, 7.0, 5.0, 6.0, 9.0, 8.0, 12.0, 10.0, 4.0])
    r, p = stats.pearsonr(x, y)
    assert pearson_pvalue(r, 12) == pytest.approx(p, abs=1e-9)


def test_pearson_pvalue_monotone_in_abs_r():
    from img2rna.stats import pearson_pvalue

    grid = np.linspace(0.0, 0.99, 100)
    pvalues = [pearson_pvalue(r, 20) for r in grid]
    assert all(a > b for a, b in zip(pvalues, pvalues[1:]))
    assert all(pearson_pvalue(-r, 20) == p for r, p in zip(grid, pvalues))


def test_permutation_pvalue(rng):
    from img2rna.stats import permutation_pvalue

    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    p_perfect = permutation_pvalue(x, 2 * x, 2000, np.random.default_rng(0))
    # Only the identity and the reversal reach |r| = 1: about 2 / 720
    assert p_perfect < 0.01

    noise = rng.normal(size=6)
    p_a = permutation_pvalue(x, noise, 500, np.random.default_rng(1))
    p_b = permutation_pvalue(x, noise, 500, np.random.default_rng(1))
    assert p_a == p_b
    assert 0.0 < p_a <= 1.0


def test_holm_sidak_examples():
    from img2rna.stats import holm_sidak, holm_sidak_thresholds

    assert list(holm_sidak([0.03], 0.05)) == [True]
    assert np.allclose(holm_sidak_thresholds(4, 0.05),
                       [0.012741, 0.016952, 0.025321, 0.05], atol=1e-6)
    assert list(holm_sidak([0.01, 0.02, 0.03, 0.2], 0.05)) == [True, False, False, False]
    # Flags come back in input order
    assert list(holm_sidak([0.2, 0.03, 0.01, 0.02], 0.05)) == [False, False, True, False]
    assert not holm_sidak([1.0] * 10, 0.05).any()


def _enumerated_holm_sidak(p, alpha):
    order = sorted(range(len(p)), key=lambda i: (p[i], i))
    m = len(p)
    reject = [False] * m
    for rank, i in enumerate(order, start=1):
        if p[i] <= 1.0 - (1.0 - alpha) ** (1.0 / (m - rank + 1)):
            reject[i] = True
        else:
            break
    return reject


def test_holm_sidak_matches_enumeration_and_statsmodels(rng):
    from statsmodels.stats.multitest import multipletests
    from img2rna.stats import holm_sidak, holm_sidak_adjust

    for _ in range(1000):
        m = int(rng.integers(1, 51))
        p = rng.uniform(0, 1, size=m) ** rng.uniform(1, 6)
        alpha = float(rng.choice([0.01, 0.05, 0.1]))
        flags = holm_sidak(p, alpha)
        assert list(flags) == _enumerated_holm_sidak(list(p), alpha)

        reject, adjusted, _, _ = multipletests(p, alpha=alpha, method="holm-sidak")
        assert list(flags) == list(reject)
        assert np.allclose(holm_sidak_adjust(p), adjusted, rtol=0, atol=1e-12)


def test_holm_sidak_superset_of_holm_bonferroni_and_monotone(rng):
    from img2rna.stats import holm_bonferroni, holm_sidak

    for _ in range(300):
        m = int(rng.integers(1, 51))
        p = rng.uniform(0, 0.2, size=m)
        hs = holm_sidak(p, 0.05)
        hb = holm_bonferroni(p, 0.05)
        assert np.all(hs[hb])

        # Decreasing any p-value never shrinks the rejection set
        lowered = p.copy()
        i = int(rng.integers(m))
        lowered[i] *= rng.uniform(0, 1)
        assert np.all(holm_sidak(lowered, 0.05)[hs])


def test_holm_sidak_input_checks():
    from img2rna.stats import holm_sidak
    from img2rna.exceptions import InputError

    with pytest.raises(InputError):
        holm_sidak([0.5, 1.2], 0.05)
    with pytest.raises(InputError):
        holm_sidak([0.5], 0.0)
