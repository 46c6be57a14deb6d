"""Shared synthetic-data builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from sctubes.model_core import GroupData, GroupedDataset, fit_models


def make_group(rng, label, n, coef, noise=1.0, p=None, chol=None, x_range=(0.0, 10.0)):
    """One synthetic group: uniform covariates, normal errors.

    ``coef`` is the true (p+1) x m coefficient matrix; ``chol`` (m x m,
    lower) correlates the errors when given.
    """
    coef = np.asarray(coef, dtype=float)
    if p is None:
        p = coef.shape[0] - 1
    m = coef.shape[1]
    x = rng.uniform(x_range[0], x_range[1], size=(n, p))
    design = np.column_stack([np.ones(n), x])
    errors = rng.standard_normal((n, m)) * noise
    if chol is not None:
        errors = errors @ np.asarray(chol).T
    return GroupData(label=label, design=design, response=design @ coef + errors)


def make_dataset(rng, sizes, coefs, noise=1.0, chol=None, x_range=(0.0, 10.0)):
    labels = [chr(ord("A") + i) for i in range(len(sizes))]
    groups = tuple(
        make_group(rng, lab, n, c, noise=noise, chol=chol, x_range=x_range)
        for lab, n, c in zip(labels, sizes, coefs))
    return GroupedDataset(groups=groups)


@pytest.fixture
def two_group_fit():
    """k=2, p=1, m=2, nu=244: the workhorse configuration."""
    rng = np.random.default_rng(20240817)
    coef = np.array([[1.0, 2.0], [0.5, -0.3]])
    data = make_dataset(rng, (87, 161), (coef, coef + 0.2))
    return fit_models(data)


@pytest.fixture
def three_group_fit():
    """k=3, p=1, m=2, nu=242."""
    rng = np.random.default_rng(77)
    coef = np.array([[1.0, 2.0], [0.5, -0.3]])
    data = make_dataset(rng, (87, 80, 81), (coef, coef, coef + 0.1))
    return fit_models(data)
