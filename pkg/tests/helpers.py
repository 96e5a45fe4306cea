"""Model variants built from the bundled fixtures."""
import copy

import numpy as np

from avgraph.chain import validate_model
from avgraph.config import family_from_dict, family_to_dict, load_fixture


def variant(name, edit, validate=True):
    doc = copy.deepcopy(family_to_dict(load_fixture(name)))
    edit(doc)
    model = family_from_dict(doc)
    return validate_model(model) if validate else model


def diffusive(name="m2", drift=None):
    """kappa = 1 copy of a fixture; ``drift`` replaces every drift table by a constant."""
    def edit(doc):
        doc["meta"]["kappa"] = 1
        if drift is not None:
            doc["meta"]["vinf"] = float(drift)
            for v in doc["drifts"].values():
                v["table"] = [[0.0, float(drift)]]
    return variant(name, edit)


def power_iteration(Q, tol=1e-15, max_iter=10**7):
    """Stationary vector by iterating the uniformized transition matrix."""
    n = Q.shape[0]
    lam = 1.01 * np.max(-np.diag(Q))
    P = np.eye(n) + Q / lam
    mu = np.full(n, 1.0 / n)
    # square the matrix to reach long horizons quickly
    for _ in range(200):
        nxt = mu @ P
        if np.abs(nxt - mu).max() < tol:
            return nxt / nxt.sum()
        mu = nxt
        P = P @ P
        P /= P.sum(axis=1, keepdims=True)
    return mu / mu.sum()
