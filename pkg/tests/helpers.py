"""Small data generators shared by the tests."""
import numpy as np

from competing_ate.dataset import Dataset


def make_data(seed=0, n=200, d=2, censor=True, ties=False, effect=-0.3):
    """Exponential competing risks with ``d`` normal covariates and confounded treatment."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    lp = X[:, 0] * 0.5 if d else np.zeros(n)
    A = rng.binomial(1, 1 / (1 + np.exp(-lp)))
    if A.min() == A.max():
        A[0] = 1 - A[0]
    h1 = 0.1 * np.exp((0.4 * X[:, 0] if d else 0) + effect * A)
    h2 = 0.05 * np.exp(0.3 * X[:, 1] if d > 1 else 0)
    T1 = rng.exponential(1 / h1)
    T2 = rng.exponential(1 / h2)
    C = rng.exponential(1 / 0.06, n) if censor else np.full(n, np.inf)
    T = np.minimum(np.minimum(T1, T2), C)
    event = np.where(C < np.minimum(T1, T2), 0, np.where(T1 <= T2, 1, 2))
    if ties:
        T = np.ceil(T * 2) / 2
    names = tuple(f"X{j + 1}" for j in range(d))
    return Dataset(T, event, A, X, names)


ACCEPTANCE = []


def report(number, title, passed, detail=""):
    """Record and print one acceptance line; the terminal summary repeats them."""
    line = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE.append((number, line))
    print(line)
    return passed
