"""Exact analytic testbed for the accuracy-robustness trade-off.

Binary labels y in {-1,+1}; each of d features equals +eta_i*y with
probability p and -eta_i*y otherwise. Linear sign classifiers are scored
by exhaustive enumeration over all 2^d agreement patterns, which is the
ground-truth oracle here (no sampling). The worst-case l-inf adversary
against a linear classifier shifts every coordinate by the full budget
toward -y*sign(w_i); with a small budget this flips exactly the
low-magnitude features and leaves the large ones intact.

A prediction landing exactly on the decision boundary counts as wrong,
so accuracies are adversary-pessimistic and fully deterministic.
"""

import itertools
import json
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import prng
from .errors import ValidationError

_ENUM_LIMIT = 24  # 2^d patterns; refuse beyond this


@dataclass
class DilemmaSpec:
    p: float = 0.8
    d: int = 7
    eta: Tuple[float, ...] = (0.01, 0.01, 0.01, 0.01, 1.0, 1.0, 1.0)
    epsilon: float = 0.02

    def __post_init__(self):
        if not 0.5 < self.p < 1.0:
            raise ValidationError(f"p must lie in (0.5, 1), got {self.p}")
        if self.d % 2 == 0:
            raise ValidationError(f"d must be odd, got {self.d}")
        if len(self.eta) != self.d:
            raise ValidationError(f"eta has {len(self.eta)} entries, d={self.d}")
        if any(e <= 0 for e in self.eta):
            raise ValidationError("all eta must be strictly positive")
        if self.epsilon < 0:
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon}")


@dataclass
class LinearSignClassifier:
    w: Tuple[float, ...]

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Sign predictions in {-1, +1}; a zero score predicts -1 for +1
        labels and +1 for -1 labels symmetrically, i.e. it never counts
        as correct (handled by the callers comparing y * score > 0)."""
        score = x @ np.asarray(self.w)
        return np.where(score > 0, 1, -1)


def h0(spec: DilemmaSpec) -> LinearSignClassifier:
    """Magnitude-normalized majority vote over all features (Bayes rule)."""
    return LinearSignClassifier(tuple(1.0 / e for e in spec.eta))


def h1(spec: DilemmaSpec) -> LinearSignClassifier:
    """Majority vote over the large-magnitude (robust) features only."""
    w = tuple(0.0 if 2.0 * e <= spec.epsilon else 1.0 / e for e in spec.eta)
    if not any(w):
        raise ValidationError("h1 undefined: no feature survives the budget")
    return LinearSignClassifier(w)


def _enumerate(spec: DilemmaSpec, clf: LinearSignClassifier,
               shift: float) -> float:
    """Expected accuracy under a per-coordinate shift of `shift` toward -y.

    Enumerates all 2^d sign patterns for y=+1; the y=-1 case is its
    exact mirror image, so the average over y equals the y=+1 value.
    """
    if spec.d > _ENUM_LIMIT:
        raise ValidationError(f"enumeration refused for d={spec.d} > {_ENUM_LIMIT}")
    w = np.asarray(clf.w, dtype=np.float64)
    eta = np.asarray(spec.eta, dtype=np.float64)
    # Full-budget shift toward -y on every coordinate is the per-sample
    # worst case for a linear score.
    offset = shift * np.abs(w).sum()
    acc = 0.0
    for signs in itertools.product((1.0, -1.0), repeat=spec.d):
        s = np.asarray(signs)
        weight = np.prod(np.where(s > 0, spec.p, 1.0 - spec.p))
        score = float(w @ (s * eta)) - offset
        if score > 0:
            acc += weight
    return acc


def exact_standard_accuracy(spec: DilemmaSpec, clf: LinearSignClassifier) -> float:
    """Exact expected clean accuracy by exhaustive enumeration."""
    return _enumerate(spec, clf, shift=0.0)


def exact_adversarial_accuracy(spec: DilemmaSpec, clf: LinearSignClassifier) -> float:
    """Exact expected accuracy under the worst-case l-inf adversary."""
    return _enumerate(spec, clf, shift=spec.epsilon)


def sample_dataset(spec: DilemmaSpec, n: int, seed: int = 0
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """n i.i.d. draws: features (n, d) and labels (n,) in {-1, +1}."""
    if n <= 0:
        raise ValidationError("empty sample")
    rng = prng.stream(seed, prng.STREAM_DATA)
    y = rng.choice(np.array([-1, 1]), size=n)
    agree = rng.random((n, spec.d)) < spec.p
    eta = np.asarray(spec.eta)
    x = np.where(agree, eta, -eta) * y[:, None]
    return x, y


def worst_case_shift(spec: DilemmaSpec, clf: LinearSignClassifier,
                     x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Apply the closed-form worst-case perturbation per sample."""
    w = np.asarray(clf.w)
    return x - spec.epsilon * np.sign(w)[None, :] * y[:, None]


def monte_carlo_accuracy(spec: DilemmaSpec, clf: LinearSignClassifier, n: int,
                         seed: int = 0, adversarial: bool = False) -> float:
    """Empirical accuracy on a sampled dataset; cross-checks the oracle."""
    x, y = sample_dataset(spec, n, seed)
    if adversarial:
        x = worst_case_shift(spec, clf, x, y)
    score = x @ np.asarray(clf.w)
    return float((y * score > 0).mean())


def paper_closed_form(spec: DilemmaSpec) -> dict:
    """The cited closed-form accuracy expressions, emitted for comparison.

    These drop the success-probability factors from the binomial terms
    (1 - C(d, q)(1-p)^q with q = minimal misclassifying count), so they
    differ from the exact enumeration; the enumeration is ground truth.
    """
    from math import comb

    q_all = (spec.d + 1) // 2
    robust = [e for e in spec.eta if 2.0 * e > spec.epsilon]
    q_rob = (len(robust) + 1) // 2
    return {
        "h0_standard": 1.0 - comb(spec.d, q_all) * (1.0 - spec.p) ** q_all,
        "h1_standard": 1.0 - comb(len(robust), q_rob) * (1.0 - spec.p) ** q_rob,
    }


def report(spec: DilemmaSpec, n: int = 100_000, seed: int = 0) -> dict:
    """Exact, Monte-Carlo, and closed-form accuracies for h0 and h1."""
    out = {
        "spec": {"p": spec.p, "d": spec.d, "eta": list(spec.eta),
                 "epsilon": spec.epsilon},
        "n": n,
        "closed_form_reference": paper_closed_form(spec),
        "classifiers": {},
    }
    for name, clf in (("h0", h0(spec)), ("h1", h1(spec))):
        out["classifiers"][name] = {
            "exact_standard": exact_standard_accuracy(spec, clf),
            "exact_adversarial": exact_adversarial_accuracy(spec, clf),
            "monte_carlo_standard": monte_carlo_accuracy(spec, clf, n, seed),
            "monte_carlo_adversarial": monte_carlo_accuracy(spec, clf, n, seed,
                                                            adversarial=True),
        }
    return out


def report_json(spec: DilemmaSpec, n: int = 100_000, seed: int = 0) -> str:
    return json.dumps(report(spec, n, seed), indent=2, sort_keys=True)
