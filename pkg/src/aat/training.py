"""Loss assembly and the SGD training loop.

Four loss terms compose the training objectives:

    st   clean cross-entropy on all three ways
    as   asymmetric supervision on standard-way adversarial examples:
         robust way keeps the true label, non-robust way gets the
         model's own (wrong) prediction; only misclassified samples
         contribute
    ar   robust optimization of the robust way
    an   pseudo-label supervision of the non-robust way on its own
         adversarial examples, misclassified samples only

st alone is standard training; st+as is AAT; all four is AAT++.
"""

import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .attack import AttackConfig, pgd, pseudo_label
from .errors import NumericError, ValidationError
from .model import ThreeWayModel
from .tensor import Tensor, add, backward, cross_entropy, scale

TERM_NAMES = ("st", "as", "ar", "an")


@dataclass
class LossConfig:
    use_st: bool = True
    use_as: bool = False
    use_ar: bool = False
    use_an: bool = False
    # Algorithm-faithful default: asymmetric terms average over the
    # misclassified samples. Switch on to divide by batch size instead.
    batch_denominator: bool = False

    def __post_init__(self):
        if not (self.use_st or self.use_as or self.use_ar or self.use_an):
            raise ValidationError("at least one loss term must be enabled")

    @staticmethod
    def st_only() -> "LossConfig":
        return LossConfig(use_st=True)

    @staticmethod
    def aat() -> "LossConfig":
        return LossConfig(use_st=True, use_as=True)

    @staticmethod
    def aat_pp() -> "LossConfig":
        return LossConfig(use_st=True, use_as=True, use_ar=True, use_an=True)

    @staticmethod
    def from_names(names) -> "LossConfig":
        names = set(names)
        unknown = names - set(TERM_NAMES)
        if unknown:
            raise ValidationError(f"unknown loss terms {sorted(unknown)}")
        return LossConfig(use_st="st" in names, use_as="as" in names,
                          use_ar="ar" in names, use_an="an" in names)

    def enabled(self) -> List[str]:
        flags = (self.use_st, self.use_as, self.use_ar, self.use_an)
        return [n for n, f in zip(TERM_NAMES, flags) if f]


@dataclass
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 5
    milestones: List[int] = field(default_factory=list)
    batch_size: int = 128
    seed: int = 0
    attack_train: AttackConfig = field(default_factory=AttackConfig)
    loss: LossConfig = field(default_factory=LossConfig.st_only)
    # Epochs trained with the clean term only before the adversarial
    # terms switch on. From a random model the pseudo-label terms feed on
    # noise and can lock all three ways at chance; a short clean phase
    # gives them meaningful predictions to start from.
    warmup_epochs: int = 0

    def __post_init__(self):
        if any(m2 <= m1 for m1, m2 in zip(self.milestones, self.milestones[1:])):
            raise ValidationError(f"milestones must be strictly increasing: {self.milestones}")
        if any(m >= self.epochs for m in self.milestones):
            raise ValidationError(
                f"milestones {self.milestones} must lie below epochs={self.epochs}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValidationError(
                f"warmup_epochs {self.warmup_epochs} must lie in [0, epochs]")


# ---------------------------------------------------------------------------
# loss terms


def loss_st(model: ThreeWayModel, x: np.ndarray, y: np.ndarray) -> Tensor:
    """Clean classification loss summed over the three ways."""
    xt = Tensor(x)
    h_s, h_r, h_n = model.forward_all(xt)
    total = add(cross_entropy(h_s, y), cross_entropy(h_r, y))
    return add(total, cross_entropy(h_n, y))


def _masked_mean_scale(term: Tensor, mask_count: int, batch_size: int,
                       batch_denominator: bool) -> Tensor:
    if batch_denominator:
        return scale(term, mask_count / batch_size)
    return term


def loss_as(model: ThreeWayModel, x: np.ndarray, y: np.ndarray,
            attack_train: AttackConfig, batch_denominator: bool = False) -> Tensor:
    """Asymmetric supervision from standard-way adversarial pseudo-pairs."""
    y = np.asarray(y)
    x_adv = pgd(model, x, y, "standard", attack_train)
    yhat, mask = pseudo_label(model, x_adv, y, "standard")
    if not mask.any():
        return Tensor(np.float32(0.0))
    xa = Tensor(x_adv[mask])
    term_r = cross_entropy(model.forward_way(xa, "robust"), y[mask])
    term_n = cross_entropy(model.forward_way(xa, "nonrobust"), yhat[mask])
    total = add(term_r, term_n)
    return _masked_mean_scale(total, int(mask.sum()), len(y), batch_denominator)


def loss_ar(model: ThreeWayModel, x: np.ndarray, y: np.ndarray,
            attack_train: AttackConfig) -> Tensor:
    """Robust optimization of the robust way (full batch, true labels)."""
    x_adv = pgd(model, x, np.asarray(y), "robust", attack_train)
    return cross_entropy(model.forward_way(Tensor(x_adv), "robust"), y)


def loss_an(model: ThreeWayModel, x: np.ndarray, y: np.ndarray,
            attack_train: AttackConfig, batch_denominator: bool = False) -> Tensor:
    """Pseudo-label supervision of the non-robust way on its own attack."""
    y = np.asarray(y)
    x_adv = pgd(model, x, y, "nonrobust", attack_train)
    yhat, mask = pseudo_label(model, x_adv, y, "nonrobust")
    if not mask.any():
        return Tensor(np.float32(0.0))
    xa = Tensor(x_adv[mask])
    term = cross_entropy(model.forward_way(xa, "nonrobust"), yhat[mask])
    return _masked_mean_scale(term, int(mask.sum()), len(y), batch_denominator)


def total_loss(model: ThreeWayModel, x: np.ndarray, y: np.ndarray,
               cfg: LossConfig, attack_train: AttackConfig,
               terms_out: Optional[Dict[str, float]] = None) -> Tensor:
    """Sum of the enabled loss terms."""
    parts: Dict[str, Tensor] = {}
    if cfg.use_st:
        parts["st"] = loss_st(model, x, y)
    if cfg.use_as:
        parts["as"] = loss_as(model, x, y, attack_train, cfg.batch_denominator)
    if cfg.use_ar:
        parts["ar"] = loss_ar(model, x, y, attack_train)
    if cfg.use_an:
        parts["an"] = loss_an(model, x, y, attack_train, cfg.batch_denominator)
    if terms_out is not None:
        terms_out.update({k: float(v.data) for k, v in parts.items()})
    total = None
    for term in parts.values():
        total = term if total is None else add(total, term)
    return total


# ---------------------------------------------------------------------------
# SGD loop


def train(model: ThreeWayModel, dataset, cfg: TrainConfig,
          log_sink: Optional[Callable[[str], None]] = None) -> List[dict]:
    """SGD with momentum, L2 weight decay, and step-decay milestones.

    Returns the per-epoch log records; each record is also emitted to
    `log_sink` as one JSON line when a sink is supplied.
    """
    from .data import batches  # local import: data module is pure plumbing
    from .evaluation import accuracy

    if len(dataset.labels) == 0:
        raise ValidationError("train: dataset is empty")

    velocity = {k: np.zeros_like(p.data) for k, p in model.params.items()}
    log: List[dict] = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr * (0.1 ** sum(epoch >= m for m in cfg.milestones))
        loss_cfg = LossConfig.st_only() if epoch < cfg.warmup_epochs else cfg.loss
        term_sums: Dict[str, float] = {}
        n_batches = 0
        for xb, yb in batches(dataset, cfg.batch_size, seed=cfg.seed + epoch, shuffle=True):
            terms: Dict[str, float] = {}
            loss = total_loss(model, xb, yb, loss_cfg, cfg.attack_train, terms_out=terms)
            for name, value in terms.items():
                if not np.isfinite(value):
                    raise NumericError(
                        f"non-finite loss term {name!r} at epoch {epoch}: {value}")
                term_sums[name] = term_sums.get(name, 0.0) + value
            model.zero_grad()
            backward(loss)
            for name, p in model.params.items():
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                g = g + cfg.weight_decay * p.data
                velocity[name] = cfg.momentum * velocity[name] + g
                p.data = p.data - np.float32(lr) * velocity[name]
            n_batches += 1

        record = {
            "epoch": epoch,
            "lr": lr,
            "loss_terms": {k: v / n_batches for k, v in term_sums.items()},
            "clean_acc": {
                "S": accuracy(model, dataset, "standard"),
                "R": accuracy(model, dataset, "robust"),
                "N": accuracy(model, dataset, "nonrobust"),
            },
        }
        log.append(record)
        if log_sink is not None:
            log_sink(json.dumps(record))
    return log
