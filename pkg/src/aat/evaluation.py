"""Accuracy protocols, disentanglement metrics, detection, calibration.

Two adversarial protocols exist. Per-way: the robust way is attacked
through its own loss and evaluated on those examples, likewise for the
non-robust way; DIA is their accuracy gap. Standard-way: one attack is
run against the combined prediction and all three ways are scored on
the same adversarial batch.

The detector compares the argmax of the two masked ways and flags
disagreement as adversarial; calibration routes flagged samples to the
robust way and the rest to the standard way.
"""

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import prng
from .attack import AttackConfig, pgd
from .data import Dataset
from .model import ThreeWayModel
from .tensor import Tensor

_EVAL_BATCH = 256


def _predict(model: ThreeWayModel, images: np.ndarray, way: str) -> np.ndarray:
    """Argmax predictions, lowest class index winning ties."""
    out = np.empty(len(images), dtype=np.int64)
    for start in range(0, len(images), _EVAL_BATCH):
        chunk = images[start : start + _EVAL_BATCH]
        logits = model.forward_way(Tensor(chunk), way)
        out[start : start + len(chunk)] = logits.data.argmax(axis=1)
    return out


def accuracy(model: ThreeWayModel, dataset: Dataset, way: str) -> float:
    """Percentage of correct argmax predictions on clean inputs."""
    preds = _predict(model, dataset.images, way)
    return float((preds == dataset.labels).mean() * 100.0)


def _attacked(model: ThreeWayModel, dataset: Dataset, way: str,
              cfg: AttackConfig) -> np.ndarray:
    out = np.empty_like(dataset.images)
    for start in range(0, len(dataset), _EVAL_BATCH):
        stop = start + _EVAL_BATCH
        out[start:stop] = pgd(model, dataset.images[start:stop],
                              dataset.labels[start:stop], way, cfg)
    return out


def eval_per_way_adv(model: ThreeWayModel, dataset: Dataset,
                     cfg: AttackConfig) -> Dict[str, float]:
    """{R, N} accuracies, each under an attack on its own way."""
    result = {}
    for key, way in (("R", "robust"), ("N", "nonrobust")):
        x_adv = _attacked(model, dataset, way, cfg)
        preds = _predict(model, x_adv, way)
        result[key] = float((preds == dataset.labels).mean() * 100.0)
    return result


def eval_standard_way_adv(model: ThreeWayModel, dataset: Dataset,
                          cfg: AttackConfig) -> Dict[str, float]:
    """{S, R, N} accuracies on one shared standard-way adversarial batch."""
    x_adv = _attacked(model, dataset, "standard", cfg)
    result = {}
    for key, way in (("S", "standard"), ("R", "robust"), ("N", "nonrobust")):
        preds = _predict(model, x_adv, way)
        result[key] = float((preds == dataset.labels).mean() * 100.0)
    return result


def dia(adv_r: float, adv_n: float) -> float:
    """Difference in accuracy between the two attacked ways."""
    return adv_r - adv_n


# ---------------------------------------------------------------------------
# detection and calibration


def detect(model: ThreeWayModel, x: np.ndarray) -> np.ndarray:
    """1 (adversarial) where the robust and non-robust ways disagree."""
    y_r = _predict(model, x, "robust")
    y_n = _predict(model, x, "nonrobust")
    return (y_r != y_n).astype(np.int64)


@dataclass
class MixedSet:
    """Balanced natural/adversarial mixture; tags live out-of-band."""

    images: np.ndarray
    labels: np.ndarray
    adversarial: np.ndarray  # 0 natural, 1 adversarial

    def __len__(self) -> int:
        return len(self.labels)


def build_mixed_set(model: ThreeWayModel, dataset: Dataset, cfg: AttackConfig,
                    seed: int = 0) -> MixedSet:
    """Equal mixture of natural and standard-way adversarial examples,
    shuffled with a seeded stream."""
    x_adv = _attacked(model, dataset, "standard", cfg)
    images = np.concatenate([dataset.images, x_adv])
    labels = np.concatenate([dataset.labels, dataset.labels])
    tags = np.concatenate([np.zeros(len(dataset), dtype=np.int64),
                           np.ones(len(dataset), dtype=np.int64)])
    order = prng.stream(seed, prng.STREAM_MIX).permutation(len(tags))
    return MixedSet(images[order], labels[order], tags[order])


def rad(model: ThreeWayModel, mixed: MixedSet) -> float:
    """Detection accuracy on the balanced mixture, in percent."""
    verdict = detect(model, mixed.images)
    return float((verdict == mixed.adversarial).mean() * 100.0)


def calibrate(model: ThreeWayModel, mixed: MixedSet) -> Dict[str, float]:
    """Raw standard-way accuracy vs detector-routed accuracy."""
    preds_s = _predict(model, mixed.images, "standard")
    preds_r = _predict(model, mixed.images, "robust")
    verdict = detect(model, mixed.images)
    routed = np.where(verdict == 1, preds_r, preds_s)
    return {
        "raw_acc": float((preds_s == mixed.labels).mean() * 100.0),
        "calibrated_acc": float((routed == mixed.labels).mean() * 100.0),
    }


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    clean_acc: Dict[str, float] = field(default_factory=dict)
    adv_per_way: List[dict] = field(default_factory=list)  # {attack, R, N, dia}
    adv_standard_way: List[dict] = field(default_factory=list)  # {attack, S, R, N, dia}
    detection: Optional[Dict[str, float]] = None  # {rad, raw_acc, calibrated_acc}

    def to_json(self) -> str:
        return json.dumps({
            "clean_acc": self.clean_acc,
            "adv_per_way": self.adv_per_way,
            "adv_standard_way": self.adv_standard_way,
            "detection": self.detection,
        }, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        doc = json.loads(text)
        return EvalReport(doc["clean_acc"], doc["adv_per_way"],
                          doc["adv_standard_way"], doc["detection"])

    def to_table(self) -> str:
        lines = []
        cells = "".join(f"{self.clean_acc.get(k, float('nan')):>8.1f}" for k in "SRN")
        lines.append("Standard                 S       R       N")
        lines.append("  clean           " + cells)
        if self.adv_per_way:
            lines.append("Adversarial (per-way)    R       N     DIA")
            for row in self.adv_per_way:
                lines.append(f"  {row['attack']:<14}" +
                             "".join(f"{row[k]:>8.1f}" for k in ("R", "N", "dia")))
        if self.adv_standard_way:
            lines.append("Adversarial (standard-way)  S       R       N     DIA")
            for row in self.adv_standard_way:
                lines.append(f"  {row['attack']:<17}" +
                             "".join(f"{row[k]:>8.1f}" for k in ("S", "R", "N", "dia")))
        if self.detection:
            d = self.detection
            lines.append(f"Detection: RAD {d['rad']:.1f}  raw {d['raw_acc']:.1f}  "
                         f"calibrated {d['calibrated_acc']:.1f}")
        return "\n".join(lines)


def _attack_tag(cfg: AttackConfig) -> str:
    return f"{cfg.norm} e={cfg.epsilon:g}"


def evaluate(model: ThreeWayModel, dataset: Dataset,
             attack_cfgs: List[AttackConfig],
             with_detection: bool = False, seed: int = 0) -> EvalReport:
    """Run the full protocol suite and assemble a report."""
    report = EvalReport(clean_acc={
        "S": accuracy(model, dataset, "standard"),
        "R": accuracy(model, dataset, "robust"),
        "N": accuracy(model, dataset, "nonrobust"),
    })
    for cfg in attack_cfgs:
        per_way = eval_per_way_adv(model, dataset, cfg)
        report.adv_per_way.append({
            "attack": _attack_tag(cfg), "R": per_way["R"], "N": per_way["N"],
            "dia": dia(per_way["R"], per_way["N"]),
        })
        std = eval_standard_way_adv(model, dataset, cfg)
        report.adv_standard_way.append({
            "attack": _attack_tag(cfg), "S": std["S"], "R": std["R"], "N": std["N"],
            "dia": dia(std["R"], std["N"]),
        })
    if with_detection and attack_cfgs:
        mixed = build_mixed_set(model, dataset, attack_cfgs[0], seed=seed)
        det = calibrate(model, mixed)
        det["rad"] = rad(model, mixed)
        report.detection = det
    return report
