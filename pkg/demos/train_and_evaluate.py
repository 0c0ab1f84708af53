"""Train a small three-way model and read its evaluation table.

Deliberately tiny (2k samples, a narrow backbone, a few epochs) so it runs
in about a minute. Use the ``aat train --preset mnist-aat++-desk`` CLI for
a run with meaningful numbers.
"""

import time

from aat.attack import AttackConfig
from aat.data import subset
from aat.digits import make_digits
from aat.evaluation import evaluate
from aat.model import BackboneSpec, ThreeWayModel
from aat.training import LossConfig, TrainConfig, train

t0 = time.time()

train_set = make_digits(2000, seed=0)
test_set = make_digits(400, seed=1, split="test")

spec = BackboneSpec(conv_channels=(16, 32), hidden_width=32, latent_dim=64)
model = ThreeWayModel.init(spec, seed=0)

cfg = TrainConfig(
    lr=0.02, momentum=0.9, weight_decay=5e-4,
    epochs=8, warmup_epochs=4, milestones=(7,), batch_size=128, seed=0,
    loss=LossConfig.aat_pp(),
    attack_train=AttackConfig(norm="l2", epsilon=0.15, alpha=0.05, steps=5,
                              seed=1),
)

print("training (four ST warmup epochs, then the adversarial terms)...")
train(model, train_set, cfg, log_sink=print)

report = evaluate(
    model, subset(test_set, 200, seed=2),
    [AttackConfig(norm="l2", epsilon=0.3, alpha=0.01, steps=10, seed=3)],
    with_detection=True, seed=4,
)
print()
print(report.to_table())
print(f"\n[{time.time() - t0:.0f}s] The DIA column is the point of the "
      "exercise: after adversarial\ntraining the robust way should hold up "
      "under attack while the non-robust way\ncollapses, even at this scale.")
