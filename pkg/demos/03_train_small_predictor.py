"""
Training the fully convolutional predictor on desk-scale phantoms
=================================================================

The spatial encoder condenses every frame to a feature vector with shared
weights; a 1D convolutional stack over the stacked features emits the curve.
This demo fits a small model on a handful of phantoms for a few epochs, just
to show the moving parts; the acceptance suite runs the full experiment.
"""

import numpy as np

from fcdlif import (FengParams, FrameSchedule, TrainConfig, make_mouse_phantom,
                    render_phantom, train, weighted_mse)
from fcdlif.model import build_desk_fcdlif

schedule = FrameSchedule.default()
dataset = []
for i in range(6):
    ss = np.random.SeedSequence([7, i])
    rng = np.random.Generator(np.random.PCG64(ss))
    phantom = make_mouse_phantom(rng=rng)
    feng = FengParams.typical(rng=rng)
    dataset.append(render_phantom(phantom, schedule, feng,
                                  seed=int(ss.generate_state(1)[0]),
                                  count_scale=200.0))

model = build_desk_fcdlif(seed=0)
print(f"model parameters: {model.parameter_count}")

config = TrainConfig(epochs=5, learning_rate=1e-4, folds=3, runs_per_fold=1,
                     augment=False, seed=0)
model, history = train(model, dataset[:5], dataset[5:], config)

print("\nepoch  train wMSE  val wMSE")
for e, (tr, va) in enumerate(zip(history.train_wmse, history.val_wmse)):
    print(f"{e:5d}  {tr:10.4f}  {va:8.4f}")

image, truth = dataset[5]
pred = model.predict(image)
print(f"\nheld-out wMSE after {config.epochs} epochs: "
      f"{weighted_mse(pred, truth):.4f}")
print("tail frames (pred vs truth):")
for t in range(38, 42):
    print(f"  frame {t}: {pred.values[t]:6.3f} vs {truth.values[t]:6.3f}")
