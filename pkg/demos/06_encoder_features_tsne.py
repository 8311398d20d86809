"""
Looking inside the spatial encoder with exact t-SNE
===================================================

Each frame's embedding is a point in feature space.  Over a scan the points
trace the tracer's journey: low-uptake early frames, the bolus peak, then the
long washout tail.  t-SNE projects those trajectories to 2D; frames from the
same phase land near each other even across subjects.
"""

import numpy as np

from fcdlif import (FengParams, FrameSchedule, TsneConfig, make_mouse_phantom,
                    render_phantom, tsne_embed)
from fcdlif.model import build_desk_fcdlif
from fcdlif.training import LossWeights

schedule = FrameSchedule.default()
model = build_desk_fcdlif(seed=11)

features, phases = [], []
peak, mid, tail = LossWeights.segment_lengths(schedule.num_frames)
for i in range(4):
    ss = np.random.SeedSequence([21, i])
    rng = np.random.Generator(np.random.PCG64(ss))
    image, _ = render_phantom(make_mouse_phantom(rng=rng), schedule,
                              FengParams.typical(rng=rng),
                              seed=int(ss.generate_state(1)[0]),
                              count_scale=200.0)
    matrix = model.extract_sfe_features(image)  # (E, T)
    features.append(matrix.T)
    phases += ["peak"] * peak + ["mid"] * mid + ["tail"] * tail

stacked = np.concatenate(features, axis=0)
print(f"feature matrix: {stacked.shape} (frames x embedding width)")

coords, info = tsne_embed(stacked, TsneConfig(perplexity=20, iterations=400,
                                              seed=0))
print(f"KL divergence: {info['initial_kl']:.3f} -> {info['final_kl']:.3f}")

phases = np.array(phases)
print("\nphase centroids in the embedding:")
for phase in ("peak", "mid", "tail"):
    sel = phases == phase
    cx, cy = coords[sel].mean(axis=0)
    print(f"  {phase:4s}  n={sel.sum():3d}  ({cx:7.2f}, {cy:7.2f})")

spread = np.linalg.norm(coords - coords.mean(axis=0), axis=1).mean()
print(f"\nmean spread around the global centroid: {spread:.2f}")
