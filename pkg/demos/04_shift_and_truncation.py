"""
Why the fully convolutional design shrugs off timing changes
============================================================

Prepending a frame or cutting the scan short changes nothing about how any
individual frame is encoded, and the temporal stack applies the same filters
at every position.  Away from the sequence boundaries the prediction values
are therefore *bit-identical*, just relocated.  A fixed-length head has no
such luxury: it simply refuses other lengths.
"""

import numpy as np

from fcdlif import (FengParams, FrameSchedule, make_mouse_phantom,
                    render_phantom, shift_test, truncation_test)
from fcdlif.model import build_desk_baseline, build_desk_fcdlif

schedule = FrameSchedule.default()
image, truth = render_phantom(make_mouse_phantom(), schedule,
                              FengParams.typical(), seed=5, count_scale=200.0)

model = build_desk_fcdlif(seed=11)
print(f"temporal receptive-field radius: {model.receptive_radius} frames\n")

report = shift_test(model, image)
interior = report.interior
print(f"shift test: output {report.original.size} -> {report.transformed.size} frames")
print(f"  interior positions compared: {int(interior.sum())}")
print(f"  max interior deviation: {np.abs(report.overlap_deviation[interior]).max()}")
print(f"  max boundary deviation: {np.abs(report.overlap_deviation[~interior[:report.overlap_deviation.size]]).max():.3g}")

report = truncation_test(model, image, truth)
print(f"\ntruncation test: output {report.original.size} -> {report.transformed.size} frames")
print(f"  max interior deviation: {np.abs(report.overlap_deviation[report.interior]).max()}")
print(f"  wMSE vs truth on the surviving frames: {report.truth_wmse:.4f}")

baseline = build_desk_baseline(seed=11)
report = shift_test(baseline, image)
print(f"\nfixed-length baseline on a 43-frame input: {report.error}")
