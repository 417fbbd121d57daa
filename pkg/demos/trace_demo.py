"""Trace ratio diagnostics.

First a synthetic check: permuting one hidden layer of a network is found by
the post hoc depth profile. Then a short fine-tune prints how the trace of
the in-training plans evolves.

    python3 demos/trace_demo.py
"""

from dataclasses import replace

import numpy as np

from otrep import analysis, harness, nn
from otrep.tasks import TaskSpec

model = nn.init_model(nn.mlp_specs(20, (16, 16, 16), 4), seed=3)
X = np.random.default_rng(0).normal(size=(20, 1000))
shuffled = nn.permute_hidden(model, 1, np.roll(np.arange(16), 1))
for s in analysis.depth_trace_profile(model, shuffled, X):
    print(f"layer {s.layer}: trace ratio {s.trace_ratio:.3f}")

source = TaskSpec(generator="rotated_mixture", num_classes=8, subclusters=3, input_dim=20,
                  samples_train=4000, samples_val=800, samples_test=2000,
                  separation=1.0, noise=1.0, seed=0)
target = replace(source, shift="rotation_angle", shift_magnitude=10, samples_train=100, samples_val=200)
recorder = analysis.TraceRecorder()
teacher, student = harness.finetune_model(
    source, target, (32, 32), "omega_p", harness.TrainConfig(iterations=300, learning_rate=0.02),
    alpha=0.1, teacher_config=harness.TrainConfig(iterations=3000, learning_rate=0.05), recorder=recorder)

for layer, series in recorder.series_by_layer().items():
    print(f"\nlayer {layer} (iteration range, mean raw trace, mean tie-adjusted trace)")
    adjusted = {s.index: s.tie_adjusted for s in series}
    for start, end, mean, *_ in analysis.bin_series(series, 6):
        adj = np.mean([adjusted[i] for i in range(int(start), int(end) + 1)])
        print(f"  {int(start):4d}-{int(end):4d}  {mean:.3f}  {adj:.3f}")

data = harness._task(target)
for s in analysis.depth_trace_profile(teacher, student, data.X_test[:, :1000]):
    print(f"after fine-tuning, layer {s.layer}: trace ratio {s.trace_ratio:.3f}")
