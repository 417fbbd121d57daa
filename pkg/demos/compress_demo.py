"""Train a half-width student next to a wide teacher on the same task.

    python3 demos/compress_demo.py        # under a minute on one core
"""

from otrep import harness
from otrep.tasks import TaskSpec

task = TaskSpec(generator="gaussian_blobs", num_classes=8, subclusters=3, input_dim=20,
                samples_train=1000, samples_val=300, samples_test=2000,
                separation=1.0, noise=1.0, seed=0)
teacher_cfg = harness.TrainConfig(iterations=3000, learning_rate=0.05)
student_cfg = harness.TrainConfig(iterations=1000, learning_rate=0.05, seeds=(0, 1, 2),
                                  alpha_grid=(0.1, 1.0), tau_grid=(4.0, 5.0, 10.0))

for arm in ("none", "omega_u", "kd", "omega_p"):
    r = harness.run_compress(task, (64, 64), (32, 32), arm, student_cfg, teacher_cfg)
    print(f"{arm:8s} {r.test_accuracy:.4f} +/- {r.test_std:.4f}  selected {r.selected}")
