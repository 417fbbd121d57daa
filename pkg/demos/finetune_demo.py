"""Fine-tune a pretrained MLP on a rotated copy of its task with several
regularizers and print test accuracy per arm.

    python3 demos/finetune_demo.py        # about ten seconds on one core
"""

from dataclasses import replace

from otrep import harness
from otrep.tasks import TaskSpec

source = TaskSpec(generator="rotated_mixture", num_classes=8, subclusters=3, input_dim=20,
                  samples_train=4000, samples_val=800, samples_test=2000,
                  separation=1.0, noise=1.0, seed=0)
target = replace(source, shift="rotation_angle", shift_magnitude=10, samples_train=100, samples_val=200)

teacher_cfg = harness.TrainConfig(iterations=3000, learning_rate=0.05)
student_cfg = harness.TrainConfig(iterations=300, learning_rate=0.02, seeds=(0, 1, 2),
                                  alpha_grid=(0.1, 1.0, 10.0))

for arm in ("none", "l2", "l2_sp", "omega_u", "omega_i", "omega_p"):
    r = harness.run_finetune(source, target, (32, 32), arm, student_cfg, teacher_cfg)
    alpha = r.selected.get("alpha")
    print(f"{arm:8s} {r.test_accuracy:.4f} +/- {r.test_std:.4f}"
          + (f"  (alpha {alpha:g})" if alpha is not None else ""))
