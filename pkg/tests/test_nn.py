import numpy as np
import pytest

from conftest import rel_err
from otrep import nn
from otrep.errors import InputError
from otrep.ot import SolverSettings

EXACT = SolverSettings(method="exact")


def tiny_setup(seed=0, widths=(6, 5), n=7, classes=3, dim=4):
    rng = np.random.default_rng(seed)
    specs = nn.mlp_specs(dim, widths, classes)
    student = nn.init_model(specs, seed)
    teacher = nn.init_model(specs, seed + 100)
    # move the student off its starting point so L2-SP is not trivially zero
    for W in student.weights:
        W += 0.1 * rng.normal(size=W.shape)
    X = rng.normal(size=(dim, n))
    y = rng.integers(0, classes, size=n)
    return student, teacher, X, y


def objective_fd(model, X, y, terms, teacher_trace, step=1e-6):
    """Central differences of the objective over every parameter."""
    out = []
    for arrays in (model.weights, model.biases):
        for a in arrays:
            g = np.zeros_like(a)
            for idx in np.ndindex(a.shape):
                old = a[idx]
                a[idx] = old + step
                fp = nn.loss_and_grad(model, X, y, terms, teacher_trace).value
                a[idx] = old - step
                fm = nn.loss_and_grad(model, X, y, terms, teacher_trace).value
                a[idx] = old
                g[idx] = (fp - fm) / (2 * step)
            out.append(g.ravel())
    return np.concatenate(out)


TERM_SETS = {
    "ce_only": [],
    "ot_plan": [nn.RegTerm("ot_plan", 0.7, layer=0, settings=EXACT)],
    "identity": [nn.RegTerm("identity", 0.7, layer=1)],
    "uniform": [nn.RegTerm("uniform", 0.7, layer=-2)],
    "kd": [nn.RegTerm("kd", 0.5, tau=4.0)],
    "l2": [nn.RegTerm("l2", 0.3)],
    "l2_sp": [nn.RegTerm("l2_sp", 0.3)],
    "mixed": [
        nn.RegTerm("ot_plan", 0.4, layer=0, settings=EXACT),
        nn.RegTerm("ot_plan", 0.4, layer=1, settings=EXACT),
        nn.RegTerm("kd", 0.2, tau=5.0),
        nn.RegTerm("l2_sp", 0.1),
    ],
}


@pytest.mark.parametrize("name", sorted(TERM_SETS))
def test_objective_gradient_matches_finite_difference(name):
    student, teacher, X, y = tiny_setup()
    terms = TERM_SETS[name]
    tt = nn.forward(teacher, X)
    analytic = nn.loss_and_grad(student, X, y, terms, tt).grads.flat()
    assert rel_err(analytic, objective_fd(student, X, y, terms, tt)) < 1e-4


def test_l2_sp_with_new_head(rng):
    model = nn.init_model(nn.mlp_specs(3, (4,), 2), 0)
    model = model.with_new_head(5, rng)
    assert model.starting_point[-1] is None
    model.weights[0] += 1.0
    value, g = nn.l2_sp_value_and_grad(model)
    expected = 0.5 * model.weights[0].size + 0.5 * np.sum(model.weights[-1] ** 2)
    assert value == pytest.approx(expected)
    np.testing.assert_allclose(g.weights[0], 1.0)
    np.testing.assert_array_equal(g.weights[-1], model.weights[-1])


def test_starting_point_is_read_only():
    model = nn.init_model(nn.mlp_specs(3, (4,), 2), 0)
    with pytest.raises(ValueError):
        model.starting_point[0][0][0, 0] = 1.0
    before = model.starting_point_checksum()
    model.weights[0] += 1.0
    assert model.starting_point_checksum() == before


def test_cross_entropy_uniform_logits():
    loss, grad = nn.cross_entropy(np.zeros((4, 3)), np.array([0, 1, 2]))
    assert loss == pytest.approx(np.log(4))
    np.testing.assert_allclose(grad.sum(axis=0), 0.0, atol=1e-15)


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(InputError):
        nn.cross_entropy(np.zeros((2, 3)), np.array([0, 1, 2]))


def test_missing_teacher_is_an_error():
    student, _, X, y = tiny_setup()
    with pytest.raises(InputError):
        nn.loss_and_grad(student, X, y, [nn.RegTerm("identity", 1.0)])


def test_zero_alpha_equals_unregularized():
    student, teacher, X, y = tiny_setup()
    tt = nn.forward(teacher, X)
    base = nn.loss_and_grad(student, X, y)
    zero = nn.loss_and_grad(student, X, y, [nn.RegTerm("uniform", 0.0), nn.RegTerm("kd", 0.0)], tt)
    assert zero.value == base.value
    np.testing.assert_array_equal(zero.grads.flat(), base.grads.flat())


def test_student_equal_to_teacher_gives_finite_gradients():
    student, _, X, y = tiny_setup()
    tt = nn.forward(student, X)
    terms = [nn.RegTerm(k, 1.0, layer=0) for k in ("ot_plan", "identity", "uniform")]
    obj = nn.loss_and_grad(student, X, y, terms, tt)
    assert np.all(np.isfinite(obj.grads.flat()))
    assert obj.term_values[0] < 1e-8 and obj.term_values[1] == 0.0


def test_sgd_step_momentum_recurrence():
    model = nn.init_model(nn.mlp_specs(2, (2,), 2), 0)
    w0 = model.weights[0].copy()
    g = nn.Gradients.zeros_like(model)
    g.weights[0][:] = 1.0
    nn.sgd_step(model, g, 0.1, momentum=0.5)
    nn.sgd_step(model, g, 0.1, momentum=0.5)
    # v1 = 1, v2 = 0.5 + 1; w = w0 - 0.1 * (1 + 1.5)
    np.testing.assert_allclose(model.weights[0], w0 - 0.25)


def test_sgd_weight_decay():
    model = nn.init_model(nn.mlp_specs(2, (2,), 2), 0)
    w0 = model.weights[0].copy()
    nn.sgd_step(model, nn.Gradients.zeros_like(model), 0.1, momentum=0.0, weight_decay=0.5)
    np.testing.assert_allclose(model.weights[0], w0 * 0.95)


def test_training_reduces_loss():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(2, 64))
    y = (X[0] > 0).astype(int)
    model = nn.init_model(nn.mlp_specs(2, (8,), 2), 0)
    start = nn.loss_and_grad(model, X, y).value
    for _ in range(100):
        nn.sgd_step(model, nn.loss_and_grad(model, X, y).grads, 0.1)
    assert nn.loss_and_grad(model, X, y).value < 0.5 * start
    assert nn.accuracy(model, X, y) > 0.9


def test_permute_hidden_preserves_function(rng):
    model = nn.init_model(nn.mlp_specs(3, (5, 4), 2), 1)
    X = rng.normal(size=(3, 6))
    perm = rng.permutation(5)
    out = nn.permute_hidden(model, 0, perm)
    np.testing.assert_allclose(nn.forward(out, X).logits, nn.forward(model, X).logits, atol=1e-12)
    np.testing.assert_array_equal(nn.forward(out, X).activations[0], nn.forward(model, X).activations[0][perm])
    with pytest.raises(InputError):
        nn.permute_hidden(model, -1, np.arange(2))


def test_checkpoint_round_trip(tmp_path, rng):
    model = nn.init_model(nn.mlp_specs(3, (4,), 2), 7).with_new_head(3, rng)
    model.velocity_w[0] += 0.5
    path = nn.save_checkpoint(model, tmp_path / "m.npz")
    back = nn.load_checkpoint(path)
    assert back.parameters_checksum() == model.parameters_checksum()
    assert back.starting_point_checksum() == model.starting_point_checksum()
    assert back.starting_point[-1] is None
    np.testing.assert_array_equal(back.velocity_w[0], model.velocity_w[0])
    assert back.seed == 7


def test_init_is_deterministic():
    specs = nn.mlp_specs(4, (8, 8), 3)
    a, b = nn.init_model(specs, 3), nn.init_model(specs, 3)
    assert a.parameters_checksum() == b.parameters_checksum()
    assert a.parameters_checksum() != nn.init_model(specs, 4).parameters_checksum()


def test_layer_spec_validation():
    with pytest.raises(InputError):
        nn.LayerSpec(0, 3)
    with pytest.raises(InputError):
        nn.LayerSpec(2, 3, "tanh")
    with pytest.raises(InputError):
        nn.RegTerm("dropout", 1.0)
    with pytest.raises(InputError):
        nn.RegTerm("l2", -1.0)
