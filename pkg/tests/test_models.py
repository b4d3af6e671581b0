from dataclasses import replace

import numpy as np
import pytest

from cyberseer import features, models
from cyberseer.errors import InvalidInputError, StateError
from cyberseer.models import dense_param_count as dense_n, lstm_param_count as lstm_n
from cyberseer.nnet import CompositeLossSpec, evaluate_loss, predict, train


def test_presets_match_reference_table():
    p = models.load_presets()
    assert p["eda"].to_dict() == {"lr": 0.0007355141501207038, "acti": "tanh", "dense_size_1": 24,
                                  "dense_size_2": 48, "rate": 0.19, "lstm_size": 96}
    assert p["kinematic"].to_dict() == {"lr": 0.001331078123566145, "acti": "relu", "dense_size": 48,
                                        "rate": 0.1, "lstm_size": 128}
    assert p["fusion"].to_dict() == {"lr": 0.0016711012274591363, "acti_1": "sigmoid", "acti_2": "relu",
                                     "dense_size_1": 40, "dense_size_2": 40, "rate": 0.1,
                                     "lstm_size_1": 32, "lstm_size_2": 128}
    enh = p["enhanced"]
    assert (enh.acti_1, enh.acti_2, enh.acti_3) == ("relu", "tanh", "relu")
    assert (enh.dense_size_1, enh.dense_size_2, enh.dense_size_3) == (48, 40, 40)
    assert (enh.rate_1, enh.rate_2, enh.rate_3) == (0.1, 0.15, 0.24)
    assert (enh.lr, enh.lstm_size, enh.beta, enh.loss) == (0.00210380237984259, 96, 0.11850082837080077, "mse")


def test_hyperparam_validation():
    with pytest.raises(InvalidInputError):
        models.KinematicParams(acti="softmax")
    with pytest.raises(InvalidInputError):
        models.EdaParams(rate=1.0)
    with pytest.raises(InvalidInputError):
        models.FusionParams(lstm_size_1=0)
    with pytest.raises(InvalidInputError):
        models.EnhancedParams(beta=-0.1)
    with pytest.raises(InvalidInputError):
        models.EnhancedParams.from_dict({"gamma": 1})


def test_widths():
    eda = models.build_model("eda")
    assert eda.width("representation") == 96 + 24 == 120
    fusion = models.build_model("fusion")
    assert fusion.width("concat") == 32 + 128 + 40 == 200
    kin = models.build_model("kinematic")
    assert (kin.layers["lstm"].units, kin.layers["dense"].units, kin.layers["dense"].activation) == (128, 48, "relu")


def test_parameter_counts():
    assert models.build_model("eda").n_params == (
        lstm_n(96, 15) + dense_n(24, 38) + dense_n(48, 120) + dense_n(1, 48))
    assert models.build_model("kinematic").n_params == lstm_n(128, 16) + dense_n(48, 128) + dense_n(1, 48)
    assert models.build_model("fusion").n_params == (
        lstm_n(32, 15) + lstm_n(128, 16) + dense_n(40, 38) + dense_n(40, 200) + dense_n(1, 40))
    assert models.build_model("enhanced", teacher_width=120).n_params == (
        lstm_n(96, 16) + dense_n(120, 96) + dense_n(40, 96) + dense_n(40, 160) + dense_n(1, 40))
    assert lstm_n(96, 15) == 4 * 96 * (96 + 15 + 1)


@pytest.mark.parametrize("arch", models.ARCHITECTURES)
def test_zero_weight_forward_is_half(arch):
    g = models.build_model(arch)
    g.zero_params()
    inputs = {"kinematic": np.zeros((2, 16, 10)), "eda_ts": np.zeros((2, 15, 10)), "eda_num": np.zeros((2, 38))}
    assert predict(g, inputs).tolist() == [0.5, 0.5]
    # one scalar sigmoid head
    assert g.output == "output" and g.layers["output"].units == 1


def test_fusion_without_eda_is_kinematic_shape():
    fusion = models.build_model("fusion")
    kin = models.build_kinematic_model(models.KinematicParams(acti="relu", dense_size=40, rate=0.1, lstm_size=128))
    assert models.branch_structure(fusion, ("eda_ts", "eda_num")) == models.branch_structure(kin)


def test_enhanced_embedding_width_and_inputs():
    g = models.build_model("enhanced", teacher_width=120)
    assert g.width("embedding") == 120
    assert g.metadata["hyperparams"]["dense_size_1"] == 48
    assert g.input_names == ["kinematic"]
    # both branches read the recurrent state
    assert g.layers["emb_dropout"].inputs == g.layers["kin_dropout"].inputs == ("lstm",)
    proj = models.build_model("enhanced", replace(models.preset("enhanced"), teacher_projection=True), teacher_width=120)
    assert proj.width("embedding") == 48
    with pytest.raises(InvalidInputError):
        models.build_model("enhanced", teacher_width=0)


def test_teacher_projection_shape(rng):
    reps = rng.normal(size=(5, 120))
    out = models.TeacherProjection(120, 48, seed=3)(reps)
    assert out.shape == (5, 48)
    assert np.array_equal(out, models.TeacherProjection(120, 48, seed=3)(reps))


# --- teacher / student on the shared small cohort ----------------------------------

SMALL_EDA = models.EdaParams(acti="tanh", dense_size_1=6, dense_size_2=6, rate=0.19, lstm_size=8, lr=0.005)
SMALL_STUDENT = models.EnhancedParams(dense_size_2=6, dense_size_3=6, lstm_size=8, lr=0.005)


@pytest.fixture(scope="module")
def norm_data(small_dataset):
    norm = features.fit_dataset_normalizer(small_dataset, np.arange(64))
    return features.normalize_dataset(small_dataset, norm)


@pytest.fixture(scope="module")
def teacher(norm_data):
    g = models.build_eda_model(SMALL_EDA, seed=4)
    train(g, norm_data.inputs(np.arange(64)), norm_data.labels[:64], models.train_config_for(SMALL_EDA, epochs=8))
    return g


def test_untrained_teacher_rejected():
    with pytest.raises(StateError):
        models.TeacherRepresentation(models.build_eda_model(SMALL_EDA))


def test_teacher_extraction(teacher, norm_data):
    reps = models.TeacherRepresentation(teacher)
    a = reps.extract(norm_data, [0, 1, 2])
    assert a.shape == (3, 8 + 6) and reps.width == 14
    assert len(reps) == 3
    assert np.array_equal(reps.extract(norm_data, [0, 1, 2]), a)
    assert np.array_equal(models.extract_teacher_representation(teacher, norm_data, [0, 1, 2]), a)
    bumped = norm_data.subset([0])
    bumped.eda_ts[0, 3] += 0.3
    b = models.TeacherRepresentation(teacher).extract(bumped)
    assert np.max(np.abs(b[0] - a[0])) > 1e-6


def test_missing_teacher_vector(teacher, norm_data):
    reps = models.TeacherRepresentation(teacher)
    reps.extract(norm_data, [0])
    student = models.build_enhanced_model(SMALL_STUDENT, reps.width)
    with pytest.raises(StateError):
        models.train_enhanced(student, reps, norm_data, SMALL_STUDENT,
                              models.train_config_for(SMALL_STUDENT, epochs=1), idx=[0, 1])


def test_beta_zero_matches_plain_student(teacher, norm_data):
    rows = np.arange(64)
    reps = models.TeacherRepresentation(teacher).extract(norm_data, rows)
    hp = replace(SMALL_STUDENT, beta=0.0)
    a = models.build_enhanced_model(hp, 14, seed=6)
    b = a.copy()
    cfg = models.train_config_for(hp, epochs=3, shuffle_seed=2)
    ha = models.train_enhanced(a, reps, norm_data, hp, cfg, idx=rows)
    hb = train(b, {"kinematic": norm_data.kinematic[rows]}, norm_data.labels[rows],
               replace(cfg, loss=CompositeLossSpec()))
    assert ha.loss == hb.loss and ha.accuracy == hb.accuracy
    for name in a.params:
        assert a.params[name].tobytes() == b.params[name].tobytes()


def test_student_reduces_training_regression_loss(teacher, norm_data):
    rows = np.arange(64)
    reps = models.TeacherRepresentation(teacher).extract(norm_data, rows)
    s = models.build_enhanced_model(SMALL_STUDENT, 14, seed=8)
    spec = models.student_loss_spec(SMALL_STUDENT)
    kin = {"kinematic": norm_data.kinematic[rows]}
    before = evaluate_loss(s, kin, norm_data.labels[rows], spec, reps).reg
    hist = models.train_enhanced(s, reps, norm_data, SMALL_STUDENT,
                                 models.train_config_for(SMALL_STUDENT, epochs=15), idx=rows)
    after = evaluate_loss(s, kin, norm_data.labels[rows], spec, reps).reg
    assert after < before
    assert len(hist.l_reg) == 15 and len(hist.l_pre) == 15
    # inference needs the kinematic block only
    assert predict(s, kin).shape == (64,)


def test_student_rejects_wrong_width(teacher, norm_data):
    s = models.build_enhanced_model(SMALL_STUDENT, 10)
    with pytest.raises(InvalidInputError):
        models.train_enhanced(s, np.zeros((4, 14)), norm_data, SMALL_STUDENT,
                              models.train_config_for(SMALL_STUDENT, epochs=1), idx=np.arange(4))
