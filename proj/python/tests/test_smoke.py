import math

import pytest

import c3r


def test_parity_entropy_closed_forms():
    assert c3r.parity_entropy([1.0, 0.0, 0.0, 0.0]) == (1.0, 0.0)
    parity, entropy = c3r.parity_entropy([0.25] * 4)
    assert parity == 0.25
    assert entropy == pytest.approx(2.0, abs=1e-12)


def test_mcd_loss_matches_kl():
    student = [[0.5, 0.25, 0.25]]
    teacher = [[0.2, 0.3, 0.5]]
    expected = sum(t * math.log(t / s) for s, t in zip(student[0], teacher[0]))
    assert c3r.mcd_loss(student, teacher) == pytest.approx(expected, abs=1e-12)
    assert c3r.mcd_loss(teacher, teacher) == 0.0


def test_average_precision():
    assert c3r.average_precision([0.9, 0.8, 0.1], [True, False, True]) == pytest.approx((1 + 2 / 3) / 2)


def test_parameter_count_grows_with_depth():
    shallow = c3r.parameter_count({"embed_dim": 16, "heads": 4, "shared_depth": 1})
    deep = c3r.parameter_count({"embed_dim": 16, "heads": 4, "shared_depth": 2})
    assert deep > shallow


def test_pipeline(tmp_path):
    data = tmp_path / "data"
    c3r.generate({"synth": {"n_samples": 32, "image_size": 16}}, str(data), seed=1)
    run = tmp_path / "run"
    summary = c3r.train(
        {
            "dataset": str(data),
            "encoder": {"embed_dim": 16, "image_size": 16, "patch_size": 8},
            "baseline_depth": 2,
            "train": {
                "steps": 2,
                "batch_groups": 2,
                "per_group": 2,
                "local_crops": 0,
                "global_crop": {"size": 16},
                "head": {"hidden_dim": 16, "bottleneck_dim": 8, "prototypes": 16},
            },
        },
        str(run),
        seed=3,
    )
    assert summary["steps"] == 2
    report = c3r.evaluate(
        {
            "checkpoint": str(run / "checkpoint.c3r"),
            "dataset": str(data),
            "tasks": ["retrieval"],
            "retrieval_level": "cell",
        },
        str(tmp_path / "eval"),
    )
    assert 0.0 <= report["retrieval"]["map"] <= 1.0


def test_bad_config_raises_value_error(tmp_path):
    with pytest.raises(ValueError):
        c3r.train({"dataset": str(tmp_path), "bogus": 1}, str(tmp_path / "x"))
