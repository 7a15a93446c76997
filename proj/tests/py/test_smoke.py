"""Smoke tests for the python bindings."""

import pytest

import pkeval


def test_version():
    assert pkeval.__version__


def test_strip_think():
    clean, omitted = pkeval.strip_think("<think>xyz</think>Final. Answer: A")
    assert clean == "Final. Answer: A"
    assert not omitted
    clean, omitted = pkeval.strip_think("<think>unterminated")
    assert clean == ""
    assert omitted


def test_extract_answer():
    assert pkeval.extract_answer("Reasoning. Answer: D") == "D"
    assert pkeval.extract_answer("Answer: B ... Answer: C") == "C"
    assert pkeval.extract_answer("The best option is (A).") == "A"
    assert pkeval.extract_answer("no letter here") is None


def test_parse_knowledge_list():
    units = pkeval.parse_knowledge_list('1. "A."\n2. "B."')
    assert units == ["A.", "B."]
    assert pkeval.parse_knowledge_list("prose only") == []


def test_cluster_count():
    assert pkeval.cluster_count([6, 8, 10, 8]) == 10
    assert pkeval.cluster_count([1]) == 1
    assert pkeval.cluster_count([7, 8]) == 10


def test_kmeans_deterministic():
    points = [[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]]
    a = pkeval.kmeans(points, 2, seed=3)
    b = pkeval.kmeans(points, 2, seed=3)
    assert a["labels"] == b["labels"]
    assert a["labels"][0] == a["labels"][1]
    assert a["labels"][2] == a["labels"][3]
    assert a["labels"][0] != a["labels"][2]


def test_metrics_from_labels():
    m = pkeval.metrics_from_labels(
        ["explicit", "explicit", "unapplied", "unapplied", "unapplied", "unapplied", "unapplied"],
        ["correct", "correct", "not_applicable", "not_applicable", "not_applicable",
         "not_applicable", "not_applicable"],
        [1, 1, 1, 1, 1, 1, 1],
    )
    assert m["kp"] == 1.0
    assert abs(m["kr"] - 2.0 / 7.0) < 1e-12
    m = pkeval.metrics_from_labels(["unapplied"], ["not_applicable"], [4])
    assert m["kp"] is None
    assert m["kr"] == 0.0


def test_render_and_parse_judgment():
    system, user = pkeval.render_prompt(
        "judgment",
        {"question": "Q", "answer": "A", "knowledge": "1. K", "rationale": "R"},
    )
    assert user.endswith("### Evaluation")
    assert "explicit" in system

    completion = (
        "---\nConcept: K\nApplication: \"explicit\"\nCorrectness: \"correct\"\n"
        "Details: \"used directly\"\n---\n"
    )
    labels = pkeval.parse_judgment(completion, ["K"])
    assert labels[0]["application"] == "explicit"
    assert labels[0]["correctness"] == "correct"


def test_agreement():
    teacher = [("explicit", "correct")] * 10
    student = [("explicit", "correct")] * 8 + [("explicit", "incorrect")] * 2
    score = pkeval.agreement_f1(teacher, student)
    assert score["application_f1"] == 1.0
    assert abs(score["correctness_f1"] - 8.0 / 9.0) < 1e-12


def test_select_pair():
    pool = [
        {"sample_id": 0, "answer_correct": True, "token_count": 100, "wkp": 3.0, "wkr": 0.9},
        {"sample_id": 1, "answer_correct": True, "token_count": 100, "wkp": 3.0, "wkr": 0.4},
        {"sample_id": 2, "answer_correct": False, "token_count": 100, "wkp": 1.0, "wkr": 0.2},
    ]
    pair = pkeval.select_pair(pool, "kr_min", seed=7)
    assert pair["chosen_sample_id"] == 1
    assert pair["rejected_sample_id"] == 2
    pair = pkeval.select_pair(pool, "kr_max", seed=7)
    assert pair["chosen_sample_id"] == 0

    all_incorrect = [
        {"sample_id": 0, "answer_correct": False, "token_count": 10, "wkp": 1.0, "wkr": 0.5},
        {"sample_id": 1, "answer_correct": False, "token_count": 20, "wkp": 2.0, "wkr": 0.6},
    ]
    assert pkeval.select_pair(all_incorrect, "answer_driven") is None


def test_bad_inputs_raise():
    with pytest.raises(Exception):
        pkeval.metrics_from_labels(["explicit"], ["correct"], [1, 2])
    with pytest.raises(Exception):
        pkeval.render_prompt("judgment", {"question": "Q"})
