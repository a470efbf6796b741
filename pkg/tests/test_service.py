import json

import pytest
from fastapi.testclient import TestClient

from varnamer.inference import InferenceRequest, Predictor
from varnamer.model import ModelConfig, TransformerEncoder
from varnamer.service import create_app


@pytest.fixture(scope="module")
def predictor(toy_vocab):
    config = ModelConfig(layers=1, heads=2, hidden=16, ffn_dim=32, max_seq=96,
                        vocab_size=toy_vocab.size, dropout=0.0)
    return Predictor(TransformerEncoder(config, seed=9), toy_vocab, max_allowed=3)


@pytest.fixture(scope="module")
def client(predictor):
    info = {"vocab_hash": predictor.vocab.token_hash(), "checkpoint_hash": "t" * 64,
            "config": {"layers": 1}, "param_count": 1, "max_allowed": 3}
    app = create_app(predictor, info, max_body_bytes=64 * 1024)
    return TestClient(app)


BODY = {
    "code": "long count; count = count + n;",
    "slots": [
        {"placeholder": "v1", "spans": [[5, 10], [12, 17], [20, 25]]},
        {"placeholder": "v2", "spans": [[28, 29]]},
    ],
    "k": 3,
    "mode": "heuristic",
}


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"model_loaded": True, "status": "ok"}


def test_model_info(client, predictor):
    r = client.get("/model")
    assert r.status_code == 200
    assert r.json()["vocab_hash"] == predictor.vocab.token_hash()


def test_model_info_when_unloaded():
    app = create_app(None, None)
    c = TestClient(app)
    assert c.get("/model").status_code == 503
    assert c.post("/predict", json=BODY).status_code == 503
    assert c.get("/health").json()["model_loaded"] is False


def test_predict_round_trip(client):
    r = client.post("/predict", json=BODY)
    assert r.status_code == 200
    payload = r.json()
    assert set(payload["suggestions"]) == {"v1", "v2"}
    for ranked in payload["suggestions"].values():
        assert len(ranked) <= 3
        for cand in ranked:
            assert set(cand) == {"name", "count", "mean_prob", "token_probs"}


def test_repeated_requests_byte_identical(client):
    a = client.post("/predict", json=BODY)
    b = client.post("/predict", json=BODY)
    assert a.content == b.content


def test_wire_path_equals_library_output(client, predictor):
    response = client.post("/predict", json=BODY).json()
    request = InferenceRequest(
        text=BODY["code"],
        slots={s["placeholder"]: [tuple(x) for x in s["spans"]] for s in BODY["slots"]},
        k=BODY["k"],
        mode=BODY["mode"],
    )
    direct = predictor.refine_with_accepted(request)
    expected = {name: [c.as_dict() for c in ranked] for name, ranked in direct.items()}
    assert json.loads(json.dumps(expected)) == response["suggestions"]


def test_all_slots_accepted_is_success_with_empty_suggestions(client):
    body = dict(BODY, accepted={"v1": "total", "v2": "len"})
    r = client.post("/predict", json=body)
    assert r.status_code == 200
    assert r.json()["suggestions"] == {}


def test_invalid_spans_are_400(client):
    body = dict(BODY, slots=[{"placeholder": "v1", "spans": [[5, 999]]}])
    r = client.post("/predict", json=body)
    assert r.status_code == 400
    assert "out of bounds" in r.json()["error"]


def test_unknown_accepted_placeholder_is_400(client):
    body = dict(BODY, accepted={"nope": "x"})
    assert client.post("/predict", json=body).status_code == 400


def test_k_below_one_is_400(client):
    body = dict(BODY, k=0)
    assert client.post("/predict", json=body).status_code == 400


def test_oracle_mode_requires_counts(client):
    body = dict(BODY, mode="oracle")
    r = client.post("/predict", json=body)
    assert r.status_code == 400
    body["slots"] = [dict(s, count=1) for s in BODY["slots"]]
    assert client.post("/predict", json=body).status_code == 200


def test_duplicate_placeholders_rejected(client):
    body = dict(BODY, slots=[BODY["slots"][0], BODY["slots"][0]])
    assert client.post("/predict", json=body).status_code == 400


def test_sequence_overflow_is_413(client):
    code = "long count; " + "count = count + 1; " * 40
    spans = []
    start = 0
    while True:
        idx = code.find("count", start)
        if idx < 0:
            break
        spans.append([idx, idx + 5])
        start = idx + 5
    body = {"code": code, "slots": [{"placeholder": "v1", "spans": spans}], "k": 1,
            "mode": "heuristic"}
    r = client.post("/predict", json=body)
    assert r.status_code == 413
    assert "max_seq" in r.json()["error"]


def test_oversized_body_is_413(client):
    body = dict(BODY, code=BODY["code"] + " " * 70_000)
    r = client.post("/predict", json=body)
    assert r.status_code == 413


def test_metrics_counts_requests(client):
    before = client.get("/metrics").json()["requests"]["predict"]
    client.post("/predict", json=BODY)
    after = client.get("/metrics").json()["requests"]["predict"]
    assert after == before + 1
