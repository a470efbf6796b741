"""The HTTP service answering workbench-style requests.

Needs demos/artifacts/ from 04_train_toy_model.py. Uses the in-process test
client; `varnamer serve` runs the same app under uvicorn.

Run: python demos/07_serve_and_query.py
"""

import json
import os

from fastapi.testclient import TestClient

from varnamer import corpus
from varnamer.service import create_app, load_predictor

ART = os.path.join(os.path.dirname(__file__), "artifacts")
predictor, info = load_predictor(
    os.path.join(ART, "model.ckpt"),
    os.path.join(ART, "vocab.tokens.txt"),
    os.path.join(ART, "vocab.merges.txt"),
    max_allowed=2,
)
client = TestClient(create_app(predictor, info))

print("GET /health ->", client.get("/health").json())
model_info = client.get("/model").json()
print("GET /model  ->", {k: model_info[k] for k in ("param_count", "vocab_hash")})

canons = corpus.read_canonical_corpus(os.path.join(ART, "corpus.txt"),
                                      os.path.join(ART, "corpus.index.json"))
canon = next(c for c in canons if c.split == "train" and len(c.slots) >= 2)

# The workbench sends the function text, slot spans, and any names the
# analyst has accepted so far; the server holds no session state.
body = {
    "code": canon.text,
    "slots": [
        {"placeholder": s.decompiler_name, "spans": [list(sp) for sp in s.spans]}
        for s in canon.slots
    ],
    "accepted": {},
    "k": 3,
    "mode": "heuristic",
}
response = client.post("/predict", json=body)
print("\nPOST /predict ->", response.status_code)
payload = response.json()
for name, ranked in payload["suggestions"].items():
    top = ranked[0]
    print(f"  {name}: {top['name']!r} (count {top['count']}, "
          f"mean prob {top['mean_prob']:.3f}) and {len(ranked) - 1} more")

# Identical requests produce byte-identical responses.
assert client.post("/predict", json=body).content == response.content
print("\nresponse bytes are deterministic; latency histogram:")
print(json.dumps(client.get("/metrics").json()["latency_seconds"], indent=2))
