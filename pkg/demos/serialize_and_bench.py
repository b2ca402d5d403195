"""Save a model, inspect the file layout byte by byte, reload it, time inference.

Run: python demos/serialize_and_bench.py
"""

import json
import struct
import tempfile
from pathlib import Path

import numpy as np

from lidsnet import Config, load, load_dataset, predict_proba, save, train
from lidsnet import evalbench
from lidsnet.toy import write_toy_corpus

tmp = Path(tempfile.mkdtemp())
corpus = load_dataset(write_toy_corpus(tmp / "data"))
model = train(corpus, Config(embeddings="random", pairs_per_class=150, phase1_epochs=2, phase2_epochs=10))

path = tmp / "model.lids"
size = save(model, path)
raw = path.read_bytes()
magic, version, hlen = raw[:4], *struct.unpack_from("<II", raw, 4)
header = json.loads(raw[12:12 + hlen])
print(f"{path.name}: {size} bytes, magic={magic!r} version={version} header={hlen} bytes")
for t in header["tensors"]:
    print(f"  {t['name']:14} shape={str(t['shape']):12} offset={t['offset']:>7} nbytes={t['nbytes']}")

probes = ["play jazz", "rain tomorrow", "unknown words only"]
same = np.array_equal(predict_proba(model, probes), predict_proba(load(path), probes))
print(f"reloaded predictions bit-identical: {same}")

fp = evalbench.count_params(model)
print(f"parameters: {fp.total} ({', '.join(f'{k}={v}' for k, v in fp.components.items())})")
lat = evalbench.benchmark_latency(model, [" ".join(t) for t in corpus["test"].tokens], runs=200)
print(f"latency ms: median={lat.median:.2f} p95={lat.p95:.2f} max={lat.max:.2f}")
