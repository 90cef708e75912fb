# %% [markdown]
# # On-disk formats and the command-line pipeline
#
# All artifacts are small little-endian binary files: UEB1 embedding sets,
# USM1 score matrices, UCH1 calibration heads. Saving is bit-exact and
# loading re-validates everything, so a pipeline can be torn down and
# resumed from disk at any stage. The same flow is scriptable through the
# `cmtta` CLI.

# %%
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from cmtta import (
    SyntheticSpec,
    generate,
    load_embeddings,
    load_head,
    load_scores,
    model_scores,
    save_embeddings,
    save_head,
    save_scores,
)

workdir = Path(tempfile.mkdtemp(prefix="cmtta-demo-"))
print("working in", workdir)

# %% Embedding round-trip is byte-exact, including ids and labels.
text, image = generate(SyntheticSpec(n_identities=10, dim=32, seed=1))
save_embeddings(text, workdir / "text.ueb1")
back = load_embeddings(workdir / "text.ueb1")
assert back.data.tobytes() == text.data.tobytes()
assert back.ids == text.ids
print("UEB1 round-trip ok:", back.count, "rows of dim", back.dim)

# %% Score matrices travel the same way; external provenance means the
# entries are accepted as-is (any scale, e.g. two-stage matching scores).
save_embeddings(image, workdir / "image.ueb1")
scores = model_scores(text, image, 30.0)
save_scores(scores, workdir / "scores.usm1")
print("USM1 round-trip ok:", load_scores(workdir / "scores.usm1").scores.shape)

# %% Calibration heads serialize to a few hundred bytes.
gamma = np.linspace(0.9, 1.1, 32)
beta = np.zeros(32)
save_head(gamma, beta, workdir / "head.uch1")
g, b = load_head(workdir / "head.uch1")
print("UCH1 round-trip ok, gamma[:3] =", g[:3])

# %% The CLI drives the same pipeline end to end. Every command is
# deterministic for a fixed config and seed (byte-identical outputs).
config = workdir / "config.yaml"
config.write_text(
    "seed: 11\n"
    "simulator:\n  n_identities: 25\n  dim: 32\n"
    "adaptation:\n  rounds: 5\n  queries_per_batch: 16\n"
)
for cmd in (
    ["cmtta", "simulate", "--config", str(config), "--out", str(workdir / "sim")],
    ["cmtta", "adapt", "--config", str(config),
     "--text", str(workdir / "sim/text.ueb1"),
     "--image", str(workdir / "sim/image.ueb1"),
     "--out", str(workdir / "run")],
    ["cmtta", "evaluate",
     "--text", str(workdir / "sim/text.ueb1"),
     "--image", str(workdir / "sim/image.ueb1")],
):
    print("$", " ".join(cmd))
    print(subprocess.run(cmd, capture_output=True, text=True).stdout.strip())

print("artifacts:", sorted(p.name for p in (workdir / "run").iterdir()))
