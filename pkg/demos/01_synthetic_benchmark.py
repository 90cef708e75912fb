# %% [markdown]
# # A synthetic cross-modal benchmark with a controllable domain shift
#
# The simulator builds paired text/image embedding sets around shared
# identity prototypes on the unit sphere. Images stay where they are; the
# text side is pushed through a domain-shift operator (planar rotations,
# per-dimension scale jitter, a shared bias, white noise) and renormalized.
# This script walks the severity ladder and shows how retrieval quality
# responds.

# %%
import numpy as np

from cmtta import (
    ShiftSpec,
    SyntheticSpec,
    cosine_similarity,
    evaluate,
    generate,
    model_scores,
)

# %% No shift at all: text and image clouds are exchangeable draws from the
# same identity model, so retrieval is nearly perfect.
null_shift = ShiftSpec(rotation_angle=0.0, n_planes=0, scale_jitter=0.0,
                       bias_sigma=0.0, noise_sigma=0.0)
spec = SyntheticSpec(intra_noise_sigma=0.05, shift=null_shift, seed=0)
text, image = generate(spec)
metrics = evaluate(cosine_similarity(text, image), text.labels, image.labels)
print("null shift:        ", metrics.to_json())

# %% The default "moderate" shift: rotation by 30 degrees in 8 random
# planes, +-20% per-dimension scale jitter, a shared bias, light noise.
spec = SyntheticSpec(seed=0)
text, image = generate(spec)
metrics = evaluate(cosine_similarity(text, image), text.labels, image.labels)
print("moderate shift:    ", metrics.to_json())

# %% Rotation severity sweep: turning the planes further monotonically
# degrades retrieval until it approaches chance.
for angle in (0.0, np.pi / 6, np.pi / 3, np.pi / 2):
    shift = ShiftSpec(rotation_angle=angle, n_planes=32, scale_jitter=0.0,
                      bias_sigma=0.0, noise_sigma=0.0)
    r1 = []
    for seed in range(3):
        t, i = generate(SyntheticSpec(intra_noise_sigma=0.1, shift=shift, seed=seed))
        r1.append(evaluate(cosine_similarity(t, i), t.labels, i.labels).r_at[1])
    print(f"rotation {angle:.3f} rad in 32 planes: R@1 = {np.mean(r1):.3f}")

# %% The engine consumes model scores, not raw cosines: a contrastive dual
# encoder emits logit-scaled similarities (scale * cosine). Rankings and
# metrics are identical; only the softmax confidence downstream changes.
text, image = generate(SyntheticSpec(seed=0))
cos = cosine_similarity(text, image)
scores = model_scores(text, image, 30.0)
assert evaluate(cos, text.labels, image.labels) == evaluate(scores, text.labels, image.labels)
print("cosine range:      [%.3f, %.3f]" % (cos.scores.min(), cos.scores.max()))
print("model score range: [%.3f, %.3f]" % (scores.scores.min(), scores.scores.max()))
