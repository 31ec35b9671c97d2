"""Projecting latent codes to an interpretable plane.

Fits the 2D embedding on training latents, maps the held-out split into
the same plane with training coordinates frozen, and exports colored
scatters.
"""

from pathlib import Path

import numpy as np

from croptraj.embedding import EmbedConfig, fit_planar_embedding, transform_new
from croptraj.features import split_train_test
from croptraj.plotting import scatter_svg
from croptraj.pretext import HeadConfig, TrainConfig, build_model, encode, train
from croptraj.synthetic import SynthConfig, gen_synthetic

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

feature_set, _ = gen_synthetic(SynthConfig(tracks_per_class=16), seed=7)
train_set, test_set = split_train_test(feature_set, 0.7, seed=7)

heads = HeadConfig(time=True, variety=True, n_classes=len(feature_set.class_names))
model = build_model(feature_set.feature_dim, heads, seed=0)
model, _ = train(model, train_set, TrainConfig(batch_size=16, seed=0))

train_latents = encode(model, train_set.feature_matrix())
embedding = fit_planar_embedding(train_latents, EmbedConfig(), seed=7)
print(f"fitted embedding: {embedding.coords.shape[0]} points, "
      f"curve params a={embedding.a:.3f} b={embedding.b:.3f}")

test_coords = transform_new(embedding, encode(model, test_set.feature_matrix()))
print(f"transformed {test_coords.shape[0]} held-out latents "
      "(training coordinates frozen)")

points = np.concatenate([embedding.coords, test_coords])
records = train_set.records + test_set.records
sessions = np.array([r.session_index for r in records], dtype=float)
varieties = np.array([r.variety_id for r in records])

for key, values in (("time", sessions), ("variety", varieties)):
    path = OUT / f"embedding_by_{key}.svg"
    path.write_text(scatter_svg(points, values, key))
    print(f"wrote {path}")
