"""Velocity-field mixtures and trajectory forecasting.

Builds position-velocity samples from embedded training tracks, fits a
mixture per (variety, fungicide) group, conditions it at a start point,
and rolls a full-season trajectory out over the test embedding. Also
runs the withheld-variety protocol on the embedded test points.
"""

from pathlib import Path

import numpy as np

from croptraj.embedding import EmbedConfig, fit_planar_embedding, transform_new
from croptraj.evaluation import eval_unseen_classes
from croptraj.features import split_train_test
from croptraj.plotting import scatter_svg
from croptraj.pretext import HeadConfig, TrainConfig, build_model, encode, train
from croptraj.synthetic import SynthConfig, gen_synthetic
from croptraj.trajectory import Track, condition_velocity, fit_group_mixtures, rollout

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

feature_set, _ = gen_synthetic(SynthConfig(tracks_per_class=16), seed=7)
train_set, test_set = split_train_test(feature_set, 0.7, seed=7)
heads = HeadConfig(time=True, variety=True, n_classes=len(feature_set.class_names))
model, _ = train(
    build_model(feature_set.feature_dim, heads, seed=7),
    train_set,
    TrainConfig(batch_size=16, seed=7),
)
embedding = fit_planar_embedding(
    encode(model, train_set.feature_matrix()), EmbedConfig(), seed=7
)

# group the embedded training points back into tracks
tracks = {}
for rec, xy in zip(train_set.records, embedding.coords):
    tracks.setdefault(rec.track_id, []).append((rec, xy))
track_objs = [
    Track(
        track_id=tid,
        sessions=[r.session_index for r, _ in sorted(members, key=lambda m: m[0].session_index)],
        points=[xy for _, xy in sorted(members, key=lambda m: m[0].session_index)],
        variety_id=members[0][0].variety_id,
        fungicide=members[0][0].fungicide,
    )
    for tid, members in tracks.items()
]

# A lag of 3 sessions denoises the velocities and bridges small gaps the
# projection leaves in a track's filament.
LAG = 3
mixtures = fit_group_mixtures(track_objs, lag=LAG, n_components=8, seed=0)
print(f"fitted {len(mixtures)} group mixtures (velocity lag {LAG}):")
for (variety, fungicide), gmm in mixtures.items():
    print(f"  variety={variety} fungicide={fungicide}: "
          f"{gmm.n_components} components, "
          f"{gmm.diagnostics.n_iter} EM iterations")

# conditional velocity at one group's season start
group = (0, False)
group_tracks = sorted(
    (t for t in track_objs if (t.variety_id, t.fungicide) == group),
    key=lambda t: t.track_id,
)
x0 = group_tracks[0].points[0]
cond = condition_velocity(mixtures[group], x0)
print(f"\nP(V | X = {np.round(x0, 2)}): {cond.weights.shape[0]} components, "
      f"mean velocity {np.round(cond.mean(), 3)}")

# full-season mean-mode rollouts for the whole group, overlaid on the
# held-out embedding; gaps make some tracks harder than others
paths = []
errors = []
for t in group_tracks:
    res = rollout(mixtures[group], t.points[0], steps=(len(t) - 1) // LAG, mode="mean")
    paths.append(res.points)
    errors.append(float(np.linalg.norm(res.points[-1] - t.points[-1])))
diameter = float(np.linalg.norm(embedding.coords.max(axis=0) - embedding.coords.min(axis=0)))
print(f"rolled out {len(paths)} tracks; endpoint error median "
      f"{np.median(errors):.2f}, worst {max(errors):.2f} "
      f"(embedding diameter {diameter:.1f})")

test_coords = transform_new(embedding, encode(model, test_set.feature_matrix()))
varieties = np.array([r.variety_id for r in test_set.records])
path = OUT / "rollout_over_test.svg"
path.write_text(scatter_svg(test_coords, varieties, "variety", rollouts=paths))
print(f"wrote {path}")

# Withheld-variety protocol: retrain with two varieties held out
# entirely, project their features through the resulting encoder and
# embedding, and score how well a 2-component mixture separates them.
from dataclasses import replace

from croptraj.features import FeatureSet

seen = [r for r in feature_set.records if r.variety_id >= 2]
unseen = [r for r in feature_set.records if r.variety_id < 2]
seen_set = FeatureSet(
    feature_set.feature_dim, feature_set.span_days, ["C", "D"],
    [replace(r, variety_id=r.variety_id - 2) for r in seen],
    feature_set.backbone, feature_set.scale,
)
seen_train, _ = split_train_test(seen_set, 0.7, seed=7)
held_model, _ = train(
    build_model(feature_set.feature_dim, HeadConfig(time=True, variety=True, n_classes=2), seed=7),
    seen_train,
    TrainConfig(batch_size=16, seed=7),
)
held_embedding = fit_planar_embedding(
    encode(held_model, seen_train.feature_matrix()), EmbedConfig(), seed=7
)
unseen_features = np.stack([r.features for r in unseen]).astype(float)
unseen_coords = transform_new(held_embedding, encode(held_model, unseen_features))
unseen_labels = np.array([r.variety_id for r in unseen])
pa = eval_unseen_classes(unseen_coords, unseen_labels, 2, seed=0)
print(f"\nwithheld-variety PA (varieties 0 and 1 never seen in training): {pa:.1f}%")
