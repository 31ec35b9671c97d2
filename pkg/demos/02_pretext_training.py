"""Multi-task pretext training of the latent encoder.

Trains the shared encoder jointly on time regression and variety /
fungicide classification, then scores each head on the held-out split.
"""

from croptraj.evaluation import eval_heads, format_report_table
from croptraj.features import split_train_test
from croptraj.pretext import HeadConfig, TrainConfig, build_model, encode, train
from croptraj.synthetic import SynthConfig, gen_synthetic

feature_set, _ = gen_synthetic(SynthConfig(), seed=7)
train_set, test_set = split_train_test(feature_set, 0.7, seed=7)
print(f"{len(train_set)} train / {len(test_set)} test records, "
      f"feature dim {feature_set.feature_dim}")

heads = HeadConfig(time=True, variety=True, fungicide=True,
                   n_classes=len(feature_set.class_names))
model = build_model(feature_set.feature_dim, heads, seed=0)
print(f"encoder dims: {feature_set.feature_dim} -> "
      f"{model.encoder[0].out_dim} -> {model.latent_dim}")

train_cfg = TrainConfig(learning_rate=0.005, epochs=8, batch_size=16, seed=0)
model, history = train(model, train_set, train_cfg)
print("\nper-epoch mean loss:")
for epoch, loss in enumerate(history, start=1):
    print(f"  epoch {epoch}: {loss:.4f}")

report = eval_heads(model, test_set)
print("\nheld-out metrics:")
print(format_report_table([report]))

latent = encode(model, test_set.feature_matrix())
print(f"\nlatent codes for the test split: shape {latent.shape}")
