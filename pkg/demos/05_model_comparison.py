"""Every model on one fleet, rendered as the comparison table.

Logistic regression and kNN consume a flat per-bike summary vector; the
two transformers consume the full sequence tensor.  The scratch
transformer shares the probe's architecture but trains end-to-end on the
labels with no pretraining.
"""

from pathlib import Path

import numpy as np

from bikefault.baselines import (flat_features, knn_predict_batch, standardize_flat,
                                 train_logreg, train_scratch_transformer)
from bikefault.data_model import assemble_records, parse_gps, parse_labels, parse_trips, stratified_split
from bikefault.feature_engine import build_dataset
from bikefault.model import ModelConfig
from bikefault.synthetic import SynthConfig, generate_fleet
from bikefault.training import TrainConfig, finetune, pretrain
from bikefault.evaluation import confusion, evaluate, metrics, render_table

raw = Path("demo_output/comparison/raw")
generate_fleet(SynthConfig(n_bikes=400, faulty_fraction=0.2, seed=13), raw)
records, _ = assemble_records(parse_trips(raw / "trips.csv"), parse_gps(raw / "gps.csv"),
                              parse_labels(raw / "labels.csv"))
train, test = stratified_split(records, ratio=0.8, seed=13)
train_tensor = build_dataset(train, norm="fit", t_steps=16)
test_tensor = build_dataset(test, norm=train_tensor.norm, t_steps=16)
test_labels = [r.label for r in test]

reports = []

train_flat, stats = standardize_flat(flat_features(train))
test_flat, _ = standardize_flat(flat_features(test), stats)
train_y = np.array([int(r.label) for r in train])

logreg = train_logreg(train_flat, train_y)
reports.append(metrics(confusion(test_labels, logreg.predict(test_flat)), model="logreg"))

knn_pred = knn_predict_batch(train_flat, train_y, test_flat, k=5)
reports.append(metrics(confusion(test_labels, knn_pred), model="knn(k=5)"))

mcfg = ModelConfig(t_steps=16, input_dim=5, d_model=32, n_heads=2, n_layers=1, d_ff=64)
scratch, _ = train_scratch_transformer(train_tensor, mcfg,
                                       TrainConfig(epochs=20, batch_size=32, seed=13))
reports.append(evaluate(scratch, test_tensor, model_name="transformer-scratch"))

ckpt, _ = pretrain(train_tensor, mcfg, TrainConfig(epochs=15, batch_size=64, seed=13))
probe, _ = finetune(train_tensor, ckpt,
                    TrainConfig(epochs=20, batch_size=32, lr=1e-2, seed=13))
reports.append(evaluate(probe, test_tensor, model_name="transformer-pretrained"))

table, rows = render_table(reports)
print(table)

out = Path("demo_output/comparison/reports.jsonl")
out.write_text("\n".join(rows) + "\n")
print(f"machine-readable rows written to {out}")
