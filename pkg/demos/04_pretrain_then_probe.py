"""Masked pretraining, then a linear probe on the frozen encoder.

Pretraining never sees a label: random contiguous time segments are
replaced by a learned token and the encoder is trained to reconstruct
the original values.  Probing then freezes everything and fits only a
linear head on the pooled representations.
"""

from pathlib import Path

import numpy as np

from bikefault.data_model import assemble_records, parse_gps, parse_labels, parse_trips, stratified_split
from bikefault.feature_engine import build_dataset
from bikefault.model import ModelConfig
from bikefault.synthetic import SynthConfig, generate_fleet
from bikefault.training import TrainConfig, finetune, pretrain
from bikefault.evaluation import evaluate

raw = Path("demo_output/pretrain/raw")
generate_fleet(SynthConfig(n_bikes=400, faulty_fraction=0.2, seed=5), raw)
records, _ = assemble_records(parse_trips(raw / "trips.csv"), parse_gps(raw / "gps.csv"),
                              parse_labels(raw / "labels.csv"))
train, test = stratified_split(records, ratio=0.8, seed=5)
train_tensor = build_dataset(train, norm="fit", t_steps=16)
test_tensor = build_dataset(test, norm=train_tensor.norm, t_steps=16)

mcfg = ModelConfig(t_steps=16, input_dim=5, d_model=32, n_heads=2, n_layers=1, d_ff=64)

print("pretraining (reconstruction loss per epoch):")
ckpt, log = pretrain(train_tensor, mcfg, TrainConfig(epochs=10, batch_size=64, seed=5))
for entry in log.entries[::3]:
    print(f"  epoch {entry.epoch:2d}: {entry.loss:.4f}")

print("\nlinear probing (cross-entropy per epoch):")
model, probe_log = finetune(train_tensor, ckpt,
                            TrainConfig(epochs=15, batch_size=32, lr=1e-2, seed=5))
for entry in probe_log.entries[::5]:
    print(f"  epoch {entry.epoch:2d}: {entry.loss:.4f}")

frozen = sum(1 for name, t in model.params.items()
             if name not in ("head.w", "head.b")
             and np.array_equal(t.data, ckpt.params[name]))
print(f"\n{frozen} of {len(model.params)} parameter tensors untouched by probing")

report = evaluate(model, test_tensor, model_name="probe")
print(f"held-out: acc {report.accuracy:.4f}  precision {report.precision:.4f}  "
      f"recall {report.recall:.4f}  F1 {report.f1:.4f}")
