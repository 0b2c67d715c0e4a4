"""From raw CSVs to the model tensor: join, split, resample, standardize.

The five channels per time step are latitude, longitude, cumulative
distance, trip count, and total riding time; the three scalars are
broadcast along the time axis.  Normalization statistics come from the
training split only and are frozen before they ever see test data.
"""

from pathlib import Path

import numpy as np

from bikefault.data_model import assemble_records, parse_gps, parse_labels, parse_trips, stratified_split
from bikefault.feature_engine import CHANNELS, build_dataset, save_feature_tensor
from bikefault.synthetic import SynthConfig, generate_fleet

raw = Path("demo_output/features/raw")
generate_fleet(SynthConfig(n_bikes=150, faulty_fraction=0.2, seed=7), raw)

records, skipped = assemble_records(parse_trips(raw / "trips.csv"),
                                    parse_gps(raw / "gps.csv"),
                                    parse_labels(raw / "labels.csv"))
print(f"assembled {len(records)} bikes ({skipped.no_gps} skipped for lacking GPS)")

train, test = stratified_split(records, ratio=0.8, seed=7)
print(f"stratified 80/20 split: {len(train)} train / {len(test)} test")

train_tensor = build_dataset(train, norm="fit", t_steps=32)
test_tensor = build_dataset(test, norm=train_tensor.norm, t_steps=32)
print(f"\ntensor shapes: train {train_tensor.values.shape}, test {test_tensor.values.shape}")

print("\nper-channel means (train is centered by construction, test is not):")
for c, name in enumerate(CHANNELS):
    tr = float(train_tensor.values[..., c].mean(dtype=np.float64))
    te = float(test_tensor.values[..., c].mean(dtype=np.float64))
    print(f"  {name:>16}: train {tr:+.5f}   test {te:+.5f}")

out = Path("demo_output/features/train_tensor")
save_feature_tensor(train_tensor, out)
print(f"\ntrain tensor persisted to {out}/ (meta.json + data.bin + labels.bin)")
