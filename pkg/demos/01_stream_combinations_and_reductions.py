# Stream bookkeeping and the row reductions.
#
# Run:  python demos/01_stream_combinations_and_reductions.py

import numpy as np

from buildsentinel.core import reference_inventory
from buildsentinel.evaluate import enumerate_combinations
from buildsentinel.preprocess import atan_norm, reduce, reduce_frame, to_windows
from buildsentinel import synth

# The bundled inventory lists every stream the building publishes, grouped by
# the device that captures it.  Some devices measure the same quantity, so
# only a subset counts as unique sensors.

inv = reference_inventory()
print(len(inv), "streams on", len(inv.device_counts()), "devices,", len(inv.unique_columns), "unique")
for device, n in inv.device_counts().items():
    print(f"  {device:>4}: {n} streams")

# Every non-empty subset of a device's streams is a candidate model input,
# and so is every non-empty subset of the unique sensors across devices.

intra, inter, listing = enumerate_combinations(inv)
print("intra-device combinations:", intra)
print("inter-device combinations:", inter)
for scope, device, cols in list(listing)[:3]:
    print("  e.g.", scope, device, cols)

# Reductions collapse one row of D readings into a single number.  MAD
# ignores a single wild reading, the average does not.

row = np.array([1.0, 2.0, 3.0, 4.0, 100.0])
for kind in ("average", "sd", "mad", "skewness", "kurtosis"):
    print(f"{kind:>9}: {reduce(row, kind):8.3f}")

# On a synthetic day the reduced stream is univariate: one value per tick.

day = synth.generate(synth.default_scenario(days=1, seed=3))
mad = reduce_frame(day, "mad")
print("reduced frame:", day.shape, "->", mad.shape, "column", mad.columns)

# Heavy-tailed streams (sound, device counts) can be squashed into [0, 1].
x = np.array([0.0, 0.5, 1.0, 5.0, 50.0])
print("atan_norm:", np.round(atan_norm(x, scale=1.0), 3))

# Forecasters see sliding windows: N = R - T samples of T rows each, with
# the next row as the target.  The windows are a view, nothing is copied.

w = to_windows(day, 74)
print("windows:", w.data.shape, "targets:", w.targets.shape,
      "shares memory:", np.shares_memory(w.data, day.values))
