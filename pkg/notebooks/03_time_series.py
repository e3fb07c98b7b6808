"""
Traffic over two months
=======================

Daily scenes become a table of counts, mean speed and circular mean
heading.  A trailing z-score marks days whose traffic volume breaks
from the previous week.
"""

# %%
from datetime import date, timedelta
from pathlib import Path

from rainbow_vectors import detector, synth, timeseries as ts

OUT = Path(__file__).with_name("out")
start = date(2023, 4, 1)

# Traffic falls to a third on day 20.
dets, scenes = [], []
for day in range(30):
    n = 18 if day < 20 else 6
    stamp = f"{start + timedelta(days=day)}T09:00:00Z"
    spec = synth.random_scene("superdove", n_moving=n, n_static=0, seed=day, snr=20, timestamp=stamp,
                              scene_id=f"day{day:02d}")
    bundle, _ = synth.render_scene(spec)
    dets.extend(detector.detect(bundle))
    scenes.append((spec.scene_id, stamp))

table = ts.aggregate(dets, scenes=scenes)
flags = ts.volume_anomaly(table, window=7, z_thresh=3.0)
print(table.to_csv())
print("flagged:", [r.date for r, f in zip(table.rows, flags) if f])

# %%
# Headings average on the circle: 350 and 10 degrees mean north, not south.
print(ts.circular_mean([350, 10]))
print(ts.circular_mean([0, 180]))  # opposite directions leave no mean

# %%
for p in ts.write_plots(table, OUT / "series"):
    print("wrote", p)
