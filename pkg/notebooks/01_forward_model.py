"""
Rainbow streaks from band timing
================================

A push-frame sensor captures red, green and blue a fraction of a second
apart.  Anything that moves in between lands at three places, so a car
smears into a coloured streak whose length gives its speed.
"""

# %%
# Speed from streak length.  On SkySat each pixel of red->blue
# displacement is worth about 3.2 km/h, on SuperDove 13.5 km/h.
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from rainbow_vectors import synth
from rainbow_vectors.sensor import SKYSAT, SUPERDOVE, rainbow_from_speed, speed_from_rainbow

for s in (SKYSAT, SUPERDOVE):
    print(f"{s.name:10s} {speed_from_rainbow(1.0, s).speed_kmh:6.3f} km/h per pixel")

# a highway car at 100 km/h is a long streak at 0.5 m and barely a pixel at 3 m
for s in (SKYSAT, SUPERDOVE):
    print(f"{s.name:10s} 100 km/h -> {rainbow_from_speed(100.0, s):.2f} px")

# %%
# Render one car heading east at 90 km/h on each sensor.
OUT = Path(__file__).with_name("out")
OUT.mkdir(exist_ok=True)

fig, axes = plt.subplots(1, 2, figsize=(8, 4))
for ax, s in zip(axes, (SKYSAT, SUPERDOVE)):
    size = 80 if s is SKYSAT else 24
    v = synth.VehicleSpec(((size - 1) / 2, (size - 1) / 2), speed_kmh=90.0, heading_deg=90.0, intensity=220)
    bundle, truth = synth.render_scene(synth.SceneSpec(size, size, s, [v], noise_sigma=2.0, rng_seed=0))
    ax.imshow(bundle.rgb, interpolation="nearest")
    r = truth.records[0]
    ax.set_title(f"{s.name}: {r.blur_length_px:.1f} px streak")
    ax.set_axis_off()
fig.tight_layout()
fig.savefig(OUT / "forward_model.png", dpi=100)
print("saved", OUT / "forward_model.png")

# %%
# Streak length grows linearly with speed and shrinks with coarser pixels.
speeds = np.linspace(0, 140, 8)
for s in (SKYSAT, SUPERDOVE):
    print(s.name, np.round([rainbow_from_speed(v, s) for v in speeds], 2))
