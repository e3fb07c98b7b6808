"""
Finding movers and reading their velocity
=========================================

Moving vehicles are the only small things whose colour bands disagree.
The baseline detector scores that disagreement, groups pixels into
components, fits an ellipse to each and reads speed from the red->blue
offset along the major axis.
"""

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from rainbow_vectors import detector, evaluation, geometry as geo, synth

OUT = Path(__file__).with_name("out")
OUT.mkdir(exist_ok=True)

bundle, truth = synth.render_scene(synth.random_scene("skysat", n_moving=12, n_static=6, n_clouds=1, seed=4))
dets = detector.detect(bundle)
print(f"{len(truth)} vehicles in truth, {len(dets)} detections")

# %%
# The score plane: bright where the bands disagree.
score = detector.chromatic_anomaly_mask(bundle).planes[0]
fig, axes = plt.subplots(1, 2, figsize=(10, 5))
axes[0].imshow(bundle.rgb)
axes[1].imshow(score, cmap="magma")
for d in dets:
    x, y = d.footprint.exterior.xy
    axes[0].plot(x, y, "c-" if d.velocity else "y-", lw=1)
    if d.velocity is not None and d.velocity.heading_confidence == "resolved":
        r0, c0 = d.ellipse.center_px
        dr, dc = geo.heading_unit(d.velocity.heading_deg)
        axes[0].arrow(c0, r0, 12 * dc, 12 * dr, color="w", width=0.5)
for ax in axes:
    ax.set_axis_off()
fig.tight_layout()
fig.savefig(OUT / "detections.png", dpi=100)

# %%
# Per-vehicle speed and heading against truth.
for r in truth.records:
    hits = [d for d in dets if d.footprint.intersects(r.footprint) and d.velocity is not None]
    if r.cls == "static_car" or not hits:
        continue
    d = hits[0]
    print(f"truth {r.true_speed_kmh:6.1f} km/h {r.true_heading_deg:6.1f} deg | "
          f"found {d.velocity.speed.speed_kmh:6.1f} km/h {d.velocity.heading_deg:6.1f} deg "
          f"({d.velocity.heading_confidence})")

# %%
# Detection scores.  Count fraction ignores where things are; F1 does not.
print(evaluation.evaluate(dets, truth.records).to_text())
