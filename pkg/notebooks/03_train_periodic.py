# %% [markdown]
# # Training a network on the periodic benchmark
#
# A reduced run of the full pipeline: the width and epoch count are small
# so the script finishes in a few minutes.  Raise EPOCHS and WIDTH to get
# closer to the published setting (width 256, 2500 epochs).

# %%
import logging
from dataclasses import replace

import numpy as np

from transport_pinn import harness as hs
from transport_pinn import trainer as tr

logging.basicConfig(level=logging.INFO, format="%(message)s")
EPOCHS = 300
WIDTH = 32

# %%
cfg = hs.preset("test1")
cfg = replace(
    cfg,
    network=replace(cfg.network, widths=[3, WIDTH, WIDTH, WIDTH, 1]),
    training=replace(cfg.training, epochs=EPOCHS),
    output_dir="runs/notebook_test1",
)
report = hs.run_all(cfg)

# %% [markdown]
# The report holds the relative density error at every snapshot time,
# computed on the reference mesh with the network evaluated directly at
# the reference points.

# %%
for snap in report["snapshots"]:
    print(f"t={snap['t']:.5f}  relative error {snap['rel_err']:.4f}  max gap {snap['max_gap']:.4f}")

# %% [markdown]
# The balance weights for the initial and boundary terms grow quickly in
# the first epochs and then settle; the history CSV keeps the whole
# trajectory.

# %%
hist = tr.TrainingHistory.from_csv(f"{cfg.output_dir}/{hs.HISTORY_CSV}")
for col in ("loss_ge", "loss_ic", "loss_bc", "lambda_i", "lambda_b"):
    vals = hist.column(col)
    print(f"{col:9s} first {vals[0]:.3e}  last {vals[-1]:.3e}  max {np.max(vals):.3e}")
