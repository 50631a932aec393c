"""Structured pruning is graph surgery, not masking.

Removing a conv channel means deleting its kernel slice, its BatchNorm
entry, and the matching input slice of every consumer -- and when a
residual Add ties two layers together positionally, their channels must
leave together. This demo shows the dependency analysis and checks that
the rewritten (genuinely smaller) network computes exactly what the
masked original does.

Run:  python3 demos/02_graph_surgery.py
"""

import numpy as np

from energyprune import (build_channel_groups, count_complexity, forward,
                         make_rng, rewrite_remove_channels)
from energyprune.graph import GraphError, RewriteRefusal
from energyprune.toybench import build_toy_cnn_residual

g = build_toy_cnn_residual(seed=0)

# --- who must be pruned together ------------------------------------------
groups = build_channel_groups(g)
tied = [grp for grp in groups if len(grp.slots) > 1]
print(f"{len(groups)} removal groups, {len(tied)} of them tied by adds")
example = sorted(tied, key=lambda grp: sorted(grp.slots))[0]
print("example tied group:", sorted(example.slots))
print()

# --- an unclosed removal is refused ---------------------------------------
try:
    rewrite_remove_channels(g, [("stem.conv", 0)])
except GraphError as exc:
    print("removing (stem.conv, 0) alone is refused:")
    print("  ", exc)
print()

# --- a closed removal produces a smaller, equivalent network --------------
removals = [("stem.conv", 0), ("b1.conv2", 0),    # one tied pair
            ("b2.conv1", 3), ("b2.proj", 3),      # one projection pair
            ("b1.conv1", 5)]                      # one free channel
pruned = rewrite_remove_channels(g, removals)

base, small = count_complexity(g), count_complexity(pruned)
fl, pa = small.reduction_vs(base)
print(f"FLOPs {base.flops} -> {small.flops} (-{fl:.1f}%), "
      f"params {base.params} -> {small.params} (-{pa:.1f}%)")

masks = {"stem.conv": np.ones(16), "b1.conv2": np.ones(16),
         "b2.conv1": np.ones(32), "b2.proj": np.ones(32),
         "b1.conv1": np.ones(16)}
masks["stem.conv"][0] = masks["b1.conv2"][0] = 0
masks["b2.conv1"][3] = masks["b2.proj"][3] = 0
masks["b1.conv1"][5] = 0

x = make_rng(1).normal(size=(4, 3, 8, 8))
masked = forward(g, x, masks=masks).output
rewired = forward(pruned, x).output
print("masked vs pruned max |difference|:", np.max(np.abs(masked - rewired)))

# --- the rewrite never deletes a whole layer ------------------------------
try:
    rewrite_remove_channels(g, [("b1.conv1", i) for i in range(16)])
except RewriteRefusal as exc:
    print("emptying a layer is refused:")
    print("  ", exc)
