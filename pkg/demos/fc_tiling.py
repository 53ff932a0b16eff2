"""FC layers that outgrow one polynomial are split into row and column tiles."""

import numpy as np

from hecnn import ckks
from hecnn.cost_model import CostCounters
from hecnn.fc_pack import FcShape, plan_tiles
from hecnn.fc_protocol import run_fc_local
from hecnn.ring import RingParams

params = RingParams.desk(N=256)
rng = np.random.default_rng(1)
sk, pk = ckks.keygen(params, rng)

for n_i, n_o in ((16, 8), (64, 16), (300, 20)):
    shape = FcShape(n_i, n_o)
    plan = plan_tiles(n_i, n_o, params.N)
    W = rng.uniform(-1, 1, (n_o, n_i)) / np.sqrt(n_i)
    I, B = rng.uniform(-1, 1, n_i), rng.uniform(-1, 1, n_o)
    c = CostCounters()
    got = run_fc_local(I, W, B, shape, sk, pk, rng, c)
    print(f"n_i={n_i:4d} n_o={n_o:3d}: {len(plan.tiles)} tile(s), "
          f"{c.residues_c2s} residues up, {c.residues_s2c} down, "
          f"max error {np.max(np.abs(got - (W @ I + B))):.2e}")
