"""Walk one private conv layer through both parties, message by message."""

import numpy as np

from hecnn import ckks
from hecnn import conv_protocol as cp
from hecnn.conv_pack import ConvShape
from hecnn.cost_model import CostCounters
from hecnn.oracle import conv2d_ref
from hecnn.ring import RingParams

params = RingParams.desk()
shape = ConvShape.square(4, 4, 8, 2)
rng = np.random.default_rng(0)
sk, pk = ckks.keygen(params, rng)

img = rng.uniform(-1, 1, (shape.c_i, shape.w_i, shape.h_i))
filters = rng.uniform(-1, 1, (shape.c_i, shape.c_o, shape.f_w, shape.f_h))
counters = CostCounters()

server, init = cp.server_init(filters, shape, pk, rng, counters.server)
print(f"server publishes {shape.c_o} noise-flooded p polynomials ({len(init.payload)} bytes, once)")
client = cp.client_init(init, shape, sk, counters.client)

query, v_id = cp.client_round1(img, shape, pk, client, rng)
print(f"client sends c0 only: {len(query.payload)} bytes")
reply = cp.server_eval(query, server)
print(f"server returns its rescaled share: {len(reply.payload)} bytes")
out = cp.client_round2(reply, client, v_id)

want = conv2d_ref(img, filters, shape)
print(f"output shape {out.shape}, max error {np.max(np.abs(out - want)):.2e}")
print(f"coefficient outputs per side: {counters.coeff_outputs_server}, rotations: {counters.rotations}")
