"""Run conv -> ReLU -> FC privately and print the per-layer report."""

from hecnn.pipeline import run_config

config = {
    "params": "desk",
    "seed": 5,
    "layers": [
        {"type": "conv", "c_i": 4, "c_o": 4, "w": 8, "f": 2},
        {"type": "relu"},
        {"type": "fc", "n_o": 10, "bias": True},
    ],
}

report = run_config(config)
for row in report["layers"]:
    print(f"layer {row['index']} {row['type']:4s}: max error {row['max_error']:.2e} "
          f"(tolerance {row['tolerance']:.2e})")
c = report["counters"]
print(f"rotations {c['rotations_server']}/{c['rotations_client']}, "
      f"{c['bytes_c2s']} bytes up, {c['bytes_s2c']} bytes down, pass = {report['pass']}")
