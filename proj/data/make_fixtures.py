#!/usr/bin/env python3
# Copyright 2026 The resilplan Authors. Licensed under the Apache License, 2.0.
"""Regenerates the sample inputs under data/. Output is deterministic."""

import json
import pathlib

HERE = pathlib.Path(__file__).resolve().parent


def dump(path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def layer(name, fwd, bwd, state, act, gpus, tp_eff):
    speed = [1.0 + tp_eff * (d - 1) for d in range(1, gpus + 1)]
    return {
        "name": name,
        "state_bytes": state,
        "activation_bytes_per_sample": act,
        "fwd_ms": {str(d): round(fwd / speed[d - 1], 6) for d in range(1, gpus + 1)},
        "bwd_ms": {str(d): round(bwd / speed[d - 1], 6) for d in range(1, gpus + 1)},
    }


def sample():
    # 8 layers on 2-GPU nodes; embedding and head are lighter/heavier.
    out = HERE / "sample"
    out.mkdir(exist_ok=True)
    layers = [layer("embed", 4.0, 8.0, 2_000_000_000, 20_000_000, 2, 0.7)]
    layers += [layer(f"block{i}", 12.0, 24.0, 4_000_000_000, 50_000_000, 2, 0.8) for i in range(6)]
    layers.append(layer("head", 16.0, 30.0, 3_000_000_000, 30_000_000, 2, 0.7))
    dump(out / "profile.json", {"gpus_per_node": 2, "microbatch_reference": 4, "layers": layers})
    cluster = {"nodes": 8, "gpus_per_node": 2, "gpu_mem_bytes": 16_000_000_000,
               "xfer_gbps": 100.0, "coord_overhead_ms": 1000.0}
    dump(out / "cluster.json", cluster)
    dump(out / "cluster_tiny.json", dict(cluster, nodes=3))
    dump(out / "job.json", {"f": 1, "global_batch": 256, "microbatch": 4})
    events = [
        {"t_s": 600.0, "kind": "fail", "count": 1},
        {"t_s": 1200.0, "kind": "fail", "nodes": [0, 5]},
        {"t_s": 1800.0, "kind": "join", "count": 2},
        {"t_s": 2400.0, "kind": "fail", "count": 1},
    ]
    (out / "trace.jsonl").write_text("".join(json.dumps(e) + "\n" for e in events))


def scenario_12h():
    # 30 single-GPU nodes, 32 layers, f=1. A failure every 10 minutes over
    # 12 hours, each followed 5 minutes later by a replacement node joining.
    out = HERE / "scenario_12h"
    out.mkdir(exist_ok=True)
    layers = [layer("embed", 6.0, 12.0, 1_500_000_000, 0, 1, 1.0)]
    layers += [layer(f"block{i}", 10.0, 20.0, 1_500_000_000, 0, 1, 1.0) for i in range(30)]
    layers.append(layer("head", 14.0, 26.0, 1_500_000_000, 0, 1, 1.0))
    dump(out / "profile.json", {"gpus_per_node": 1, "microbatch_reference": 1, "layers": layers})
    # Copy cost uses the default configuration: 100 Gbps, 1000 ms coordination.
    dump(out / "cluster.json", {"nodes": 30, "gpus_per_node": 1, "gpu_mem_bytes": 40_000_000_000,
                                "xfer_gbps": 100.0, "coord_overhead_ms": 1000.0})
    dump(out / "job.json", {"f": 1, "global_batch": 1024, "microbatch": 8})
    events = []
    for k in range(1, 72):
        events.append({"t_s": 600.0 * k, "kind": "fail", "count": 1})
        events.append({"t_s": 600.0 * k + 300.0, "kind": "join", "count": 1})
    (out / "trace.jsonl").write_text("".join(json.dumps(e) + "\n" for e in events))


if __name__ == "__main__":
    sample()
    scenario_12h()
