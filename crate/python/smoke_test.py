#!/usr/bin/env python3
"""Smoke test for the byzgossip Python extension.

Build the extension first:

    cargo build -p byzgossip-python

then run `python3 python/smoke_test.py`. The script copies the fresh
cdylib next to itself as an importable module, so no pip install is
needed.
"""

import json
import math
import pathlib
import shutil
import sys

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parent


def locate_cdylib() -> pathlib.Path:
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libbyzgossip.so", "libbyzgossip.dylib", "byzgossip.dll")
    ]
    hits = [p for p in candidates if p.exists()]
    if not hits:
        sys.exit("extension not built; run: cargo build -p byzgossip-python")
    return max(hits, key=lambda p: p.stat().st_mtime)


def install(src: pathlib.Path) -> None:
    suffix = ".pyd" if src.suffix == ".dll" else ".so"
    dest = HERE / f"byzgossip{suffix}"
    if not dest.exists() or src.stat().st_mtime > dest.stat().st_mtime:
        shutil.copy2(src, dest)


install(locate_cdylib())
sys.path.insert(0, str(HERE))

import byzgossip as bg  # noqa: E402

checks = 0


def ok(label: str) -> None:
    global checks
    checks += 1
    print(f"  ok {checks:2d}  {label}")


def approx(a: float, b: float, tol: float = 1e-9) -> None:
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


# Path graph: spectrum {0, 1, 3}, fiedler along (1, 0, -1)/sqrt(2).
p3 = bg.Topology.from_edge_list("0 1\n1 2\n")
info = p3.spectral_info()
approx(info["mu2"], 1.0, 1e-9)
approx(info["mu_max"], 3.0, 1e-9)
fiedler = info["fiedler"]
assert fiedler is not None
approx(abs(fiedler[0] - fiedler[2]), math.sqrt(2), 1e-6)
approx(fiedler[1], 0.0, 1e-9)
ok("path graph spectrum and fiedler vector")

t = bg.Topology.two_clique_bridge(13, 8)
approx(t.spectral_info()["mu2"], 16.0, 1e-8)
ok("bridged 13-cliques connectivity is 16")

tb = t.attach_full_byzantine(6)
assert tb.n == 32 and tb.honest_count == 26
assert tb.byzantine == list(range(26, 32))
member = tb.gamma_membership(14.0, 6)
assert member["member"] and member["max_byzantine_neighbors"] == 6
approx(member["honest_mu2"], 16.0, 1e-8)
honest, translation = tb.honest_subgraph()
assert honest.n == 26 and translation == {i: i for i in range(26)}
ok("membership verdict and honest subgraph on the attacked fixture")

approx(bg.clip_threshold([5.0, 1.0, 3.0, 2.0], 1), 3.0)
approx(bg.clip_threshold([1.0], 2), 0.0)
clipped = bg.clip([3.0, 4.0], 2.5)
approx(clipped[0], 1.5)
approx(clipped[1], 2.0)
ok("clip threshold and coordinate clip")

x = [[float(i % 13), 1.0] for i in range(26)]
y1, r1 = bg.aggregate_round(tb, x, "cg_plus", 6, attack="alie")
y2, r2 = bg.aggregate_round(tb, x, "cg_plus", 6, attack="alie")
assert y1 == y2 and r1["zeta"] == r2["zeta"]
assert r1["damage"] >= 0.0 and r1["err_norm_sq"] >= 0.0
ok("attacked aggregation round is deterministic")

g = bg.Topology.three_clique_ghb(4, 2)
frozen = [[0.0] if i < 4 else [1.0] for i in range(8)]
for rule in ("cg_plus", "nna"):
    y, _ = bg.aggregate_round(g, frozen, rule, 2, attack="two_world")
    assert y == frozen, f"{rule} moved under two_world"
ok("two-world freezes both rules at the breakdown boundary")

cfg = {
    "topology": {"gen": "two_clique_bridge 13 8 byz 6"},
    "rule": "cg_plus",
    "b": 6,
    "attack": {"kind": "spectral_heterogeneity"},
    "task": {
        "kind": "mean_estimation",
        "dim": 2,
        "targets": {"gaussian": {"std": 1.0}},
    },
    "steps": 30,
    "seed": 5,
}
run_a = bg.run(json.dumps(cfg))
run_b = bg.run(json.dumps(cfg))
assert run_a["csv"] == run_b["csv"]
assert run_a["rounds"] == 31
header = json.loads(run_a["header_json"])
assert run_a["final_var"] < 0.05 * header["initial_var"]
ok("engine run reproducible; clipping contracts under the spectral attack")

results = bg.verify_suite("spectra")
assert [r["id"] for r in results] == [1, 2, 3]
assert all(r["passed"] for r in results)
ok("spectra acceptance suite passes from python")

print(f"smoke test passed ({checks} checks)")
