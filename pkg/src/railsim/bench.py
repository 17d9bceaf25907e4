"""Rollout throughput benchmark.

    python -m railsim.bench [--steps 40] [--actors 20] [--seconds 3] [--target 500]

Measures single-core ``forecast_ego`` rollouts per second, with collision
checks enabled, on a synthetic straight road with moving actors. Exits
non-zero when the measured rate is below ``--target``.
"""

import argparse
import json
import sys
import time

import numpy as np

from .dynamics import DynamicsConfig, forecast_ego
from .synthetic import make_actor, make_frame, straight_route


def bench_frame(steps=40, actors=20, seed=0):
    rng = np.random.default_rng(seed)
    tracks = [
        make_actor(
            f"a{i}", "vehicle", float(rng.uniform(5.0, 90.0)), float(rng.uniform(-10.0, 10.0)),
            yaw=float(rng.choice([0.0, np.pi])), speed=float(rng.uniform(0.0, 8.0)), horizon=steps,
        )
        for i in range(actors)
    ]
    return make_frame("bench", speed=8.0, route=straight_route(200.0), actors=tracks, horizon=steps)


def measure(steps=40, actors=20, seconds=3.0, config=DynamicsConfig()):
    """Return rollouts per second over a run of roughly ``seconds``."""
    frame = bench_frame(steps, actors)
    path = frame.route.xy
    forecast_ego(frame, path, 10.0, steps, config=config)  # warm-up
    n = 0
    start = time.perf_counter()
    while True:
        for _ in range(20):
            forecast_ego(frame, path, 10.0, steps, config=config)
        n += 20
        elapsed = time.perf_counter() - start
        if elapsed >= seconds:
            return n / elapsed


def main(argv=None):
    parser = argparse.ArgumentParser(prog="python -m railsim.bench", description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=40)
    parser.add_argument("--actors", type=int, default=20)
    parser.add_argument("--seconds", type=float, default=3.0)
    parser.add_argument("--target", type=float, default=500.0)
    args = parser.parse_args(argv)
    rate = measure(args.steps, args.actors, args.seconds)
    ok = rate >= args.target
    print(json.dumps({"steps": args.steps, "actors": args.actors, "rollouts_per_s": round(rate, 1),
                      "target": args.target, "pass": ok}))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
