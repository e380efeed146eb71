"""Command line entry points for headless experiments and the API server."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from ranorch import __version__, hrl, kernels
from ranorch.config import ConfigError, ScenarioConfig, SimConfig, load_scenario
from ranorch.intent import LlmBackend
from ranorch.network import Simulator
from ranorch.runtime import SimulationRun, Trainer, compare_run_outputs, replay_run


def backend_from_env() -> LlmBackend | None:
    url = os.environ.get("RANORCH_LLM_URL")
    if not url:
        return None
    return LlmBackend(
        url=url,
        timeout_s=float(os.environ.get("RANORCH_LLM_TIMEOUT_S", "10")),
        max_response_bytes=int(os.environ.get("RANORCH_LLM_MAX_BYTES", "4096")),
    )


def _load_scenario(path: str, seed: int | None) -> ScenarioConfig:
    scenario = load_scenario(path)
    if seed is not None:
        scenario = dataclasses.replace(
            scenario, sim=dataclasses.replace(scenario.sim, seed=seed)
        )
    return scenario


def cmd_run(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.scenario, args.seed)
    intents = args.intent or []
    at_ticks = args.at_tick or []
    if len(intents) != len(at_ticks):
        print("error: each --intent needs a matching --at-tick", file=sys.stderr)
        return 2
    with SimulationRun(
        scenario,
        args.out,
        attention_enabled=not args.no_attention,
        validation_enabled=not args.no_validation,
        llm_backend=backend_from_env(),
    ) as run:
        for text, tick in zip(intents, at_ticks):
            if tick < 0 or tick >= args.ticks:
                print(
                    f"error: --at-tick {tick} outside 0..{args.ticks - 1}",
                    file=sys.stderr,
                )
                return 2
            run.schedule_intent(tick, text)
        started = time.perf_counter()
        run.run_ticks(args.ticks)
        elapsed = time.perf_counter() - started
        print(f"run {run.run_id}: {args.ticks} ticks in {elapsed:.1f}s -> {args.out}")
        for rec in run.intents:
            detail = rec.outcome or rec.error or ",".join(rec.reasons) or ""
            print(f"  {rec.intent_id} @tick {rec.submitted_tick}: "
                  f"{rec.status}{f' ({detail})' if detail else ''}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    out = args.out or tempfile.mkdtemp(prefix="ranorch-replay-")
    replay_run(args.run_dir, out)
    results = compare_run_outputs(args.run_dir, out)
    ok = all(results.values())
    for name, match in sorted(results.items()):
        print(f"{'PASS' if match else 'FAIL'} {name}")
    print(f"replay written to {out}")
    return 0 if ok else 1


def cmd_gen_labels(args: argparse.Namespace) -> int:
    rng = np.random.Generator(np.random.PCG64(args.seed))
    samples = hrl.capability_labels(rng, n_states=args.states)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        for features, label in samples:
            f.write(
                json.dumps({"features": [float(v) for v in features], "label": label})
                + "\n"
            )
    print(f"{len(samples)} labeled samples -> {args.out}")
    return 0


def cmd_train_scorer(args: argparse.Namespace) -> int:
    samples = []
    with open(args.labels, encoding="utf-8") as f:
        for i, raw in enumerate(f, 1):
            if not raw.strip():
                continue
            row = json.loads(raw)
            features = np.asarray(row["features"], dtype=np.float64)
            if features.shape != (hrl.N_FEATURES,):
                print(f"error: line {i}: expected {hrl.N_FEATURES} features",
                      file=sys.stderr)
                return 2
            samples.append((features, int(row["label"])))
    labels = {label for _, label in samples}
    if len(samples) < 2 or len(labels) < 2:
        print("error: training needs samples from both classes", file=sys.stderr)
        return 2
    from ranorch.config import AttentionConfig

    fitted = hrl.train_scorer(samples, AttentionConfig(), lr=args.lr, iters=args.iters)
    hrl.save_scorer(fitted, args.out)
    # held-out style report on the training set; the fit is deterministic
    x = np.stack([f for f, _ in samples])
    y = np.array([label for _, label in samples])
    p = 1.0 / (1.0 + np.exp(-(x @ np.array(fitted.weights) + fitted.bias)))
    acc = float(((p > 0.5) == (y == 1)).mean())
    print(f"scorer -> {args.out} (training accuracy {acc:.3f})")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.scenario, args.seed)
    trainer = Trainer(
        scenario,
        args.intent,
        attention_enabled=not args.no_attention,
        warmup_ticks=args.warmup_ticks,
        log_path=args.log,
    )
    results = trainer.run(args.episodes)
    reached = sum(1 for r in results if r.outcome == "reached")
    mean_final = float(np.mean([r.extrinsic for r in results[-10:]]))
    print(
        f"{len(results)} episodes: {reached} reached, "
        f"mean extrinsic (last 10) {mean_final:.3f}"
    )
    if args.log:
        print(f"training log -> {args.log}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from ranorch.server import serve_run

    scenario = _load_scenario(args.scenario, args.seed)
    run = SimulationRun(
        scenario,
        args.out,
        attention_enabled=not args.no_attention,
        validation_enabled=not args.no_validation,
        llm_backend=backend_from_env(),
    )
    server, run_host = serve_run(run, host=args.host, port=args.port)
    bound = server.server_address
    print(f"ranorch {__version__} serving run {run.run_id} "
          f"on http://{bound[0]}:{bound[1]} (paused; POST /api/control to start)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("\nshutting down")
    finally:
        run_host.stop()
        server.shutdown()
        server.server_close()
    return 0


def cmd_bench_kernels(args: argparse.Namespace) -> int:
    sim = Simulator(SimConfig(seed=7))
    for _ in range(50):  # populate queues and rates
        sim.step()

    sinr = np.zeros(sim.n_ues)
    rate = np.zeros(sim.n_ues)
    share = np.zeros(sim.n_ues)

    def call_rates(fn) -> None:
        fn(
            sim.base_gain_db, sim.bearing, sim.serving, sim.cell_active,
            sim.cell_tx_dbm, sim.beam_angle_of(), sim.cell_is_high,
            sim._beam_mu, sim._beam_floor, sim.cell_band, sim.cell_bw,
            sim.cell_se_cap, sim.noise_dbm_hz, sinr, rate, share,
        )

    def timed(fn, reps: int) -> float:
        fn()  # warm-up (and JIT compile on the numba path)
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        return (time.perf_counter() - t0) / reps * 1e6

    jas_is = kernels.compute_rates
    pure = getattr(jas_is, "py_func", jas_is)
    print(f"numba active: {kernels.NUMBA_ACTIVE}")
    t_jit = timed(lambda: call_rates(jas_is), args.reps)
    t_py = timed(lambda: call_rates(pure), args.reps)
    print(f"compute_rates: compiled {t_jit:8.1f} us/call   pure-python {t_py:8.1f} us/call")

    sq = kernels.serve_queues
    sq_pure = getattr(sq, "py_func", sq)
    base = {
        "q_time": sim.q_time.copy(), "q_head": sim.q_head.copy(),
        "q_len": sim.q_len.copy(), "q_partial": sim.q_partial.copy(),
    }
    outs = [np.zeros(sim.n_ues) for _ in range(5)]

    def call_queues(fn) -> None:
        st = {k: v.copy() for k, v in base.items()}
        fn(
            rate, 0.0, sim.cfg.slot_s, sim.arr_time, sim.arr_hi,
            sim.arr_pos.copy(), st["q_time"], st["q_head"], st["q_len"],
            st["q_partial"], sim.packet_bits, outs[0], outs[1], outs[2],
            outs[3], outs[4],
        )

    t_jit = timed(lambda: call_queues(sq), args.reps)
    t_py = timed(lambda: call_queues(sq_pure), args.reps)
    print(f"serve_queues:  compiled {t_jit:8.1f} us/call   pure-python {t_py:8.1f} us/call"
          "   (both include per-call state copies)")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ranorch",
        description="Intent-driven RAN orchestration testbed.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario headless")
    p.add_argument("scenario", help="scenario TOML file")
    p.add_argument("--seed", type=int, default=None, help="override [sim].seed")
    p.add_argument("--ticks", type=int, default=100)
    p.add_argument("--intent", action="append", metavar="TEXT")
    p.add_argument("--at-tick", action="append", type=int, metavar="T")
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--no-validation", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("replay", help="re-execute a run and byte-compare outputs")
    p.add_argument("run_dir")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("gen-labels", help="emit oracle-labeled scorer samples")
    p.add_argument("out")
    p.add_argument("--states", type=int, default=40)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(fn=cmd_gen_labels)

    p = sub.add_parser("train-scorer", help="fit the relevance scorer from labels")
    p.add_argument("labels", help="JSONL file of {features, label} rows")
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--iters", type=int, default=400)
    p.set_defaults(fn=cmd_train_scorer)

    p = sub.add_parser("train", help="episodic controller training")
    p.add_argument("scenario")
    p.add_argument("--intent", action="append", required=True)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--warmup-ticks", type=int, default=2)
    p.add_argument("--log", default=None, help="training log CSV path")
    p.add_argument("--no-attention", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("serve", help="host a run behind the local HTTP API")
    p.add_argument("scenario")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--out", default=None, help="run directory (omit for in-memory)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--no-validation", action="store_true")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("bench-kernels", help="time the hot kernels on both paths")
    p.add_argument("--reps", type=int, default=200)
    p.set_defaults(fn=cmd_bench_kernels)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
