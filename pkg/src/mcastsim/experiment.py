"""Scenario runner: joins, one multicast session, windowed goodput samples.

Outputs of a run directory:

``goodput.csv``
    ``t_end_s,receiver,route_tag,bytes,goodput_bps``, one row per sample
    window, receiver and route tag seen so far at that receiver (tag 0
    while it has seen none).
``switches.csv``
    ``switch,packets_in,forwarded,dropped,missed``.
``summary.txt``
    flat ``key=value`` lines, a pure fold of the two CSV files plus the
    run parameters.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dataplane import MAX_PAYLOAD
from .endhost import BlockSource
from .network import Network, NetworkConfig
from .sim_core import MS, SEC, EventKind, Simulator, format_time
from .topology import Topology, TopologyError, paper_topology, parse_topology

GROUP_ID = 1
JOIN_AT = 0
SESSION_START = 20 * MS
CSV_HEADER = ["t_end_s", "receiver", "route_tag", "bytes", "goodput_bps"]
SWITCH_HEADER = ["switch", "packets_in", "forwarded", "dropped", "missed"]


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    topology: str = "paper"
    max_trees: int = 3
    block_bytes: int | None = None  # None streams until the duration ends
    duration: int = 60 * SEC
    seed: int = 1
    pacing: str = "paced"
    window: int = 100 * MS
    out: str | None = None
    sender: str = "s"
    receivers: tuple[str, ...] | None = None  # default: every other host
    routing: str = "multi"
    payload_size: int = MAX_PAYLOAD
    fail_at: int | None = None
    fail_link: tuple[str, str] | None = None
    trace: bool = False

    def validate(self) -> Topology:
        """Check every field; returns the loaded topology."""
        if self.max_trees < 1:
            raise ConfigError("--trees must be >= 1")
        if self.block_bytes is not None and self.block_bytes < 1:
            raise ConfigError("--bytes must be positive")
        if self.duration <= 0:
            raise ConfigError("--duration must be positive")
        if self.window <= 0:
            raise ConfigError("--window must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("--seed must fit in 64 bits")
        if self.pacing not in ("paced", "unpaced"):
            raise ConfigError("--pacing must be 'paced' or 'unpaced'")
        if self.routing not in ("multi", "single"):
            raise ConfigError("routing must be 'multi' or 'single'")
        if not 1 <= self.payload_size <= MAX_PAYLOAD:
            raise ConfigError(f"payload size must be in 1..{MAX_PAYLOAD}")
        try:
            topo = load_topology(self.topology)
            sender = topo.node(self.sender)
            receivers = [topo.node(r) for r in self.receiver_labels(topo)]
        except (OSError, TopologyError) as exc:
            raise ConfigError(str(exc)) from None
        if not topo.is_host(sender):
            raise ConfigError(f"sender {self.sender!r} is not a host")
        if not receivers:
            raise ConfigError("no receivers")
        for r in [sender, *receivers]:
            if not topo.is_host(r):
                raise ConfigError(f"{topo.label(r)!r} is not a host")
            if len(topo.neighbors(r)) != 1:
                raise ConfigError(f"host {topo.label(r)!r} must have exactly one link")
        if (self.fail_at is None) != (self.fail_link is None):
            raise ConfigError("a link failure needs both a time and a link")
        if self.fail_link is not None:
            try:
                a, b = (topo.node(x) for x in self.fail_link)
            except TopologyError as exc:
                raise ConfigError(str(exc)) from None
            if not topo.has_link(a, b):
                raise ConfigError(f"no link {self.fail_link[0]}-{self.fail_link[1]}")
            if self.fail_at < 0:
                raise ConfigError("failure time must be non-negative")
        return topo

    def receiver_labels(self, topo: Topology) -> list[str]:
        if self.receivers is not None:
            return list(self.receivers)
        return [topo.label(h) for h in topo.hosts() if topo.label(h) != self.sender]


def load_topology(spec: str) -> Topology:
    if spec == "paper":
        return paper_topology()
    return parse_topology(Path(spec).read_text())


@dataclass
class RunResult:
    summary: dict[str, str]
    rows: list[tuple]
    switch_rows: list[tuple]
    trace_digest: str | None = None
    receiver_digests: dict[str, str] = field(default_factory=dict)
    block_digest: str | None = None
    network: Network | None = None

    def goodput_csv(self) -> str:
        return render_csv(CSV_HEADER, self.rows)

    def switches_csv(self) -> str:
        return render_csv(SWITCH_HEADER, self.switch_rows)


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    topo = cfg.validate()
    sim = Simulator(cfg.seed, trace=cfg.trace)
    net = Network(topo, sim, NetworkConfig(
        max_trees=cfg.max_trees, routing=cfg.routing, pacing=cfg.pacing,
        payload_size=cfg.payload_size))
    sender_id = topo.node(cfg.sender)
    labels = cfg.receiver_labels(topo)
    receiver_ids = sorted(topo.node(r) for r in labels)
    block = cfg.block_bytes

    rows: list[tuple] = []
    done: set[int] = set()
    state = {"last": 0}

    def sample(t: int) -> None:
        span = t - state["last"]
        if span <= 0:
            return
        for r in receiver_ids:
            host = net.hosts[r]
            counts = host.state.roll_window()
            label = topo.label(r)
            if not counts:
                rows.append((format_time(t), label, 0, 0, 0))
            for tag in sorted(counts):
                b = counts[tag]
                rows.append((format_time(t), label, tag, b, b * 8 * SEC // span))
        state["last"] = t

    def on_delivery(host) -> None:
        if block is not None and host.state.delivered_bytes >= block:
            done.add(host.node)
            if len(done) == len(receiver_ids):
                sim.stop()

    source = BlockSource.from_rng(sim.random_bytes)
    sender = net.add_sender(sender_id, source)
    for r in receiver_ids:
        net.add_receiver(r, on_delivery)
        sim.schedule(JOIN_AT, EventKind.HOST_ACTION, r, lambda _, r=r: net.hosts[r].join(GROUP_ID))
    sim.schedule(SESSION_START, EventKind.HOST_ACTION, sender_id,
                 lambda _: sender.start_session(GROUP_ID, block))
    if cfg.fail_link is not None and cfg.fail_at <= cfg.duration:
        a, b = (topo.node(x) for x in cfg.fail_link)
        sim.schedule(cfg.fail_at, EventKind.HOST_ACTION, -1, lambda _: net.fail_link(a, b))

    t = 0
    completed = False
    while t < cfg.duration:
        nxt = min(t + cfg.window, cfg.duration)
        sim.run_until(nxt)
        if sim.now() < nxt:
            # every receiver has the whole block
            sample(sim.now())
            completed = True
            break
        sample(nxt)
        t = nxt

    switch_rows = []
    for sw in sorted(net.switches, key=topo.label):
        c = net.switches[sw].counters
        switch_rows.append((topo.label(sw), c.packets_in, c.forwarded, net.switch_drops(sw),
                            c.missed))

    meta = run_meta(cfg, topo)
    errors = [e for e in (sender.error, *(net.hosts[r].error for r in receiver_ids)) if e]
    meta["status"] = "failed" if errors else "ok"
    if errors:
        meta["error"] = errors[0]
    summary = summarize(rows, switch_rows, meta)
    result = RunResult(
        summary, rows, switch_rows,
        trace_digest=sim.trace_digest() if cfg.trace else None,
        receiver_digests={topo.label(r): net.hosts[r].state.stream_digest() for r in receiver_ids},
        block_digest=source.digest(block) if block is not None and completed else None,
        network=net)
    if cfg.out:
        write_run(result, cfg.out)
    return result


def run_meta(cfg: ScenarioConfig, topo: Topology) -> dict[str, str]:
    meta = {
        "topology": cfg.topology,
        "topology_fingerprint": topo.fingerprint(),
        "trees": str(cfg.max_trees),
        "routing": cfg.routing,
        "pacing": cfg.pacing,
        "seed": str(cfg.seed),
        "block_bytes": str(cfg.block_bytes) if cfg.block_bytes is not None else "stream",
        "duration_s": format_time(cfg.duration),
        "window_s": format_time(cfg.window),
    }
    if cfg.fail_link is not None:
        meta["fail_at_s"] = format_time(cfg.fail_at)
        meta["fail_link"] = "-".join(cfg.fail_link)
    return meta


def _parse_time(text: str) -> int:
    whole, _, frac = text.partition(".")
    return int(whole) * SEC + int((frac or "0").ljust(9, "0")[:9])


def summarize(rows, switch_rows, meta: dict[str, str]) -> dict[str, str]:
    """Fold goodput and switch rows into the run summary."""
    summary = dict(meta)
    ends = sorted({_parse_time(str(r[0])) for r in rows})
    run_end = ends[-1] if ends else 0
    starts = {t: (ends[i - 1] if i else 0) for i, t in enumerate(ends)}
    per_rx: dict[str, int] = {}
    per_tree: dict[tuple[str, int], int] = {}
    fail_at = _parse_time(meta["fail_at_s"]) if "fail_at_s" in meta else None
    pre: dict[str, int] = {}
    post: dict[str, int] = {}
    pre_end = 0
    post_start = None
    for t_end, rx, tag, nbytes, _ in rows:
        t = _parse_time(str(t_end))
        nbytes, tag = int(nbytes), int(tag)
        per_rx[rx] = per_rx.get(rx, 0) + nbytes
        if tag:
            per_tree[(rx, tag)] = per_tree.get((rx, tag), 0) + nbytes
        if fail_at is not None:
            if t <= fail_at:
                pre[rx] = pre.get(rx, 0) + nbytes
                pre_end = max(pre_end, t)
            elif starts[t] >= fail_at:
                post[rx] = post.get(rx, 0) + nbytes
                post_start = starts[t] if post_start is None else min(post_start, starts[t])
            else:
                pre.setdefault(rx, 0)
    span_s = run_end / SEC

    def rate(nbytes: int, span: int) -> str:
        return repr(nbytes * 8 * SEC / span) if span > 0 else "0.0"

    summary["run_end_s"] = format_time(run_end)
    summary["total_bytes_delivered"] = str(sum(per_rx.values()))
    for rx in sorted(per_rx):
        summary[f"receiver.{rx}.bytes"] = str(per_rx[rx])
        summary[f"receiver.{rx}.goodput_bps"] = rate(per_rx[rx], run_end)
    for (rx, tag) in sorted(per_tree):
        summary[f"receiver.{rx}.tree.{tag}.goodput_bps"] = rate(per_tree[(rx, tag)], run_end)
    if per_rx:
        summary["mean_goodput_bps"] = repr(sum(per_rx.values()) * 8 / span_s / len(per_rx)) \
            if run_end else "0.0"
    block = meta.get("block_bytes", "stream")
    complete = block != "stream" and per_rx and all(v >= int(block) for v in per_rx.values())
    summary["completion_time_s"] = format_time(run_end) if complete else "none"
    if fail_at is not None:
        for rx in sorted(per_rx):
            summary[f"receiver.{rx}.pre_failure_goodput_bps"] = rate(pre.get(rx, 0), pre_end)
            summary[f"receiver.{rx}.post_failure_goodput_bps"] = rate(
                post.get(rx, 0), run_end - post_start if post_start is not None else 0)
    total_drops = 0
    for name, pin, fwd, dropped, missed in switch_rows:
        summary[f"switch.{name}.forwarded"] = str(fwd)
        summary[f"switch.{name}.dropped"] = str(dropped)
        summary[f"switch.{name}.missed"] = str(missed)
        total_drops += int(dropped) + int(missed)
    summary["total_drops"] = str(total_drops)
    return summary


def render_summary(summary: dict[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in summary.items())


def parse_summary(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            out[k] = v
    return out


def write_run(result: RunResult, out: str | os.PathLike) -> Path:
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / "goodput.csv").write_text(result.goodput_csv())
    (d / "switches.csv").write_text(result.switches_csv())
    (d / "summary.txt").write_text(render_summary(result.summary))
    return d


def read_run(out: str | os.PathLike) -> tuple[list[tuple], list[tuple], dict[str, str]]:
    d = Path(out)
    with open(d / "goodput.csv", newline="") as f:
        rows = [tuple(r) for r in list(csv.reader(f))[1:]]
    with open(d / "switches.csv", newline="") as f:
        switch_rows = [tuple(r) for r in list(csv.reader(f))[1:]]
    return rows, switch_rows, parse_summary((d / "summary.txt").read_text())


META_KEYS = ("topology", "topology_fingerprint", "trees", "routing", "pacing", "seed",
             "block_bytes", "duration_s", "window_s", "fail_at_s", "fail_link", "status", "error")


def resummarize(out: str | os.PathLike) -> dict[str, str]:
    """Recompute a run directory's summary from its CSV files."""
    rows, switch_rows, summary = read_run(out)
    meta = {k: summary[k] for k in META_KEYS if k in summary}
    return summarize(rows, switch_rows, meta)


def link_failure_scenario(cfg: ScenarioConfig, fail_at: int, link: tuple[str, str]) -> RunResult:
    return run_scenario(replace(cfg, fail_at=fail_at, fail_link=tuple(link)))


def compare(a: dict[str, str], b: dict[str, str]) -> list[tuple[str, str, str, str]]:
    """Rows of ``(metric, a, b, b/a)``; runs must share a topology."""
    if a.get("topology_fingerprint") != b.get("topology_fingerprint"):
        raise ValueError("runs used different topologies; refusing to compare")
    out = []

    def ratio(x: float, y: float) -> str:
        return f"{y / x:.4f}" if x else "nan"

    for key in ("trees", "pacing", "block_bytes"):
        out.append((key, a.get(key, ""), b.get(key, ""), ""))
    ca, cb = a.get("completion_time_s", "none"), b.get("completion_time_s", "none")
    if ca != "none" and cb != "none":
        # speed-up: how many times faster B finished
        out.append(("completion_time_s", ca, cb, ratio(float(cb), float(ca))))
    keys = [k for k in a if k.endswith("goodput_bps") and k in b]
    for k in keys:
        out.append((k, a[k], b[k], ratio(float(a[k]), float(b[k]))))
    return out


def compare_dirs(dir_a, dir_b) -> list[tuple[str, str, str, str]]:
    return compare(read_run(dir_a)[2], read_run(dir_b)[2])
