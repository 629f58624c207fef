"""Desk-scale synthetic audit logs with planted behaviors and ground truth.

A scenario is a JSON document::

    {"seed": 1, "duration_s": 3600, "noise_rate": 0.2,
     "templates": [{"name": "web", "count": 4,
                    "processes": {"P": "/usr/sbin/nginx", "C": "/bin/sh"},
                    "threads": {"T": "P"},
                    "steps": [
                      {"proc": "P", "op": "read", "obj": {"kind": "file", "path": "/etc/nginx.conf"}},
                      {"proc": "P", "op": "fork", "obj": {"kind": "process", "role": "C"}},
                      {"proc": "C", "op": "write", "obj": {"kind": "file", "path": "/tmp/x{r}"},
                       "repeat": [2, 5], "p": 0.8}]}],
     "plants": [...same shape...],
     "noise": {"processes": [...], "files": [...], "sockets": [...]}}

A process role may be ``{"image": ..., "copies": [lo, hi]}``; steps of such a
role run once per copy. Paths accept ``{i}`` (instance), ``{r}`` (repeat),
``{c}`` (copy) and ``{n}`` (random int) placeholders; a list of paths means one is picked per event. Steps run in
order with increasing timestamps, so each instance is time-consistent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .events import EVENT_TYPES, EntityDescriptor, OSProfile, RawEvent
from .graph import build_graph, merge_threads
from .graphio import ego_from_dict

HOST_IP = "10.0.0.5"
MS = 10**6


class InvalidConfig(ValueError):
    pass


@dataclass
class Template:
    name: str
    processes: dict
    steps: list
    count: int = 1
    threads: dict = field(default_factory=dict)


@dataclass
class NoiseConfig:
    processes: list = field(default_factory=list)
    files: list = field(default_factory=list)
    sockets: list = field(default_factory=list)
    filtered_fraction: float = 0.1  # share of noise events that are open/close
    burst: tuple = (2, 8)  # events per transient noise process
    writable_prefixes: tuple = ("/var/", "/tmp/", "/run/", "/home/")


@dataclass
class ScenarioConfig:
    templates: list = field(default_factory=list)
    plants: list = field(default_factory=list)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    noise_rate: float = 0.0
    duration_s: float = 3600.0
    start_ts: int = 1_600_000_000 * 10**9
    seed: int = 0
    profile: str = "linux"

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        try:
            nd = dict(d.get("noise", {}))
            for key in ("burst", "writable_prefixes"):
                if key in nd:
                    nd[key] = tuple(nd[key])
            noise = NoiseConfig(**nd)
            cfg = cls(
                templates=[_template(t) for t in d.get("templates", [])],
                plants=[_template(t) for t in d.get("plants", [])],
                noise=noise,
                noise_rate=float(d.get("noise_rate", 0.0)),
                duration_s=float(d.get("duration_s", 3600.0)),
                start_ts=int(d.get("start_ts", 1_600_000_000 * 10**9)),
                seed=int(d.get("seed", 0)),
                profile=d.get("profile", "linux"),
            )
        except (TypeError, KeyError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from None
        return cfg.validate()

    @classmethod
    def load(cls, path: str) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise InvalidConfig(f"{path}: {exc}") from None

    def to_dict(self) -> dict:
        def tpl(t):
            return {"name": t.name, "count": t.count, "processes": t.processes, "threads": t.threads,
                    "steps": t.steps}
        return {"templates": [tpl(t) for t in self.templates], "plants": [tpl(t) for t in self.plants],
                "noise": vars(self.noise), "noise_rate": self.noise_rate, "duration_s": self.duration_s,
                "start_ts": self.start_ts, "seed": self.seed, "profile": self.profile}

    def validate(self) -> "ScenarioConfig":
        if not 0 <= self.noise_rate < 1:
            raise InvalidConfig("noise_rate must be in [0, 1)")
        if self.noise_rate > 0 and not (self.noise.processes and (self.noise.files or self.noise.sockets)):
            raise InvalidConfig("noise needs processes and objects")
        names = [t.name for t in self.templates + self.plants]
        if len(names) != len(set(names)):
            raise InvalidConfig("template and plant names must be unique")
        for t in self.templates + self.plants:
            _check_template(t)
        return self


def _template(d: dict) -> Template:
    return Template(name=d["name"], processes=dict(d["processes"]), steps=list(d["steps"]),
                    count=int(d.get("count", 1)), threads=dict(d.get("threads", {})))


def _check_template(t: Template) -> None:
    roles = set(t.processes) | set(t.threads)
    for role, spec in t.processes.items():
        if not isinstance(spec, str) and not (isinstance(spec, dict) and "image" in spec):
            raise InvalidConfig(f"{t.name}: process {role} needs an image path")
    for role, parent in t.threads.items():
        if parent not in t.processes:
            raise InvalidConfig(f"{t.name}: thread {role} of unknown process {parent}")
    if not t.steps:
        raise InvalidConfig(f"{t.name}: no steps")
    for s in t.steps:
        if s.get("proc") not in roles:
            raise InvalidConfig(f"{t.name}: step subject {s.get('proc')!r} is not a process role")
        if s.get("op") not in EVENT_TYPES:
            raise InvalidConfig(f"{t.name}: unknown op {s.get('op')!r}")
        obj = s.get("obj")
        if not isinstance(obj, dict) or obj.get("kind") not in ("process", "file", "socket", "registry"):
            raise InvalidConfig(f"{t.name}: bad object {obj!r}")
        if obj["kind"] == "process" and obj.get("role") not in roles:
            raise InvalidConfig(f"{t.name}: unknown process role {obj.get('role')!r}")


class _Instance:
    """Entity descriptors of one template instance; each role maps to its copies."""

    def __init__(self, t: Template, idx: int, pids, tag: str, rng):
        self.t, self.idx = t, idx
        self.procs = {}
        for role, spec in t.processes.items():
            image, copies = (spec, 1) if isinstance(spec, str) else (spec["image"], _repeat(spec.get("copies"), rng))
            self.procs[role] = []
            for c in range(copies):
                pid = next(pids)
                uid = f"{tag}{t.name}.{idx}.{role}" + (f".{c}" if c else "")
                self.procs[role].append(EntityDescriptor(uid=uid, kind="process", pid=pid, tid=pid, image_path=image))
        for role, parent in t.threads.items():
            p = self.procs[parent][0]
            self.procs[role] = [EntityDescriptor(uid=f"{tag}{t.name}.{idx}.{role}", kind="process", pid=p.pid,
                                                 tid=next(pids), image_path=p.image_path)]


def _fmt(path: str, i: int, r: int, c: int, rng) -> str:
    return path.format(i=i, r=r, c=c, n=int(rng.integers(1000, 10**6)))


def _pick(value, rng):
    if isinstance(value, list):
        return value[int(rng.integers(len(value)))]
    return value


def _object(obj: dict, inst: _Instance, r: int, c: int, rng) -> EntityDescriptor:
    kind = obj["kind"]
    if kind == "socket":
        src = _pick(obj.get("src", HOST_IP), rng)
        dst = _pick(obj["dst"], rng)
        port = int(_pick(obj["port"], rng))
        return EntityDescriptor(uid=f"sock:{src}>{dst}:{port}", kind="socket", src_ip=src, dst_ip=dst,
                                dst_port=port)
    path = _fmt(_pick(obj["path"], rng), inst.idx, r, c, rng)
    return EntityDescriptor(uid=f"{kind}:{path}", kind=kind, path=path)


def _repeat(spec, rng) -> int:
    if spec is None:
        return 1
    if isinstance(spec, list):
        return int(rng.integers(spec[0], spec[1] + 1))
    return int(spec)


def instance_events(t: Template, idx: int, start: int, rng, pids, tag: str = "") -> tuple:
    inst = _Instance(t, idx, pids, tag, rng)
    ts = start
    out = []
    for step in t.steps:
        if rng.random() >= float(step.get("p", 1.0)):
            continue
        obj = step["obj"]
        for c, subj in enumerate(inst.procs[step["proc"]]):
            for r in range(_repeat(step.get("repeat"), rng)):
                if obj["kind"] == "process":
                    targets = inst.procs[obj["role"]]
                else:
                    targets = [_object(obj, inst, r, c, rng)]
                for target in targets:
                    ts += int(rng.integers(1, 50)) * MS
                    out.append(RawEvent(ts, step["op"], subj, target))
    roles = {role: ds[0].uid if len(ds) == 1 else [d.uid for d in ds] for role, ds in inst.procs.items()}
    return out, roles


def _noise_events(cfg: ScenarioConfig, n: int, rng) -> list:
    """``n`` background events issued in short bursts by transient processes."""
    nz = cfg.noise
    span = int(cfg.duration_s * 10**9)
    writable = [f for f in nz.files if f.startswith(tuple(nz.writable_prefixes))]
    out = []
    burst = 0
    while len(out) < n:
        image = nz.processes[int(rng.integers(len(nz.processes)))]
        pid = 50000 + burst
        subj = EntityDescriptor(uid=f"noise.{burst}", kind="process", pid=pid, tid=pid, image_path=image)
        burst += 1
        ts = cfg.start_ts + int(rng.integers(1, span))
        for _ in range(min(n - len(out), int(rng.integers(nz.burst[0], nz.burst[1] + 1)))):
            ts += int(rng.integers(1, 50)) * MS
            if nz.sockets and (not nz.files or rng.random() < 0.25):
                dst, port = nz.sockets[int(rng.integers(len(nz.sockets)))]
                obj = EntityDescriptor(uid=f"sock:{HOST_IP}>{dst}:{port}", kind="socket", src_ip=HOST_IP,
                                       dst_ip=dst, dst_port=int(port))
                op = ("send", "recv", "connect")[int(rng.integers(3))]
            else:
                if writable and rng.random() < 0.3:
                    path, op = writable[int(rng.integers(len(writable)))], "write"
                else:
                    path, op = nz.files[int(rng.integers(len(nz.files)))], "read"
                obj = EntityDescriptor(uid=f"file:{path}", kind="file", path=path)
            if rng.random() < nz.filtered_fraction:
                op = "open" if rng.random() < 0.5 else "close"
            out.append(RawEvent(ts, op, subj, obj))
    return out


def generate_synthetic_logs(cfg: ScenarioConfig, rng=None) -> tuple:
    """Return (events sorted by time, annotations).

    Annotations list every plant instance with the uids of its processes
    and the abstract query graph of the planted behavior.
    """
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    span = int(cfg.duration_s * 10**9)
    pids = iter(range(1000, 10**7))
    events = []
    annotations = {"plants": []}
    for t in cfg.templates:
        for i in range(t.count):
            evs, _ = instance_events(t, i, cfg.start_ts + int(rng.integers(0, span)), rng, pids)
            events.extend(evs)
    profile = OSProfile.load(cfg.profile)
    for t in cfg.plants:
        query = plant_query(t, profile)
        for i in range(t.count):
            evs, roles = instance_events(t, i, cfg.start_ts + int(rng.integers(0, span)), rng, pids, tag="plant.")
            events.extend(evs)
            annotations["plants"].append({"plant": t.name, "instance": i, "processes": roles, "query": query})
    base = len(events)
    if cfg.noise_rate > 0 and base:
        n = int(rng.poisson(base * cfg.noise_rate / (1.0 - cfg.noise_rate)))
        events.extend(_noise_events(cfg, n, rng))
    order = sorted(range(len(events)), key=lambda j: (events[j].ts, j))
    return [events[j] for j in order], annotations


def _low(spec) -> int:
    if spec is None:
        return 1
    return int(spec[0]) if isinstance(spec, list) else int(spec)


def plant_query(t: Template, profile: OSProfile, seed: int = 0) -> dict:
    """Abstract query graph of one isolated, noise-free instance of ``t``.

    Optional steps are forced on and repeat ranges use their lower bound.
    Edge timestamps are kept (relative to the instance start) so the query
    can be versioned like the log it is matched against.
    """
    procs = {r: spec if isinstance(spec, str) else dict(spec, copies=_low(spec.get("copies")))
             for r, spec in t.processes.items()}
    fixed = Template(t.name, procs, [dict(s, p=1.0, repeat=_low(s.get("repeat"))) for s in t.steps],
                     1, t.threads)
    evs, _ = instance_events(fixed, 0, 10**9, np.random.default_rng(seed), iter(range(100, 10**6)))
    g = merge_threads(build_graph(evs, profile))
    ids = {n: j for j, n in enumerate(sorted(g.nodes))}
    return {
        "nodes": [[ids[n], g.nodes[n].kind, g.nodes[n].abstraction] for n in sorted(g.nodes)],
        "edges": [[ids[e.src], ids[e.dst], e.etype, e.ts - 10**9] for e in g.edges],
    }


def query_graph(annotation: dict):
    return ego_from_dict(annotation["query"], form="query")


def write_events(path: str, events) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(e.to_json() + "\n")


# -- built-in scenario family ---------------------------------------------

def _f(path):
    return {"kind": "file", "path": path}


def _s(dst, port, src=HOST_IP):
    return {"kind": "socket", "dst": dst, "port": port, "src": src}


def _p(role):
    return {"kind": "process", "role": role}


def _step(proc, op, obj, repeat=None, p=1.0):
    s = {"proc": proc, "op": op, "obj": obj}
    if repeat is not None:
        s["repeat"] = repeat
    if p < 1.0:
        s["p"] = p
    return s


PUBLIC = ["93.184.216.34", "151.101.1.69", "142.250.80.46", "104.16.132.229"]


def background_templates(scale: int = 1) -> list:
    """Everyday host activity with heavily repeated behaviors."""
    libs = ["/usr/lib/x86_64-linux-gnu/lib{n}.so", "/lib/x86_64-linux-gnu/libc{n}.so"]
    return [
        Template("ssh_session", {"D": "/usr/sbin/sshd", "S": "/bin/bash",
                                    "L": {"image": "/usr/bin/ls", "copies": [2, 10]}}, [
            _step("D", "recv", _s(HOST_IP, 22, src="198.51.100.7")),
            _step("D", "read", _f("/etc/ssh/sshd_config")),
            _step("D", "fork", _p("S")),
            _step("S", "read", _f(["/etc/profile", "/etc/bash.bashrc"])),
            _step("S", "read", _f("/home/user{i}/.bashrc"), p=0.7),
            _step("S", "fork", _p("L"), p=0.8),
            _step("L", "read", _f(libs), repeat=[2, 6]),
            _step("L", "read", _f("/home/user{i}/doc{r}.txt"), repeat=[1, 8]),
            _step("S", "write", _f("/home/user{i}/.bash_history"), p=0.6),
        ], count=6 * scale),
        Template("nginx_worker", {"W": "/usr/sbin/nginx", "T": "/usr/sbin/nginx"}, [
            _step("W", "read", _f("/etc/nginx/nginx.conf")),
            _step("W", "recv", _s(HOST_IP, 80, src=["203.0.113.9", "198.51.100.23"]), repeat=[1, 4]),
            _step("T", "read", _f("/usr/share/nginx/html/page{r}.html"), repeat=[3, 25]),
            _step("W", "send", _s("203.0.113.9", 80, src=HOST_IP), repeat=[1, 3]),
            _step("T", "write", _f("/var/log/nginx/access.log")),
        ], count=5 * scale, threads={"T": "W"}),
        Template("cron_logrotate", {"C": "/usr/sbin/cron", "S": {"image": "/bin/sh", "copies": [2, 6]},
                                     "R": {"image": "/usr/sbin/logrotate", "copies": [2, 6]}}, [
            _step("C", "read", _f("/etc/crontab")),
            _step("C", "fork", _p("S")),
            _step("S", "read", _f(libs), repeat=[1, 3]),
            _step("S", "execute", _p("R")),
            _step("R", "read", _f("/etc/logrotate.conf")),
            _step("R", "read", _f("/var/log/syslog.{r}"), repeat=[2, 10]),
            _step("R", "write", _f("/var/log/syslog.{r}.gz"), repeat=[2, 10]),
            _step("R", "modify_attr", _f("/var/lib/logrotate/status"), p=0.5),
        ], count=4 * scale),
        Template("apt_update", {"A": "/usr/bin/apt", "H": "/usr/lib/apt/methods/http", "D": {"image": "/usr/bin/dpkg", "copies": [2, 6]}}, [
            _step("A", "read", _f("/etc/apt/sources.list")),
            _step("A", "fork", _p("H")),
            _step("H", "connect", _s(PUBLIC, 80)),
            _step("H", "recv", _s(PUBLIC, 80), repeat=[1, 4]),
            _step("H", "write", _f("/var/cache/apt/archives/pkg{r}.deb"), repeat=[3, 20]),
            _step("A", "read", _f("/var/cache/apt/archives/pkg{r}.deb"), repeat=[3, 20]),
            _step("A", "fork", _p("D"), p=0.7),
            _step("D", "write", _f(["/usr/lib/x86_64-linux-gnu/lib{n}.so", "/usr/share/doc/pkg{r}/README"]),
                  repeat=[2, 15]),
            _step("D", "write", _f("/var/lib/dpkg/status")),
        ], count=3 * scale),
        Template("browser", {"B": "/usr/bin/firefox", "T": "/usr/bin/firefox"}, [
            _step("B", "read", _f(libs), repeat=[2, 8]),
            _step("B", "read", _f("/home/user{i}/.mozilla/prefs.js")),
            _step("T", "connect", _s(PUBLIC, 443), repeat=[1, 5]),
            _step("T", "recv", _s(PUBLIC, 443), repeat=[1, 6]),
            _step("T", "write", _f("/home/user{i}/.cache/mozilla/entry{r}"), repeat=[2, 20]),
            _step("B", "read", _f("/home/user{i}/.cache/mozilla/entry{r}"), repeat=[1, 6]),
            _step("B", "write", _f("/home/user{i}/Downloads/file{r}.pdf"), p=0.4),
        ], count=5 * scale, threads={"T": "B"}),
        Template("mysqld", {"M": "/usr/sbin/mysqld"}, [
            _step("M", "read", _f("/etc/mysql/my.cnf")),
            _step("M", "recv", _s(HOST_IP, 3306, src="10.0.0.8"), repeat=[1, 5]),
            _step("M", "read", _f("/var/lib/mysql/table{r}.ibd"), repeat=[2, 15]),
            _step("M", "write", _f("/var/lib/mysql/table{r}.ibd"), repeat=[1, 8]),
            _step("M", "send", _s("10.0.0.8", 3306), repeat=[1, 5]),
        ], count=3 * scale),
        Template("journald", {"J": "/usr/lib/systemd/systemd-journald"}, [
            _step("J", "read", _f("/proc/{n}/stat"), repeat=[3, 25]),
            _step("J", "read", _f("/dev/kmsg")),
            _step("J", "write", _f("/run/log/journal/system{r}.journal"), repeat=[1, 4]),
            _step("J", "write", _f("/var/log/syslog.{r}"), repeat=[1, 3]),
        ], count=3 * scale),
        Template("python_app", {"P": "/usr/bin/python3", "G": {"image": "/usr/bin/git", "copies": [2, 8]}}, [
            _step("P", "read", _f("/usr/lib/python3/dist-packages/mod{r}.py"), repeat=[5, 30]),
            _step("P", "read", _f("/etc/app/config.yaml")),
            _step("P", "connect", _s("127.0.0.1", 6379, src="127.0.0.1"), p=0.7),
            _step("P", "send", _s("127.0.0.1", 6379, src="127.0.0.1"), repeat=[1, 6]),
            _step("P", "write", _f("/tmp/app-{i}-{r}.tmp"), repeat=[1, 10]),
            _step("P", "fork", _p("G"), p=0.5),
            _step("G", "read", _f("/home/user{i}/repo/obj{r}"), repeat=[2, 12]),
            _step("G", "write", _f("/home/user{i}/repo/index")),
        ], count=5 * scale),
        Template("udev", {"U": "/usr/sbin/udevd", "K": {"image": "/usr/sbin/kmod", "copies": [2, 10]}}, [
            _step("U", "read", _f("/sys/devices/dev{r}/uevent"), repeat=[3, 20]),
            _step("U", "read", _f("/etc/udev/rules.d/rule{r}.rules"), repeat=[1, 5]),
            _step("U", "fork", _p("K"), p=0.6),
            _step("K", "read", _f("/lib/modules/mod{r}.ko"), repeat=[1, 6]),
            _step("U", "write", _f("/run/udev/data/d{r}"), repeat=[1, 8]),
        ], count=3 * scale),
    ]


def noise_config() -> NoiseConfig:
    return NoiseConfig(
        processes=["/usr/bin/top", "/usr/sbin/rsyslogd", "/usr/bin/dbus-daemon", "/usr/sbin/irqbalance",
                   "/bin/sleep", "/usr/bin/gnome-shell"],
        files=["/etc/passwd", "/etc/hosts", "/etc/resolv.conf", "/proc/meminfo", "/proc/loadavg",
               "/var/log/syslog", "/var/log/auth.log", "/tmp/.X0-lock", "/run/utmp", "/usr/share/zoneinfo/UTC",
               "/lib/x86_64-linux-gnu/libc.so.6", "/home/user0/.config/dconf/user", "/dev/null", "/sys/power/state",
               "/var/cache/fontconfig/cache-4"],
        sockets=[["10.0.0.1", 53], ["93.184.216.34", 443], ["10.0.0.8", 5432], ["127.0.0.1", 631]],
    )


# Building blocks for attack-like plants. Every plant process lives in a
# directory no background program runs from, so planted behaviors carry
# edge signatures absent from the background.
_PLANT_PROC_DIRS = ["/tmp/.{w}", "/dev/shm/{w}", "/home/user{i}/.local/{w}", "/var/www/cgi/{w}",
                    "/root/{w}", "/data/{w}", "/com/{w}", "/4711/{w}", "/stream/{w}", "/vi/{w}", "/dns/{w}",
                    "/devd/{w}", "/man/{w}", "/opt/{w}"]
_PLANT_FILES = ["/etc/shadow", "/etc/cron.d/{w}", "/root/.ssh/authorized_keys", "/var/www/html/{w}.php",
                "/data/{w}.db", "/com/{w}.cfg", "/stream/{w}.bin", "/man/{w}.1", "/sys/kernel/{w}",
                "/dbus-vfs-daemon/{w}", "/devd/{w}.conf", "/dns/{w}.zone", "/vi/{w}.swp", "/4242/{w}",
                "/tmp/.{w}.sh", "/dev/shm/{w}.so", "/opt/{w}.tar", "/home/user{i}/.{w}rc"]
_PLANT_SOCKS = [("198.51.100.66", 4444, HOST_IP), ("203.0.113.50", 8443, HOST_IP),
                (HOST_IP, 1337, "198.51.100.66"), (HOST_IP, 7777, "10.0.0.66"),
                ("10.0.0.66", 2222, HOST_IP), ("192.0.2.10", 6667, "127.0.0.1"),
                ("127.0.0.1", 9001, "198.51.100.66"), ("10.0.0.99", 53, "127.0.0.1")]
_WORDS = ["kx", "sv", "dr", "qz", "lp", "mn", "ty", "gh", "rb", "wc", "ox", "ju"]


def _plant_template(name: str, rng) -> Template:
    n_proc = int(rng.integers(2, 5))
    dirs = rng.choice(len(_PLANT_PROC_DIRS), size=n_proc, replace=False)
    word = _WORDS[int(rng.integers(len(_WORDS)))]
    roles = [chr(ord("A") + j) for j in range(n_proc)]
    procs = {r: _PLANT_PROC_DIRS[d].format(w=word, i="{i}").replace("{i}", "0") for r, d in zip(roles, dirs)}
    steps = []
    for j, role in enumerate(roles):
        for _ in range(int(rng.integers(2, 4))):
            if rng.random() < 0.3:
                dst, port, src = _PLANT_SOCKS[int(rng.integers(len(_PLANT_SOCKS)))]
                op = ("recv", "send", "connect")[int(rng.integers(3))]
                steps.append(_step(role, op, _s(dst, port, src=src)))
            else:
                path = _PLANT_FILES[int(rng.integers(len(_PLANT_FILES)))].format(w=f"{word}{j}", i=0)
                op = ("read", "write", "write", "modify_attr")[int(rng.integers(4))]
                steps.append(_step(role, op, _f(path)))
        if j + 1 < n_proc:
            op = ("fork", "clone", "execute")[int(rng.integers(3))]
            steps.append(_step(role, op, _p(roles[j + 1])))
            # hand-off file written by the parent and read by the child
            if rng.random() < 0.5:
                drop = _PLANT_FILES[int(rng.integers(len(_PLANT_FILES)))].format(w=f"{word}x{j}", i=0)
                steps.insert(len(steps) - 1, _step(role, "write", _f(drop)))
                steps.append(_step(roles[j + 1], "read", _f(drop)))
    return Template(name, procs, steps, 1)


def _signatures(t: Template, profile: OSProfile) -> list:
    q = plant_query(t, profile)
    lab = {n: ab for n, _, ab in q["nodes"]}
    return [(lab[s], e, lab[d]) for s, d, e, _ in q["edges"]]


def _overlap(a: list, b_set: set) -> float:
    return sum(1 for s in a if s in b_set) / max(1, len(a))


def plant_library(n: int = 24, seed: int = 7, max_overlap: float = 0.2, profile: str = "linux") -> list:
    """``n`` attack-like plant templates with mutually distinctive signatures.

    Rejection sampling keeps each plant's edge-signature overlap with the
    background and with every earlier plant at or below ``max_overlap``.
    """
    prof = OSProfile.load(profile)
    rng = np.random.default_rng(seed)
    bg = set()
    for t in background_templates():
        bg.update(_signatures(t, prof))
    nz = noise_config()
    bg_abs = {prof.lookup(p) for p in nz.processes}
    out, sigs = [], []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > 200 * n:
            raise InvalidConfig("cannot build a distinctive plant library")
        t = _plant_template(f"plant{len(out):02d}", rng)
        s = _signatures(t, prof)
        if len(s) < 6 or any(prof.lookup(img) in bg_abs for img in t.processes.values()):
            continue
        if _overlap(s, bg) > max_overlap:
            continue
        if any(_overlap(s, set(o)) > max_overlap or _overlap(o, set(s)) > max_overlap for o in sigs):
            continue
        out.append(t)
        sigs.append(s)
    return out


def default_scenario(plants: Optional[list] = None, seed: int = 0, noise_rate: float = 0.2,
                     scale: int = 1, duration_s: float = 3600.0) -> ScenarioConfig:
    return ScenarioConfig(templates=background_templates(scale), plants=list(plants or []),
                          noise=noise_config(), noise_rate=noise_rate, duration_s=duration_s,
                          seed=seed).validate()
