"""Desk-scale synthetic provenance logs with injectable attacks.

Each executable follows a :class:`BehaviorProfile`: the files it touches, the
network peers it talks to and the children it spawns. Processes live inside a
single generation slot (two hours by default), so every process appears in
exactly one window when windows and slots are aligned.

Attacks are written as small role-based scripts. A ``NovelExecutable`` script
runs a binary that no profile knows; a ``LOTL`` script runs a known binary
that behaves like a different profile.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .evalkit import Attack, GroundTruth
from .events import EventLog, ProvenanceEvent, build_log, split_dataset
from .windows import minutes_to_ns

# 2024-01-01T00:00:00Z, aligned to two-hour boundaries
START_TS = 1_704_067_200 * 1_000_000_000
NS_PER_DAY = 86_400 * 1_000_000_000

MODES = ("deterministic", "stochastic")


@dataclass(frozen=True)
class BehaviorProfile:
    executable: str
    files: tuple[tuple[str, float], ...]
    file_ops: tuple[str, ...]
    netflows: tuple[tuple[str, float], ...]
    net_ops: tuple[str, ...]
    children: tuple[tuple[str, float], ...] = ()  # executable, children per process
    processes_per_window: int = 6
    events_per_process: int = 12
    net_share: float = 0.3

    def __post_init__(self):
        if not self.files or not self.netflows:
            raise ConfigError(f"{self.executable}: file and netflow pools must be non-empty")
        if not self.file_ops or not self.net_ops:
            raise ConfigError(f"{self.executable}: operation lists must be non-empty")
        for _, w in self.files + self.netflows + self.children:
            if w <= 0:
                raise ConfigError(f"{self.executable}: weights must be positive")
        if self.processes_per_window < 1 or self.events_per_process < 1:
            raise ConfigError(f"{self.executable}: rates must be >= 1")

    @property
    def pool(self) -> set[str]:
        return {p for p, _ in self.files} | {n for n, _ in self.netflows}

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "BehaviorProfile":
        d = dict(d)
        for key in ("files", "netflows", "children"):
            d[key] = tuple((str(a), float(w)) for a, w in d.get(key, ()))
        for key in ("file_ops", "net_ops"):
            d[key] = tuple(d[key])
        return cls(**d)


def _pool(items, weights=None):
    weights = weights or [1.0] * len(items)
    return tuple(zip(items, weights))


def default_profiles() -> list[BehaviorProfile]:
    """Five executables with pairwise disjoint file and netflow pools."""
    return [
        BehaviorProfile(
            "/usr/sbin/sshd",
            _pool(["/etc/ssh/sshd_config", "/etc/ssh/ssh_host_ed25519_key", "/var/log/auth.log",
                   "/etc/pam.d/sshd", "/run/sshd.pid"], [3, 2, 3, 1, 1]),
            ("open", "read", "write"),
            _pool(["10.0.0.21:22", "10.0.0.22:22", "10.0.0.23:22"]),
            ("recvfrom", "sendto"),
        ),
        BehaviorProfile(
            "/usr/sbin/nginx",
            _pool(["/etc/nginx/nginx.conf", "/var/www/html/index.html", "/var/www/html/app.js",
                   "/var/log/nginx/access.log", "/var/log/nginx/error.log"], [1, 4, 3, 4, 1]),
            ("open", "read", "write"),
            _pool(["192.168.1.10:443", "192.168.1.11:443", "192.168.1.12:80"]),
            ("recvmsg", "sendmsg"),
            net_share=0.5,
        ),
        BehaviorProfile(
            "/usr/lib/postgresql/14/bin/postgres",
            _pool(["/var/lib/postgresql/14/main/base/16384/2619",
                   "/var/lib/postgresql/14/main/pg_wal/000000010000000000000001",
                   "/etc/postgresql/14/main/postgresql.conf",
                   "/var/lib/postgresql/14/main/global/pg_control"], [4, 3, 1, 2]),
            ("read", "write"),
            _pool(["10.0.2.5:5432", "10.0.2.6:5432"]),
            ("recvfrom", "sendmsg"),
        ),
        BehaviorProfile(
            "/usr/sbin/cron",
            _pool(["/etc/crontab", "/var/spool/cron/crontabs/root", "/etc/cron.d/logrotate",
                   "/var/log/cron.log"]),
            ("open", "read"),
            _pool(["127.0.0.53:53"]),
            ("connect",),
            children=_pool(["/bin/bash"]),
            processes_per_window=3,
            net_share=0.1,
        ),
        BehaviorProfile(
            "/bin/bash",
            _pool(["/home/alice/.bashrc", "/home/alice/.bash_history", "/usr/share/terminfo/x/xterm",
                   "/tmp/build.log", "/etc/profile"], [2, 2, 1, 2, 1]),
            ("open", "read", "write", "execute"),
            _pool(["151.101.1.69:443", "140.82.112.3:443"]),
            ("connect", "sendto"),
            net_share=0.15,
        ),
    ]


def check_separable(profiles: Sequence[BehaviorProfile]) -> None:
    seen: dict[str, str] = {}
    for p in profiles:
        for item in p.pool:
            if item in seen:
                raise ConfigError(f"pool item {item!r} shared by {seen[item]} and {p.executable}")
            seen[item] = p.executable


def _namespace(seed: int, tag: str = "gen") -> uuid.UUID:
    return uuid.uuid5(uuid.NAMESPACE_URL, f"grasp-synth/{tag}/{seed}")


def _entity_id(ns: uuid.UUID, name: str) -> str:
    return str(uuid.uuid5(ns, name))


def _pick(rng: np.random.Generator, pool: tuple[tuple[str, float], ...]) -> str:
    weights = np.array([w for _, w in pool], dtype=float)
    return pool[int(rng.choice(len(pool), p=weights / weights.sum()))][0]


def _process_events(rng, profile, pid, start, span, n_events):
    """Events of one process of ``profile``, ordered in time within ``[start, start + span)``."""
    offsets = np.sort(rng.integers(0, span, size=n_events))
    out = []
    for off in offsets:
        if rng.random() < profile.net_share:
            target, kind = _pick(rng, profile.netflows), "Netflow"
            op = profile.net_ops[int(rng.integers(len(profile.net_ops)))]
        else:
            target, kind = _pick(rng, profile.files), "File"
            op = profile.file_ops[int(rng.integers(len(profile.file_ops)))]
        out.append((int(start + off), pid, op, kind, target))
    return out


def generate(profiles: Sequence[BehaviorProfile], days: float, seed: int = 0,
             window_minutes: float = 120, mode: str = "deterministic",
             start_ts: int = START_TS, separable: bool = True, schema: str = "TC") -> EventLog:
    """Synthesize ``days`` of benign activity.

    In deterministic mode every profile runs exactly ``processes_per_window``
    processes per slot with ``events_per_process`` events each; stochastic
    mode draws both counts from Poisson distributions with those means.
    """
    if not profiles:
        raise ConfigError("at least one behavior profile is required")
    if days <= 0:
        raise ConfigError("days must be positive")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if separable:
        check_separable(profiles)
    by_exe = {p.executable: p for p in profiles}
    for p in profiles:
        for child, _ in p.children:
            if child not in by_exe:
                raise ConfigError(f"{p.executable} spawns {child!r}, which has no profile")

    slot = minutes_to_ns(window_minutes)
    n_slots = int(np.ceil(days * NS_PER_DAY / slot))
    ns = _namespace(seed)
    rng = np.random.default_rng(seed)
    events = []

    def emit(ts, pid, exe, op, kind, target, target_id=None):
        dst = target_id or _entity_id(ns, f"{kind}:{target}")
        events.append(ProvenanceEvent(ts, pid, "Subject", dst, kind, op,
                                      {"src": exe, "dst": target}))

    # leave a small margin so children started late still fit in the slot
    span = slot - 2
    for s in range(n_slots):
        t0 = start_ts + s * slot
        for p in profiles:
            n_proc = p.processes_per_window
            if mode == "stochastic":
                n_proc = max(1, int(rng.poisson(n_proc)))
            for i in range(n_proc):
                pid = _entity_id(ns, f"proc:{p.executable}:{s}:{i}")
                n_ev = p.events_per_process
                if mode == "stochastic":
                    n_ev = max(1, int(rng.poisson(n_ev)))
                evs = _process_events(rng, p, pid, t0, span, n_ev)
                for ts, _, op, kind, target in evs:
                    emit(ts, pid, p.executable, op, kind, target)
                kids = [(exe, int(round(w)) if mode == "deterministic" else int(rng.poisson(w)))
                        for exe, w in p.children]
                for j, child_exe in enumerate(exe for exe, n in kids for _ in range(n)):
                    child = by_exe[child_exe]
                    cid = _entity_id(ns, f"proc:{p.executable}:{s}:{i}:child{j}")
                    t_clone = evs[0][0] + 1
                    emit(t_clone, pid, p.executable, "clone", "Subject", child_exe, cid)
                    c_span = max(1, t0 + span - t_clone)
                    for ts, _, op, kind, target in _process_events(
                            rng, child, cid, t_clone, c_span, child.events_per_process):
                        emit(ts, cid, child.executable, op, kind, target)
    return build_log(events, schema)


# --- attacks -----------------------------------------------------------------

ATTACK_KINDS = ("NovelExecutable", "LOTL")


@dataclass(frozen=True)
class AttackStep:
    """``actor`` performs ``op`` on ``target``.

    For ``target_kind == "Subject"`` the target is another role of the
    script; otherwise it is a path or ``ip:port`` string.
    """

    actor: str
    op: str
    target_kind: str
    target: str


@dataclass(frozen=True)
class AttackScript:
    kind: str
    name: str
    start_ts: int
    roles: dict[str, str]  # role -> executable
    steps: tuple[AttackStep, ...]
    spacing_ns: int = 20 * 1_000_000_000
    targets: tuple[str, ...] = field(default=())  # roles reported as ground truth; all if empty

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"attack kind must be one of {ATTACK_KINDS}")
        for st in self.steps:
            if st.actor not in self.roles:
                raise ConfigError(f"step actor {st.actor!r} is not a declared role")
            if st.target_kind == "Subject" and st.target not in self.roles:
                raise ConfigError(f"step target {st.target!r} is not a declared role")

    @property
    def end_ts(self) -> int:
        return self.start_ts + max(len(self.steps) - 1, 0) * self.spacing_ns

    def to_json(self) -> dict:
        d = asdict(self)
        d["steps"] = [asdict(s) for s in self.steps]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "AttackScript":
        d = dict(d)
        d["steps"] = tuple(AttackStep(**s) for s in d["steps"])
        d["targets"] = tuple(d.get("targets", ()))
        return cls(**d)


def novel_executable_script(start_ts: int, name: str = "novel-exe",
                            dropper: str = "/tmp/.cache/kworkerd",
                            payload: str = "/tmp/.cache/update.py",
                            c2: str = "203.0.113.66:4444",
                            secret: str = "/etc/shadow") -> AttackScript:
    """Dropper fetches a payload, steals a secret, and a shell runs the payload."""
    steps = (
        AttackStep("dropper", "connect", "Netflow", c2),
        AttackStep("dropper", "recvfrom", "Netflow", c2),
        AttackStep("dropper", "write", "File", payload),
        AttackStep("dropper", "read", "File", secret),
        AttackStep("dropper", "clone", "Subject", "runner"),
        AttackStep("runner", "execute", "File", payload),
        AttackStep("runner", "sendto", "Netflow", c2),
    )
    return AttackScript("NovelExecutable", name, start_ts,
                        {"dropper": dropper, "runner": "/bin/bash"}, steps)


def lotl_script(start_ts: int, actor: BehaviorProfile, victim: BehaviorProfile,
                n_steps: int = 12, seed: int = 0, name: str = "lotl",
                shell: str = "/bin/bash") -> AttackScript:
    """A known executable that behaves like ``victim`` and then spawns a shell."""
    if actor.executable == victim.executable:
        raise ConfigError("LOTL actor and victim must be different executables")
    rng = np.random.default_rng([seed, 7])
    steps = []
    for _ in range(n_steps):
        if rng.random() < victim.net_share:
            op = victim.net_ops[int(rng.integers(len(victim.net_ops)))]
            steps.append(AttackStep("actor", op, "Netflow", _pick(rng, victim.netflows)))
        else:
            op = victim.file_ops[int(rng.integers(len(victim.file_ops)))]
            steps.append(AttackStep("actor", op, "File", _pick(rng, victim.files)))
    steps.append(AttackStep("actor", "clone", "Subject", "shell"))
    return AttackScript("LOTL", name, start_ts, {"actor": actor.executable, "shell": shell},
                        tuple(steps), targets=("actor",))


def inject_attack(log: EventLog, script: AttackScript, seed: int = 0,
                  profiles: Sequence[BehaviorProfile] | None = None) -> tuple[EventLog, GroundTruth]:
    """Merge the scripted events into ``log`` and return the ground truth.

    Pool items already present in the log keep their entity ids. Existing
    events are left untouched.
    """
    if not log.events:
        raise DataError("cannot inject an attack into an empty log")
    if script.start_ts < log.first_ts or script.end_ts > log.last_ts:
        raise DataError(f"attack window [{script.start_ts}, {script.end_ts}] lies outside "
                        f"the log span [{log.first_ts}, {log.last_ts}]")
    if profiles is not None:
        known = {p.executable for p in profiles}
        if script.kind == "LOTL":
            missing = set(script.roles.values()) - known
            if missing:
                raise ConfigError(f"LOTL script uses executables without a profile: {sorted(missing)}")
        elif not set(script.roles.values()) - known:
            raise ConfigError("NovelExecutable script introduces no new executable")

    ns = _namespace(seed, f"attack/{script.name}")
    by_attr = {(kind, attr): eid for eid, (kind, attr) in sorted(log.entity_table.items())}
    role_ids = {role: _entity_id(ns, f"role:{role}") for role in script.roles}

    new = []
    for i, st in enumerate(script.steps):
        ts = script.start_ts + i * script.spacing_ns
        if st.target_kind == "Subject":
            dst_id, dst_attr = role_ids[st.target], script.roles[st.target]
        else:
            dst_attr = st.target
            dst_id = by_attr.get((st.target_kind, st.target)) or _entity_id(
                ns, f"{st.target_kind}:{st.target}")
        new.append(ProvenanceEvent(ts, role_ids[st.actor], "Subject", dst_id, st.target_kind,
                                   st.op, {"src": script.roles[st.actor], "dst": dst_attr}))
    merged = build_log(list(log.events) + new, log.schema)
    reported = script.targets or tuple(script.roles)
    gt = GroundTruth([Attack(script.name, frozenset(role_ids[r] for r in reported),
                             script.start_ts, script.end_ts)])
    return merged, gt


# --- ready-made scenarios ----------------------------------------------------

@dataclass
class Scenario:
    log: EventLog
    cutoff_ts: int
    gt: GroundTruth | None
    profiles: list[BehaviorProfile]

    @property
    def split(self):
        return split_dataset(self.log, self.cutoff_ts)


def build_scenario(attack: str | None = None, days: float = 14, train_days: float = 10,
                   seed: int = 0, mode: str = "deterministic",
                   profiles: Sequence[BehaviorProfile] | None = None,
                   n_attacks: int = 1, window_minutes: float = 120) -> Scenario:
    """Benign corpus split at ``train_days`` with attacks placed in the test period.

    Attacks start 30 minutes into successive test days; the LOTL actor is
    nginx behaving like postgres.
    """
    if train_days >= days:
        raise ConfigError("train_days must be smaller than days")
    profiles = list(profiles or default_profiles())
    log = generate(profiles, days, seed, window_minutes, mode)
    cutoff = START_TS + int(train_days * NS_PER_DAY)
    if attack is None:
        return Scenario(log, cutoff, None, profiles)
    if attack not in ATTACK_KINDS:
        raise ConfigError(f"attack must be one of {ATTACK_KINDS}")
    by_exe = {p.executable: p for p in profiles}
    gt = GroundTruth()
    for i in range(n_attacks):
        start = cutoff + i * NS_PER_DAY + minutes_to_ns(30)
        name = f"{attack.lower()}-{i + 1}"
        if attack == "NovelExecutable":
            script = novel_executable_script(start, name=name,
                                             dropper=f"/tmp/.cache/kworkerd{i + 1}")
        else:
            actor = by_exe.get("/usr/sbin/nginx", profiles[0])
            victim = by_exe.get("/usr/lib/postgresql/14/bin/postgres", profiles[-1])
            script = lotl_script(start, actor, victim, seed=seed + i, name=name)
        log, one = inject_attack(log, script, seed=seed, profiles=profiles)
        gt = gt.merged(one)
    return Scenario(log, cutoff, gt, profiles)


def load_profiles(path) -> list[BehaviorProfile]:
    with open(path) as fh:
        return [BehaviorProfile.from_json(d) for d in json.load(fh)]
