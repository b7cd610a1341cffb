"""Deterministic synthetic navigation worlds.

A world is a connected house graph with a ground-truth path, per-node
panoramas whose action views carry (noisy) copies of destination
landmark features, a templated instruction that interleaves landmark
tokens with function-word fillers, and importance oracles that simulate
how attention misranks tokens (function words and background views can
spuriously outrank content).

Everything is a pure function of (seed, parameters); worlds are
immutable after creation and round-trip through a plain-text format.
"""

from __future__ import annotations

import ast
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .vocabulary import FUNCTION_WORDS

WORLD_FORMAT = "navprune-world v1"

_SYLLABLES = ("ba", "de", "fi", "go", "hu", "ka", "lo", "mi", "nu", "po")


def landmark_word(index: int) -> str:
    """Deterministic pronounceable content word for a node, letters only."""
    parts = [_SYLLABLES[(index // 100) % 10], _SYLLABLES[(index // 10) % 10], _SYLLABLES[index % 10]]
    return "".join(parts)


def subseed(seed: int, *salt) -> int:
    """Stable derived seed, independent of interpreter hash randomization."""
    text = ":".join([str(seed)] + [str(s) for s in salt])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


@dataclass
class HouseGraph:
    positions: dict[int, tuple[float, float]]
    adjacency: dict[int, set[int]]
    start: int
    goal: int
    gt_path: list[int]

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    def edges(self) -> list[tuple[int, int]]:
        out = set()
        for a, nbrs in self.adjacency.items():
            for b in nbrs:
                out.add((min(a, b), max(a, b)))
        return sorted(out)

    def distance(self, a: int, b: int) -> int:
        """Hop distance by breadth-first search; -1 when unreachable."""
        if a == b:
            return 0
        seen = {a}
        frontier = [a]
        hops = 0
        while frontier:
            hops += 1
            nxt = []
            for n in frontier:
                for m in sorted(self.adjacency[n]):
                    if m == b:
                        return hops
                    if m not in seen:
                        seen.add(m)
                        nxt.append(m)
            frontier = nxt
        return -1


def generate_house(
    seed: int,
    n_nodes: int,
    path_len: int,
    max_degree: int = 4,
    extra_edge_fraction: float = 0.3,
) -> HouseGraph:
    """Ground-truth path first, then distractor nodes and extra edges.

    ``path_len`` counts hops, so the path occupies path_len + 1 nodes.
    Connected by construction; every degree stays <= max_degree.
    """
    if path_len < 1:
        raise ValueError("path_len must be >= 1")
    if path_len >= n_nodes:
        raise ValueError("infeasible: path_len must be < n_nodes")
    if max_degree < 2:
        raise ValueError("infeasible: max_degree must be >= 2")

    rng = np.random.default_rng(seed)
    order = [int(i) for i in rng.permutation(n_nodes)]
    path_nodes = order[: path_len + 1]
    adjacency: dict[int, set[int]] = {i: set() for i in range(n_nodes)}

    def degree(n: int) -> int:
        return len(adjacency[n])

    def connect(a: int, b: int) -> None:
        adjacency[a].add(b)
        adjacency[b].add(a)

    for a, b in zip(path_nodes, path_nodes[1:]):
        connect(a, b)

    attached = list(path_nodes)
    for node in order[path_len + 1 :]:
        hosts = [n for n in attached if degree(n) < max_degree]
        if not hosts:
            raise ValueError("infeasible: no attachment capacity left (raise max_degree)")
        host = hosts[int(rng.integers(len(hosts)))]
        connect(host, node)
        attached.append(node)

    extra_target = int(extra_edge_fraction * n_nodes)
    attempts = 0
    added = 0
    while added < extra_target and attempts < 20 * (extra_target + 1):
        attempts += 1
        a, b = (int(x) for x in rng.integers(0, n_nodes, size=2))
        if a == b or b in adjacency[a]:
            continue
        if degree(a) >= max_degree or degree(b) >= max_degree:
            continue
        connect(a, b)
        added += 1

    positions = {i: (float(x), float(y)) for i, (x, y) in enumerate(rng.random((n_nodes, 2)))}
    return HouseGraph(
        positions=positions,
        adjacency=adjacency,
        start=path_nodes[0],
        goal=path_nodes[-1],
        gt_path=list(path_nodes),
    )


@dataclass(frozen=True, eq=False)
class View:
    view_id: tuple
    kind: str  # "action" | "background"
    dest: int | None
    feature: np.ndarray


@dataclass
class PanoramaSpec:
    views: dict[int, tuple[View, ...]]
    landmarks: dict[int, np.ndarray]
    n_views: int
    sigma_feat: float

    def action_views(self, node: int) -> list[View]:
        return [v for v in self.views[node] if v.kind == "action"]


def _unit(vec: np.ndarray) -> np.ndarray:
    return vec / max(float(np.linalg.norm(vec)), 1e-12)


def generate_panoramas(
    house: HouseGraph,
    hidden_dim: int,
    sigma_feat: float,
    seed: int,
    n_views: int = 12,
    twin_fraction: float = 0.0,
    twin_noise: float = 0.05,
) -> PanoramaSpec:
    """Unit-norm landmarks; action views point at noisy destination landmarks.

    ``twin_fraction`` makes that share of off-path nodes visual near-twins
    of randomly chosen path nodes (two doorways that look alike).  Twins
    are the ambiguity dial: they create plausible-but-wrong backtracking
    targets, the failure mode history pruning exists to contain.  Default
    off, which also keeps distinct landmarks well separated.
    """
    if sigma_feat < 0:
        raise ValueError("sigma_feat must be >= 0")
    if not 0.0 <= twin_fraction <= 1.0:
        raise ValueError("twin_fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    landmarks = {n: _unit(rng.standard_normal(hidden_dim)) for n in range(house.n_nodes)}
    if twin_fraction > 0.0:
        off_path = sorted(set(range(house.n_nodes)) - set(house.gt_path))
        n_twins = int(math.floor(twin_fraction * len(off_path) + 0.5))
        picks = rng.choice(len(off_path), size=n_twins, replace=False) if n_twins else []
        targets = house.gt_path[1:]
        for i in picks:
            twin_of = targets[int(rng.integers(len(targets)))]
            jitter = rng.normal(0.0, twin_noise, hidden_dim)
            landmarks[off_path[int(i)]] = _unit(landmarks[twin_of] + jitter)
    views: dict[int, tuple[View, ...]] = {}
    for node in range(house.n_nodes):
        neighbors = sorted(house.adjacency[node])
        if len(neighbors) > n_views:
            raise ValueError("infeasible: node degree exceeds views per panorama")
        # headings are interleaved: a view's position carries no hint of
        # whether it is an action view
        slots = [int(i) for i in rng.permutation(n_views)]
        entries: list[View] = []
        dest_by_slot = dict(zip(slots[: len(neighbors)], neighbors))
        for idx in range(n_views):
            dest = dest_by_slot.get(idx)
            if dest is not None:
                feat = landmarks[dest] + rng.normal(0.0, sigma_feat, hidden_dim)
                entries.append(View((node, idx), "action", dest, _unit(feat)))
            else:
                entries.append(
                    View((node, idx), "background", None, _unit(rng.standard_normal(hidden_dim)))
                )
        views[node] = tuple(entries)
    return PanoramaSpec(views=views, landmarks=landmarks, n_views=n_views, sigma_feat=sigma_feat)


@dataclass(frozen=True, eq=False)
class Token:
    token_id: int
    text: str
    kind: str  # "bos" | "word" | "eos"
    relevant: bool
    embedding: np.ndarray


@dataclass
class SyntheticInstruction:
    tokens: tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def relevant_tokens(self) -> list[Token]:
        return [t for t in self.tokens if t.relevant]

    def text(self) -> str:
        return " ".join(t.text for t in self.tokens if t.kind == "word")


def generate_instruction(
    house: HouseGraph,
    filler_rate: float,
    seed: int,
    landmarks: dict[int, np.ndarray],
) -> SyntheticInstruction:
    """Landmark tokens in path order, fillers at seeded-random positions.

    filler count = round(filler_rate / (1 - filler_rate) * landmarks); the
    sequence is wrapped in start/end delimiters.
    """
    if not 0.0 <= filler_rate < 1.0:
        raise ValueError("filler_rate must be in [0, 1)")
    rng = np.random.default_rng(seed)
    dim = len(next(iter(landmarks.values())))
    hops = house.gt_path[1:]
    n_land = len(hops)
    n_fill = int(math.floor(filler_rate / (1.0 - filler_rate) * n_land + 0.5))

    filler_bank = sorted(FUNCTION_WORDS)
    slots = n_land + n_fill
    filler_positions = set(
        int(i) for i in rng.choice(slots, size=n_fill, replace=False)
    ) if n_fill else set()

    body: list[tuple[str, bool, np.ndarray]] = []
    land_iter = iter(hops)
    for slot in range(slots):
        if slot in filler_positions:
            word = filler_bank[int(rng.integers(len(filler_bank)))]
            body.append((word, False, _unit(rng.standard_normal(dim))))
        else:
            dest = next(land_iter)
            body.append((landmark_word(dest), True, landmarks[dest].copy()))

    tokens: list[Token] = [Token(0, "<s>", "bos", False, _unit(rng.standard_normal(dim)))]
    for i, (word, relevant, emb) in enumerate(body, start=1):
        tokens.append(Token(i, word, "word", relevant, emb))
    tokens.append(Token(len(tokens), "</s>", "eos", False, _unit(rng.standard_normal(dim))))
    return SyntheticInstruction(tokens=tuple(tokens))


@dataclass(frozen=True)
class OracleConfig:
    """Dials for the simulated-attention importance oracles."""

    sigma_feat: float = 0.0
    p_flip: float = 0.0
    boost: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_flip <= 1.0:
            raise ValueError("p_flip must be in [0, 1]")
        if self.sigma_feat < 0:
            raise ValueError("sigma_feat must be >= 0")


_SCORE_NOISE = 0.1
_RELEVANT_BASE = 1.0
_FILLER_BASE = 0.2
_OFFPATH_ACTION_BASE = 0.7


def importance_oracle(instruction: SyntheticInstruction, config: OracleConfig) -> dict:
    """Noisy instruction-token importance.

    Relevant tokens score around 1.0 and fillers around 0.2, with Gaussian
    jitter; each non-relevant token independently gains ``boost`` with
    probability ``p_flip`` (the misranking that makes score-only pruning
    drop content words).  Scores clamp at zero.
    """
    rng = np.random.default_rng(config.seed)
    scores: dict = {}
    for tok in instruction.tokens:
        base = _RELEVANT_BASE if tok.relevant else _FILLER_BASE
        value = base + rng.normal(0.0, _SCORE_NOISE)
        if not tok.relevant and rng.random() < config.p_flip:
            value += config.boost
        scores[tok.token_id] = max(0.0, float(value))
    return scores


def view_importance_oracle(
    house: HouseGraph,
    panorama: PanoramaSpec,
    node: int,
    config: OracleConfig,
    seed: int | None = None,
) -> dict:
    """Noisy view-token importance for one panorama.

    Action views toward ground-truth-path nodes score around 1.0 (the
    signal a trained model's attention carries), other action views
    around 0.7, background views around 0.2.  Off-path views are
    flip-eligible like instruction fillers.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    on_path = set(house.gt_path)
    scores: dict = {}
    for view in panorama.views[node]:
        if view.kind == "action":
            base = _RELEVANT_BASE if view.dest in on_path else _OFFPATH_ACTION_BASE
            flippable = view.dest not in on_path
        else:
            base = _FILLER_BASE
            flippable = True
        value = base + rng.normal(0.0, _SCORE_NOISE)
        if flippable and rng.random() < config.p_flip:
            value += config.boost
        scores[view.view_id] = max(0.0, float(value))
    return scores


@dataclass
class World:
    house: HouseGraph
    panorama: PanoramaSpec
    instruction: SyntheticInstruction
    hidden_dim: int
    seed: int
    params: dict = field(default_factory=dict)


def build_world(
    seed: int,
    n_nodes: int = 60,
    path_len: int = 6,
    max_degree: int = 4,
    hidden_dim: int = 64,
    n_views: int = 12,
    sigma_feat: float = 0.0,
    filler_rate: float = 0.6,
    extra_edge_fraction: float = 0.3,
    twin_fraction: float = 0.0,
    twin_noise: float = 0.05,
) -> World:
    house = generate_house(
        subseed(seed, "house"), n_nodes, path_len, max_degree, extra_edge_fraction
    )
    panorama = generate_panoramas(
        house, hidden_dim, sigma_feat, subseed(seed, "pano"), n_views, twin_fraction, twin_noise
    )
    instruction = generate_instruction(
        house, filler_rate, subseed(seed, "instr"), panorama.landmarks
    )
    return World(
        house=house,
        panorama=panorama,
        instruction=instruction,
        hidden_dim=hidden_dim,
        seed=seed,
        params={
            "n_nodes": n_nodes,
            "path_len": path_len,
            "max_degree": max_degree,
            "n_views": n_views,
            "sigma_feat": sigma_feat,
            "filler_rate": filler_rate,
            "extra_edge_fraction": extra_edge_fraction,
            "twin_fraction": twin_fraction,
            "twin_noise": twin_noise,
        },
    )


def _fmt_vec(vec: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in vec)


def save_world(world: World, path: str | Path) -> None:
    """Single-document plain-text serialization; round-trip stable."""
    lines = [f"# {WORLD_FORMAT}"]
    lines.append(f"hidden_dim={world.hidden_dim}")
    lines.append(f"seed={world.seed}")
    for key, value in sorted(world.params.items()):
        lines.append(f"{key}={value!r}")
    lines.append("[nodes]")
    for n in sorted(world.house.positions):
        x, y = world.house.positions[n]
        lines.append(f"{n} {x!r} {y!r}")
    lines.append("[edges]")
    for a, b in world.house.edges():
        lines.append(f"{a} {b}")
    lines.append(f"[start] {world.house.start}")
    lines.append(f"[goal] {world.house.goal}")
    lines.append("[gt-path] " + " ".join(str(n) for n in world.house.gt_path))
    lines.append("[landmarks]")
    for n in sorted(world.panorama.landmarks):
        lines.append(f"{n} {_fmt_vec(world.panorama.landmarks[n])}")
    lines.append(f"[views] n_views={world.panorama.n_views} sigma_feat={world.panorama.sigma_feat!r}")
    for n in sorted(world.panorama.views):
        for view in world.panorama.views[n]:
            dest = "-" if view.dest is None else str(view.dest)
            lines.append(f"{n} {view.view_id[1]} {view.kind} {dest} {_fmt_vec(view.feature)}")
    lines.append("[instruction]")
    for tok in world.instruction.tokens:
        rel = 1 if tok.relevant else 0
        lines.append(f"{tok.token_id} {tok.kind} {rel} {tok.text} {_fmt_vec(tok.embedding)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_world(path: str | Path) -> World:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != f"# {WORLD_FORMAT}":
        raise ValueError(f"world format header mismatch (want '{WORLD_FORMAT}')")

    header: dict[str, str] = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("["):
        key, _, value = lines[i].partition("=")
        header[key] = value
        i += 1

    positions: dict[int, tuple[float, float]] = {}
    adjacency: dict[int, set[int]] = {}
    landmarks: dict[int, np.ndarray] = {}
    views: dict[int, list[View]] = {}
    tokens: list[Token] = []
    start = goal = 0
    gt_path: list[int] = []
    n_views = 0
    sigma_feat = 0.0
    section = ""
    for line in lines[i:]:
        if not line:
            continue
        if line.startswith("[start]"):
            start = int(line.split()[1])
            continue
        if line.startswith("[goal]"):
            goal = int(line.split()[1])
            continue
        if line.startswith("[gt-path]"):
            gt_path = [int(x) for x in line.split()[1:]]
            continue
        if line.startswith("[views]"):
            section = "views"
            for part in line.split()[1:]:
                key, _, value = part.partition("=")
                if key == "n_views":
                    n_views = int(value)
                elif key == "sigma_feat":
                    sigma_feat = float(value)
            continue
        if line.startswith("["):
            section = line.strip("[]")
            continue
        parts = line.split()
        if section == "nodes":
            positions[int(parts[0])] = (float(parts[1]), float(parts[2]))
            adjacency.setdefault(int(parts[0]), set())
        elif section == "edges":
            a, b = int(parts[0]), int(parts[1])
            adjacency.setdefault(a, set()).add(b)
            adjacency.setdefault(b, set()).add(a)
        elif section == "landmarks":
            landmarks[int(parts[0])] = np.array([float(x) for x in parts[1:]])
        elif section == "views":
            node, idx, kind, dest = int(parts[0]), int(parts[1]), parts[2], parts[3]
            feat = np.array([float(x) for x in parts[4:]])
            views.setdefault(node, []).append(
                View((node, idx), kind, None if dest == "-" else int(dest), feat)
            )
        elif section == "instruction":
            tok_id, kind, rel, word = int(parts[0]), parts[1], parts[2], parts[3]
            emb = np.array([float(x) for x in parts[4:]])
            tokens.append(Token(tok_id, word, kind, rel == "1", emb))

    house = HouseGraph(positions, adjacency, start, goal, gt_path)
    panorama = PanoramaSpec(
        views={n: tuple(v) for n, v in views.items()},
        landmarks=landmarks,
        n_views=n_views,
        sigma_feat=sigma_feat,
    )
    instruction = SyntheticInstruction(tuple(tokens))
    params = {}
    for key, value in header.items():
        if key in ("hidden_dim", "seed"):
            continue
        try:
            params[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            params[key] = value
    return World(
        house=house,
        panorama=panorama,
        instruction=instruction,
        hidden_dim=int(header.get("hidden_dim", "0")),
        seed=int(header.get("seed", "0")),
        params=params,
    )
