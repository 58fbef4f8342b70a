"""Experiment configuration: one JSON document, validated with field paths.

Sections: problems[], actions[], methods[], budgets[], seed, schedule,
cache, reward (per problem). The parsed document is echoed verbatim into
the result directory so every run is self-describing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .core import Action, MaskedState, Vocabulary
from .denoiser import DenoiserRegistry, ExactPosteriorDenoiser, PlantedSkillDenoiser
from .errors import ConfigError
from .remask import DEFAULT_SCHEDULE, RatioSchedule
from .reward import ExactMatchReward, TestCommandReward
from .tokmap import ToyCodec

METHOD_KINDS = ("umf", "bon", "dts_like", "pair")
DENOISER_KINDS = ("planted_skill", "exact_posterior", "remote")
REWARD_KINDS = ("exact_match", "command", "remote")


def _expect(obj: Any, kind: type, path: str):
    if kind is float and isinstance(obj, int) and not isinstance(obj, bool):
        return float(obj)
    if not isinstance(obj, kind) or (kind in (int, float) and isinstance(obj, bool)):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {type(obj).__name__}")
    return obj


def _expect_list(obj: Any, path: str, min_len: int = 1) -> list:
    if not isinstance(obj, list):
        raise ConfigError(f"{path}: expected list, got {type(obj).__name__}")
    if len(obj) < min_len:
        raise ConfigError(f"{path}: needs at least {min_len} entries")
    return obj


def _int_list(obj: Any, path: str) -> list[int]:
    out = []
    for i, value in enumerate(_expect_list(obj, path)):
        out.append(_expect(value, int, f"{path}[{i}]"))
    return out


@dataclass(frozen=True)
class DenoiserSpec:
    id: str
    kind: str
    params: dict


@dataclass(frozen=True)
class RewardSpec:
    kind: str
    params: dict


@dataclass(frozen=True)
class ProblemSpec:
    id: str
    vocab: Vocabulary
    prompt: tuple[int, ...]
    gen_len: int
    denoisers: tuple[DenoiserSpec, ...]
    reward: RewardSpec
    codec_path: str | None = None
    holdout: RewardSpec | None = None  # scores the selected candidate separately


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str
    params: dict


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    schedule: RatioSchedule
    cache: bool
    c_exp: float
    budgets: tuple[int, ...]
    problems: tuple[ProblemSpec, ...]
    actions: tuple[Action, ...]
    methods: tuple[MethodSpec, ...]
    raw: dict = field(repr=False, default_factory=dict)


def _parse_vocab(obj: Any, path: str) -> Vocabulary:
    obj = _expect(obj, dict, path)
    try:
        return Vocabulary(
            size=_expect(obj.get("size"), int, f"{path}.size"),
            mask_id=_expect(obj.get("mask_id"), int, f"{path}.mask_id"),
            eos_id=_expect(obj.get("eos_id"), int, f"{path}.eos_id"),
            pad_id=_expect(obj.get("pad_id"), int, f"{path}.pad_id"),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_denoiser(obj: Any, path: str) -> DenoiserSpec:
    obj = _expect(obj, dict, path)
    den_id = _expect(obj.get("id"), str, f"{path}.id")
    kind = _expect(obj.get("kind"), str, f"{path}.kind")
    if kind not in DENOISER_KINDS:
        raise ConfigError(f"{path}.kind: unknown kind {kind!r}, expected one of {DENOISER_KINDS}")
    params = {k: v for k, v in obj.items() if k not in ("id", "kind")}
    if kind == "planted_skill" and "target" not in params:
        raise ConfigError(f"{path}: planted_skill needs a 'target' sequence")
    if kind == "exact_posterior" and "support" not in params:
        raise ConfigError(f"{path}: exact_posterior needs a 'support' list")
    if kind == "remote":
        for key in ("endpoint", "model_id"):
            if key not in params:
                raise ConfigError(f"{path}: remote denoiser needs {key!r}")
    return DenoiserSpec(den_id, kind, params)


def _parse_reward(obj: Any, path: str) -> RewardSpec:
    obj = _expect(obj, dict, path)
    kind = _expect(obj.get("kind"), str, f"{path}.kind")
    if kind not in REWARD_KINDS:
        raise ConfigError(f"{path}.kind: unknown kind {kind!r}, expected one of {REWARD_KINDS}")
    params = {k: v for k, v in obj.items() if k != "kind"}
    if kind == "exact_match" and "target" not in params:
        raise ConfigError(f"{path}: exact_match needs a 'target' sequence")
    if kind == "command" and "argv" not in params:
        raise ConfigError(f"{path}: command reward needs 'argv'")
    if kind == "remote" and "endpoint" not in params:
        raise ConfigError(f"{path}: remote reward needs 'endpoint'")
    return RewardSpec(kind, params)


def _parse_problem(obj: Any, path: str) -> ProblemSpec:
    obj = _expect(obj, dict, path)
    problem_id = _expect(obj.get("id"), str, f"{path}.id")
    vocab = _parse_vocab(obj.get("vocab"), f"{path}.vocab")
    prompt = tuple(_int_list(obj.get("prompt", []), f"{path}.prompt") if obj.get("prompt") else ())
    gen_len = _expect(obj.get("gen_len"), int, f"{path}.gen_len")
    if gen_len < 1:
        raise ConfigError(f"{path}.gen_len: must be positive")
    denoisers = tuple(
        _parse_denoiser(d, f"{path}.denoisers[{i}]")
        for i, d in enumerate(_expect_list(obj.get("denoisers"), f"{path}.denoisers"))
    )
    seen = set()
    for i, d in enumerate(denoisers):
        if d.id in seen:
            raise ConfigError(f"{path}.denoisers[{i}].id: duplicate id {d.id!r}")
        seen.add(d.id)
    reward = _parse_reward(obj.get("reward"), f"{path}.reward")
    codec_path = obj.get("codec")
    if codec_path is not None:
        codec_path = _expect(codec_path, str, f"{path}.codec")
    holdout = obj.get("holdout_reward")
    if holdout is not None:
        holdout = _parse_reward(holdout, f"{path}.holdout_reward")
    return ProblemSpec(
        problem_id, vocab, prompt, gen_len, denoisers, reward, codec_path, holdout
    )


def _parse_action(obj: Any, path: str) -> Action:
    obj = _expect(obj, dict, path)
    try:
        return Action(
            id=_expect(obj.get("id"), str, f"{path}.id"),
            denoiser_id=_expect(obj.get("denoiser"), str, f"{path}.denoiser"),
            temperature=_expect(obj.get("temperature", 0.0), float, f"{path}.temperature"),
            remask=_expect(obj.get("remask", "entropy"), str, f"{path}.remask"),
            rng_seed=obj.get("rng_seed"),
            eos_suppression=_expect(
                obj.get("eos_suppression", False), bool, f"{path}.eos_suppression"
            ),
            eos_penalty=_expect(obj.get("eos_penalty", 1e-12), float, f"{path}.eos_penalty"),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_method(obj: Any, path: str) -> MethodSpec:
    obj = _expect(obj, dict, path)
    kind = _expect(obj.get("kind"), str, f"{path}.kind")
    if kind not in METHOD_KINDS:
        raise ConfigError(f"{path}.kind: unknown kind {kind!r}, expected one of {METHOD_KINDS}")
    name = _expect(obj.get("name", kind), str, f"{path}.name")
    params = {k: v for k, v in obj.items() if k not in ("name", "kind")}
    if kind == "bon" and "action" not in params:
        raise ConfigError(f"{path}: bon needs an 'action' id")
    if kind == "pair":
        arms = _expect_list(params.get("arms"), f"{path}.arms", min_len=2)
        if len(arms) != 2:
            raise ConfigError(f"{path}.arms: pair needs exactly two arms")
        params = dict(params)
        params["arms"] = [
            _parse_method(arm, f"{path}.arms[{i}]") for i, arm in enumerate(arms)
        ]
    return MethodSpec(name, kind, params)


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document; raises ConfigError with the field path."""
    doc = _expect(doc, dict, "config")
    seed = _expect(doc.get("seed", 0), int, "seed")
    schedule_obj = doc.get("schedule")
    if schedule_obj is None:
        schedule = DEFAULT_SCHEDULE
    else:
        ratios = _expect_list(schedule_obj, "schedule")
        try:
            schedule = RatioSchedule(tuple(float(r) for r in ratios))
        except Exception as exc:
            raise ConfigError(f"schedule: {exc}") from exc
    cache = _expect(doc.get("cache", True), bool, "cache")
    c_exp = _expect(doc.get("c_exp", 1.0), float, "c_exp")
    budgets = tuple(_int_list(doc.get("budgets"), "budgets"))
    if any(b < 1 for b in budgets):
        raise ConfigError("budgets: every budget must be positive")
    problems = tuple(
        _parse_problem(p, f"problems[{i}]")
        for i, p in enumerate(_expect_list(doc.get("problems"), "problems"))
    )
    actions = tuple(
        _parse_action(a, f"actions[{i}]")
        for i, a in enumerate(_expect_list(doc.get("actions"), "actions"))
    )
    action_ids = {a.id for a in actions}
    if len(action_ids) != len(actions):
        raise ConfigError("actions: ids must be unique")
    methods = tuple(
        _parse_method(m, f"methods[{i}]")
        for i, m in enumerate(_expect_list(doc.get("methods"), "methods"))
    )

    def check_method_actions(method: MethodSpec, path: str) -> None:
        if method.kind == "bon" and method.params["action"] not in action_ids:
            raise ConfigError(f"{path}: unknown action {method.params['action']!r}")
        for key in ("actions",):
            for a in method.params.get(key, []):
                if a not in action_ids:
                    raise ConfigError(f"{path}: unknown action {a!r}")
        for i, arm in enumerate(method.params.get("arms", [])):
            check_method_actions(arm, f"{path}.arms[{i}]")

    for i, method in enumerate(methods):
        check_method_actions(method, f"methods[{i}]")
    for i, problem in enumerate(problems):
        den_ids = {d.id for d in problem.denoisers}
        for action in actions:
            if action.denoiser_id not in den_ids:
                raise ConfigError(
                    f"problems[{i}]: action {action.id!r} references denoiser "
                    f"{action.denoiser_id!r} which the problem does not define"
                )
    return ExperimentConfig(
        seed=seed,
        schedule=schedule,
        cache=cache,
        c_exp=c_exp,
        budgets=budgets,
        problems=problems,
        actions=actions,
        methods=methods,
        raw=doc,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


@dataclass
class BuiltProblem:
    """Runnable objects for one problem cell."""

    spec: ProblemSpec
    initial_state: MaskedState
    registry: DenoiserRegistry
    reward_provider: object
    codec: ToyCodec | None
    holdout_provider: object | None = None


def _build_reward(reward: RewardSpec, problem: ProblemSpec, codec: ToyCodec | None):
    if reward.kind == "exact_match":
        return ExactMatchReward(tuple(reward.params["target"]))
    if reward.kind == "command":
        if codec is None:
            raise ConfigError(f"problem {problem.id!r}: command reward needs a codec")
        return TestCommandReward(
            tuple(reward.params["argv"]), codec, timeout=float(reward.params.get("timeout", 30.0))
        )
    from .remote import RemoteCodec, RemoteRewardProvider

    reward_codec = codec or RemoteCodec(reward.params["endpoint"])
    return RemoteRewardProvider(
        reward.params["endpoint"],
        reward_codec,
        problem_id=reward.params.get("problem_id", problem.id),
    )


def build_problem(problem: ProblemSpec) -> BuiltProblem:
    """Construct fresh state, registry, and reward objects for one cell."""
    registry = DenoiserRegistry()
    for den in problem.denoisers:
        if den.kind == "planted_skill":
            registry.register(
                den.id,
                PlantedSkillDenoiser(
                    problem.vocab,
                    tuple(den.params["target"]),
                    tuple(den.params.get("band", (0.0, 1.0))),
                    margin=float(den.params.get("margin", 8.0)),
                    salt=int(den.params.get("salt", 0)),
                ),
            )
        elif den.kind == "exact_posterior":
            support = [
                (tuple(entry["seq"]), float(entry["prob"])) for entry in den.params["support"]
            ]
            registry.register(den.id, ExactPosteriorDenoiser(problem.vocab, support))
        else:  # remote
            from .remote import RemoteDenoiser

            registry.register(
                den.id,
                RemoteDenoiser(den.params["endpoint"], den.params["model_id"]),
            )
    codec = ToyCodec.from_json(problem.codec_path) if problem.codec_path else None
    provider = _build_reward(problem.reward, problem, codec)
    holdout = _build_reward(problem.holdout, problem, codec) if problem.holdout else None
    initial = MaskedState.initial(problem.vocab, problem.prompt, problem.gen_len)
    return BuiltProblem(problem, initial, registry, provider, codec, holdout)
