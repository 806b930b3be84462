"""Command-line surface: schedule dumps, toy training, sampling, sampler
comparison, prompt extension, and corpus statistics.

Every run resolves its configuration from flags, then an optional
key=value config file (flags win), writes a manifest.json capturing the
resolved values, and emits line-oriented text artifacts so runs can be
compared byte-for-byte. The ARTDIFF_OUT environment variable overrides the
default output directory when --out is not given.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .datasets import DATASETS, get_dataset
from .denoisers import (GaussianOracle, LabelEmbedding, ToyDenoiser, TrainConfig,
                        init_toy_denoiser, load_denoiser, save_denoiser, train)
from .errors import ConfigError, TrainingDivergedError
from .numerics import RngStream
from .promptx import (DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, FixtureGenerator,
                      Gazetteer, HashEmbedder, artist_histogram, build_index,
                      extend_prompt, load_corpus_jsonl, read_artwork_table,
                      tfidf_fit, top_share)
from .samplers import (DEFAULT_ETA, DEFAULT_GUIDANCE_SCALE, DEFAULT_STEPS,
                       SamplingPlan, sample)
from .schedule import (DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T,
                       linear_schedule, subsequence)

ENV_OUT = "ARTDIFF_OUT"
COMPARISON_T = 2000
COMPARE_STEP_COUNTS = (10, 20, 40, 80, 200)
ORDER_FIT_COUNTS = (10, 20, 40, 80)


def _fmt(x: float) -> str:
    return repr(float(x))


class Resolver:
    """Flag > config file > default resolution for one command invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file_values: dict[str, str] = {}
        if getattr(args, "config", None):
            path = Path(args.config)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            for lineno, line in enumerate(path.read_text().splitlines(), 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, _, value = line.partition("=")
                self.file_values[key.strip()] = value.strip()
        self.resolved: dict = {}

    def get(self, key: str, default, cast=str):
        flag = getattr(self.args, key, None)
        if flag is not None:
            value = flag
        elif key in self.file_values:
            raw = self.file_values[key]
            value = (raw.lower() in ("1", "true", "yes")) if cast is bool else cast(raw)
        else:
            value = default
        self.resolved[key] = value
        return value

    def out_dir(self) -> Path:
        out = self.get("out", None)
        if out is None:
            out = os.environ.get(ENV_OUT) or "artdiff-out"
        self.resolved["out"] = str(out)
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        return out


def _write_manifest(out: Path, command: str, resolver: Resolver,
                    extra: dict | None = None) -> None:
    manifest = {"command": command, "config": resolver.resolved}
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing required {what} path")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    return p


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(part) for part in str(text).split(",")])
    except ValueError as exc:
        raise ConfigError(f"cannot parse vector {text!r}: {exc}") from None


def _schedule_from(resolver: Resolver):
    T = resolver.get("timesteps", DEFAULT_T, int)
    beta_start = resolver.get("beta_start", DEFAULT_BETA_START, float)
    beta_end = resolver.get("beta_end", DEFAULT_BETA_END, float)
    try:
        return linear_schedule(T, beta_start, beta_end), (T, beta_start, beta_end)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# schedule-dump
# ---------------------------------------------------------------------------

def cmd_schedule_dump(args) -> int:
    resolver = Resolver(args)
    schedule, consts = _schedule_from(resolver)
    out = resolver.out_dir()
    lines = ["t,beta,alpha,alpha_bar,posterior_var"]
    for t in range(1, schedule.T + 1):
        lines.append(",".join([str(t), _fmt(schedule.beta(t)), _fmt(schedule.alpha(t)),
                               _fmt(schedule.alpha_bar(t)), _fmt(schedule.posterior_var(t))]))
    (out / "schedule.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out, "schedule-dump", resolver,
                    {"schedule": {"T": consts[0], "beta_start": consts[1], "beta_end": consts[2]}})
    print(f"wrote {out / 'schedule.csv'}")
    return 0


# ---------------------------------------------------------------------------
# toy-train
# ---------------------------------------------------------------------------

def cmd_toy_train(args) -> int:
    resolver = Resolver(args)
    name = resolver.get("dataset", None)
    if name is None or name not in DATASETS:
        known = ", ".join(sorted(DATASETS))
        raise ConfigError(f"unknown dataset {name!r}; available: {known}")
    dataset = get_dataset(name)
    schedule, consts = _schedule_from(resolver)
    seed = resolver.get("seed", 0, int)
    steps = resolver.get("steps", 20000, int)
    batch = resolver.get("batch", 64, int)
    lr = resolver.get("lr", 1e-3, float)
    optimizer = resolver.get("optimizer", "adam")
    drop_prob = resolver.get("drop_prob", 0.1, float)
    hidden = resolver.get("hidden", 16, int)
    conditional = bool(resolver.get("conditional", False, bool))
    out = resolver.out_dir()

    params = init_toy_denoiser(RngStream(seed).child("init"), dataset.dim,
                               width=hidden)
    embedding = None
    if conditional:
        if dataset.n_classes < 1:
            raise ConfigError(f"dataset {name!r} has no labels for conditional training")
        embedding = LabelEmbedding.create(dataset.n_classes, params.cond_width, seed)

    config = TrainConfig(steps=steps, batch_size=batch, learning_rate=lr,
                         seed=seed, optimizer=optimizer, drop_prob=drop_prob)
    params, losses = train(params, dataset, config, schedule, embedding)
    save_denoiser(out / "checkpoint.bin", params, schedule, embedding)

    loss_lines = ["step,loss"] + [f"{i},{_fmt(v)}" for i, v in enumerate(losses)]
    (out / "loss.csv").write_text("\n".join(loss_lines) + "\n")
    _write_manifest(out, "toy-train", resolver,
                    {"schedule": {"T": consts[0], "beta_start": consts[1], "beta_end": consts[2]},
                     "final_loss": float(losses[-1]) if len(losses) else None})
    print(f"trained {name} for {steps} steps; wrote {out / 'checkpoint.bin'}")
    return 0


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def _write_samples_csv(path: Path, samples: np.ndarray) -> None:
    flat = samples.reshape(samples.shape[0], -1)
    lines = [",".join(_fmt(v) for v in row) for row in flat]
    path.write_text("\n".join(lines) + "\n")


def _write_density_ppm(path: Path, points: np.ndarray, bins: int = 96) -> None:
    """2D histogram heatmap as a binary portable pixmap."""
    lo = points.min(axis=0) - 0.5
    hi = points.max(axis=0) + 0.5
    hist, _, _ = np.histogram2d(points[:, 0], points[:, 1], bins=bins,
                                range=[[lo[0], hi[0]], [lo[1], hi[1]]])
    norm = hist.T[::-1] / max(hist.max(), 1.0)
    ramp = (norm ** 0.5 * 255).astype(np.uint8)
    rgb = np.stack([ramp, (ramp * 0.6).astype(np.uint8),
                    (255 - ramp).astype(np.uint8)], axis=-1)
    header = f"P6\n{bins} {bins}\n255\n".encode()
    path.write_bytes(header + rgb.tobytes())


def cmd_sample(args) -> int:
    resolver = Resolver(args)
    kind = resolver.get("sampler", "ddim")
    eta = resolver.get("ddim_eta", DEFAULT_ETA, float)
    steps = resolver.get("ddim_steps", DEFAULT_STEPS, int)
    scale = resolver.get("scale", DEFAULT_GUIDANCE_SCALE, float)
    seed = resolver.get("seed", 0, int)
    batch = resolver.get("batch", 1000, int)
    oracle = bool(resolver.get("oracle", False, bool))
    label = resolver.get("label", None, int)
    plot = bool(resolver.get("plot", False, bool))
    out = resolver.out_dir()

    condition = None
    if oracle:
        mu0 = _parse_vector(resolver.get("mu0", "3,-1"))
        var0 = resolver.get("var0", 0.25, float)
        schedule, consts = _schedule_from(resolver)
        predictor = GaussianOracle(mu0=mu0, var0=var0, schedule=schedule)
        shape = (mu0.size,)
    elif getattr(args, "checkpoint", None) or resolver.file_values.get("checkpoint"):
        path = _require_file(resolver.get("checkpoint", None), "checkpoint")
        params, schedule, embedding = load_denoiser(path)
        consts = (schedule.T, float(schedule.betas[0]), float(schedule.betas[-1]))
        predictor = ToyDenoiser(params)
        shape = (params.data_width,)
        if label is not None:
            if embedding is None:
                raise ConfigError("checkpoint was trained unconditionally; --label is unusable")
            condition = embedding.condition(label)
    else:
        raise ConfigError("sample needs either --oracle or --checkpoint")

    try:
        plan = SamplingPlan(timeline=subsequence(schedule, steps), kind=kind,
                            shape=shape, seed=seed, batch=batch, eta=eta,
                            guidance_scale=scale)
        samples = sample(predictor, plan, schedule, condition)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    _write_samples_csv(out / "samples.csv", samples)
    if plot and shape == (2,):
        _write_density_ppm(out / "density.ppm", samples)
    _write_manifest(out, "sample", resolver,
                    {"schedule": {"T": consts[0], "beta_start": consts[1], "beta_end": consts[2]}})
    print(f"wrote {batch} samples to {out / 'samples.csv'}")
    return 0


# ---------------------------------------------------------------------------
# compare-samplers
# ---------------------------------------------------------------------------

def _fit_order(step_counts, errors) -> float:
    slope = np.polyfit(np.log(step_counts), np.log(errors), 1)[0]
    return float(-slope)


def cmd_compare_samplers(args) -> int:
    resolver = Resolver(args)
    mu0 = _parse_vector(resolver.get("mu0", "3,-1"))
    var0 = resolver.get("var0", 0.25, float)
    seed = resolver.get("seed", 123, int)
    batch = resolver.get("batch", 256, int)
    beta_start = resolver.get("beta_start", DEFAULT_BETA_START, float)
    beta_end = resolver.get("beta_end", DEFAULT_BETA_END, float)
    out = resolver.out_dir()

    # The reference trajectory needs 2000 distinct timesteps, so this
    # experiment runs on its own T=2000 schedule.
    schedule = linear_schedule(COMPARISON_T, beta_start, beta_end)
    oracle = GaussianOracle(mu0=mu0, var0=var0, schedule=schedule)
    shape = (mu0.size,)

    def endpoint(kind: str, num_steps: int) -> np.ndarray:
        plan = SamplingPlan(timeline=subsequence(schedule, num_steps), kind=kind,
                            shape=shape, seed=seed, batch=batch, eta=0.0,
                            guidance_scale=1.0)
        return sample(oracle, plan, schedule)

    reference = endpoint("ddim", COMPARISON_T)
    ref_norm = float(np.linalg.norm(reference))
    lines = ["kind,steps,rel_l2"]
    orders = {}
    for kind in ("ddim", "plms"):
        errs = {}
        for k in COMPARE_STEP_COUNTS:
            err = float(np.linalg.norm(endpoint(kind, k) - reference)) / ref_norm
            errs[k] = err
            lines.append(f"{kind},{k},{_fmt(err)}")
        orders[kind] = _fit_order(ORDER_FIT_COUNTS, [errs[k] for k in ORDER_FIT_COUNTS])
    for kind, order in orders.items():
        lines.append(f"{kind},order,{_fmt(order)}")
    (out / "report.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out, "compare-samplers", resolver,
                    {"schedule": {"T": COMPARISON_T, "beta_start": beta_start,
                                  "beta_end": beta_end}})
    print(f"wrote {out / 'report.csv'}; fitted orders: "
          + ", ".join(f"{k}={v:.3f}" for k, v in orders.items()))
    return 0


# ---------------------------------------------------------------------------
# prompt-extend
# ---------------------------------------------------------------------------

def cmd_prompt_extend(args) -> int:
    resolver = Resolver(args)
    prompt = args.prompt
    corpus_path = _require_file(resolver.get("corpus", None), "corpus")
    gazetteer_path = _require_file(resolver.get("gazetteer", None), "gazetteer")
    fixtures_path = _require_file(resolver.get("fixtures", None), "fixtures")
    lambda1 = resolver.get("lambda1", DEFAULT_LAMBDA1, float)
    lambda2 = resolver.get("lambda2", DEFAULT_LAMBDA2, float)
    topk = resolver.get("topk", 10, int)
    out = resolver.out_dir()

    docs = load_corpus_jsonl(corpus_path)
    index = build_index(docs)
    model = tfidf_fit(docs) if docs else None
    if model is None:
        candidates = []
    else:
        candidates = extend_prompt(prompt, index, model, HashEmbedder(),
                                   FixtureGenerator.from_file(fixtures_path),
                                   lambda1, lambda2, topk,
                                   Gazetteer.from_file(gazetteer_path))
    lines = [json.dumps({"text": c.text, "source": c.source, "tfidf": c.tfidf,
                         "cos": c.cos, "spatial_entities": c.spatial_entities,
                         "temporal_entities": c.temporal_entities, "score": c.score},
                        sort_keys=True)
             for c in candidates]
    (out / "candidates.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    _write_manifest(out, "prompt-extend", resolver, {"prompt": prompt,
                                                     "n_candidates": len(candidates)})
    print(f"wrote {len(candidates)} candidates to {out / 'candidates.jsonl'}")
    return 0


# ---------------------------------------------------------------------------
# corpus-stats
# ---------------------------------------------------------------------------

def cmd_corpus_stats(args) -> int:
    resolver = Resolver(args)
    metadata_path = _require_file(resolver.get("metadata", None), "metadata")
    delimiter = resolver.get("delimiter", ",")
    out = resolver.out_dir()

    metas, malformed = read_artwork_table(metadata_path, delimiter)
    histogram = artist_histogram(metas)
    lines = ["artist,count"] + [f"{artist},{count}" for artist, count in histogram]
    (out / "artist_histogram.csv").write_text("\n".join(lines) + "\n")
    share_lines = ["top_k,share_pct"]
    for k in (10, 20, 30):
        share_lines.append(f"{k},{_fmt(100.0 * top_share(histogram, k))}")
    (out / "shares.csv").write_text("\n".join(share_lines) + "\n")
    _write_manifest(out, "corpus-stats", resolver,
                    {"rows": len(metas), "malformed_rows": malformed})
    print(f"{len(metas)} rows ({malformed} malformed); "
          f"wrote {out / 'artist_histogram.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--out", help=f"output directory (default: ${ENV_OUT} or artdiff-out)")


def _add_schedule_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--timesteps", type=int, help="diffusion chain length T")
    p.add_argument("--beta_start", type=float)
    p.add_argument("--beta_end", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artdiff",
                                     description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule-dump", help="emit the variance schedule tables as CSV")
    _add_common(p)
    _add_schedule_flags(p)
    p.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("toy-train", help="train the toy denoiser on a built-in dataset")
    _add_common(p)
    _add_schedule_flags(p)
    p.add_argument("--dataset", help="|".join(sorted(DATASETS)))
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--drop_prob", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--conditional", action="store_true", default=None)
    p.set_defaults(func=cmd_toy_train)

    p = sub.add_parser("sample", help="generate samples from a checkpoint or the oracle")
    _add_common(p)
    _add_schedule_flags(p)
    p.add_argument("--sampler", choices=["ddpm", "ddim", "plms"])
    p.add_argument("--ddim_eta", type=float)
    p.add_argument("--ddim_steps", type=int)
    p.add_argument("--scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--oracle", action="store_true", default=None)
    p.add_argument("--mu0", help="oracle data mean, comma-separated")
    p.add_argument("--var0", type=float, help="oracle data variance")
    p.add_argument("--checkpoint", help="trained denoiser checkpoint")
    p.add_argument("--label", type=int, help="condition label for a conditional checkpoint")
    p.add_argument("--plot", action="store_true", default=None,
                   help="also write a density heatmap (2D data only)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("compare-samplers",
                       help="endpoint errors and convergence orders vs a fine reference")
    _add_common(p)
    p.add_argument("--mu0")
    p.add_argument("--var0", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--beta_start", type=float)
    p.add_argument("--beta_end", type=float)
    p.set_defaults(func=cmd_compare_samplers)

    p = sub.add_parser("prompt-extend", help="rank prompt extensions for an input prompt")
    _add_common(p)
    p.add_argument("prompt")
    p.add_argument("--corpus", help="JSON Lines corpus (id, title, body)")
    p.add_argument("--gazetteer", help="plain-text place names, one per line")
    p.add_argument("--fixtures", help="JSON Lines generator fixtures")
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--topk", type=int)
    p.set_defaults(func=cmd_prompt_extend)

    p = sub.add_parser("corpus-stats", help="artist histogram and top-k shares")
    _add_common(p)
    p.add_argument("--metadata", help="character-separated artwork table")
    p.add_argument("--delimiter")
    p.set_defaults(func=cmd_corpus_stats)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except (TrainingDivergedError, ckpt.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
