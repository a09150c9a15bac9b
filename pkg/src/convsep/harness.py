"""Run orchestration: dataset synthesis, training, separation, evaluation,
and the generalization experiments (long sequences, noise bursts, corpus and
acoustic shift).

Every command is a deterministic function of (config, seed, checkpoint).
The training loop draws its per-step randomness from a generator seeded by
(seed, step), so resuming from a checkpoint replays the exact same stream.
"""

from __future__ import annotations

import csv
import warnings
from bisect import bisect_right
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import mixgen
from .attractor import (
    DegenerateAttractorError,
    compute_mask,
    estimate_sources,
    ideal_binary_mask,
    kmeans_attractors,
    masked_labels,
    separation_loss,
    threshold,
)
from .audio_io import Waveform, read_wav, write_wav
from .autodiff import Tensor, adam_step, load_checkpoint, save_checkpoint
from .bsseval import bss_eval_sources
from .dsp import (
    MagnitudeSpectrogram,
    frames_to_samples,
    geometry_for_rate,
    log_magnitude,
    resynthesize,
    stft,
    write_spectrogram_csv,
)
from .embednet import Network, NetworkConfig, StreamingEncoder

__all__ = [
    "RunConfig",
    "NumericalAbort",
    "RunExistsError",
    "learning_rate",
    "cmd_synth_data",
    "cmd_train",
    "separate",
    "cmd_evaluate",
    "cmd_experiment_length",
    "cmd_experiment_noise",
    "cmd_experiment_shift",
    "windowed_sdr",
    "load_network",
]


def _rng(seed, tag: str) -> np.random.Generator:
    """Deterministic generator keyed by the run seed and a command tag."""
    return np.random.default_rng([seed, *tag.encode("utf-8")])


class NumericalAbort(RuntimeError):
    """Training hit a non-finite loss; diagnostics were dumped."""


class RunExistsError(FileExistsError):
    """Refusing to overwrite an existing run directory."""


@dataclass
class RunConfig:
    """Everything a run needs; serializable as key=value text."""

    data_dir: str = "data"
    sample_rate: int = 8000
    segment_frames: int = 400
    embedding_dim: int = 20
    alpha: float = 0.6
    batch_size: int = 4
    steps: int = 20000
    learning_rate: float = 1e-3
    boundaries: tuple[int, ...] = (10000, 50000, 100000)
    multipliers: tuple[float, ...] = (1.0, 0.5, 0.1, 0.01)
    schedule_scale: float = 1.0
    seed: int = 0
    checkpoint_every: int = 1000
    kmeans_restarts: int = 10
    net_preset: str = "default"  # "default" or "small"
    net_channels: int = 16
    net_dilations: tuple[int, ...] = (1, 2, 4, 8, 16, 32)

    def __post_init__(self):
        if list(self.boundaries) != sorted(set(self.boundaries)):
            raise ValueError("boundaries must be strictly increasing")
        if len(self.multipliers) != len(self.boundaries) + 1:
            raise ValueError("need exactly one more multiplier than boundaries")

    def network_config(self) -> NetworkConfig:
        if self.net_preset == "default":
            return NetworkConfig.default(self.embedding_dim)
        if self.net_preset == "small":
            return NetworkConfig.small(
                self.embedding_dim, self.net_channels, self.net_dilations
            )
        raise ValueError(f"unknown net preset {self.net_preset!r}")

    # -- key=value round trip ---------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        overrides = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            overrides[key.strip()] = value.strip()
        return cls().with_overrides(overrides)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        kwargs = {}
        types = {f.name: f for f in fields(self)}
        for key, raw in overrides.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(self, key)
            if isinstance(current, tuple):
                elem = float if any(isinstance(v, float) for v in current) else int
                kwargs[key] = tuple(elem(v) for v in str(raw).split(",") if v != "")
            elif isinstance(current, bool):
                kwargs[key] = str(raw).lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                kwargs[key] = int(raw)
            elif isinstance(current, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        return replace(self, **kwargs)


def learning_rate(cfg: RunConfig, step: int) -> float:
    """Piecewise-constant schedule: the multipliers scale the initial rate,
    switching at the (possibly rescaled) step boundaries."""
    scaled = [int(b * cfg.schedule_scale) for b in cfg.boundaries]
    return cfg.learning_rate * cfg.multipliers[bisect_right(scaled, step)]


def _new_run_dir(path) -> Path:
    run_dir = Path(path)
    if run_dir.exists():
        raise RunExistsError(f"run directory {run_dir} already exists")
    for sub in ("checkpoints", "metrics", "spectrograms", "estimates"):
        (run_dir / sub).mkdir(parents=True)
    return run_dir


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# -- dataset synthesis -----------------------------------------------------


def split_speaker_specs(seed: int, n_train: int = 6, n_test: int = 2):
    """Disjoint speaker split with the test speakers strided across the f0
    range, so held-out mixtures are not dominated by near-identical
    fundamentals."""
    n = n_train + n_test
    specs = mixgen.default_speaker_specs(n, seed=seed)
    stride = n // n_test
    test_idx = {stride - 1 + k * stride for k in range(n_test)}
    train = [s for i, s in enumerate(specs) if i not in test_idx]
    test = [s for i, s in enumerate(specs) if i in test_idx]
    return train, test


def cmd_synth_data(
    cfg: RunConfig,
    n_train_speakers: int = 6,
    n_test_speakers: int = 2,
    n_test: int = 32,
    duration: float = 60.0,
    out_dir=None,
) -> dict:
    """Synthesize a speaker corpus with a disjoint train/test speaker split,
    plus pre-mixed test examples with a manifest.

    Manifest line format: mixture.wav<TAB>src1.wav<TAB>src2.wav<TAB>snr_db
    """
    out = Path(out_dir or cfg.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_specs, test_specs = split_speaker_specs(
        cfg.seed, n_train_speakers, n_test_speakers
    )

    spk_dir = out / "train_speakers"
    spk_dir.mkdir(exist_ok=True)
    train_paths = []
    for i, spec in enumerate(train_specs):
        w = mixgen.synth_speaker(spec, duration, cfg.sample_rate)
        path = spk_dir / f"spk{i}.wav"
        write_wav(path, w)
        train_paths.append(str(path))
    (out / "train_speakers.txt").write_text("\n".join(train_paths) + "\n")

    test_sources = [
        mixgen.synth_speaker(spec, duration, cfg.sample_rate) for spec in test_specs
    ]
    test_dir = out / "test"
    test_dir.mkdir(exist_ok=True)
    seg = frames_to_samples(cfg.segment_frames, cfg.sample_rate)
    lines = []
    rng = _rng(cfg.seed, "synth-test")
    for i in range(n_test):
        a, b = mixgen.sample_pair(test_sources, seg, rng)
        snr = float(rng.uniform(-5.0, 5.0))
        ex = mixgen.make_mixture(a, b, snr)
        paths = [
            test_dir / f"ex{i:04d}_mix.wav",
            test_dir / f"ex{i:04d}_src1.wav",
            test_dir / f"ex{i:04d}_src2.wav",
        ]
        for path, w in zip(paths, (ex.mixture, *ex.sources)):
            write_wav(path, w, encoding="float32")
        lines.append("\t".join(str(p) for p in paths) + f"\t{snr:.4f}")
    manifest = out / "test_manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return {
        "train_speakers": train_paths,
        "test_manifest": str(manifest),
        "n_test": n_test,
    }


# -- training --------------------------------------------------------------


def _prepare_example(mix_ex: mixgen.MixtureExample, alpha: float):
    """STFT the mixture and sources and build thresholded oracle labels.
    Returns None if any source ends up with no active bins."""
    mix_spec = stft(mix_ex.mixture)
    feats = log_magnitude(mix_spec)
    src_mags = [stft(s).magnitude().values for s in mix_ex.sources]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        h = threshold(feats.values, alpha)
    labels = masked_labels(ideal_binary_mask(src_mags), h)
    if np.any(labels.values.sum(axis=(0, 1)) == 0):
        return None
    return feats, labels, mix_spec.magnitude().values, np.stack(src_mags, axis=2)


def _draw_batch(cfg: RunConfig, corpus, step: int):
    rng = np.random.default_rng((cfg.seed, step))
    seg = frames_to_samples(cfg.segment_frames, cfg.sample_rate)
    batch = []
    for _ in range(cfg.batch_size):
        prepared = None
        for _attempt in range(20):
            a, b = mixgen.sample_pair(corpus, seg, rng)
            snr = float(rng.uniform(-5.0, 5.0))
            try:
                example = mixgen.make_mixture(a, b, snr)
            except mixgen.DegenerateSourceError:
                continue
            prepared = _prepare_example(example, cfg.alpha)
            if prepared is not None:
                break
        if prepared is None:
            raise RuntimeError(
                f"could not draw a non-degenerate example at step {step}"
            )
        batch.append(prepared)
    return batch


def train_step(cfg: RunConfig, net: Network, corpus, step: int) -> float:
    """One optimizer step (1-based).  Returns the batch loss."""
    batch = _draw_batch(cfg, corpus, step)
    feats = np.stack([b[0].values for b in batch])[:, None, :, :]
    out = net.forward(Tensor(feats), mode="train")
    total = None
    for i, (_, labels, mix_mag, src_mags) in enumerate(batch):
        loss = separation_loss(out[i], labels, mix_mag, src_mags)
        total = loss if total is None else total + loss
    total = total * (1.0 / len(batch))
    if not np.isfinite(total.item()):
        raise NumericalAbort(f"non-finite loss at step {step}")
    ad.backward(total)
    adam_step(net.params, learning_rate(cfg, step), step)
    return total.item()


def cmd_train(cfg: RunConfig, run_dir, resume_from=None, log_every: int = 50):
    """Full training run.  Creates ``run_dir`` (refusing to reuse it), writes
    the config snapshot, periodic checkpoints, and a loss log."""
    run = _new_run_dir(run_dir)
    (run / "config.snapshot").write_text(cfg.to_text())
    net_cfg = cfg.network_config()
    (run / "network.cfg").write_text(net_cfg.to_text())
    net = Network(net_cfg, seed=cfg.seed)

    start_step = 0
    if resume_from is not None:
        params, buffers, start_step = load_checkpoint(resume_from)
        net.load_state(params, buffers)

    corpus_file = Path(cfg.data_dir) / "train_speakers.txt"
    if not corpus_file.exists():
        raise FileNotFoundError(f"no speaker list at {corpus_file}; run synth-data")
    corpus = [read_wav(p) for p in corpus_file.read_text().split()]

    log_rows = []
    for step in range(start_step + 1, cfg.steps + 1):
        try:
            loss = train_step(cfg, net, corpus, step)
        except NumericalAbort:
            batch = _draw_batch(cfg, corpus, step)
            np.savez(
                run / f"diagnostic_step{step}.npz",
                step=step,
                features=np.stack([b[0].values for b in batch]),
                labels=np.stack([b[1].values for b in batch]),
            )
            raise
        if step % log_every == 0 or step == 1:
            log_rows.append((step, learning_rate(cfg, step), loss))
        if step % cfg.checkpoint_every == 0 or step == cfg.steps:
            save_checkpoint(
                run / "checkpoints" / f"step{step:06d}.ckpt",
                net.params,
                net.buffers,
                step,
            )
    _write_csv(run / "metrics" / "train_loss.csv", ["step", "lr", "loss"], log_rows)
    final = run / "checkpoints" / f"step{cfg.steps:06d}.ckpt"
    return net, final


def load_network(run_dir, checkpoint=None) -> Network:
    """Rebuild a network from a run directory's config and a checkpoint
    (defaults to the latest)."""
    run = Path(run_dir)
    net_cfg = NetworkConfig.from_text((run / "network.cfg").read_text())
    net = Network(net_cfg)
    if checkpoint is None:
        candidates = sorted((run / "checkpoints").glob("step*.ckpt"))
        if not candidates:
            raise FileNotFoundError(f"no checkpoints under {run}")
        checkpoint = candidates[-1]
    params, buffers, _ = load_checkpoint(checkpoint)
    net.load_state(params, buffers)
    return net


# -- inference -------------------------------------------------------------


def separate(
    net: Network,
    mixture: Waveform,
    alpha: float = 0.6,
    mode: str = "batch",
    seed: int = 0,
    kmeans_restarts: int = 10,
    n_sources: int = 2,
):
    """Separate a mixture into source estimates.

    Pipeline: STFT, log-magnitude, embedding forward (batch or streaming),
    power threshold, K-means attractors over kept bins, hard mask, masked
    magnitudes, mixture-phase resynthesis.

    Returns (waveform estimates, magnitude estimates (F, T, C), mixture STFT).
    """
    mix_spec = stft(mixture)
    feats = log_magnitude(mix_spec)
    if mode == "batch":
        v = net.embed_chunked(feats)
    elif mode == "streaming":
        encoder = StreamingEncoder(net)
        pieces = [encoder.push(feats.values)]
        pieces.append(encoder.finish())
        v = np.concatenate(pieces, axis=1)
    else:
        raise ValueError(f"mode must be 'batch' or 'streaming', got {mode!r}")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        h = threshold(feats.values, alpha)
    attractors = kmeans_attractors(
        v, h, n_sources=n_sources, seed=seed, restarts=kmeans_restarts
    )
    mask = compute_mask(v, attractors, mode="hard")
    est_mags = estimate_sources(mask, mix_spec.magnitude().values)
    waves = [
        resynthesize(
            MagnitudeSpectrogram(
                est_mags[:, :, c], mix_spec.frame_len, mix_spec.hop,
                mix_spec.sample_rate,
            ),
            mix_spec,
        )
        for c in range(n_sources)
    ]
    return waves, est_mags, mix_spec


def cmd_separate(run_dir, mixture_path, out_dir, mode="batch", alpha=0.6, seed=0):
    """CLI entry: separate one WAV file into per-source WAVs."""
    net = load_network(run_dir)
    mixture = read_wav(mixture_path)
    waves, est_mags, _ = separate(net, mixture, alpha=alpha, mode=mode, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    stem = Path(mixture_path).stem
    for c, w in enumerate(waves):
        path = out / f"{stem}_est{c + 1}.wav"
        write_wav(path, w)
        paths.append(path)
    for c in range(est_mags.shape[2]):
        write_spectrogram_csv(out / f"{stem}_est{c + 1}_mag.csv", est_mags[:, :, c])
    return paths


def _oracle_estimates(mix_spec, src_mags):
    """Ideal-binary-mask separation from the ground-truth spectrograms."""
    labels = ideal_binary_mask(src_mags)
    est_mags = estimate_sources(labels.values, np.abs(mix_spec.bins))
    return [
        resynthesize(
            MagnitudeSpectrogram(
                est_mags[:, :, c], mix_spec.frame_len, mix_spec.hop,
                mix_spec.sample_rate,
            ),
            mix_spec,
        )
        for c in range(len(src_mags))
    ]


def _mean_sdr(ests, refs, trim: int = 256) -> float:
    """Mean SDR over sources, trimming one analysis frame from each end:
    overlap-add normalization is ill-conditioned inside the edge taper, and
    masked (inconsistent) spectra can spike there."""
    if trim and len(refs[0]) > 4 * trim:
        ests = [Waveform(e.samples[trim:-trim], e.sample_rate) for e in ests]
        refs = [Waveform(r.samples[trim:-trim], r.sample_rate) for r in refs]
    return float(np.mean(bss_eval_sources(ests, refs).sdr_db))


def read_manifest(manifest_path):
    examples = []
    for line in Path(manifest_path).read_text().splitlines():
        if not line.strip():
            continue
        mix, src1, src2, snr = line.split("\t")
        examples.append((mix, (src1, src2), float(snr)))
    return examples


def cmd_evaluate(net: Network, manifest_path, cfg: RunConfig, out_csv=None):
    """Score model, oracle-IBM, and mixture-as-estimate SDR per example.

    Aggregates with streaming accumulation; returns (rows, aggregate dict).
    """
    rows = []
    sums = np.zeros(3)
    for idx, (mix_path, src_paths, _snr) in enumerate(read_manifest(manifest_path)):
        mixture = read_wav(mix_path)
        refs = [read_wav(p) for p in src_paths]
        ests, _, mix_spec = separate(
            net, mixture, alpha=cfg.alpha, seed=cfg.seed,
            kmeans_restarts=cfg.kmeans_restarts,
        )
        n = min(len(mixture), *(len(r) for r in refs))
        refs = [Waveform(r.samples[:n], r.sample_rate) for r in refs]
        ests = [Waveform(e.samples[:n], e.sample_rate) for e in ests]
        model_sdr = _mean_sdr(ests, refs)

        src_mags = [stft(r).magnitude().values for r in refs]
        oracle = [
            Waveform(w.samples[:n], w.sample_rate)
            for w in _oracle_estimates(mix_spec, src_mags)
        ]
        oracle_sdr = _mean_sdr(oracle, refs)
        baseline_sdr = _mean_sdr([mixture, mixture], refs)

        rows.append((idx, model_sdr, oracle_sdr, baseline_sdr))
        sums += (model_sdr, oracle_sdr, baseline_sdr)

    n_rows = max(1, len(rows))
    aggregate = {
        "model_sdr": sums[0] / n_rows,
        "oracle_sdr": sums[1] / n_rows,
        "baseline_sdr": sums[2] / n_rows,
    }
    if out_csv:
        _write_csv(
            out_csv,
            ["example_id", "model_sdr_db", "oracle_sdr_db", "baseline_sdr_db"],
            rows,
        )
    return rows, aggregate


# -- generalization experiments -------------------------------------------


def windowed_sdr(ests, refs, starts, window_frames, sample_rate):
    """Mean SDR over waveform slices corresponding to 400-frame-style
    spectrogram windows starting at the given frame indices."""
    _, hop = geometry_for_rate(sample_rate)
    out = []
    for start in starts:
        lo = start * hop
        hi = min(len(refs[0]), lo + frames_to_samples(window_frames, sample_rate))
        est_w = [Waveform(e.samples[lo:hi], sample_rate) for e in ests]
        ref_w = [Waveform(r.samples[lo:hi], sample_rate) for r in refs]
        out.append((start, _mean_sdr(est_w, ref_w)))
    return out


def _test_mixtures(cfg, n_frames, n_examples, specs=None, seed_tag="exp"):
    """Fresh mixtures from the held-out speakers (or explicit specs)."""
    if specs is None:
        _, specs = split_speaker_specs(cfg.seed)
    duration = frames_to_samples(n_frames, cfg.sample_rate) / cfg.sample_rate + 1.0
    sources = [
        mixgen.synth_speaker(s, duration, cfg.sample_rate) for s in specs
    ]
    rng = _rng(cfg.seed, seed_tag)
    seg = frames_to_samples(n_frames, cfg.sample_rate)
    examples = []
    for _ in range(n_examples):
        a, b = mixgen.sample_pair(sources, seg, rng)
        snr = float(rng.uniform(-5.0, 5.0))
        examples.append(mixgen.make_mixture(a, b, snr))
    return examples


def cmd_experiment_length(
    net: Network, cfg: RunConfig, n_frames: int = 10000, n_examples: int = 4,
    window_frames: int = 400, out_csv=None,
):
    """SDR in non-overlapping 400-frame windows across very long inputs."""
    starts = list(range(0, n_frames - window_frames + 1, window_frames))
    rows = []
    for idx, ex in enumerate(
        _test_mixtures(cfg, n_frames, n_examples, seed_tag="exp-length")
    ):
        ests, _, _ = separate(net, ex.mixture, alpha=cfg.alpha, seed=cfg.seed)
        n = min(len(ex.mixture), len(ests[0]))
        refs = [Waveform(s.samples[:n], cfg.sample_rate) for s in ex.sources]
        ests = [Waveform(e.samples[:n], cfg.sample_rate) for e in ests]
        for start, sdr in windowed_sdr(
            ests, refs, starts, window_frames, cfg.sample_rate
        ):
            rows.append((idx, start, sdr))
    if out_csv:
        _write_csv(out_csv, ["example_id", "window_start", "sdr_db"], rows)
    return rows


def cmd_experiment_noise(
    net: Network, cfg: RunConfig, n_frames: int = 1200, n_examples: int = 6,
    burst_dur: float = 0.25, burst_level_db: float = 0.0,
    window_frames: int = 400, out_csv=None,
):
    """Insert a mid-sequence white-noise burst and score windowed SDR
    before, during, and after it.  References stay clean."""
    starts = list(range(0, n_frames - window_frames + 1, window_frames))
    rows = []
    for idx, ex in enumerate(
        _test_mixtures(cfg, n_frames, n_examples, seed_tag="exp-noise")
    ):
        center = len(ex.mixture) / (2.0 * cfg.sample_rate)
        noisy = mixgen.inject_noise_burst(
            ex.mixture, center, burst_dur, burst_level_db, seed=(cfg.seed, idx)
        )
        ests, _, _ = separate(net, noisy, alpha=cfg.alpha, seed=cfg.seed)
        n = min(len(noisy), len(ests[0]))
        refs = [Waveform(s.samples[:n], cfg.sample_rate) for s in ex.sources]
        ests = [Waveform(e.samples[:n], cfg.sample_rate) for e in ests]
        for start, sdr in windowed_sdr(
            ests, refs, starts, window_frames, cfg.sample_rate
        ):
            rows.append((idx, start, sdr))
    if out_csv:
        _write_csv(out_csv, ["example_id", "window_start", "sdr_db"], rows)
    return rows


def shifted_speaker_specs(seed: int = 0):
    """A corpus acoustically shifted from the training one: displaced
    fundamental range, different modulation rates, one fewer harmonic."""
    return mixgen.default_speaker_specs(
        4, seed=seed + 7000, f0_range=(130.0, 330.0), am_range=(6.0, 10.0),
        n_harmonics=7,
    )


def cmd_experiment_shift(
    net: Network, cfg: RunConfig, n_examples: int = 8, rt60: float = 0.3,
    direct_db: float = -18.0, out_csv=None,
):
    """Three-condition evaluation: in-distribution, shifted corpus, and
    reverberated mixtures.  Reverb is applied per source before mixing, so
    the wet sources are the ground truth (the room is part of the signal)."""
    n_frames = cfg.segment_frames
    conditions = {}

    def score(examples, tag):
        model, oracle = [], []
        for ex in examples:
            ests, _, mix_spec = separate(
                net, ex.mixture, alpha=cfg.alpha, seed=cfg.seed
            )
            n = min(len(ex.mixture), len(ests[0]))
            refs = [Waveform(s.samples[:n], cfg.sample_rate) for s in ex.sources]
            ests = [Waveform(e.samples[:n], cfg.sample_rate) for e in ests]
            model.append(_mean_sdr(ests, refs))
            src_mags = [stft(r).magnitude().values for r in refs]
            orc = [
                Waveform(w.samples[:n], cfg.sample_rate)
                for w in _oracle_estimates(mix_spec, src_mags)
            ]
            oracle.append(_mean_sdr(orc, refs))
        conditions[tag] = {
            "model_sdr": float(np.mean(model)),
            "oracle_sdr": float(np.mean(oracle)),
        }

    in_dist = _test_mixtures(cfg, n_frames, n_examples, seed_tag="exp-shift-a")
    score(in_dist, "in_distribution")

    shifted = _test_mixtures(
        cfg, n_frames, n_examples, specs=shifted_speaker_specs(cfg.seed),
        seed_tag="exp-shift-b",
    )
    score(shifted, "shifted_corpus")

    reverberated = []
    for i, ex in enumerate(
        _test_mixtures(cfg, n_frames, n_examples, seed_tag="exp-shift-c")
    ):
        wet = [
            mixgen.apply_room(
                s, rir_seed=(cfg.seed, i, c), rt60=rt60, direct_db=direct_db
            )
            for c, s in enumerate(ex.sources)
        ]
        reverberated.append(mixgen.make_mixture(wet[0], wet[1], ex.snr_db))
    score(reverberated, "reverberated")

    if out_csv:
        rows = [
            (tag, v["model_sdr"], v["oracle_sdr"])
            for tag, v in conditions.items()
        ]
        _write_csv(out_csv, ["condition", "model_sdr_db", "oracle_sdr_db"], rows)
    return conditions
