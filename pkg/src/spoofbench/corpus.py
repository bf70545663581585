"""Corpus ingestion for LJ Speech style anti-spoofing corpora.

A corpus is a pipe-separated metadata file (``clip_id|transcript|normalized``)
plus a directory of WAV files. Labels come either from the directory the clip
lives in (``real/`` or ``fake/``) or from an explicit metadata column.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal
from scipy.io import wavfile


class CorpusError(Exception):
    """Raised for unusable metadata, missing audio, or impossible splits."""


class Label(enum.IntEnum):
    REAL = 0
    FAKE = 1

    @classmethod
    def parse(cls, text: str) -> "Label":
        key = text.strip().lower()
        if key in ("real", "bonafide", "bona-fide", "genuine", "0"):
            return cls.REAL
        if key in ("fake", "spoof", "synthetic", "1"):
            return cls.FAKE
        raise ValueError(f"unknown label {text!r}")


class Split(enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


SPLIT_ORDER = (Split.TRAIN, Split.VAL, Split.TEST)


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    audio_path: Path
    label: Label
    speaker_id: str | None = None

    @functools.cached_property
    def duration_s(self) -> float:
        # read from the header on first access; metadata durations are not trusted
        with wave.open(str(self.audio_path), "rb") as w:
            return w.getnframes() / float(w.getframerate())


@dataclass(frozen=True)
class LabelColumn:
    """Take the label from metadata field ``index`` instead of the directory."""

    index: int


DIRECTORY = "directory"


def _resolve_directory(audio_root: Path, clip_id: str) -> tuple[Path | None, Label | None, bool]:
    hits = []
    for label in (Label.REAL, Label.FAKE):
        sub = audio_root / label.name.lower()
        for cand in (sub / f"{clip_id}.wav", sub / "wavs" / f"{clip_id}.wav"):
            if cand.is_file():
                hits.append((cand, label))
                break
    if len(hits) > 1:
        return None, None, True
    if hits:
        return hits[0][0], hits[0][1], False
    return None, None, False


def parse_metadata(
    metadata_file: str | Path,
    audio_root: str | Path,
    label_rule: str | LabelColumn = DIRECTORY,
    speaker_column: int | None = None,
) -> list[ClipRecord]:
    """Parse an LJ Speech style metadata file into clip records.

    Every problem is collected before raising so that a broken corpus is
    reported in one go: malformed lines first (by 1-based line number), then
    every missing audio file. No partial corpus is ever returned.
    """
    metadata_file = Path(metadata_file)
    audio_root = Path(audio_root)
    if not metadata_file.is_file():
        raise CorpusError(f"metadata file not found: {metadata_file}")

    bad_lines: list[int] = []
    rows: list[tuple[int, list[str]]] = []
    seen: set[str] = set()
    with metadata_file.open("r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("|")
            clip_id = fields[0].strip()
            ok = len(fields) >= 2 and clip_id and clip_id not in seen
            if isinstance(label_rule, LabelColumn):
                ok = ok and len(fields) > label_rule.index
                if ok:
                    try:
                        Label.parse(fields[label_rule.index])
                    except ValueError:
                        ok = False
            if speaker_column is not None:
                ok = ok and len(fields) > speaker_column
            if not ok:
                bad_lines.append(lineno)
                continue
            seen.add(clip_id)
            rows.append((lineno, fields))
    if bad_lines:
        raise CorpusError(f"malformed metadata lines: {', '.join(map(str, bad_lines))}")

    records = []
    missing: list[str] = []
    for lineno, fields in rows:
        clip_id = fields[0].strip()
        speaker = fields[speaker_column].strip() if speaker_column is not None else None
        if isinstance(label_rule, LabelColumn):
            label = Label.parse(fields[label_rule.index])
            path = next(
                (p for p in (audio_root / f"{clip_id}.wav", audio_root / "wavs" / f"{clip_id}.wav") if p.is_file()),
                None,
            )
            if path is None:
                missing.append(str(audio_root / f"{clip_id}.wav"))
                continue
        elif label_rule == DIRECTORY:
            path, label, ambiguous = _resolve_directory(audio_root, clip_id)
            if ambiguous:
                raise CorpusError(f"line {lineno}: clip {clip_id!r} present under both real/ and fake/")
            if path is None:
                missing.append(f"{audio_root}/{{real,fake}}/{clip_id}.wav")
                continue
        else:
            raise ValueError(f"unknown label rule {label_rule!r}")
        records.append(ClipRecord(clip_id, path, label, speaker))
    if missing:
        raise CorpusError(f"{len(missing)} missing audio files: " + ", ".join(missing))
    return records


@dataclass(frozen=True)
class SplitAssignment:
    assignment: dict[str, Split]
    seed: int
    ratios: tuple[float, float, float]

    def ids(self, split: Split) -> list[str]:
        return sorted(k for k, v in self.assignment.items() if v is split)

    def select(self, records: Iterable[ClipRecord], split: Split) -> list[ClipRecord]:
        return sorted((r for r in records if self.assignment[r.clip_id] is split), key=lambda r: r.clip_id)

    def __len__(self) -> int:
        return len(self.assignment)


def _apportion(total: int, weights: Sequence[int]) -> list[int]:
    # largest-remainder apportionment; ties go to the earlier entry
    w = np.asarray(weights, dtype=np.int64)
    exact = total * w / w.sum()
    base = np.floor(exact).astype(np.int64)
    rest = total - int(base.sum())
    order = sorted(range(len(w)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base.tolist()


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Floor of ratio * n for VAL and TEST; TRAIN takes the remainder."""
    n_val = int(np.floor(ratios[1] * n + 1e-9))
    n_test = int(np.floor(ratios[2] * n + 1e-9))
    return n - n_val - n_test, n_val, n_test


def _check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"ratios must be three positive fractions summing to 1, got {tuple(ratios)}")
    return tuple(float(r) for r in ratios)  # type: ignore[return-value]


def make_splits(
    records: Sequence[ClipRecord],
    ratios: Sequence[float] = (0.7, 0.15, 0.15),
    seed: int = 42,
    speaker_disjoint: bool = False,
) -> SplitAssignment:
    """Deterministic label-stratified TRAIN/VAL/TEST assignment.

    With ``speaker_disjoint`` the unit of assignment becomes the speaker
    instead of the clip; stratification is then only approximate.
    """
    ratios = _check_ratios(ratios)
    by_label: dict[Label, list[str]] = {lab: [] for lab in Label}
    for r in records:
        by_label[r.label].append(r.clip_id)
    if len({r.clip_id for r in records}) != len(records):
        raise CorpusError("duplicate clip ids")
    for lab, ids in by_label.items():
        if len(ids) < len(SPLIT_ORDER):
            raise CorpusError(f"class {lab.name} has {len(ids)} records, need at least {len(SPLIT_ORDER)}")
    if speaker_disjoint:
        return _speaker_splits(records, ratios, seed)

    n_train, n_val, n_test = split_sizes(len(records), ratios)
    labels = list(Label)
    counts = [len(by_label[lab]) for lab in labels]
    val_q = _apportion(n_val, counts)
    held_q = _apportion(n_val + n_test, counts)

    rng = np.random.default_rng(seed)
    assignment: dict[str, Split] = {}
    for lab, v, h in zip(labels, val_q, held_q):
        ids = sorted(by_label[lab])
        perm = [ids[i] for i in rng.permutation(len(ids))]
        t = max(h - v, 0)
        for cid in perm[:v]:
            assignment[cid] = Split.VAL
        for cid in perm[v : v + t]:
            assignment[cid] = Split.TEST
        for cid in perm[v + t :]:
            assignment[cid] = Split.TRAIN
    return SplitAssignment(dict(sorted(assignment.items())), seed, ratios)


def _speaker_splits(records: Sequence[ClipRecord], ratios, seed: int) -> SplitAssignment:
    groups: dict[str, list[str]] = {}
    for r in records:
        groups.setdefault(r.speaker_id or f"__clip__{r.clip_id}", []).append(r.clip_id)
    speakers = sorted(groups)
    rng = np.random.default_rng(seed)
    speakers = [speakers[i] for i in rng.permutation(len(speakers))]
    n = len(records)
    targets = dict(zip(SPLIT_ORDER, split_sizes(n, ratios)))
    filled = {s: 0 for s in SPLIT_ORDER}
    assignment: dict[str, Split] = {}
    for spk in speakers:
        # the split with the largest unmet share of its target gets the speaker
        split = max(SPLIT_ORDER, key=lambda s: (targets[s] - filled[s]) / max(targets[s], 1))
        filled[split] += len(groups[spk])
        for cid in groups[spk]:
            assignment[cid] = split
    return SplitAssignment(dict(sorted(assignment.items())), seed, ratios)


def manifest_lines(records: Sequence[ClipRecord], splits: SplitAssignment) -> list[str]:
    labels = {r.clip_id: r.label for r in records}
    return [
        f"{cid}\t{labels[cid].name.lower()}\t{splits.assignment[cid].value}"
        for cid in sorted(labels)
    ]


def write_split_manifest(path: str | Path, records: Sequence[ClipRecord], splits: SplitAssignment) -> str:
    """Write ``clip_id<TAB>label<TAB>split`` lines sorted by clip id; returns the sha256."""
    text = "".join(line + "\n" for line in manifest_lines(records, splits))
    Path(path).write_text(text, encoding="utf-8")
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def read_split_manifest(path: str | Path) -> tuple[dict[str, Label], dict[str, Split]]:
    labels: dict[str, Label] = {}
    splits: dict[str, Split] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise CorpusError(f"{path}: malformed manifest line {lineno}")
        labels[parts[0]] = Label.parse(parts[1])
        splits[parts[0]] = Split(parts[2])
    return labels, splits


def corpus_stats(records: Sequence[ClipRecord], bins: Sequence[float] = (0, 2, 4, 5, 6, 7, 8, 10, 1e9)) -> dict:
    durations = np.array([r.duration_s for r in records]) if records else np.zeros(0)
    hist, edges = np.histogram(durations, bins=np.asarray(bins))
    return {
        "n_clips": len(records),
        "per_class": {lab.name.lower(): sum(r.label is lab for r in records) for lab in Label},
        "duration_histogram": {
            f"{edges[i]:g}-{edges[i + 1]:g}": int(hist[i]) for i in range(len(hist))
        },
        "total_duration_s": float(durations.sum()),
    }


# ---------------------------------------------------------------------------
# synthetic fixture corpus

FIXTURE_RATE = 22050
ARTIFACT_LINES_HZ = (4800.0, 5400.0, 6000.0, 6600.0, 7200.0)


def _voice(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Harmonic tone stack with vibrato, formant envelope, syllabic gating and noise."""
    t = np.arange(n) / sr
    f0 = rng.uniform(90.0, 260.0)
    vib = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(4.0, 7.0) * t + rng.uniform(0, 2 * np.pi))
    drift = 1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.1, 0.4) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * vib * drift) / sr
    formants = rng.uniform([300, 900, 2000], [900, 2000, 3500])
    widths = rng.uniform([80, 120, 200], [200, 300, 500])
    out = np.zeros(n)
    for k in range(1, int(4000 // f0) + 1):
        fk = k * f0
        env = sum(np.exp(-0.5 * ((fk - c) / w) ** 2) for c, w in zip(formants, widths)) + 0.05
        out += env / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    rate = rng.uniform(3.0, 6.0)
    gate = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)), 0, None) ** 0.7
    out *= 0.2 + gate
    out /= np.sqrt(np.mean(out**2)) + 1e-12

    hi = rng.uniform(3000.0, min(7500.0, 0.45 * sr))
    sos = signal.butter(4, [100.0, hi], btype="bandpass", fs=sr, output="sos")
    noise = signal.sosfilt(sos, rng.standard_normal(n))
    noise /= np.sqrt(np.mean(noise**2)) + 1e-12
    out += 10 ** (rng.uniform(-35.0, -20.0) / 20) * noise

    # fricative-like high band bursts between syllables, level varies widely per clip
    sos = signal.butter(4, [4000.0, min(7800.0, 0.45 * sr)], btype="bandpass", fs=sr, output="sos")
    fric = signal.sosfilt(sos, rng.standard_normal(n))
    fric /= np.sqrt(np.mean(fric**2)) + 1e-12
    out += 10 ** (rng.uniform(-40.0, -10.0) / 20) * fric * (1.2 - gate)
    return out


def _artifact(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Stationary comb of narrow lines: a periodic pattern along frequency."""
    t = np.arange(n) / sr
    comb = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) for f in ARTIFACT_LINES_HZ)
    return comb / np.sqrt(len(ARTIFACT_LINES_HZ) / 2.0)


def synth_clip(rng: np.random.Generator, label: Label, sr: int = FIXTURE_RATE) -> np.ndarray:
    n = int(round(rng.uniform(6.0, 7.0) * sr))
    x = _voice(rng, n, sr)
    if label is Label.FAKE:
        x = x + 10 ** (rng.uniform(-16.0, -12.0) / 20) * _artifact(rng, n, sr)
    peak = rng.uniform(0.1, 0.6)
    return x * (peak / np.max(np.abs(x)))


def generate_fixture_corpus(n_per_class: int, seed: int, out_dir: str | Path) -> list[ClipRecord]:
    """Write a small synthetic corpus in the real/ fake/ + metadata.csv layout.

    Clips are 6-7 s at 22,050 Hz, 16-bit PCM. Both classes share the same
    voice generator; FAKE clips additionally carry a stationary comb of
    spectral lines above 4.5 kHz. Output is a pure function of the seed.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out_dir = Path(out_dir)
    try:
        for sub in ("real", "fake"):
            (out_dir / sub).mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CorpusError(f"output directory not writable: {out_dir} ({exc})") from exc

    seeds = np.random.SeedSequence(seed).spawn(2 * n_per_class)
    lines = []
    records = []
    for i in range(2 * n_per_class):
        label = Label.REAL if i % 2 == 0 else Label.FAKE
        clip_id = f"bf_{i + 1:05d}"
        x = synth_clip(np.random.default_rng(seeds[i]), label)
        pcm = np.round(np.clip(x, -1.0, 1.0) * 32767).astype("<i2")
        path = out_dir / label.name.lower() / f"{clip_id}.wav"
        wavfile.write(path, FIXTURE_RATE, pcm)
        text = f"synthetic {label.name.lower()} utterance {i + 1}"
        lines.append(f"{clip_id}|{text}|{text}\n")
        records.append(ClipRecord(clip_id, path, label))
    (out_dir / "metadata.csv").write_text("".join(lines), encoding="utf-8")
    return records
