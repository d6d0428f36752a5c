"""Build a pairwise listening study from clips and per-model resyntheses.

Each usable clip contributes one random excerpt of at most 10 seconds (the
whole clip when shorter) and one question per unordered pair of model arms,
so a study with k arms yields C(k, 2) questions per clip.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, load_wav_file, write_wav_file

EXCERPT_SECONDS = 10.0


class StudyError(ValueError):
    pass


@dataclass(frozen=True)
class Question:
    question_id: str
    clip_id: str
    original_audio: str  # paths relative to the study directory
    model_a: str
    audio_a: str
    model_b: str
    audio_b: str


@dataclass
class Study:
    questions: list[Question]
    skipped_clips: list[str] = field(default_factory=list)

    def question_by_id(self, question_id: str) -> Question | None:
        for q in self.questions:
            if q.question_id == question_id:
                return q
        return None


def _excerpt(clip: AudioClip, rng: np.random.Generator) -> tuple[int, int]:
    max_len = int(EXCERPT_SECONDS * clip.sample_rate)
    if len(clip) <= max_len:
        return 0, len(clip)
    start = int(rng.integers(0, len(clip) - max_len + 1))
    return start, start + max_len


def build_study(
    clips: dict[str, str | Path],
    arm_outputs: dict[str, dict[str, str | Path]],
    out_dir: str | Path,
    seed: int = 0,
) -> Study:
    """Excerpt audio and generate all pairwise questions.

    ``clips`` maps clip id to the original wav; ``arm_outputs`` maps model id
    to {clip id: resynthesized wav}. Clips missing any arm's output are
    skipped and reported. Audio is written under ``out_dir``/audio and the
    question set to ``out_dir``/study.json.
    """
    if len(arm_outputs) < 2:
        raise StudyError("need at least two model arms")
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    arms = sorted(arm_outputs)
    questions: list[Question] = []
    skipped: list[str] = []
    for clip_id in sorted(clips):
        missing = [arm for arm in arms if clip_id not in arm_outputs[arm]]
        if missing:
            skipped.append(f"{clip_id}: missing output for {', '.join(missing)}")
            continue
        original = load_wav_file(clips[clip_id])
        start, stop = _excerpt(original, rng)
        refs = {}
        original_ref = f"audio/{clip_id}_original.wav"
        write_wav_file(out / original_ref, AudioClip(original.samples[start:stop], original.sample_rate))
        for arm in arms:
            clip = load_wav_file(arm_outputs[arm][clip_id])
            lo = min(start, len(clip))
            hi = min(stop, len(clip))
            ref = f"audio/{clip_id}_{arm}.wav"
            write_wav_file(out / ref, AudioClip(clip.samples[lo:hi], clip.sample_rate))
            refs[arm] = ref
        for a, b in itertools.combinations(arms, 2):
            questions.append(
                Question(
                    question_id=f"{clip_id}__{a}__vs__{b}",
                    clip_id=clip_id,
                    original_audio=original_ref,
                    model_a=a,
                    audio_a=refs[a],
                    model_b=b,
                    audio_b=refs[b],
                )
            )
    study = Study(questions=questions, skipped_clips=skipped)
    save_study(study, out / "study.json")
    return study


def save_study(study: Study, path: str | Path) -> None:
    payload = {
        "version": 1,
        "questions": [asdict(q) for q in study.questions],
        "skipped_clips": study.skipped_clips,
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_study(path: str | Path) -> Study:
    payload = json.loads(Path(path).read_text())
    return Study(
        questions=[Question(**q) for q in payload["questions"]],
        skipped_clips=payload.get("skipped_clips", []),
    )
