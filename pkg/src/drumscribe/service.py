"""HTTP service for listening-test sessions.

Endpoints:
  GET  /api/question?rater=ID  next question for that rater (A/B order
                               randomized per serving), or done marker
  POST /api/rating             submit {question_id, rater_id, winner, likert}
  GET  /api/results            win counts and rank statistics
  GET  /audio/<file>           study audio
  GET  /, /<file>              optional static frontend directory

Ratings are written through the append-only store and fsync'd before the
200 acknowledgment, so an acked rating survives any crash. The A/B mapping
of a serving lives only in memory: if the server restarts between serving
and submission the client gets a 409 and refetches (the unacked rating was
never recorded, which is the contract).
"""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .stats import bonferroni, count_wins, kruskal_wallis, wilcoxon_signed_rank
from .store import DuplicateRating, Rating, RatingError, RatingStore
from .study import Study

DEFAULT_RATERS_PER_QUESTION = 1


class ListenService:
    """Study state shared across request handler threads."""

    def __init__(
        self,
        study: Study,
        store: RatingStore,
        audio_root: str | Path,
        raters_per_question: int = DEFAULT_RATERS_PER_QUESTION,
        seed: int | None = None,
        static_root: str | Path | None = None,
    ):
        self.study = study
        self.store = store
        self.audio_root = Path(audio_root)
        self.raters_per_question = raters_per_question
        self.static_root = Path(static_root) if static_root else None
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        # (rater, question) -> served-as (model_a, audio_a, model_b, audio_b)
        self._servings: dict[tuple[str, str], tuple[str, str, str, str]] = {}

    # -- question assignment -------------------------------------------------

    def next_question(self, rater_id: str) -> dict | None:
        """Least-answered question this rater has not answered, or None."""
        if not rater_id:
            raise RatingError("rater id must be nonempty")
        with self._lock:
            answered = self.store.answered_by(rater_id)
            counts = self.store.counts_per_question()
            candidates = [
                q for q in self.study.questions
                if q.question_id not in answered
                and counts.get(q.question_id, 0) < self.raters_per_question
            ]
            if not candidates:
                return None
            question = min(candidates, key=lambda q: (counts.get(q.question_id, 0), q.question_id))
            swap = bool(self._rng.integers(0, 2))
            pair = (question.model_a, question.audio_a, question.model_b, question.audio_b)
            if swap:
                pair = (question.model_b, question.audio_b, question.model_a, question.audio_a)
            self._servings[(rater_id, question.question_id)] = pair
            return {
                "question_id": question.question_id,
                "clip_id": question.clip_id,
                "original_url": f"/audio/{Path(question.original_audio).name}",
                "a_url": f"/audio/{Path(pair[1]).name}",
                "b_url": f"/audio/{Path(pair[3]).name}",
                "progress": {"answered": len(answered), "total": len(self.study.questions)},
            }

    def submit_rating(self, payload: dict) -> Rating:
        question_id = payload.get("question_id", "")
        rater_id = payload.get("rater_id", "")
        winner = payload.get("winner", "")
        likert = payload.get("likert")
        question = self.study.question_by_id(question_id)
        if question is None:
            raise KeyError(question_id)
        serving = self._servings.get((rater_id, question_id))
        if serving is None:
            raise LookupError(
                f"no active serving of {question_id!r} for rater {rater_id!r}; refetch the question"
            )
        model_a, _, model_b, _ = serving
        rating = Rating(
            question_id=question_id,
            clip_id=question.clip_id,
            model_a=model_a,
            model_b=model_b,
            winner=winner,
            likert=int(likert) if likert is not None else 0,
            rater_id=rater_id,
        )
        self.store.append(rating)
        with self._lock:
            self._servings.pop((rater_id, question_id), None)
        return rating

    # -- analysis -------------------------------------------------------------

    def results(self) -> dict:
        ratings = self.store.ratings()
        totals, per_pair = count_wins(ratings)
        out: dict = {
            "n_ratings": len(ratings),
            "win_counts": dict(totals),
            "per_pair": {" vs ".join(k): dict(v) for k, v in per_pair.items()},
        }
        likert_by_winner: dict[str, list[int]] = {}
        for r in ratings:
            likert_by_winner.setdefault(r.winning_model, []).append(r.likert)
        if len(likert_by_winner) >= 2:
            kw = kruskal_wallis(list(likert_by_winner.values()))
            out["kruskal_wallis"] = {
                "groups": sorted(likert_by_winner),
                "h": kw.h,
                "df": kw.df,
                "p": kw.p,
            }
        pair_tests = []
        p_values = []
        for (m1, m2), _ in sorted(per_pair.items()):
            signed = [
                r.likert if r.winning_model == m1 else -r.likert
                for r in ratings
                if {r.model_a, r.model_b} == {m1, m2}
            ]
            result = wilcoxon_signed_rank(signed)
            pair_tests.append({"pair": f"{m1} vs {m2}", "w": result.w, "p": result.p, "n": result.n})
            p_values.append(result.p)
        if pair_tests:
            decisions = bonferroni(p_values, m=len(p_values))
            for test, decision in zip(pair_tests, decisions):
                test["p_adjusted"] = decision.p_adjusted
                test["significant_at_001"] = decision.significant
            out["wilcoxon_pairs"] = pair_tests
        return out


class _Handler(BaseHTTPRequestHandler):
    service: ListenService  # injected by make_server

    def log_message(self, *args):  # quiet by default
        pass

    def _send_json(self, payload, status=200):
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_file(self, path: Path, content_type: str):
        data = path.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        url = urlparse(self.path)
        if url.path == "/api/question":
            rater = parse_qs(url.query).get("rater", [""])[0]
            if not rater:
                return self._send_json({"error": "missing rater id"}, 400)
            question = self.service.next_question(rater)
            if question is None:
                return self._send_json({"done": True})
            return self._send_json(question)
        if url.path == "/api/results":
            return self._send_json(self.service.results())
        if url.path.startswith("/audio/"):
            name = Path(url.path[len("/audio/") :]).name  # basename only
            target = self.service.audio_root / name
            if not target.is_file():
                return self._send_json({"error": "not found"}, 404)
            return self._send_file(target, "audio/wav")
        if self.service.static_root is not None:
            name = url.path.lstrip("/") or "index.html"
            target = (self.service.static_root / name).resolve()
            if target.is_file() and self.service.static_root.resolve() in target.parents:
                content_type = {
                    ".html": "text/html",
                    ".js": "application/javascript",
                    ".css": "text/css",
                }.get(target.suffix, "application/octet-stream")
                return self._send_file(target, content_type)
        return self._send_json({"error": "not found"}, 404)

    def do_POST(self):
        url = urlparse(self.path)
        if url.path != "/api/rating":
            return self._send_json({"error": "not found"}, 404)
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            return self._send_json({"error": "bad json"}, 400)
        try:
            rating = self.service.submit_rating(payload)
        except KeyError:
            return self._send_json({"error": "unknown question id"}, 404)
        except DuplicateRating as exc:
            return self._send_json({"error": str(exc)}, 409)
        except LookupError as exc:
            return self._send_json({"error": str(exc)}, 409)
        except RatingError as exc:
            return self._send_json({"error": str(exc)}, 400)
        return self._send_json({"status": "ok", "question_id": rating.question_id})


def make_server(service: ListenService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(service: ListenService, host: str, port: int) -> None:
    server = make_server(service, host, port)
    print(f"listening on http://{host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    finally:
        server.server_close()
