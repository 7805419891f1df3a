"""HTTP wrapper exposing a trained checkpoint as POST /v1/postprocess.

The note service treats this endpoint as an optional named provider; the
JSON body {"text": ...} in and {"text": ...} out is the whole contract.
"""
from __future__ import annotations

import json
import threading
from pathlib import Path

import torch
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict
from transformers import BartForConditionalGeneration

from notepostproc.modeling import pad_batch
from notepostproc.tokenizer import WordTokenizer
from notepostproc.training import TOKENIZER_FILE, TRAIN_CONFIG_FILE

__all__ = ["Postprocessor", "EchoPostprocessor", "create_app"]

GENERATION_BEAMS = 4  # deterministic beam decode, no sampling
GENERATION_SLACK_TOKENS = 8


class Postprocessor:
    """A loaded checkpoint plus deterministic decoding."""

    def __init__(self, model, tokenizer: WordTokenizer, max_sequence_tokens: int):
        self.model = model
        self.model.eval()
        self.tokenizer = tokenizer
        self.max_sequence_tokens = max_sequence_tokens

    @classmethod
    def load(cls, checkpoint_dir: str | Path) -> "Postprocessor":
        checkpoint_dir = Path(checkpoint_dir)
        model = BartForConditionalGeneration.from_pretrained(checkpoint_dir)
        tokenizer = WordTokenizer.load(checkpoint_dir / TOKENIZER_FILE)
        snapshot = json.loads(
            (checkpoint_dir / TRAIN_CONFIG_FILE).read_text(encoding="utf-8")
        )
        return cls(model, tokenizer, int(snapshot["max_sequence_tokens"]))

    def refine(self, text: str) -> str:
        token_ids, _ = self.tokenizer.encode(text, self.max_sequence_tokens)
        ids, mask = pad_batch([token_ids])
        with torch.no_grad():
            generated = self.model.generate(
                input_ids=ids,
                attention_mask=mask,
                num_beams=GENERATION_BEAMS,
                do_sample=False,
                max_new_tokens=len(token_ids) + GENERATION_SLACK_TOKENS,
            )
        decoded = self.tokenizer.decode(generated[0].tolist())
        # Non-empty output invariant: an over-eager deleter falls back to
        # passing the input through untouched.
        return decoded if decoded.strip() else text


class EchoPostprocessor:
    """Identity stand-in used by the evaluation harness."""

    def refine(self, text: str) -> str:
        return text


class PostprocessRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    text: str


def create_app(checkpoint_dir: str | Path | None = None, echo: bool = False) -> FastAPI:
    app = FastAPI(title="note post-processor", docs_url=None, redoc_url=None)
    if echo:
        processor = EchoPostprocessor()
    elif checkpoint_dir is not None:
        processor = Postprocessor.load(checkpoint_dir)
    else:
        processor = None
    # One model instance; requests queue on the lock rather than racing it.
    lock = threading.Lock()

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"code": code, "message": message})

    @app.exception_handler(RequestValidationError)
    def on_validation_error(request: Request, exc: RequestValidationError):
        return error(400, "invalid_request", str(exc.errors()[:3]))

    @app.post("/v1/postprocess")
    def postprocess(body: PostprocessRequest):
        if not body.text.strip():
            return error(400, "empty_input", "text must be non-empty")
        if processor is None:
            return error(503, "model_not_loaded", "no checkpoint configured")
        with lock:
            refined = processor.refine(body.text)
        return {"text": refined}

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": processor is not None}

    return app
