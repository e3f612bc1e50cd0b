"""HTTP service exposing a causal LM over the wire protocol.

Endpoints: /tokenize, /detokenize, /logits, /generate, /score, and
/guide (prefix-tuned guidance generation). JSON bodies throughout.
Status codes: 400 malformed body, 413 context too long, 500 model
failure. Greedy requests are deterministic; sampled requests honor a
request-supplied seed.
"""
from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import modeling
from .distill_data import parse_phrases
from .modeling import LoadedModel
from .prefix import PrefixBundle


class TokenizeBody(BaseModel):
    text: str


class IdsBody(BaseModel):
    ids: list[int]


class LogitsBody(BaseModel):
    ids: list[int]
    top_n: int | None = None


class GenerateBody(BaseModel):
    ids: list[int]
    max_tokens: int
    mode: str = "greedy"
    p: float | None = None
    temperature: float | None = None
    seed: int | None = None


class GuideBody(BaseModel):
    text: str
    polarity: str
    max_tokens: int = 32


def create_app(loaded: LoadedModel, bundles: dict[str, PrefixBundle] | None = None) -> FastAPI:
    app = FastAPI(title="lm-bridge")
    bundles = bundles or {}

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed body", "detail": exc.errors()})

    def check_context(ids: list[int], extra: int = 0) -> JSONResponse | None:
        if len(ids) + extra > loaded.max_context:
            return JSONResponse(
                status_code=413,
                content={"error": f"context of {len(ids)} tokens exceeds limit {loaded.max_context}"},
            )
        for token_id in ids:
            if not 0 <= token_id < loaded.tokenizer.vocab_size:
                return JSONResponse(status_code=400, content={"error": f"unknown token id {token_id}"})
        return None

    @app.post("/tokenize")
    def tokenize(body: TokenizeBody):
        return {"ids": loaded.tokenizer.encode(body.text)}

    @app.post("/detokenize")
    def detokenize(body: IdsBody):
        bad = check_context(body.ids)
        if bad:
            return bad
        return {"text": loaded.tokenizer.decode(body.ids)}

    @app.post("/logits")
    def logits(body: LogitsBody):
        bad = check_context(body.ids)
        if bad:
            return bad
        values = modeling.next_logits(loaded, body.ids)
        if body.top_n is None:
            return {"dense": [float(v) for v in values]}
        order = np.argsort(-values, kind="stable")[: max(1, body.top_n)]
        return {"sparse": [[int(i), float(values[i])] for i in order]}

    @app.post("/generate")
    def generate(body: GenerateBody):
        bad = check_context(body.ids, extra=body.max_tokens)
        if bad:
            return bad
        if body.mode not in ("greedy", "top_p"):
            return JSONResponse(status_code=400, content={"error": f"unknown mode {body.mode!r}"})
        out = modeling.generate(
            loaded,
            body.ids,
            body.max_tokens,
            mode=body.mode,
            p=body.p,
            temperature=body.temperature,
            seed=body.seed,
        )
        return {"ids": out, "text": loaded.tokenizer.decode(out)}

    @app.post("/score")
    def score(body: IdsBody):
        bad = check_context(body.ids)
        if bad:
            return bad
        if not body.ids:
            return JSONResponse(status_code=400, content={"error": "score needs at least one token"})
        return {"logprobs": modeling.score(loaded, body.ids)}

    @app.post("/guide")
    def guide(body: GuideBody):
        if body.polarity not in ("topic", "constraint"):
            return JSONResponse(status_code=400, content={"error": f"unknown polarity {body.polarity!r}"})
        bundle = bundles.get(body.polarity)
        if bundle is None:
            return JSONResponse(
                status_code=400,
                content={"error": f"no prefix bundle loaded for polarity {body.polarity!r}"},
            )
        ids = loaded.tokenizer.encode(body.text)
        limit = loaded.max_context - bundle.prefix_len - body.max_tokens
        if len(ids) > limit:
            ids = ids[-limit:]
        out = modeling.generate(
            loaded,
            ids,
            body.max_tokens,
            mode="greedy",
            past_key_values=bundle.past_key_values(1),
        )
        out = [t for t in out if t != loaded.tokenizer.eos_id]
        return {"examples": parse_phrases(loaded.tokenizer.decode(out))}

    return app


def serve(
    model_path: str,
    port: int,
    host: str = "127.0.0.1",
    topic_bundle: str | None = None,
    constraint_bundle: str | None = None,
) -> None:
    import uvicorn

    loaded = modeling.load_model(model_path)
    bundles = {}
    if topic_bundle:
        bundles["topic"] = PrefixBundle.load(topic_bundle)
    if constraint_bundle:
        bundles["constraint"] = PrefixBundle.load(constraint_bundle)
    uvicorn.run(create_app(loaded, bundles), host=host, port=port)
