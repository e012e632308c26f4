"""FastAPI surface over the engine. Stateless: theories and evidence are
posted as text, results come back as JSON. Domain errors map to 422 with a
stage tag; malformed requests to 400.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import MebnError
from ..parser import ParseError
from . import ops, schemas

app = FastAPI(title="mebn", version=__version__,
              description="Multi-entity Bayesian network engine: validate "
                          "theories, ground SSBNs, compute exact posteriors.")


@app.exception_handler(MebnError)
async def mebn_error_handler(_, exc: MebnError):
    detail = ""
    if isinstance(exc, ParseError):
        detail = "\n".join(d.render() for d in exc.diagnostics)
    return JSONResponse(
        status_code=422,
        content=schemas.ErrorModel(stage=exc.stage, error=type(exc).__name__,
                                   detail=detail or exc.message).model_dump())


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/validate", response_model=schemas.ValidateResponse)
def validate_endpoint(req: schemas.ValidateRequest):
    return ops.do_validate(req)


@app.post("/query", response_model=schemas.QueryResponse)
def query_endpoint(req: schemas.QueryRequest):
    return ops.do_query(req)


@app.post("/ground", response_model=schemas.GroundResponse)
def ground_endpoint(req: schemas.GroundRequest):
    return ops.do_ground(req)


@app.get("/corpus/scenarios", response_model=list[schemas.ScenarioModel])
def corpus_scenarios_endpoint():
    return ops.do_corpus_scenarios()


@app.post("/corpus/run", response_model=schemas.CorpusRunResponse)
def corpus_run_endpoint(oracle: bool = False):
    return ops.do_corpus_run(oracle=oracle)
