"""HTTP/JSON front end for a TokenService.

Routes::

    POST  /v1/token    request body -> {token, expiresAt, oneTime} | {error, reason}
    PUT   /v1/rules    owner only, full rule document
    PATCH /v1/rules    owner only, {op, scope, entry}
    GET   /v1/pubkey   {pubkey}
    GET   /v1/health   {status, rulesVersion, counter, validatorLatency}
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .errors import (
    Denied,
    NoSuchScope,
    ParseError,
    PersistenceFailure,
    RuleError,
    ShapeMismatch,
    Unauthorized,
)
from .service import TokenService
from .token_core import TokenRequest


def _error(status: int, error: str, reason: str) -> JSONResponse:
    return JSONResponse({"error": error, "reason": reason}, status_code=status)


def _bearer(request: Request) -> str | None:
    header = request.headers.get("authorization", "")
    scheme, _, token = header.partition(" ")
    return token.strip() if scheme.lower() == "bearer" and token else None


def create_app(service: TokenService) -> FastAPI:
    app = FastAPI(title="SMACS Token Service")
    app.state.service = service

    async def _json_body(request: Request):
        try:
            return await request.json()
        except ValueError:
            return None

    @app.post("/v1/token")
    async def token(request: Request):
        body = await _json_body(request)
        try:
            req = TokenRequest.from_json(body)
            issued = service.handle_token_request(req)
        except ShapeMismatch as exc:
            return _error(400, "ShapeMismatch", str(exc))
        except Denied as exc:
            return _error(403, "Denied", exc.reason)
        except PersistenceFailure:
            return _error(500, "PersistenceFailure", "counter could not be persisted")
        except Exception:
            return _error(500, "InternalError", "token could not be issued")
        return issued.to_json()

    @app.put("/v1/rules")
    async def put_rules(request: Request):
        body = await _json_body(request)
        try:
            service.authenticate(_bearer(request))
            if not isinstance(body, dict):
                raise ParseError("rule document must be a JSON object")
            version = service.admin_replace_rules(_bearer(request), body)
        except Unauthorized as exc:
            return _error(401, "Unauthorized", str(exc))
        except RuleError as exc:
            return _error(400, type(exc).__name__, str(exc))
        return {"version": version}

    @app.patch("/v1/rules")
    async def patch_rules(request: Request):
        body = await _json_body(request)
        try:
            service.authenticate(_bearer(request))
            if not isinstance(body, dict) or {"op", "scope", "entry"} - set(body):
                raise ParseError("body needs op, scope and entry")
            version = service.admin_update_rules(_bearer(request), body["op"], body["scope"],
                                                 body["entry"])
        except Unauthorized as exc:
            return _error(401, "Unauthorized", str(exc))
        except NoSuchScope as exc:
            return _error(404, "NoSuchScope", str(exc.args[0]))
        except (RuleError, ValueError) as exc:
            return _error(400, type(exc).__name__, str(exc))
        return {"version": version}

    @app.get("/v1/pubkey")
    async def pubkey():
        return {"pubkey": service.pubkey.hex(), "scheme": service.scheme.name}

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "rulesVersion": service.rules.current.version,
                "counter": service.counter.value,
                "validatorLatency": service.latency.snapshot()}

    return app
