"""FastAPI front ends for the registry and narrowcast services."""

from __future__ import annotations

from fastapi import FastAPI, Request, Response

from pact.api import Api


def create_app(api: Api, title: str = "pact") -> FastAPI:
    app = FastAPI(title=title, docs_url=None, redoc_url=None, openapi_url=None)

    @app.api_route("/{path:path}", methods=["GET", "POST"])
    async def dispatch(path: str, request: Request) -> Response:
        body = await request.body()
        source = request.client.host if request.client else None
        status, content = api.handle(
            request.method, path, dict(request.query_params), body or None, source=source
        )
        return Response(content=content, status_code=status, media_type="application/json")

    app.state.api = api
    return app


def serve(api: Api, host: str = "127.0.0.1", port: int = 8080, title: str = "pact") -> None:
    import uvicorn

    uvicorn.run(create_app(api, title), host=host, port=port, log_level="info")
