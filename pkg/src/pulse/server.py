"""Tool server speaking JSON-RPC 2.0 over stdio, one JSON object per line.

A process serves exactly one (user, EMA timestamp) context. The first
request must be ``initialize``; a second one is refused. Methods:

``initialize``  params ``{user_id, ema_timestamp, dataset_path?, peer_index_path?}``
``tools/list``  result ``{"tools": [...]}`` with the eight tool schemas
``tools/call``  params ``{name, arguments}``; result is the tool response

Framing: each message is a single line of UTF-8 JSON terminated by ``\\n``.
Responses are written in canonical form (sorted keys, no spaces).
"""

from __future__ import annotations

import json
import logging
import subprocess
import sys
from pathlib import Path
from typing import IO, Any, Mapping, Sequence

from pulse.dataset import dumps, load_dataset
from pulse.model import DataError, parse_time
from pulse.retrieval import PeerIndex
from pulse.timestore import AccessContext, BoundaryViolationError, ContextError, Store, ingest, open_context
from pulse.tools import (
    InvalidArgumentError,
    ToolError,
    ToolResponse,
    ToolUnavailableError,
    Toolbox,
    UnknownToolError,
    tool_list,
)

log = logging.getLogger(__name__)

PROTOCOL = "pulse-tools/1"
PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603
TOOL_UNAVAILABLE = -32001
NOT_INITIALIZED = -32002
BOUNDARY_VIOLATION = -32003


class RpcError(Exception):
    def __init__(self, code: int, message: str, data: Any = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.data = data

    def to_json(self) -> dict[str, Any]:
        err: dict[str, Any] = {"code": self.code, "message": self.message}
        if self.data is not None:
            err["data"] = self.data
        return err


def _tool_error(exc: ToolError) -> RpcError:
    if isinstance(exc, UnknownToolError):
        code = METHOD_NOT_FOUND
    elif isinstance(exc, InvalidArgumentError):
        code = INVALID_PARAMS
    elif isinstance(exc, ToolUnavailableError):
        code = TOOL_UNAVAILABLE
    else:
        code = INTERNAL_ERROR
    return RpcError(code, str(exc), {"tool_error": exc.code})


class ToolServer:
    """Request handler; transport-free so it can be driven from tests."""

    def __init__(
        self,
        *,
        store: Store | None = None,
        dataset_path: Path | str | None = None,
        peer_index: PeerIndex | None = None,
        peer_index_path: Path | str | None = None,
    ):
        self._store = store
        self._dataset_path = dataset_path
        self._peer_index = peer_index
        self._peer_index_path = peer_index_path
        self.toolbox: Toolbox | None = None
        self.context: AccessContext | None = None
        self.init_failed = False

    def _initialize(self, params: Mapping[str, Any]) -> dict[str, Any]:
        if self.toolbox is not None:
            raise RpcError(INVALID_REQUEST, "already initialized; one context per process")
        try:
            user_id = params["user_id"]
            ts = parse_time(params["ema_timestamp"])
        except (KeyError, TypeError, ValueError) as exc:
            self.init_failed = True
            raise RpcError(INVALID_PARAMS, f"initialize needs user_id and ema_timestamp: {exc}") from None
        try:
            store = self._store
            if store is None:
                path = params.get("dataset_path", self._dataset_path)
                if path is None:
                    raise RpcError(INVALID_PARAMS, "no dataset_path given")
                ds = load_dataset(path)
                store = ingest(ds.profiles, ds.events, ds.entries)
            index = self._peer_index
            index_path = params.get("peer_index_path", self._peer_index_path)
            if index is None and index_path is not None:
                index = PeerIndex.load(index_path)
            ctx = open_context(store, str(user_id), ts)
        except RpcError:
            self.init_failed = True
            raise
        except (ContextError, DataError, OSError, ValueError, KeyError) as exc:
            self.init_failed = True
            raise RpcError(INVALID_PARAMS, f"cannot open context: {exc}") from None
        self.context = ctx
        self.toolbox = Toolbox(ctx, index)
        return {
            "protocol": PROTOCOL,
            "user_id": ctx.user_id,
            "ema_timestamp": params["ema_timestamp"],
            "peer_index": index is not None,
        }

    def _require(self) -> Toolbox:
        if self.toolbox is None:
            raise RpcError(NOT_INITIALIZED, "call initialize first")
        return self.toolbox

    def dispatch(self, method: str, params: Any) -> Any:
        if method == "initialize":
            if not isinstance(params, Mapping):
                self.init_failed = True
                raise RpcError(INVALID_PARAMS, "params must be an object")
            return self._initialize(params)
        if method == "tools/list":
            self._require()
            return {"tools": tool_list()}
        if method == "tools/call":
            box = self._require()
            if not isinstance(params, Mapping) or not isinstance(params.get("name"), str):
                raise RpcError(INVALID_PARAMS, "tools/call needs a tool name")
            args = params.get("arguments", {})
            if not isinstance(args, Mapping):
                raise RpcError(INVALID_PARAMS, "arguments must be an object")
            try:
                return box.call(params["name"], args).to_json()
            except ToolError as exc:
                raise _tool_error(exc) from None
            except BoundaryViolationError as exc:
                raise RpcError(BOUNDARY_VIOLATION, str(exc)) from None
        raise RpcError(METHOD_NOT_FOUND, f"method not found: {method}")

    def handle_line(self, line: str) -> str | None:
        """One request line in, one response line out (None for notifications)."""
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            return dumps({"jsonrpc": "2.0", "id": None, "error": RpcError(PARSE_ERROR, f"parse error: {exc}").to_json()})
        if not isinstance(msg, dict) or msg.get("jsonrpc") != "2.0" or not isinstance(msg.get("method"), str):
            rid = msg.get("id") if isinstance(msg, dict) else None
            return dumps({"jsonrpc": "2.0", "id": rid, "error": RpcError(INVALID_REQUEST, "invalid request").to_json()})
        has_id = "id" in msg
        rid = msg.get("id")
        try:
            result = self.dispatch(msg["method"], msg.get("params", {}))
            resp = {"jsonrpc": "2.0", "id": rid, "result": result}
        except RpcError as exc:
            resp = {"jsonrpc": "2.0", "id": rid, "error": exc.to_json()}
        except Exception as exc:  # a tool bug must not take the server down
            log.exception("internal error")
            resp = {"jsonrpc": "2.0", "id": rid, "error": RpcError(INTERNAL_ERROR, f"internal error: {exc}").to_json()}
        return dumps(resp) if has_id else None

    def serve(self, stdin: IO[str], stdout: IO[str]) -> int:
        for line in stdin:
            if not line.strip():
                continue
            out = self.handle_line(line)
            if out is not None:
                stdout.write(out + "\n")
                stdout.flush()
            if self.init_failed:
                return 1
        return 0


def serve_tools(
    dataset_path: Path | str | None = None,
    user_id: str | None = None,
    ema_timestamp: str | None = None,
    *,
    peer_index_path: Path | str | None = None,
    stdin: IO[str] | None = None,
    stdout: IO[str] | None = None,
) -> int:
    """Run the server until stdin closes.

    If ``user_id`` and ``ema_timestamp`` are given the context is opened
    up front and a later ``initialize`` is refused.
    """
    server = ToolServer(dataset_path=dataset_path, peer_index_path=peer_index_path)
    if user_id is not None or ema_timestamp is not None:
        try:
            server.dispatch("initialize", {"user_id": user_id, "ema_timestamp": ema_timestamp})
        except RpcError as exc:
            print(f"error: {exc.message}", file=sys.stderr)
            return 1
    return server.serve(stdin or sys.stdin, stdout or sys.stdout)


# -- client -------------------------------------------------------------------


_CODE_TO_ERROR: dict[int, type[ToolError]] = {
    METHOD_NOT_FOUND: UnknownToolError,
    INVALID_PARAMS: InvalidArgumentError,
    TOOL_UNAVAILABLE: ToolUnavailableError,
}


class WireError(RuntimeError):
    def __init__(self, error: Mapping[str, Any]):
        super().__init__(f"{error.get('code')}: {error.get('message')}")
        self.error = dict(error)


class StdioToolClient:
    """Talks to a tool server subprocess; one process per context."""

    def __init__(
        self,
        dataset_path: Path | str,
        user_id: str,
        ema_timestamp: str,
        *,
        peer_index_path: Path | str | None = None,
        command: Sequence[str] | None = None,
    ):
        cmd = list(command or [sys.executable, "-m", "pulse", "serve-tools"])
        self._proc = subprocess.Popen(
            cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            encoding="utf-8",
        )
        self._next_id = 0
        self._tools: list[dict[str, Any]] | None = None
        params: dict[str, Any] = {
            "user_id": user_id,
            "ema_timestamp": ema_timestamp,
            "dataset_path": str(dataset_path),
        }
        if peer_index_path is not None:
            params["peer_index_path"] = str(peer_index_path)
        self.server_info = self.request("initialize", params)

    def request_raw(self, method: str, params: Any) -> dict[str, Any]:
        assert self._proc.stdin is not None and self._proc.stdout is not None
        self._next_id += 1
        msg = {"jsonrpc": "2.0", "id": self._next_id, "method": method, "params": params}
        self._proc.stdin.write(dumps(msg) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            err = self._proc.stderr.read() if self._proc.stderr else ""
            raise WireError({"code": INTERNAL_ERROR, "message": f"server closed the stream: {err.strip()}"})
        resp = json.loads(line)
        if resp.get("id") != self._next_id:
            raise WireError({"code": INVALID_REQUEST, "message": f"response id {resp.get('id')} != {self._next_id}"})
        return resp

    def request(self, method: str, params: Any) -> Any:
        resp = self.request_raw(method, params)
        if "error" in resp:
            raise WireError(resp["error"])
        return resp["result"]

    def tool_list(self) -> list[dict[str, Any]]:
        if self._tools is None:
            self._tools = self.request("tools/list", {})["tools"]
        return self._tools

    def call(self, name: str, arguments: Mapping[str, Any] | None = None) -> ToolResponse:
        resp = self.request_raw("tools/call", {"name": name, "arguments": dict(arguments or {})})
        if "error" in resp:
            err = resp["error"]
            cls = _CODE_TO_ERROR.get(err["code"])
            if cls is None:
                raise WireError(err)
            raise cls(err["message"])
        r = resp["result"]
        return ToolResponse(r["tool_name"], r["structured"], list(r["data_notes"]))

    def close(self) -> None:
        if self._proc.poll() is None:
            assert self._proc.stdin is not None
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        for fh in (self._proc.stdout, self._proc.stderr):
            if fh is not None:
                fh.close()

    def __enter__(self) -> StdioToolClient:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def subprocess_tools(dataset_path: Path | str, peer_index_paths: Mapping[str, Path | str] | None = None):
    """Tools factory for the runtime: one server process per prediction."""
    from pulse.model import format_time

    def factory(ctx: AccessContext, peer_index: PeerIndex | None) -> StdioToolClient:
        path = (peer_index_paths or {}).get(ctx.user_id)
        return StdioToolClient(dataset_path, ctx.user_id, format_time(ctx.ema_timestamp), peer_index_path=path)

    return factory
