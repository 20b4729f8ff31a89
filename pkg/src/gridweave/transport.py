"""ISO <-> controller message protocol and transports.

Wire format: one message per line, UTF-8 JSON with a flat key layout and the
"type" field first.  Floats are serialized with Python's shortest round-trip
repr, so profiles cross the wire losslessly and a TCP run is bit-identical to
an in-process run.

The ISO is the only server.  Controllers are clients that poll for their turn:
a `get_sigma` request blocks until the coordinator grants this controller the
solve token, which enforces the sequential solving order over the network.
"""

from __future__ import annotations

import json
import os
import queue
import socket
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import Band, Profile, TimeGrid

__all__ = [
    "GetSigma",
    "SigmaReply",
    "SubmitPlan",
    "Ack",
    "RoundStatus",
    "ProtocolErrorMsg",
    "ProtocolViolation",
    "ControllerTimeout",
    "encode",
    "decode",
    "IsoServer",
    "ControllerClient",
    "RemoteControllerProxy",
    "default_address",
]

DEFAULT_PORT = 47326
ADDR_ENV_VAR = "GRIDWEAVE_ISO_ADDR"


def default_address() -> tuple[str, int]:
    raw = os.environ.get(ADDR_ENV_VAR, f"127.0.0.1:{DEFAULT_PORT}")
    host, _, port = raw.rpartition(":")
    return host or "127.0.0.1", int(port)


class ProtocolViolation(RuntimeError):
    """A message failed validation; `code` matches the on-wire error codes."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


class ControllerTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class GetSigma:
    controller_id: str
    iteration: int


@dataclass(frozen=True)
class SigmaReply:
    profile: tuple[float, ...]
    band_committed: tuple[float, ...] | None = None
    band_half_width: float | None = None
    global_limit: float | None = None


@dataclass(frozen=True)
class SubmitPlan:
    controller_id: str
    iteration: int
    profile: tuple[float, ...]


@dataclass(frozen=True)
class Ack:
    pass


@dataclass(frozen=True)
class RoundStatus:
    converged: bool
    iteration: int


@dataclass(frozen=True)
class ProtocolErrorMsg:
    code: str
    detail: str = ""


Message = (GetSigma | SigmaReply | SubmitPlan | Ack | RoundStatus
           | ProtocolErrorMsg)


def encode(msg: Message) -> bytes:
    if isinstance(msg, GetSigma):
        obj = {"type": "get_sigma", "controller_id": msg.controller_id,
               "iteration": msg.iteration}
    elif isinstance(msg, SigmaReply):
        obj = {"type": "sigma_reply", "profile": list(msg.profile),
               "band_committed": (list(msg.band_committed)
                                  if msg.band_committed is not None else None),
               "band_half_width": msg.band_half_width,
               "global_limit": msg.global_limit}
    elif isinstance(msg, SubmitPlan):
        obj = {"type": "submit_plan", "controller_id": msg.controller_id,
               "iteration": msg.iteration, "profile": list(msg.profile)}
    elif isinstance(msg, Ack):
        obj = {"type": "ack"}
    elif isinstance(msg, RoundStatus):
        obj = {"type": "round_status", "converged": msg.converged,
               "iteration": msg.iteration}
    elif isinstance(msg, ProtocolErrorMsg):
        obj = {"type": "error", "code": msg.code, "detail": msg.detail}
    else:
        raise TypeError(f"not a protocol message: {type(msg).__name__}")
    return json.dumps(obj, separators=(",", ":")).encode() + b"\n"


def _profile_field(obj: dict, key: str, n_steps: int | None,
                   optional: bool = False) -> tuple[float, ...] | None:
    vals = obj.get(key)
    if vals is None and optional:
        return None
    if not isinstance(vals, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
        raise ProtocolViolation("shape", f"{key} must be a list of numbers")
    if n_steps is not None and len(vals) != n_steps:
        raise ProtocolViolation(
            "shape", f"{key} has length {len(vals)}, expected {n_steps}")
    return tuple(float(v) for v in vals)


def decode(data: bytes | str, n_steps: int | None = None) -> Message:
    """Parse one line; raises ProtocolViolation with codes parse/unknown_type/shape."""
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolViolation("parse", str(exc)) from exc
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolViolation("parse", "message must be an object with a type")
    mtype = obj["type"]
    try:
        if mtype == "get_sigma":
            return GetSigma(str(obj["controller_id"]), int(obj["iteration"]))
        if mtype == "sigma_reply":
            return SigmaReply(
                _profile_field(obj, "profile", n_steps),
                _profile_field(obj, "band_committed", n_steps, optional=True),
                obj.get("band_half_width"),
                obj.get("global_limit"))
        if mtype == "submit_plan":
            return SubmitPlan(str(obj["controller_id"]), int(obj["iteration"]),
                              _profile_field(obj, "profile", n_steps))
        if mtype == "ack":
            return Ack()
        if mtype == "round_status":
            return RoundStatus(bool(obj["converged"]), int(obj["iteration"]))
        if mtype == "error":
            return ProtocolErrorMsg(str(obj["code"]), str(obj.get("detail", "")))
    except ProtocolViolation:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolViolation("parse", f"bad field in {mtype}: {exc}") from exc
    raise ProtocolViolation("unknown_type", f"unknown message type {mtype!r}")


# -- server side ----------------------------------------------------------


class RemoteControllerProxy:
    """Coordinator-side stand-in for one remote controller."""

    def __init__(self, server: "IsoServer", controller_id: str):
        self._server = server
        self.controller_id = controller_id

    def compute_plan(self, sigma: Profile) -> Profile:
        return self._server.exchange(self.controller_id, sigma)


class IsoServer:
    """Hub granting the solve token to one controller at a time over TCP."""

    def __init__(self, host: str, port: int, controller_ids: Sequence[str],
                 grid: TimeGrid, timeout: float = 30.0):
        self.grid = grid
        self.timeout = timeout
        self._ids = tuple(controller_ids)
        self._outbox = {cid: queue.Queue() for cid in self._ids}
        self._inbox = {cid: queue.Queue() for cid in self._ids}
        self._awaiting_plan = {cid: False for cid in self._ids}
        self._lock = threading.Lock()
        self._band: Band | None = None
        self._global_limit: float | None = None
        self._sock = socket.create_server((host, port))
        self._sock.settimeout(0.2)
        self.address = self._sock.getsockname()
        self._closing = False
        self._threads: list[threading.Thread] = []
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               daemon=True)
        self._accept_thread.start()

    def proxies(self) -> list[RemoteControllerProxy]:
        return [RemoteControllerProxy(self, cid) for cid in self._ids]

    def set_context(self, band: Band | None, global_limit: float | None,
                    grid: TimeGrid | None = None) -> None:
        """Band and cap echoed in subsequent sigma replies; `grid` rebases the
        server onto the current round's horizon (the wire carries values only)."""
        self._band = band
        self._global_limit = global_limit
        if grid is not None:
            if grid.n_steps != self.grid.n_steps:
                raise ValueError("round grid changes the horizon length")
            self.grid = grid

    def exchange(self, cid: str, sigma: Profile) -> Profile:
        with self._lock:
            self._awaiting_plan[cid] = True
        self._outbox[cid].put(("sigma", sigma.values))
        try:
            values = self._inbox[cid].get(timeout=self.timeout)
        except queue.Empty:
            raise ControllerTimeout(
                f"controller {cid} did not submit within {self.timeout}s")
        return Profile(self.grid, values)

    def broadcast_status(self, converged: bool, iteration: int) -> None:
        for cid in self._ids:
            self._outbox[cid].put(("status", converged, iteration))

    def close(self) -> None:
        self._closing = True
        for cid in self._ids:
            self._outbox[cid].put(("shutdown",))
        self._accept_thread.join(timeout=5.0)
        for t in self._threads:
            t.join(timeout=5.0)
        self._sock.close()

    # -- connection handling ----------------------------------------------

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(target=self._serve_conn, args=(conn,),
                                 daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, conn: socket.socket) -> None:
        buf = b""
        bound_cid: str | None = None
        try:
            while True:
                while b"\n" not in buf:
                    chunk = conn.recv(65536)
                    if not chunk:
                        return
                    buf += chunk
                line, buf = buf.split(b"\n", 1)
                try:
                    reply = self._handle(line, buf, bound_cid)
                except ProtocolViolation as exc:
                    conn.sendall(encode(ProtocolErrorMsg(exc.code, exc.detail)))
                    continue
                if reply is None:  # shutdown
                    return
                if isinstance(reply, tuple):  # bound to a controller id
                    bound_cid, reply = reply
                conn.sendall(encode(reply))
        finally:
            conn.close()

    def _handle(self, line: bytes, buffered: bytes, bound_cid: str | None):
        if b"\n" in buffered:
            raise ProtocolViolation(
                "pipeline", "one outstanding request per connection")
        msg = decode(line, self.grid.n_steps)
        if isinstance(msg, GetSigma):
            if msg.controller_id not in self._outbox:
                raise ProtocolViolation(
                    "unknown_controller", msg.controller_id)
            item = self._outbox[msg.controller_id].get()
            if item[0] == "shutdown":
                return None
            if item[0] == "status":
                return msg.controller_id, RoundStatus(item[1], item[2])
            band = self._band
            return msg.controller_id, SigmaReply(
                profile=item[1],
                band_committed=band.committed.values if band else None,
                band_half_width=band.half_width if band else None,
                global_limit=self._global_limit)
        if isinstance(msg, SubmitPlan):
            cid = msg.controller_id
            if cid not in self._inbox:
                raise ProtocolViolation("unknown_controller", cid)
            with self._lock:
                if not self._awaiting_plan[cid]:
                    raise ProtocolViolation(
                        "duplicate",
                        f"no plan expected from {cid} (iteration {msg.iteration})")
                self._awaiting_plan[cid] = False
            self._inbox[cid].put(msg.profile)
            return cid, Ack()
        raise ProtocolViolation(
            "unknown_type", f"server cannot handle {type(msg).__name__}")


# -- client side ----------------------------------------------------------


class ControllerClient:
    """Polls the ISO for the solve token, computes a plan, submits it.

    `solve_fn(sigma, band, global_limit) -> Profile` supplies the local MPC;
    the client loops until the server closes the connection.
    """

    def __init__(self, address: tuple[str, int], controller_id: str,
                 grid: TimeGrid,
                 solve_fn: Callable[[Profile, Band | None, float | None], Profile],
                 on_round: Callable[[RoundStatus], None] | None = None):
        self.address = address
        self.controller_id = controller_id
        self.grid = grid
        self.solve_fn = solve_fn
        self.on_round = on_round

    def run(self) -> None:
        with socket.create_connection(self.address) as conn:
            buf = b""
            iteration = 1

            def request(msg) -> Message:
                nonlocal buf
                conn.sendall(encode(msg))
                while b"\n" not in buf:
                    chunk = conn.recv(65536)
                    if not chunk:
                        return None
                    buf += chunk
                line, buf = buf.split(b"\n", 1)
                return decode(line, self.grid.n_steps)

            while True:
                reply = request(GetSigma(self.controller_id, iteration))
                if reply is None:
                    return
                if isinstance(reply, RoundStatus):
                    iteration = 1
                    if self.on_round:
                        self.on_round(reply)
                    continue
                if isinstance(reply, ProtocolErrorMsg):
                    raise ProtocolViolation(reply.code, reply.detail)
                if not isinstance(reply, SigmaReply):
                    raise ProtocolViolation(
                        "unknown_type", f"unexpected {type(reply).__name__}")
                sigma = Profile(self.grid, reply.profile)
                band = None
                if reply.band_committed is not None:
                    band = Band(Profile(self.grid, reply.band_committed),
                                reply.band_half_width)
                plan = self.solve_fn(sigma, band, reply.global_limit)
                ack = request(SubmitPlan(self.controller_id, iteration,
                                         plan.values))
                if ack is None:
                    return
                if isinstance(ack, ProtocolErrorMsg):
                    raise ProtocolViolation(ack.code, ack.detail)
                iteration += 1
