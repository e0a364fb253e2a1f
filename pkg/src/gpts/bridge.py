"""Wire protocol for driving an external trainer process as an environment.

Messages are UTF-8, line-delimited JSON, one per line, discriminated by
a ``type`` field; the handshake carries protocol version ``v = 1``:

    -> {"type": "init", "v": 1, "arm_names": ["rho"], "config": {...}}
    <- {"type": "init_ack", "v": 1, "initial_val_loss": 10.0}
    -> {"type": "step", "v": 1, "interaction": 3, "arm": {"rho": 0.2}, "updates": 1000}
    <- {"type": "step_ack", "v": 1, "interaction": 3, "val_loss": 7.4}
    <- {"type": "error", "v": 1, "code": "...", "detail": "..."}
    -> {"type": "shutdown", "v": 1}

Arm values travel as a name-to-value map so trainers bind
hyperparameters by name. One step is in flight at a time; interactions
increase strictly by one and duplicates are rejected. The default step
timeout is 0 (block forever): real pre-training steps can take hours.

``mock_trainer_main`` serves the protocol backed by the synthetic
pre-training simulator, for tests and offline development.
"""

from __future__ import annotations

import dataclasses
import json
import select
import socket
import subprocess
import sys
import time

from .bandit import Arm, LossObservation
from .environments import SyntheticPretrainEnv, SyntheticPretrainSpec
from .errors import BridgeError, InvalidArgumentError, ProtocolError

__all__ = [
    "PROTOCOL_VERSION",
    "BridgeEnvironment",
    "bridge_connect",
    "mock_trainer_main",
]

PROTOCOL_VERSION = 1


class _SubprocessTransport:
    def __init__(self, argv: list[str]):
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeError(f"cannot spawn trainer {argv!r}: {exc}") from exc

    def send_line(self, line: str) -> None:
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise BridgeError(f"trainer pipe closed: {exc}") from exc

    def recv_line(self, timeout_s: float) -> str:
        if timeout_s > 0:
            ready, _, _ = select.select([self.proc.stdout], [], [], timeout_s)
            if not ready:
                raise BridgeError(f"trainer reply timed out after {timeout_s}s")
        line = self.proc.stdout.readline()
        if line == "":
            raise BridgeError("trainer process closed the connection")
        return line

    def close(self) -> None:
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self.proc.kill()


class _TcpTransport:
    def __init__(self, host: str, port: int, connect_timeout_s: float = 10.0):
        deadline = time.monotonic() + connect_timeout_s
        last_exc: Exception | None = None
        while time.monotonic() < deadline:
            try:
                self.sock = socket.create_connection((host, port), timeout=2.0)
                break
            except OSError as exc:
                last_exc = exc
                time.sleep(0.05)
        else:
            raise BridgeError(f"cannot connect to trainer at {host}:{port}: {last_exc}")
        self.sock.settimeout(None)
        self._rfile = self.sock.makefile("r", encoding="utf-8", newline="\n")
        self._wfile = self.sock.makefile("w", encoding="utf-8", newline="\n")

    def send_line(self, line: str) -> None:
        try:
            self._wfile.write(line + "\n")
            self._wfile.flush()
        except OSError as exc:
            raise BridgeError(f"trainer socket closed: {exc}") from exc

    def recv_line(self, timeout_s: float) -> str:
        self.sock.settimeout(timeout_s if timeout_s > 0 else None)
        try:
            line = self._rfile.readline()
        except socket.timeout:
            raise BridgeError(f"trainer reply timed out after {timeout_s}s") from None
        except OSError as exc:
            raise BridgeError(f"trainer socket error: {exc}") from exc
        if line == "":
            raise BridgeError("trainer closed the connection")
        return line

    def close(self) -> None:
        for f in (self._wfile, self._rfile):
            try:
                f.close()
            except OSError:
                pass
        try:
            self.sock.close()
        except OSError:
            pass


class BridgeEnvironment:
    """Environment driving a remote trainer over the wire protocol."""

    def __init__(self, transport, arm_names, config=None, timeout_s: float = 0.0):
        self._transport = transport
        self.arm_names = tuple(arm_names)
        self._config = dict(config or {})
        self.timeout_s = timeout_s
        self._t = 0
        self._started = False

    def _send(self, msg: dict) -> None:
        self._transport.send_line(json.dumps(msg))

    def _recv(self) -> dict:
        line = self._transport.recv_line(self.timeout_s)
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed trainer message: {line!r}") from exc
        if not isinstance(msg, dict) or "type" not in msg:
            raise ProtocolError(f"trainer message has no type: {line!r}")
        if msg["type"] == "error":
            raise BridgeError(
                f"trainer error {msg.get('code', '?')}: {msg.get('detail', '')}"
            )
        return msg

    def init(self) -> LossObservation:
        if self._started:
            raise InvalidArgumentError("init() may be called only once")
        self._send(
            {
                "type": "init",
                "v": PROTOCOL_VERSION,
                "arm_names": list(self.arm_names),
                "config": self._config,
            }
        )
        msg = self._recv()
        if msg["type"] != "init_ack":
            raise ProtocolError(f"expected init_ack, got {msg['type']!r}")
        self._started = True
        self._t = 0
        return LossObservation(interaction=0, validation_loss=float(msg["initial_val_loss"]))

    def step(self, arm: Arm, u: int) -> LossObservation:
        if not self._started:
            raise InvalidArgumentError("init() must be called before step()")
        if len(arm) != len(self.arm_names):
            raise InvalidArgumentError(
                f"arm has {len(arm)} coordinates, expected {len(self.arm_names)}"
            )
        t = self._t + 1
        self._send(
            {
                "type": "step",
                "v": PROTOCOL_VERSION,
                "interaction": t,
                "arm": dict(zip(self.arm_names, arm)),
                "updates": u,
            }
        )
        msg = self._recv()
        if msg["type"] != "step_ack":
            raise ProtocolError(f"expected step_ack, got {msg['type']!r}")
        if msg.get("interaction") != t:
            raise ProtocolError(
                f"step_ack interaction {msg.get('interaction')} does not match request {t}"
            )
        self._t = t
        return LossObservation(interaction=t, validation_loss=float(msg["val_loss"]))

    def close(self) -> None:
        try:
            self._send({"type": "shutdown", "v": PROTOCOL_VERSION})
        except BridgeError:
            pass
        self._transport.close()


def bridge_connect(transport, arm_names, config=None, timeout_s: float = 0.0) -> BridgeEnvironment:
    """Open a bridge to a trainer.

    ``transport`` is either an argv list (the trainer is spawned and
    spoken to over stdio) or a string ``"tcp:HOST:PORT"``. The Init
    handshake is performed lazily by the returned environment's
    ``init()``.
    """
    if isinstance(transport, str):
        if not transport.startswith("tcp:"):
            raise InvalidArgumentError(f"unknown transport spec: {transport!r}")
        _, host, port = transport.split(":")
        t = _TcpTransport(host, int(port))
    elif isinstance(transport, (list, tuple)):
        t = _SubprocessTransport(list(transport))
    else:
        t = transport
    return BridgeEnvironment(t, arm_names, config=config, timeout_s=timeout_s)


# ---------------------------------------------------------------------------
# mock trainer


def _spec_from_config(base: SyntheticPretrainSpec, config: dict) -> SyntheticPretrainSpec:
    overrides = dict(config.get("synthetic", {}))
    if not overrides:
        return base
    fields = {f.name for f in dataclasses.fields(SyntheticPretrainSpec)}
    unknown = set(overrides) - fields
    if unknown:
        raise InvalidArgumentError(f"unknown synthetic spec fields: {sorted(unknown)}")
    for key in ("optimum", "width"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    return dataclasses.replace(base, **overrides)


def _serve(lines, reply, spec: SyntheticPretrainSpec, default_seed: int) -> int:
    env: SyntheticPretrainEnv | None = None
    arm_names: tuple[str, ...] = ()
    last_t = 0

    def error(code: str, detail: str) -> None:
        reply({"type": "error", "v": PROTOCOL_VERSION, "code": code, "detail": detail})

    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            mtype = msg["type"]
        except (json.JSONDecodeError, TypeError, KeyError):
            error("malformed", f"unparseable message: {line[:200]!r}")
            continue

        if mtype == "shutdown":
            return 0

        if mtype == "init":
            if msg.get("v") != PROTOCOL_VERSION:
                error("version_mismatch", f"server speaks v{PROTOCOL_VERSION}")
                continue
            config = msg.get("config") or {}
            try:
                env_spec = _spec_from_config(spec, config)
            except InvalidArgumentError as exc:
                error("bad_config", str(exc))
                continue
            arm_names = tuple(msg.get("arm_names") or ())
            env = SyntheticPretrainEnv(env_spec, seed=int(config.get("seed", default_seed)))
            obs = env.init()
            last_t = 0
            reply(
                {
                    "type": "init_ack",
                    "v": PROTOCOL_VERSION,
                    "initial_val_loss": obs.validation_loss,
                }
            )
            continue

        if mtype == "step":
            if env is None:
                error("not_initialized", "step before init")
                continue
            try:
                t = int(msg["interaction"])
                arm_map = msg["arm"]
                updates = int(msg["updates"])
                arm = tuple(float(arm_map[name]) for name in arm_names)
            except (KeyError, TypeError, ValueError):
                error("malformed", f"bad step message: {line[:200]!r}")
                continue
            if t <= last_t:
                error("duplicate_interaction", f"interaction {t} already served")
                continue
            if t != last_t + 1:
                error("bad_interaction", f"expected interaction {last_t + 1}, got {t}")
                continue
            obs = env.step(arm, updates)
            last_t = t
            reply(
                {
                    "type": "step_ack",
                    "v": PROTOCOL_VERSION,
                    "interaction": t,
                    "val_loss": obs.validation_loss,
                }
            )
            continue

        error("unknown_type", f"unknown message type {mtype!r}")
    return 0


def mock_trainer_main(
    spec: SyntheticPretrainSpec | None = None,
    transport: str = "stdio",
    seed: int = 0,
) -> int:
    """Serve the wire protocol backed by the synthetic simulator.

    ``transport`` is ``"stdio"`` or ``"tcp:PORT"`` (listen on localhost,
    single connection). Returns the process exit code.
    """
    spec = spec or SyntheticPretrainSpec()
    if transport == "stdio":
        out = sys.stdout

        def reply(msg: dict) -> None:
            out.write(json.dumps(msg) + "\n")
            out.flush()

        return _serve(sys.stdin, reply, spec, seed)

    if transport.startswith("tcp:"):
        port = int(transport.split(":", 1)[1])
        with socket.create_server(("127.0.0.1", port)) as server:
            conn, _ = server.accept()
            with conn:
                rfile = conn.makefile("r", encoding="utf-8", newline="\n")
                wfile = conn.makefile("w", encoding="utf-8", newline="\n")

                def reply(msg: dict) -> None:
                    wfile.write(json.dumps(msg) + "\n")
                    wfile.flush()

                return _serve(rfile, reply, spec, seed)

    raise InvalidArgumentError(f"unknown transport: {transport!r}")
