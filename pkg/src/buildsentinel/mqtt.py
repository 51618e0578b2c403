"""Live ingestion from an MQTT 3.1.1 broker (QoS 0).

Payloads are flat JSON objects whose keys are stream names, e.g.
``{"temp": 22.5, "humidity": 38.1}`` on topic ``sense-hat``.  Two keys are
reserved: ``timestamp`` (ISO-8601 or epoch seconds) and ``device_id``.
Messages without a timestamp are stamped with their arrival time.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from typing import Callable
from urllib.parse import urlparse

from .core import SensorReading, StreamInventory, parse_timestamp
from .ingestion import IngestConfig

log = logging.getLogger(__name__)

RESERVED_KEYS = ("timestamp", "device_id")


class PayloadError(ValueError):
    pass


def parse_payload(topic: str, payload: bytes | str, arrival: float,
                  device_id: str | None = None) -> list[SensorReading]:
    """Turn one message into readings sharing a single timestamp.

    Values are passed through untouched (``None``, strings, numbers) so that
    :func:`buildsentinel.ingestion.clean` sees exactly what the device sent.
    """
    if isinstance(payload, bytes):
        try:
            payload = payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PayloadError("payload is not UTF-8") from exc
    try:
        obj = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise PayloadError(f"invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise PayloadError("payload must be a JSON object")
    if "timestamp" in obj:
        try:
            ts = parse_timestamp(obj["timestamp"])
        except (ValueError, TypeError) as exc:
            raise PayloadError(f"bad timestamp {obj['timestamp']!r}") from exc
    else:
        ts = parse_timestamp(arrival)
    dev = str(obj.get("device_id") or device_id or topic)
    return [SensorReading(ts, dev, topic, str(k), v)
            for k, v in obj.items() if k not in RESERVED_KEYS]


def parse_broker_uri(uri: str) -> dict:
    u = urlparse(uri if "://" in uri else f"mqtt://{uri}")
    if u.scheme not in ("mqtt", "tcp"):
        raise ValueError(f"unsupported broker scheme {u.scheme!r}")
    return {"host": u.hostname or "localhost", "port": u.port or 1883,
            "username": u.username, "password": u.password}


class Subscription:
    """Running subscription handle.

    ``status`` is one of ``connecting``, ``connected``, ``reconnecting``,
    ``stopped``.  Messages are queued by the network thread and delivered to
    ``sink`` by a single writer thread, so the sink never sees concurrent
    calls and per-topic arrival order is kept.
    """

    def __init__(self, cfg: IngestConfig, sink: Callable[[SensorReading], None],
                 inventory: StreamInventory | None = None, clock: Callable[[], float] = time.time,
                 min_backoff: float = 1.0, max_backoff: float = 30.0):
        if cfg.mode != "live":
            raise ValueError("subscribe() needs an IngestConfig in live mode")
        if not cfg.topics:
            raise ValueError("live mode needs at least one topic")
        self.cfg = cfg
        self.sink = sink
        self.inventory = inventory
        self.clock = clock
        self.status = "connecting"
        self.received = 0
        self.delivered = 0
        self.malformed = 0
        self.connect_failures = 0
        self._queue: queue.Queue = queue.Queue()
        self._writer = threading.Thread(target=self._drain, name="mqtt-writer", daemon=True)
        self._lock = threading.Lock()
        self._min_backoff = min_backoff
        self._max_backoff = max_backoff
        self._client = None

    # network-thread callbacks
    def _on_connect(self, client, userdata, flags, reason_code, properties=None):
        if reason_code.is_failure:
            self.status = "reconnecting"
            self.connect_failures += 1
            return
        self.status = "connected"
        client.subscribe([(t, 0) for t in self.cfg.topics])

    def _on_connect_fail(self, client, userdata):
        self.connect_failures += 1
        if self.status != "stopped":
            self.status = "reconnecting"

    def _on_disconnect(self, client, userdata, flags, reason_code, properties=None):
        if self.status != "stopped":
            self.status = "reconnecting"

    def _on_message(self, client, userdata, msg):
        self._queue.put((msg.topic, msg.payload, self.clock()))

    def _drain(self):
        while True:
            item = self._queue.get()
            if item is None:
                return
            topic, payload, arrival = item
            with self._lock:
                self.received += 1
            device = self.inventory.device_for_topic(topic) if self.inventory else None
            try:
                readings = parse_payload(topic, payload, arrival, device)
            except PayloadError as exc:
                log.debug("skipping malformed payload on %s: %s", topic, exc)
                with self._lock:
                    self.malformed += 1
                continue
            for r in readings:
                self.sink(r)
            with self._lock:
                self.delivered += len(readings)

    def start(self) -> "Subscription":
        import paho.mqtt.client as mqtt

        target = parse_broker_uri(self.cfg.broker_uri)
        client = mqtt.Client(mqtt.CallbackAPIVersion.VERSION2, protocol=mqtt.MQTTv311)
        if target["username"]:
            client.username_pw_set(target["username"], target["password"])
        client.on_connect = self._on_connect
        client.on_connect_fail = self._on_connect_fail
        client.on_disconnect = self._on_disconnect
        client.on_message = self._on_message
        client.reconnect_delay_set(min_delay=self._min_backoff, max_delay=self._max_backoff)
        self._client = client
        self._writer.start()
        client.connect_async(target["host"], target["port"], keepalive=30)
        client.loop_start()
        return self

    def wait_connected(self, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.status == "connected":
                return True
            time.sleep(0.01)
        return self.status == "connected"

    def stop(self, timeout: float = 5.0) -> None:
        """Disconnect, then deliver everything still queued before returning."""
        self.status = "stopped"
        if self._client is not None:
            self._client.disconnect()
            self._client.loop_stop()
        self._queue.put(None)
        if self._writer.is_alive():
            self._writer.join(timeout)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def subscribe(cfg: IngestConfig, sink: Callable[[SensorReading], None],
              inventory: StreamInventory | None = None, **kwargs) -> Subscription:
    return Subscription(cfg, sink, inventory, **kwargs).start()


class ReadingBuffer:
    """Thread-safe list sink, handy for capture-then-align."""

    def __init__(self):
        self._items: list[SensorReading] = []
        self._lock = threading.Lock()

    def __call__(self, reading: SensorReading) -> None:
        with self._lock:
            self._items.append(reading)

    def snapshot(self) -> list[SensorReading]:
        with self._lock:
            return list(self._items)

    def __len__(self):
        with self._lock:
            return len(self._items)
