"""Serve a fixture table over the vlx HTTP protocol.

    python scripts/serve_fixtures.py scripts/demo/fixtures.json --port 8765
    VLX_BACKEND_ENDPOINT=http://127.0.0.1:8765 vlx backend ping

Over HTTP the server only sees pixels, so fixtures must be keyed by content
hash (``sha256:...``) rather than file stem to match.
"""
import argparse
import time

from vlx.backend import MockBackend
from vlx.backend.server import serve


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("fixtures")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    args = p.parse_args()

    backend = MockBackend.from_file(args.fixtures)
    server = serve(backend, args.host, args.port)
    host, port = server.server_address[:2]
    print(f"serving {len(backend)} fixtures on http://{host}:{port}/v1/infer", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.shutdown()


if __name__ == "__main__":
    main()
