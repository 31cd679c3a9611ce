"""Serve the embedding sidecar: python -m embed_sidecar --port 8000."""

import argparse
import logging
import sys

import uvicorn

from .app import create_app
from .backbone import Backbone

log = logging.getLogger("embed_sidecar")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="embed_sidecar", description=__doc__)
    parser.add_argument("--model", default="vit_b_16",
                        help="backbone architecture (vit_b_16, vit_b_32, vit_l_16)")
    parser.add_argument("--weights", default="pretrained",
                        help="'pretrained', 'random', or a path to a state dict")
    parser.add_argument("--seed", type=int, default=0, help="init seed for --weights random")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO)
    try:
        backbone = Backbone(args.model, args.weights, seed=args.seed)
    except Exception as exc:
        log.error("model load failed, aborting: %s", exc)
        return 1
    info = backbone.info
    log.info("serving %s (P=%d, D=%d, input %dpx, tap %s)",
             info.model, info.patch_grid, info.dim, info.input_side, info.tap_point)
    uvicorn.run(create_app(backbone), host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
