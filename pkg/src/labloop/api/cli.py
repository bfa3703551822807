"""Command-line client and server launcher.

Every subcommand except `serve` talks to a running service over HTTP, so
the CLI exercises exactly the surface other clients get.
"""

import argparse
import json
import os
import sys

import httpx
import yaml

from ..records import verify_records


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="labloop",
        description="Closed-loop lab orchestration: workflows, runs, campaigns.",
    )
    parser.add_argument(
        "--url",
        default=os.environ.get("LAB_API_URL", "http://127.0.0.1:7431"),
        help="API base URL (env LAB_API_URL)",
    )
    parser.add_argument(
        "--token",
        default=os.environ.get("LAB_API_TOKEN", ""),
        help="bearer token (env LAB_API_TOKEN)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the API service")
    serve.add_argument("--config", default=None, help="YAML config file")

    submit = sub.add_parser("submit", help="submit a workflow document")
    submit.add_argument("file", help="workflow YAML file")

    run = sub.add_parser("run", help="start a run of a submitted workflow")
    run.add_argument("workflow_id")

    action = sub.add_parser("action", help="pause, resume, or abort a run")
    action.add_argument("run_id")
    action.add_argument("action", choices=("pause", "resume", "abort"))

    complete = sub.add_parser("complete", help="complete a manual step")
    complete.add_argument("run_id")
    complete.add_argument("step_id")
    complete.add_argument("--operator", default="cli")
    complete.add_argument("--note", default="")

    campaign = sub.add_parser("campaign", help="campaign operations")
    campaign_sub = campaign.add_subparsers(dest="campaign_command", required=True)
    cstart = campaign_sub.add_parser("start", help="start a campaign")
    cstart.add_argument("file", help="campaign config file (YAML or JSON)")
    cstatus = campaign_sub.add_parser("status", help="show campaign progress")
    cstatus.add_argument("campaign_id")

    records = sub.add_parser("records", help="record store operations")
    records_sub = records.add_subparsers(dest="records_command", required=True)
    verify = records_sub.add_parser(
        "verify", help="re-verify a chain's hashes client-side"
    )
    verify.add_argument("chain_id")

    return parser


def _client(args) -> httpx.Client:
    headers = {}
    if args.token:
        headers["Authorization"] = f"Bearer {args.token}"
    return httpx.Client(base_url=args.url, headers=headers, timeout=30.0)


def _show(response: httpx.Response) -> int:
    try:
        body = response.json()
    except ValueError:
        body = {"raw": response.text}
    print(json.dumps(body, indent=2, sort_keys=True))
    return 0 if response.is_success else 1


def _serve(args) -> int:
    import uvicorn

    from .app import create_app
    from .config import load_config
    from .service import LabService

    cfg = load_config(args.config)
    service = LabService(cfg)
    service.start()
    try:
        uvicorn.run(
            create_app(service),
            host=cfg.api_host,
            port=cfg.api_port,
            log_level="warning",
        )
    finally:
        service.stop()
    return 0


def _submit(args, client: httpx.Client) -> int:
    with open(args.file, encoding="utf-8") as fh:
        text = fh.read()
    return _show(client.post("/workflows", content=text.encode("utf-8"),
                             headers={"Content-Type": "application/yaml"}))


def _campaign_start(args, client: httpx.Client) -> int:
    with open(args.file, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return _show(client.post("/campaigns", json=doc))


def _records_verify(args, client: httpx.Client) -> int:
    response = client.get("/records", params={"run_id": args.chain_id})
    if not response.is_success:
        return _show(response)
    rows = response.json()["records"]
    report = verify_records(args.chain_id, rows)
    print(json.dumps({
        "chain": report.chain,
        "ok": report.ok,
        "length": report.length,
        "first_bad_seq": report.first_bad_seq,
        "reason": report.reason,
    }, indent=2, sort_keys=True))
    return 0 if report.ok else 2


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "serve":
        return _serve(args)

    with _client(args) as client:
        if args.command == "submit":
            return _submit(args, client)
        if args.command == "run":
            return _show(client.post("/runs", json={"workflow_id": args.workflow_id}))
        if args.command == "action":
            return _show(client.post(f"/runs/{args.run_id}/actions",
                                     json={"action": args.action}))
        if args.command == "complete":
            return _show(client.post(
                f"/runs/{args.run_id}/steps/{args.step_id}/complete",
                json={"operator": args.operator, "note": args.note},
            ))
        if args.command == "campaign":
            if args.campaign_command == "start":
                return _campaign_start(args, client)
            return _show(client.get(f"/campaigns/{args.campaign_id}"))
        if args.command == "records":
            return _records_verify(args, client)
    return 1


if __name__ == "__main__":
    sys.exit(main())
