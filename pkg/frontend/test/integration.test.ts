// End-to-end: the session client against the real bridge server over the
// wire protocol (raw TCP transport; the browser path uses WebSocket with
// identical frame payloads).

import { spawn } from "node:child_process";
import * as net from "node:net";
import * as readline from "node:readline";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { MappedControl } from "../src/input.js";
import { StateFrame } from "../src/protocol.js";
import { SessionClient, SocketLike } from "../src/session.js";

const SERVER_SCRIPT = `
import sys
from coopbench.bridge import BridgeServer
from coopbench.engine import EngineConfig
from coopbench.maps import builtin_maps
from coopbench.scenario import CavSpec, RouteSpec, Scenario

lib, _ = builtin_maps()
graph = lib.get("straight_2lane_a")
route = RouteSpec(tuple((float(x), -1.75) for x in range(-40, 61, 10)), 8.0)
cav = CavSpec("cav_1", (-40.0, -1.75, 0.0), route)
scen = Scenario("ui_e2e", "interaction", "pedestrian_crosswalk",
                "dynamic_avoidance", graph.map_id, "default", 30.0, (cav,),
                lane_graph=graph)
server = BridgeServer(scen, {"cav_1": "single"}, "cav_1", port=0,
                      rate_hz=100.0,
                      engine_cfg=EngineConfig(termination="continue"))
print(server.port, flush=True)
server.serve(max_ticks=2000)
`;

function tcpSocketLike(port: number): SocketLike & { destroy(): void } {
  const sock = net.createConnection({ host: "127.0.0.1", port });
  const like = {
    onmessage: null as ((ev: { data: string }) => void) | null,
    onopen: null as (() => void) | null,
    onclose: null as (() => void) | null,
    send(data: string) {
      sock.write(data + "\n");
    },
    close() {
      sock.end();
    },
    destroy() {
      sock.destroy();
    },
  };
  sock.on("connect", () => like.onopen?.());
  sock.on("close", () => like.onclose?.());
  const rl = readline.createInterface({ input: sock });
  rl.on("line", (line) => like.onmessage?.({ data: line }));
  return like;
}

let serverProc: ReturnType<typeof spawn>;
let port = 0;

beforeAll(async () => {
  serverProc = spawn("python3", ["-c", SERVER_SCRIPT], {
    cwd: "..",
    stdio: ["ignore", "pipe", "inherit"],
  });
  port = await new Promise<number>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("bridge start timeout")), 20000);
    serverProc.stdout!.once("data", (chunk: Buffer) => {
      clearTimeout(timer);
      resolve(parseInt(chunk.toString().trim(), 10));
    });
  });
}, 30000);

afterAll(() => {
  serverProc?.kill();
});

describe("live bridge loop", () => {
  it("receives map and state frames, applies takeover brake, observes it",
     async () => {
    const control: MappedControl = { throttle: 0, brake: 0, steer: 0 };
    const frames: StateFrame[] = [];
    const sock = tcpSocketLike(port);
    let resolveMap: () => void;
    const mapSeen = new Promise<void>((r) => { resolveMap = r; });
    const client = new SessionClient(sock, () => ({ ...control }), {
      onState: (f) => frames.push(f),
      onMap: () => resolveMap(),
    });
    await mapSeen;
    // wait for a few live frames
    await new Promise<void>((resolve) => {
      const poll = setInterval(() => {
        if (frames.length >= 5) { clearInterval(poll); resolve(); }
      }, 10);
    });
    expect(client.latestMap!.lanes.length).toBeGreaterThan(0);
    const tickSeen = frames[frames.length - 1].tick;

    // take over with a full brake and wait for it to come back in a frame
    control.brake = 1;
    client.setTakeover(true);
    const braked = await new Promise<StateFrame>((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("brake not observed")), 10000);
      const poll = setInterval(() => {
        const hit = frames.find((f) => f.tick > tickSeen && f.ego.brake === 1);
        if (hit) { clearTimeout(timer); clearInterval(poll); resolve(hit); }
      }, 5);
    });
    // 100 Hz pacing on localhost: the command lands within a few ticks
    expect(braked.tick - tickSeen).toBeLessThanOrEqual(4);
    expect(braked.episode.takeover).toBe(true);

    // release and confirm the policy resumes
    client.setTakeover(false);
    control.brake = 0;
    const releasedAt = frames[frames.length - 1].tick;
    await new Promise<void>((resolve) => {
      const poll = setInterval(() => {
        const last = frames[frames.length - 1];
        if (last.tick > releasedAt + 20 && last.ego.brake === 0) {
          clearInterval(poll);
          resolve();
        }
      }, 10);
    });
    sock.destroy();
  }, 30000);
});
