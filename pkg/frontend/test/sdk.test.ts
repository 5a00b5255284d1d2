/**
 * SDK tests against a live service: each suite boots `seastar sim` (the
 * primary package) as a subprocess and talks to it over HTTP only.
 */

import { after, before, describe, it } from 'node:test';
import assert from 'node:assert/strict';
import { spawn, ChildProcess } from 'node:child_process';
import * as fs from 'node:fs';
import * as http from 'node:http';
import * as net from 'node:net';
import * as os from 'node:os';
import * as path from 'node:path';
import { fileURLToPath } from 'node:url';

import {
  ConnectionError,
  NoIdentityError,
  NotFoundError,
  PlatformAPI,
  PortUnavailableError,
  UnknownMetricError,
  WebhookListener,
  type DeliveryPayload,
  type Identity,
  type ResourceObject,
} from '../src/index.js';

const REPO_ROOT = path.resolve(
  path.dirname(fileURLToPath(import.meta.url)), '..', '..', '..',
);

// ----------------------------------------------------------------------
// harness plumbing
// ----------------------------------------------------------------------

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = net.createServer();
    server.once('error', reject);
    server.listen(0, '127.0.0.1', () => {
      const address = server.address() as net.AddressInfo;
      server.close(() => resolve(address.port));
    });
  });
}

interface SimInstance {
  proc: ChildProcess;
  base: string;
  logFile: string;
  dir: string;
}

async function startSim(options: {
  spec: object;
  script: object;
  durationS: number;
  pace?: number;
  hold?: boolean;
}): Promise<SimInstance> {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), 'seastar-sdk-'));
  const specFile = path.join(dir, 'spec.json');
  const scriptFile = path.join(dir, 'script.json');
  const logFile = path.join(dir, 'events.ndjson');
  fs.writeFileSync(specFile, JSON.stringify(options.spec));
  fs.writeFileSync(scriptFile, JSON.stringify(options.script));
  const port = await freePort();
  const args = [
    '-m', 'seastar.cli', 'sim',
    '--spec', specFile, '--script', scriptFile, '--seed', '7',
    '--duration', `${options.durationS}s`,
    '--listen', `127.0.0.1:${port}`,
    '--log', logFile,
  ];
  if (options.pace) args.push('--pace', String(options.pace));
  if (options.hold ?? true) args.push('--hold');
  const proc = spawn('python3', args, {
    cwd: REPO_ROOT,
    env: { ...process.env, PYTHONPATH: path.join(REPO_ROOT, 'src') },
    stdio: ['ignore', 'pipe', 'pipe'],
  });
  const base = `http://127.0.0.1:${port}`;
  await waitHealthy(base, proc);
  return { proc, base, logFile, dir };
}

async function waitHealthy(base: string, proc: ChildProcess): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    if (proc.exitCode !== null) throw new Error(`sim exited ${proc.exitCode}`);
    try {
      const response = await fetch(`${base}/healthz`, {
        signal: AbortSignal.timeout(1000),
      });
      if (response.ok) return;
    } catch {
      await sleep(100);
    }
  }
  throw new Error('sim never became healthy');
}

function stopSim(sim: SimInstance): Promise<void> {
  if (sim.proc.exitCode !== null) return Promise.resolve();
  return new Promise((resolve) => {
    sim.proc.once('exit', () => resolve());
    sim.proc.kill('SIGTERM');
    setTimeout(() => sim.proc.kill('SIGKILL'), 10_000).unref();
  });
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function rawGet(
  base: string, pathName: string, identity: Identity = {},
): Promise<{ status: number; body: unknown }> {
  const headers: Record<string, string> = {};
  if (identity.node) headers['X-Seastar-Node'] = identity.node;
  if (identity.pid) headers['X-Seastar-Pid'] = identity.pid;
  if (identity.tid) headers['X-Seastar-Tid'] = identity.tid;
  const response = await fetch(base + pathName, { headers });
  return { status: response.status, body: await response.json() };
}

/** Thread identities recovered from the sim's event-log file. */
function threadIdentities(logFile: string): Array<{ identity: Identity; threadId: string }> {
  const processes = new Map<string, { hostname: string; pid: string }>();
  const out: Array<{ identity: Identity; threadId: string }> = [];
  for (const line of fs.readFileSync(logFile, 'utf-8').trim().split('\n')) {
    const event = JSON.parse(line);
    if (event.action !== 'create_node') continue;
    const payload = event.payload;
    if (payload.kind === 'process') {
      processes.set(payload.id, {
        hostname: payload.labels.hostname,
        pid: payload.labels.pid,
      });
    } else if (payload.kind === 'thread') {
      const proc = processes.get(payload.parent);
      if (proc) {
        out.push({
          identity: { node: proc.hostname, pid: proc.pid, tid: payload.labels.tid },
          threadId: payload.id,
        });
      }
    }
  }
  return out;
}

// ----------------------------------------------------------------------
// steady cluster: traversal, metrics, typed errors
// ----------------------------------------------------------------------

const STEADY_SPEC = { nodes: 6, processors_per_node: 2, cores_per_processor: 2 };
const STEADY_SCRIPT = {
  platform_metrics: {
    node: [{ metric: 'memory_total', generator: { kind: 'constant', value: 64e9 } }],
  },
  jobs: [
    {
      name: 'svc', submit_time: 0.0, duration: 600.0,
      processes: 10, threads_per_process: 2,
      metrics: {
        process: [{ metric: 'memory_rss', generator: { kind: 'constant', value: 2e9 } }],
        thread: [{ metric: 'cpu_utilization', generator: { kind: 'constant', value: 0.5 } }],
      },
      edges: [[0, 1]],
    },
  ],
};

describe('traversal over a live cluster', () => {
  let sim: SimInstance;

  before(async () => {
    sim = await startSim({ spec: STEADY_SPEC, script: STEADY_SCRIPT, durationS: 5 });
  });

  after(async () => {
    await stopSim(sim);
  });

  it('self().context().parent() equals raw HTTP composition for 20 threads', async () => {
    const identities = threadIdentities(sim.logFile);
    assert.ok(identities.length >= 20, `only ${identities.length} threads`);
    for (const { identity, threadId } of identities.slice(0, 20)) {
      const api = new PlatformAPI({ endpoint: sim.base, identity });
      const viaSdk = await api.self().context().parent();

      const self = await rawGet(sim.base, '/thread/self', identity);
      assert.equal(self.status, 200);
      const selfObj = self.body as ResourceObject;
      assert.equal(selfObj.id, threadId);
      const ctx = await rawGet(sim.base, `/thread/${selfObj.id}/context`);
      const core = ctx.body as ResourceObject;
      const up = await rawGet(sim.base, `/core/${core.id}/parent`);
      const processor = up.body as ResourceObject;

      assert.equal(viaSdk.kind, 'processor');
      assert.deepEqual(viaSdk.object, processor);
    }
  });

  it('metrics property lists written metric names', async () => {
    const api = new PlatformAPI({ endpoint: sim.base });
    const node = await api.resource('node', 'platform/node/n00');
    assert.ok(node.metrics.includes('memory_total'));
    assert.equal(node.latest('memory_total'), 64e9);
  });

  it('children and siblings traverse the hierarchy', async () => {
    const api = new PlatformAPI({ endpoint: sim.base });
    const job = await api.resource('job', 'application/job/svc');
    const procs = await job.children();
    assert.equal(procs.length, 10);
    assert.ok(procs.every((p) => p.kind === 'process'));
    const sibs = await procs[0].siblings();
    assert.equal(sibs.length, 9);
  });

  it('contextAll inverts a placement', async () => {
    const identities = threadIdentities(sim.logFile);
    const api = new PlatformAPI({ endpoint: sim.base, identity: identities[0].identity });
    const core = await api.self().context();
    const hosted = await core.contextAll();
    assert.ok(hosted.some((t) => t.id === identities[0].threadId));
  });

  it('raises NotFoundError for unknown entities', async () => {
    const api = new PlatformAPI({ endpoint: sim.base });
    await assert.rejects(
      async () => await api.resource('job', 'application/job/ghost'),
      NotFoundError,
    );
  });

  it('raises NoIdentityError without identity headers', async () => {
    const api = new PlatformAPI({ endpoint: sim.base, identity: {} });
    await assert.rejects(async () => await api.selfAs('process'), NoIdentityError);
  });

  it('raises ConnectionError when the endpoint is unreachable', async () => {
    const api = new PlatformAPI({ endpoint: '127.0.0.1:1', timeoutMs: 500 });
    await assert.rejects(async () => await api.selfAs('process'), ConnectionError);
  });

  it('raises UnknownMetricError when registering on a missing metric', async () => {
    const api = new PlatformAPI({ endpoint: sim.base });
    const job = await api.resource('job', 'application/job/svc');
    await assert.rejects(
      job.registerCallback('never_registered', () => {}),
      UnknownMetricError,
    );
  });

  it('raises PortUnavailableError when the listener port is taken', async () => {
    const blocker = http.createServer();
    await new Promise<void>((resolve) => blocker.listen(0, '127.0.0.1', resolve));
    const { port } = blocker.address() as net.AddressInfo;
    try {
      await assert.rejects(
        WebhookListener.start(() => {}, { port }),
        PortUnavailableError,
      );
    } finally {
      await new Promise((resolve) => blocker.close(resolve));
    }
  });
});

// ----------------------------------------------------------------------
// paced dip cluster: callback deliveries
// ----------------------------------------------------------------------

const DIP_SPEC = { nodes: 1, processors_per_node: 1, cores_per_processor: 1 };
const DIP_GEN = { kind: 'sinusoid', amplitude: 200_000, period: 30.0, offset: 600_000 };
const DIP_SCRIPT = {
  jobs: [
    {
      name: 'dip', submit_time: 0.0, duration: 100.0,
      processes: 1, threads_per_process: 1,
      metrics: {
        process: [
          { metric: 'io_read_bytes', generator: DIP_GEN },
          { metric: 'io_write_bytes', generator: DIP_GEN },
        ],
      },
      edges: [],
    },
  ],
};
const DIP_EXPR =
  '(sum(io_read_bytes@process) + sum(io_write_bytes@process)) < 1000000';

describe('webhook callbacks from a scripted I/O dip', () => {
  let sim: SimInstance;

  before(async () => {
    // paced run: 100 simulated seconds over ~20s wall, so registrations
    // land before the first threshold crossing at t=17.5s
    // no --hold: the sim exits when the 100 simulated seconds are done,
    // flushing webhook deliveries on the way out
    sim = await startSim({
      spec: DIP_SPEC, script: DIP_SCRIPT, durationS: 100, pace: 5, hold: false,
    });
    // the job enters the model on the first paced pump, shortly after boot
    const deadline = Date.now() + 20_000;
    while (Date.now() < deadline) {
      const probe = await rawGet(sim.base, '/job/application/job/dip');
      if (probe.status === 200) break;
      await sleep(50);
    }
    const response = await fetch(`${sim.base}/dmetrics`, {
      method: 'PUT',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ metric_name: 'i_o_dip', scope: 'job', function: DIP_EXPR }),
    });
    assert.equal(response.status, 200);
  });

  after(async () => {
    await stopSim(sim);
  });

  it('receives exactly the 3 dip deliveries, then stops after unsubscribe', async () => {
    const api = new PlatformAPI({ endpoint: sim.base });
    const job = await api.resource('job', 'application/job/dip');

    const deliveries: DeliveryPayload[] = [];
    const firstBatch: DeliveryPayload[] = [];
    const registration = await job.registerCallback('i_o_dip', (payload) => {
      deliveries.push(payload);
    });
    const shortLived = await job.registerCallback('i_o_dip', (payload) => {
      firstBatch.push(payload);
    });

    // unsubscribe the short-lived registration after its first delivery
    const deadline = Date.now() + 60_000;
    while (firstBatch.length === 0 && Date.now() < deadline) {
      await sleep(100);
    }
    assert.equal(firstBatch.length, 1);
    await shortLived.unsubscribe();

    // the sim exits once the 100 simulated seconds are done
    await new Promise<void>((resolve) => sim.proc.once('exit', () => resolve()));

    assert.equal(deliveries.length, 3, JSON.stringify(deliveries));
    for (const payload of deliveries) {
      assert.equal(payload.metric, 'i_o_dip');
      assert.equal(payload.scope, 'job');
      assert.equal(payload.entity_id, 'application/job/dip');
      assert.equal(payload.value, 1.0);
      assert.ok(typeof payload.timestamp === 'number');
    }
    assert.equal(firstBatch.length, 1); // nothing arrived after unsubscribe
    await registration.unsubscribe();
  });
});
