/**
 * Seastar client SDK.
 *
 * Typed resource handles over the HTTP API with chainable traversal and a
 * local webhook listener for callback registration:
 *
 *   const api = new PlatformAPI({ endpoint: 'localhost:8080' });
 *   const rObj = await api.self().context().parent();
 *   console.log(rObj.kind);     // e.g. 'processor'
 *   console.log(rObj.metrics);  // ['memory_total', ...]
 *
 *   const reg = await rObj.registerCallback('i_o_threshold', (p) => { ... });
 *   await reg.unsubscribe();
 *
 * Every traversal accessor performs at most one HTTP call; a chain of three
 * accessors is exactly the composition of the three underlying GETs. Errors
 * surface as typed exceptions mirroring the HTTP codes.
 */

import * as http from 'node:http';
import * as os from 'node:os';

// ----------------------------------------------------------------------
// wire types
// ----------------------------------------------------------------------

export interface ResourceObject {
  timestamp: number;
  parent_node: Record<string, string>;
  child_nodes: Record<string, string[]>;
  sibling_nodes: Record<string, string[]>;
  attributes: Record<string, Array<[number, number]>>;
  kind: string;
  id: string;
}

export interface DeliveryPayload {
  metric: string;
  scope: string;
  entity_id: string;
  value: number;
  timestamp: number;
}

export interface Identity {
  node?: string;
  pid?: string;
  tid?: string;
}

// ----------------------------------------------------------------------
// errors
// ----------------------------------------------------------------------

export class SeastarError extends Error {}

/** Network-level failure: endpoint unreachable, timeout, reset. */
export class ConnectionError extends SeastarError {}

/** HTTP 404: unknown entity, dead entity, or no parent. */
export class NotFoundError extends SeastarError {}

/** HTTP 401: identity headers missing or insufficient. */
export class NoIdentityError extends SeastarError {}

/** HTTP 400 and other request-side rejections. */
export class BadRequestError extends SeastarError {}

/** HTTP 400 with error=UnknownMetric on callback registration. */
export class UnknownMetricError extends BadRequestError {}

/** The local webhook listener could not bind its port. */
export class PortUnavailableError extends SeastarError {}

function errorFromResponse(status: number, body: unknown): SeastarError {
  const record = (body ?? {}) as Record<string, unknown>;
  const code = typeof record.error === 'string' ? record.error : `HTTP ${status}`;
  const detail = typeof record.detail === 'string' ? `: ${record.detail}` : '';
  const message = `${code}${detail}`;
  if (status === 404) return new NotFoundError(message);
  if (status === 401) return new NoIdentityError(message);
  if (status === 400 && code === 'UnknownMetric') return new UnknownMetricError(message);
  if (status === 400) return new BadRequestError(message);
  return new SeastarError(message);
}

// ----------------------------------------------------------------------
// transport
// ----------------------------------------------------------------------

class Transport {
  constructor(
    readonly baseUrl: string,
    readonly identity: Identity,
    readonly timeoutMs: number,
  ) {}

  private headers(): Record<string, string> {
    const headers: Record<string, string> = {};
    if (this.identity.node) headers['X-Seastar-Node'] = this.identity.node;
    if (this.identity.pid) headers['X-Seastar-Pid'] = this.identity.pid;
    if (this.identity.tid) headers['X-Seastar-Tid'] = this.identity.tid;
    return headers;
  }

  async request(method: string, path: string, body?: unknown): Promise<unknown> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, {
        method,
        headers: { 'Content-Type': 'application/json', ...this.headers() },
        body: body === undefined ? undefined : JSON.stringify(body),
        signal: AbortSignal.timeout(this.timeoutMs),
      });
    } catch (cause) {
      throw new ConnectionError(`cannot reach ${this.baseUrl}: ${cause}`);
    }
    let payload: unknown = null;
    const text = await response.text();
    if (text) {
      try {
        payload = JSON.parse(text);
      } catch {
        payload = null;
      }
    }
    if (!response.ok) throw errorFromResponse(response.status, payload);
    return payload;
  }

  get(path: string): Promise<unknown> {
    return this.request('GET', path);
  }
}

// ----------------------------------------------------------------------
// handles
// ----------------------------------------------------------------------

/**
 * A fetched resource. Pure view of the API response: traversal accessors go
 * back to the service, nothing is cached client-side.
 */
export class ResourceHandle {
  constructor(
    private readonly transport: Transport,
    private readonly obj: ResourceObject,
  ) {}

  get kind(): string {
    return this.obj.kind;
  }

  get id(): string {
    return this.obj.id;
  }

  /** Metric names available on this resource (raw and derived). */
  get metrics(): string[] {
    return Object.keys(this.obj.attributes).sort();
  }

  /** The raw resource object as served. */
  get object(): ResourceObject {
    return this.obj;
  }

  latest(metric: string): number | undefined {
    const points = this.obj.attributes[metric];
    return points && points.length ? points[points.length - 1][1] : undefined;
  }

  parent(): PendingHandle {
    return new PendingHandle(this.transport, async () =>
      fetchOne(this.transport, `/${this.kind}/${this.id}/parent`),
    );
  }

  /** Single-object context (a thread's core). Null context -> NotFoundError. */
  context(): PendingHandle {
    return new PendingHandle(this.transport, async () => {
      const body = await this.transport.get(`/${this.kind}/${this.id}/context`);
      if (body === null) throw new NotFoundError(`${this.id} has no context`);
      if (Array.isArray(body)) {
        throw new BadRequestError(
          `${this.kind} context is a list; use contextAll()`,
        );
      }
      return new ResourceHandle(this.transport, body as ResourceObject);
    });
  }

  /** List-valued context (everything hosted on / hosting this entity). */
  contextAll(): PendingHandleList {
    return new PendingHandleList(this.transport, async () => {
      const body = await this.transport.get(`/${this.kind}/${this.id}/context`);
      if (body === null) return [];
      const list = Array.isArray(body) ? body : [body];
      return list.map((o) => new ResourceHandle(this.transport, o as ResourceObject));
    });
  }

  children(): PendingHandleList {
    return this.listOf('children');
  }

  siblings(): PendingHandleList {
    return this.listOf('siblings');
  }

  private listOf(relation: string): PendingHandleList {
    return new PendingHandleList(this.transport, async () => {
      const body = (await this.transport.get(
        `/${this.kind}/${this.id}/${relation}`,
      )) as ResourceObject[];
      return body.map((o) => new ResourceHandle(this.transport, o));
    });
  }

  /**
   * Register an HTTP callback on a metric, delivered to a local listener.
   * The subscription scope is this resource's kind; unsubscribe stops the
   * listener.
   */
  async registerCallback(
    metric: string,
    callback: (payload: DeliveryPayload) => void,
    options: { host?: string; port?: number } = {},
  ): Promise<CallbackRegistration> {
    const listener = await WebhookListener.start(callback, options);
    try {
      const response = (await this.transport.request('PUT', '/callbacks', {
        callback_uri: listener.uri,
        scope: this.kind,
        metric,
      })) as { id: string };
      return new CallbackRegistration(response.id, listener);
    } catch (err) {
      await listener.close();
      throw err;
    }
  }
}

async function fetchOne(transport: Transport, path: string): Promise<ResourceHandle> {
  const body = (await transport.get(path)) as ResourceObject;
  return new ResourceHandle(transport, body);
}

/**
 * A traversal step that has not been executed yet. Awaiting it (it is a
 * PromiseLike) performs the single HTTP call; chaining another accessor
 * defers both. `api.self().context().parent()` therefore issues exactly
 * three GETs when awaited.
 */
export class PendingHandle implements PromiseLike<ResourceHandle> {
  constructor(
    private readonly transport: Transport,
    private readonly resolver: () => Promise<ResourceHandle>,
  ) {}

  then<T1 = ResourceHandle, T2 = never>(
    onfulfilled?: ((value: ResourceHandle) => T1 | PromiseLike<T1>) | null,
    onrejected?: ((reason: unknown) => T2 | PromiseLike<T2>) | null,
  ): PromiseLike<T1 | T2> {
    return this.resolver().then(onfulfilled, onrejected);
  }

  parent(): PendingHandle {
    return this.chain((handle) => handle.parent());
  }

  context(): PendingHandle {
    return this.chain((handle) => handle.context());
  }

  contextAll(): PendingHandleList {
    return new PendingHandleList(this.transport, async () => {
      const handle = await this.resolver();
      return await handle.contextAll();
    });
  }

  children(): PendingHandleList {
    return new PendingHandleList(this.transport, async () => {
      const handle = await this.resolver();
      return await handle.children();
    });
  }

  siblings(): PendingHandleList {
    return new PendingHandleList(this.transport, async () => {
      const handle = await this.resolver();
      return await handle.siblings();
    });
  }

  private chain(step: (handle: ResourceHandle) => PendingHandle): PendingHandle {
    return new PendingHandle(this.transport, async () => {
      const handle = await this.resolver();
      return await step(handle);
    });
  }
}

export class PendingHandleList implements PromiseLike<ResourceHandle[]> {
  constructor(
    private readonly transport: Transport,
    private readonly resolver: () => Promise<ResourceHandle[]>,
  ) {}

  then<T1 = ResourceHandle[], T2 = never>(
    onfulfilled?: ((value: ResourceHandle[]) => T1 | PromiseLike<T1>) | null,
    onrejected?: ((reason: unknown) => T2 | PromiseLike<T2>) | null,
  ): PromiseLike<T1 | T2> {
    return this.resolver().then(onfulfilled, onrejected);
  }
}

// ----------------------------------------------------------------------
// webhook listener
// ----------------------------------------------------------------------

export class WebhookListener {
  private constructor(
    private readonly server: http.Server,
    readonly uri: string,
  ) {}

  static start(
    callback: (payload: DeliveryPayload) => void,
    options: { host?: string; port?: number } = {},
  ): Promise<WebhookListener> {
    const host = options.host ?? '127.0.0.1';
    const port = options.port ?? 0;
    return new Promise((resolve, reject) => {
      const server = http.createServer((req, res) => {
        const chunks: Buffer[] = [];
        req.on('data', (chunk) => chunks.push(chunk));
        req.on('end', () => {
          res.writeHead(200, { 'Content-Length': '0' });
          res.end();
          try {
            callback(JSON.parse(Buffer.concat(chunks).toString()) as DeliveryPayload);
          } catch {
            // non-JSON body: ignore
          }
        });
      });
      server.once('error', (err) => {
        reject(new PortUnavailableError(`cannot bind ${host}:${port}: ${err}`));
      });
      server.listen(port, host, () => {
        const address = server.address();
        if (address === null || typeof address === 'string') {
          reject(new PortUnavailableError(`unexpected address ${address}`));
          return;
        }
        resolve(new WebhookListener(server, `http://${host}:${address.port}/hook`));
      });
    });
  }

  close(): Promise<void> {
    return new Promise((resolve) => this.server.close(() => resolve()));
  }
}

export class CallbackRegistration {
  private active = true;

  constructor(
    readonly id: string,
    private readonly listener: WebhookListener,
  ) {}

  /** Stop the local listener; further deliveries dead-letter server-side. */
  async unsubscribe(): Promise<void> {
    if (this.active) {
      this.active = false;
      await this.listener.close();
    }
  }
}

// ----------------------------------------------------------------------
// entry point
// ----------------------------------------------------------------------

export interface PlatformAPIOptions {
  endpoint: string;
  identity?: Identity;
  timeoutMs?: number;
}

export class PlatformAPI {
  private readonly transport: Transport;
  readonly identity: Identity;

  constructor(options: PlatformAPIOptions | string) {
    const opts = typeof options === 'string' ? { endpoint: options } : options;
    this.identity = opts.identity ?? {
      node: os.hostname(),
      pid: String(process.pid),
    };
    this.transport = new Transport(
      normalizeEndpoint(opts.endpoint),
      this.identity,
      opts.timeoutMs ?? 10_000,
    );
  }

  /**
   * The calling context's own resource, at the finest granularity the
   * identity allows: thread when a tid is set, process otherwise.
   */
  self(): PendingHandle {
    const kind = this.identity.tid ? 'thread' : 'process';
    return new PendingHandle(this.transport, () =>
      fetchOne(this.transport, `/${kind}/self`),
    );
  }

  /** Self lifted to a specific resource type (job, process, or thread). */
  selfAs(kind: 'job' | 'process' | 'thread'): PendingHandle {
    return new PendingHandle(this.transport, () =>
      fetchOne(this.transport, `/${kind}/self`),
    );
  }

  /** Handle for a known entity id. */
  resource(kind: string, id: string): PendingHandle {
    return new PendingHandle(this.transport, () =>
      fetchOne(this.transport, `/${kind}/${id}`),
    );
  }

  async health(): Promise<boolean> {
    try {
      const body = (await this.transport.get('/healthz')) as { status?: string };
      return body?.status === 'ok';
    } catch {
      return false;
    }
  }
}

function normalizeEndpoint(endpoint: string): string {
  let url = endpoint;
  if (!url.startsWith('http://') && !url.startsWith('https://')) {
    url = `http://${url}`;
  }
  if (!/:\d+(\/|$)/.test(url)) {
    url = `${url}:8080`;
  }
  return url.replace(/\/+$/, '');
}
