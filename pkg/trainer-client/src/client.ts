import * as net from 'node:net';
import { Readable, Writable } from 'node:stream';

import {
  ClientConfig,
  InstanceRef,
  RewardKind,
  RewardResponse,
  ScoreRequest,
  TimeoutError,
  TransportError,
} from './types';

interface Pending {
  resolve: (response: RewardResponse) => void;
  reject: (error: Error) => void;
  timer: NodeJS.Timeout;
}

/**
 * Thin client for the newline-delimited JSON reward service.
 *
 * Sends one request object per line and resolves each call with the
 * response line carrying the same request_id. Requests are pipelined up
 * to `maxInFlight`; responses may arrive in any order. The client holds
 * no reward logic of its own.
 */
export class RewardClient {
  private readonly timeoutMs: number;
  private readonly maxInFlight: number;
  private readonly retries: number;
  private readonly target: ClientConfig['target'];

  private input: Writable | null = null;
  private output: Readable | null = null;
  private socket: net.Socket | null = null;
  private connecting: Promise<void> | null = null;
  private buffer = '';
  private pending = new Map<string, Pending>();
  private slotQueue: Array<() => void> = [];
  private inFlight = 0;
  private counter = 0;
  private closed = false;

  constructor(config: ClientConfig) {
    this.timeoutMs = config.timeoutMs ?? 10_000;
    this.maxInFlight = config.maxInFlight ?? 32;
    this.retries = config.retries ?? 2;
    if (this.timeoutMs <= 0) {
      throw new RangeError('timeoutMs must be > 0');
    }
    if (this.maxInFlight < 1) {
      throw new RangeError('maxInFlight must be >= 1');
    }
    if (this.retries < 0) {
      throw new RangeError('retries must be >= 0');
    }
    this.target = config.target;
  }

  /** Score one rollout; resolves with the decoded response line. */
  async score(
    instance: InstanceRef,
    outputText: string,
    kind: RewardKind,
    opts?: { requestId?: string },
  ): Promise<RewardResponse> {
    await this.acquireSlot();
    try {
      await this.ensureConnected();
      const requestId = opts?.requestId ?? `c${process.pid}-${this.counter++}`;
      const wire: Record<string, unknown> = {
        request_id: requestId,
        output_text: outputText,
        kind,
      };
      if (typeof instance === 'string') {
        wire.instance_id = instance;
      } else {
        wire.instance = instance;
      }
      return await new Promise<RewardResponse>((resolve, reject) => {
        const timer = setTimeout(() => {
          this.pending.delete(requestId);
          reject(new TimeoutError(`no response for ${requestId} within ${this.timeoutMs}ms`));
        }, this.timeoutMs);
        this.pending.set(requestId, { resolve, reject, timer });
        this.input!.write(JSON.stringify(wire) + '\n', (err) => {
          if (err) {
            clearTimeout(timer);
            this.pending.delete(requestId);
            reject(new TransportError(`write failed: ${err.message}`));
          }
        });
      });
    } finally {
      this.releaseSlot();
    }
  }

  /**
   * Score a batch, pipelined up to `maxInFlight`; results come back in
   * request order regardless of response interleaving.
   */
  async scoreGroup(requests: ScoreRequest[]): Promise<RewardResponse[]> {
    if (requests.length === 0) {
      throw new RangeError('scoreGroup requires a non-empty request list');
    }
    return Promise.all(
      requests.map((r) =>
        this.score(r.instance, r.outputText, r.kind, { requestId: r.requestId }),
      ),
    );
  }

  /** Close the transport; pending requests are rejected. */
  close(): void {
    this.closed = true;
    this.failPending(new TransportError('client closed'));
    if (this.socket) {
      this.socket.destroy();
      this.socket = null;
    }
    this.input = null;
    this.output = null;
  }

  private acquireSlot(): Promise<void> {
    if (this.inFlight < this.maxInFlight) {
      this.inFlight++;
      return Promise.resolve();
    }
    return new Promise((resolve) =>
      this.slotQueue.push(() => {
        this.inFlight++;
        resolve();
      }),
    );
  }

  private releaseSlot(): void {
    this.inFlight--;
    const next = this.slotQueue.shift();
    if (next) next();
  }

  private async ensureConnected(): Promise<void> {
    if (this.closed) {
      throw new TransportError('client is closed');
    }
    if (this.input) return;
    if (!this.connecting) {
      this.connecting = this.connect().finally(() => {
        this.connecting = null;
      });
    }
    return this.connecting;
  }

  private async connect(): Promise<void> {
    if (this.target.kind === 'stream') {
      this.input = this.target.input;
      this.output = this.target.output;
      this.attachReader(this.output);
      return;
    }
    const { host, port } = this.target;
    let lastError: Error | null = null;
    for (let attempt = 0; attempt <= this.retries; attempt++) {
      try {
        this.socket = await this.dial(host, port);
        this.input = this.socket;
        this.output = this.socket;
        this.socket.on('error', (err) =>
          this.failPending(new TransportError(`connection error: ${err.message}`)),
        );
        this.socket.on('close', () => {
          this.input = null;
          this.output = null;
          this.failPending(new TransportError('connection closed'));
        });
        this.attachReader(this.socket);
        return;
      } catch (err) {
        lastError = err as Error;
        await sleep(Math.min(50 * 2 ** attempt, 500));
      }
    }
    throw new TransportError(
      `cannot reach ${host}:${port} after ${this.retries + 1} attempts: ${lastError?.message}`,
    );
  }

  private dial(host: string, port: number): Promise<net.Socket> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host, port });
      socket.once('connect', () => {
        socket.removeAllListeners('error');
        resolve(socket);
      });
      socket.once('error', (err) => {
        socket.destroy();
        reject(err);
      });
    });
  }

  private attachReader(output: Readable): void {
    output.setEncoding('utf-8');
    output.on('data', (chunk: string) => {
      this.buffer += chunk;
      let newline;
      while ((newline = this.buffer.indexOf('\n')) !== -1) {
        const line = this.buffer.slice(0, newline).trim();
        this.buffer = this.buffer.slice(newline + 1);
        if (line) this.dispatch(line);
      }
    });
  }

  private dispatch(line: string): void {
    let response: RewardResponse;
    try {
      response = JSON.parse(line) as RewardResponse;
    } catch {
      return; // not a response line (e.g. server banner); ignore
    }
    const id = response.request_id;
    if (!id) return;
    const entry = this.pending.get(id);
    if (!entry) return;
    this.pending.delete(id);
    clearTimeout(entry.timer);
    entry.resolve(response);
  }

  private failPending(error: TransportError): void {
    for (const [, entry] of this.pending) {
      clearTimeout(entry.timer);
      entry.reject(error);
    }
    this.pending.clear();
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
