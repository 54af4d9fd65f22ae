import { Readable, Writable } from 'node:stream';

/** Reward kinds accepted by the service. */
export type RewardKind = 'AO' | 'ID' | 'ID_C' | 'ID_Q' | 'R_JUDGE';

export interface DocumentPayload {
  text: string;
  origin?: 'gold' | 'hard_negative' | 'promoted';
}

/** Inline instance, mirroring the service's instance file schema. */
export interface InstancePayload {
  id: string;
  question: string;
  answers: string[];
  docs: DocumentPayload[];
  gold_ids: number[];
  source?: string;
}

/** Either an instance id preloaded on the server or an inline instance. */
export type InstanceRef = string | InstancePayload;

/**
 * One decoded response line. All reward semantics live server-side; the
 * client never interprets these fields beyond matching request_id.
 */
export interface RewardResponse {
  request_id: string | null;
  kind?: string;
  total?: number;
  components?: Record<string, number>;
  flags?: string[];
  diagnostics?: Record<string, unknown>;
  error?: string;
  line?: number;
}

export interface ScoreRequest {
  instance: InstanceRef;
  outputText: string;
  kind: RewardKind;
  /** Overrides the generated request id (must be unique among in-flight). */
  requestId?: string;
}

export type TransportTarget =
  | { kind: 'tcp'; host: string; port: number }
  | { kind: 'stream'; input: Writable; output: Readable };

export interface ClientConfig {
  target: TransportTarget;
  /** Per-request timeout in milliseconds; must be > 0. Default 10000. */
  timeoutMs?: number;
  /** Max requests outstanding at once; must be >= 1. Default 32. */
  maxInFlight?: number;
  /** Connection attempts beyond the first (tcp only). Default 2. */
  retries?: number;
}

/** The service endpoint could not be reached or dropped the connection. */
export class TransportError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'TransportError';
  }
}

/** No response for a request within the configured timeout. */
export class TimeoutError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'TimeoutError';
  }
}
