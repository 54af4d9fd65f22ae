export { RewardClient } from './client';
export {
  ClientConfig,
  DocumentPayload,
  InstancePayload,
  InstanceRef,
  RewardKind,
  RewardResponse,
  ScoreRequest,
  TimeoutError,
  TransportError,
  TransportTarget,
} from './types';
