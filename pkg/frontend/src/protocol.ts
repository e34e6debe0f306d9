// Wire messages exchanged with the steering service. Field names are part
// of the protocol; keep them in sync with the backend schemas.

export interface FrameMessage {
  v: 1
  type: 'frame'
  step: number
  state: { x: number; y: number; vx: number; vy: number }
  v_targ: number[]
  mask: number[]
  achieved: number[]
  score: number
}

export interface AckMessage {
  v: 1
  type: 'ack'
  instruction: string
  attr: string | null
  dir: 'increase' | 'decrease' | null
  similarity: number
  v_targ: number[]
  mask: number[]
}

export interface ErrorMessage {
  v: 1
  type: 'error'
  reason: string
}

export type ServerMessage = FrameMessage | AckMessage | ErrorMessage

export interface SetPreferenceMessage {
  v: 1
  type: 'set_preference'
  v_targ: number[]
  mask: number[]
}

export interface InstructionMessage {
  v: 1
  type: 'instruction'
  text: string
}

export interface SimpleControlMessage {
  v: 1
  type: 'pause' | 'resume' | 'reset'
}

export type ControlMessage = SetPreferenceMessage | InstructionMessage | SimpleControlMessage

const isNumberArray = (x: unknown): x is number[] =>
  Array.isArray(x) && x.every((v) => typeof v === 'number' && Number.isFinite(v))

export function parseServerMessage(raw: string): ServerMessage {
  let data: unknown
  try {
    data = JSON.parse(raw)
  } catch (e) {
    throw new Error(`unparseable server message: ${e}`)
  }
  const msg = data as Record<string, unknown>
  if (msg.v !== 1 || typeof msg.type !== 'string') {
    throw new Error('missing protocol version or type')
  }
  switch (msg.type) {
    case 'frame': {
      const state = msg.state as Record<string, unknown> | undefined
      if (
        typeof msg.step !== 'number' ||
        !state ||
        !isNumberArray(msg.v_targ) ||
        !isNumberArray(msg.mask) ||
        !isNumberArray(msg.achieved) ||
        typeof msg.score !== 'number'
      ) {
        throw new Error('malformed frame message')
      }
      return msg as unknown as FrameMessage
    }
    case 'ack':
      if (typeof msg.instruction !== 'string' || !isNumberArray(msg.v_targ)) {
        throw new Error('malformed ack message')
      }
      return msg as unknown as AckMessage
    case 'error':
      if (typeof msg.reason !== 'string') throw new Error('malformed error message')
      return msg as unknown as ErrorMessage
    default:
      throw new Error(`unknown server message type ${msg.type}`)
  }
}

export function preferenceMessage(targets: number[], masks: boolean[]): SetPreferenceMessage {
  return {
    v: 1,
    type: 'set_preference',
    v_targ: targets.map((t) => Math.min(1, Math.max(0, t))),
    mask: masks.map((m) => (m ? 1 : 0)),
  }
}

export function instructionMessage(text: string): InstructionMessage {
  const trimmed = text.trim()
  if (!trimmed) throw new Error('instruction is empty')
  return { v: 1, type: 'instruction', text: trimmed }
}
