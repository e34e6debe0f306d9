// UI state: a pure function of the last received frame plus local edits
// that have not round-tripped yet.

import type { AckMessage, FrameMessage } from './protocol.js'

export interface HistoryPoint {
  step: number
  targets: number[]
  achieved: number[]
  masks: boolean[]
}

export interface UiState {
  attrs: string[]
  connected: boolean
  lastFrame: FrameMessage | null
  // slider positions; follow frames unless the user has a pending edit
  targets: number[]
  masks: boolean[]
  pendingEdit: boolean
  unconditional: boolean
  lastAck: AckMessage | null
  lastError: string | null
  history: HistoryPoint[]
  historyLimit: number
}

export function initialState(attrs: string[], historyLimit = 600): UiState {
  return {
    attrs,
    connected: false,
    lastFrame: null,
    targets: attrs.map(() => 0.5),
    masks: attrs.map(() => false),
    pendingEdit: false,
    unconditional: true,
    lastAck: null,
    lastError: null,
    history: [],
    historyLimit,
  }
}

export function applyFrame(state: UiState, frame: FrameMessage): UiState {
  const masks = frame.mask.map((m) => m > 0)
  const history = state.history.concat([
    { step: frame.step, targets: frame.v_targ.slice(), achieved: frame.achieved.slice(), masks },
  ])
  if (history.length > state.historyLimit) history.splice(0, history.length - state.historyLimit)
  const next: UiState = {
    ...state,
    connected: true,
    lastFrame: frame,
    history,
    unconditional: masks.every((m) => !m),
  }
  if (!state.pendingEdit) {
    next.targets = frame.v_targ.slice()
    next.masks = masks
  }
  return next
}

export function applyAck(state: UiState, ack: AckMessage): UiState {
  // the service already applied the instruction; snap sliders to its answer
  return {
    ...state,
    lastAck: ack,
    targets: ack.v_targ.slice(),
    masks: ack.mask.map((m) => m > 0),
    pendingEdit: false,
  }
}

export function beginEdit(state: UiState, index: number, value: number): UiState {
  const targets = state.targets.slice()
  targets[index] = Math.min(1, Math.max(0, value))
  return { ...state, targets, pendingEdit: true }
}

export function toggleMask(state: UiState, index: number): UiState {
  const masks = state.masks.slice()
  masks[index] = !masks[index]
  return { ...state, masks, pendingEdit: true }
}

// called once the edit has been sent; sliders resume following frames
export function editFlushed(state: UiState): UiState {
  return { ...state, pendingEdit: false }
}

export function setConnected(state: UiState, connected: boolean): UiState {
  return { ...state, connected, lastError: connected ? null : state.lastError }
}

export function recordError(state: UiState, reason: string): UiState {
  return { ...state, lastError: reason }
}
