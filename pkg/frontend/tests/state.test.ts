import { describe, expect, it } from 'vitest'
import type { AckMessage, FrameMessage } from '../src/protocol.js'
import {
  applyAck,
  applyFrame,
  beginEdit,
  editFlushed,
  initialState,
  toggleMask,
} from '../src/state.js'

const attrs = ['speed', 'hop_height', 'hop_frequency']

function frameAt(step: number, v = [0.5, 0.5, 0.5], mask = [1, 0, 0]): FrameMessage {
  return {
    v: 1, type: 'frame', step,
    state: { x: step * 0.1, y: 0, vx: 1, vy: 0 },
    v_targ: v, mask, achieved: [0.4, 0.2, 0.1], score: 0.02,
  }
}

describe('state reducer', () => {
  it('follows frames when no edit is pending', () => {
    let s = initialState(attrs)
    s = applyFrame(s, frameAt(0, [0.9, 0.1, 0.2], [1, 1, 0]))
    expect(s.targets).toEqual([0.9, 0.1, 0.2])
    expect(s.masks).toEqual([true, true, false])
    expect(s.unconditional).toBe(false)
    expect(s.connected).toBe(true)
  })

  it('local edits win over frames until flushed', () => {
    let s = initialState(attrs)
    s = beginEdit(s, 0, 0.8)
    expect(s.pendingEdit).toBe(true)
    s = applyFrame(s, frameAt(1, [0.1, 0.1, 0.1]))
    expect(s.targets[0]).toBeCloseTo(0.8)
    s = editFlushed(s)
    s = applyFrame(s, frameAt(2, [0.1, 0.1, 0.1]))
    expect(s.targets[0]).toBeCloseTo(0.1)
  })

  it('clips slider edits into [0,1] and toggles masks', () => {
    let s = initialState(attrs)
    s = beginEdit(s, 1, 1.7)
    expect(s.targets[1]).toBe(1)
    s = toggleMask(s, 2)
    expect(s.masks[2]).toBe(true)
  })

  it('flags the unconditional state when every mask is off', () => {
    let s = initialState(attrs)
    s = applyFrame(s, frameAt(0, [0.5, 0.5, 0.5], [0, 0, 0]))
    expect(s.unconditional).toBe(true)
  })

  it('acks snap sliders to the service answer', () => {
    let s = initialState(attrs)
    s = beginEdit(s, 0, 0.2)
    const ack: AckMessage = {
      v: 1, type: 'ack', instruction: 'slow down', attr: 'speed', dir: 'decrease',
      similarity: 0.9, v_targ: [0.25, 0.5, 0.5], mask: [1, 0, 0],
    }
    s = applyAck(s, ack)
    expect(s.targets[0]).toBeCloseTo(0.25)
    expect(s.masks[0]).toBe(true)
    expect(s.pendingEdit).toBe(false)
  })

  it('bounds history length', () => {
    let s = initialState(attrs, 10)
    for (let i = 0; i < 25; i++) s = applyFrame(s, frameAt(i))
    expect(s.history).toHaveLength(10)
    expect(s.history[0].step).toBe(15)
  })
})
