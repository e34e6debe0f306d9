import { describe, expect, it } from 'vitest'
import {
  instructionMessage,
  parseServerMessage,
  preferenceMessage,
} from '../src/protocol.js'

const frame = {
  v: 1,
  type: 'frame',
  step: 3,
  state: { x: 0.1, y: 0.0, vx: 1.2, vy: 0.0 },
  v_targ: [0.5, 0.5, 0.5],
  mask: [1, 0, 0],
  achieved: [0.4, 0.1, 0.2],
  score: 0.01,
}

describe('parseServerMessage', () => {
  it('accepts well-formed frames', () => {
    const msg = parseServerMessage(JSON.stringify(frame))
    expect(msg.type).toBe('frame')
    if (msg.type === 'frame') {
      expect(msg.step).toBe(3)
      expect(msg.v_targ).toHaveLength(3)
    }
  })

  it('accepts acks and errors', () => {
    const ack = parseServerMessage(
      JSON.stringify({
        v: 1, type: 'ack', instruction: 'go faster', attr: 'speed', dir: 'increase',
        similarity: 0.8, v_targ: [0.75, 0.5, 0.5], mask: [1, 0, 0],
      }),
    )
    expect(ack.type).toBe('ack')
    const err = parseServerMessage(JSON.stringify({ v: 1, type: 'error', reason: 'nope' }))
    expect(err.type).toBe('error')
  })

  it('rejects garbage and wrong shapes', () => {
    expect(() => parseServerMessage('}{')).toThrow(/unparseable/)
    expect(() => parseServerMessage(JSON.stringify({ v: 2, type: 'frame' }))).toThrow(/version/)
    expect(() => parseServerMessage(JSON.stringify({ v: 1, type: 'frame', step: 'x' }))).toThrow(
      /malformed frame/,
    )
    expect(() => parseServerMessage(JSON.stringify({ v: 1, type: 'warp' }))).toThrow(/unknown/)
  })
})

describe('outgoing messages', () => {
  it('builds set_preference with clipped values and 0/1 masks', () => {
    const msg = preferenceMessage([1.3, -0.1, 0.5], [true, false, true])
    expect(msg.v_targ).toEqual([1, 0, 0.5])
    expect(msg.mask).toEqual([1, 0, 1])
    expect(msg.type).toBe('set_preference')
  })

  it('trims instructions and rejects empty ones', () => {
    expect(instructionMessage('  go faster  ').text).toBe('go faster')
    expect(() => instructionMessage('   ')).toThrow(/empty/)
  })
})
