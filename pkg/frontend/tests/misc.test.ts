import { describe, expect, it } from 'vitest'
import { Backoff } from '../src/backoff.js'
import { drawChart, type Draw2D } from '../src/chart.js'
import { FpsCounter } from '../src/fps.js'

describe('Backoff', () => {
  it('grows exponentially to a cap and resets', () => {
    const b = new Backoff(100, 1000, 2)
    expect(b.nextDelay()).toBe(100)
    expect(b.nextDelay()).toBe(200)
    expect(b.nextDelay()).toBe(400)
    expect(b.nextDelay()).toBe(800)
    expect(b.nextDelay()).toBe(1000)
    expect(b.nextDelay()).toBe(1000)
    b.reset()
    expect(b.nextDelay()).toBe(100)
  })
})

describe('FpsCounter', () => {
  it('estimates steady frame rates', () => {
    const f = new FpsCounter(1000)
    for (let t = 0; t <= 2000; t += 50) f.tick(t)
    expect(f.fps(2000)).toBeGreaterThan(18)
    expect(f.fps(2000)).toBeLessThan(22)
  })

  it('drops to zero when frames stop', () => {
    const f = new FpsCounter(1000)
    f.tick(0)
    f.tick(50)
    expect(f.fps(5000)).toBe(0)
  })
})

class RecordingCtx implements Draw2D {
  calls: string[] = []
  strokeStyle = ''
  fillStyle = ''
  lineWidth = 1
  font = ''
  globalAlpha = 1
  clearRect() { this.calls.push('clearRect') }
  beginPath() { this.calls.push('beginPath') }
  moveTo() { this.calls.push('moveTo') }
  lineTo() { this.calls.push('lineTo') }
  stroke() { this.calls.push('stroke') }
  fillText(text: string) { this.calls.push(`fillText:${text}`) }
  setLineDash() { this.calls.push('setLineDash') }
}

describe('drawChart', () => {
  const layout = { width: 640, height: 200, window: 100 }
  const attrs = ['speed']

  it('draws target and achieved series', () => {
    const ctx = new RecordingCtx()
    const history = [0, 1, 2].map((step) => ({
      step, targets: [0.5], achieved: [0.4], masks: [true],
    }))
    drawChart(ctx, layout, attrs, history, false)
    expect(ctx.calls.filter((c) => c === 'stroke').length).toBeGreaterThanOrEqual(2)
    expect(ctx.calls).toContain('fillText:speed')
  })

  it('annotates the unconditional state', () => {
    const ctx = new RecordingCtx()
    const history = [{ step: 0, targets: [0.5], achieved: [0.4], masks: [false] }]
    drawChart(ctx, layout, attrs, history, true)
    expect(ctx.calls.some((c) => c.startsWith('fillText:unconditional'))).toBe(true)
  })

  it('clears and exits quietly with no history', () => {
    const ctx = new RecordingCtx()
    drawChart(ctx, layout, attrs, [], false)
    expect(ctx.calls).toEqual(['clearRect'])
  })
})
