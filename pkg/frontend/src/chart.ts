// Scrolling target-vs-achieved strength chart. Draws through a minimal 2D
// context interface so tests can feed a recording stub.

import type { HistoryPoint } from './state.js'

export interface Draw2D {
  clearRect(x: number, y: number, w: number, h: number): void
  beginPath(): void
  moveTo(x: number, y: number): void
  lineTo(x: number, y: number): void
  stroke(): void
  fillText(text: string, x: number, y: number): void
  setLineDash(segments: number[]): void
  strokeStyle: string
  fillStyle: string
  lineWidth: number
  font: string
  globalAlpha: number
}

export const ATTR_COLORS = ['#e4572e', '#3a86ff', '#2a9d8f', '#b56576', '#7b2cbf']

export interface ChartLayout {
  width: number
  height: number
  window: number // steps shown
}

export function drawChart(
  ctx: Draw2D,
  layout: ChartLayout,
  attrs: string[],
  history: HistoryPoint[],
  unconditional: boolean,
): void {
  const { width, height } = layout
  ctx.clearRect(0, 0, width, height)
  if (!history.length) return
  const last = history[history.length - 1].step
  const first = Math.max(0, last - layout.window)
  const xOf = (step: number) => ((step - first) / Math.max(1, layout.window)) * width
  const yOf = (v: number) => height - v * (height - 18) - 9

  for (let i = 0; i < attrs.length; i++) {
    const color = ATTR_COLORS[i % ATTR_COLORS.length]
    // dashed target line (only meaningful while masked on)
    ctx.setLineDash([5, 4])
    ctx.strokeStyle = color
    ctx.globalAlpha = 0.8
    ctx.lineWidth = 1
    ctx.beginPath()
    let pen = false
    for (const pt of history) {
      if (pt.step < first) continue
      if (!pt.masks[i]) {
        pen = false
        continue
      }
      const x = xOf(pt.step)
      const y = yOf(pt.targets[i])
      if (pen) ctx.lineTo(x, y)
      else ctx.moveTo(x, y)
      pen = true
    }
    ctx.stroke()
    // solid achieved line
    ctx.setLineDash([])
    ctx.globalAlpha = 1
    ctx.lineWidth = 2
    ctx.beginPath()
    pen = false
    for (const pt of history) {
      if (pt.step < first) continue
      const x = xOf(pt.step)
      const y = yOf(pt.achieved[i])
      if (pen) ctx.lineTo(x, y)
      else ctx.moveTo(x, y)
      pen = true
    }
    ctx.stroke()
    ctx.fillStyle = color
    ctx.font = '11px sans-serif'
    ctx.fillText(attrs[i], 6 + i * 92, 12)
  }
  if (unconditional) {
    ctx.fillStyle = '#666'
    ctx.font = '12px sans-serif'
    ctx.fillText('unconditional (no attributes selected)', 6, height - 6)
  }
}
