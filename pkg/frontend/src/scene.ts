// 2D view of the hopping cart: ground line, agent disc, recent trail.

import type { Draw2D } from './chart.js'

export interface SceneDraw extends Draw2D {
  arc(x: number, y: number, r: number, a0: number, a1: number): void
  fill(): void
}

export interface Pose {
  x: number
  y: number
}

export interface SceneLayout {
  width: number
  height: number
  metersWide: number // world meters shown horizontally
  metersHigh: number
}

export function worldToScreen(layout: SceneLayout, camX: number, x: number, y: number) {
  const groundY = layout.height - 24
  const px = layout.width / 2 + ((x - camX) / layout.metersWide) * layout.width
  const py = groundY - (y / layout.metersHigh) * (groundY - 12)
  return { px, py }
}

export function drawScene(ctx: SceneDraw, layout: SceneLayout, trail: Pose[]): void {
  ctx.clearRect(0, 0, layout.width, layout.height)
  if (!trail.length) return
  const cam = trail[trail.length - 1].x
  const groundY = layout.height - 24

  // ground with tick marks so horizontal motion is visible
  ctx.strokeStyle = '#444'
  ctx.lineWidth = 2
  ctx.setLineDash([])
  ctx.beginPath()
  ctx.moveTo(0, groundY)
  ctx.lineTo(layout.width, groundY)
  ctx.stroke()
  ctx.strokeStyle = '#999'
  ctx.lineWidth = 1
  const firstTick = Math.floor(cam - layout.metersWide / 2)
  for (let m = firstTick; m <= cam + layout.metersWide / 2 + 1; m++) {
    const { px } = worldToScreen(layout, cam, m, 0)
    ctx.beginPath()
    ctx.moveTo(px, groundY)
    ctx.lineTo(px, groundY + (m % 5 === 0 ? 10 : 5))
    ctx.stroke()
  }

  // trail, fading out
  for (let i = 0; i < trail.length - 1; i++) {
    const { px, py } = worldToScreen(layout, cam, trail[i].x, trail[i].y)
    ctx.globalAlpha = (i + 1) / trail.length / 2
    ctx.fillStyle = '#3a86ff'
    ctx.beginPath()
    ctx.arc(px, py, 4, 0, Math.PI * 2)
    ctx.fill()
  }

  // the agent
  const head = trail[trail.length - 1]
  const { px, py } = worldToScreen(layout, cam, head.x, head.y)
  ctx.globalAlpha = 1
  ctx.fillStyle = '#e4572e'
  ctx.beginPath()
  ctx.arc(px, py, 9, 0, Math.PI * 2)
  ctx.fill()
}
