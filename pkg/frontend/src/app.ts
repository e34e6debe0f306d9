// DOM wiring: websocket client, control panel, scene and chart rendering.

import { Backoff } from './backoff.js'
import { ATTR_COLORS, drawChart } from './chart.js'
import { FpsCounter } from './fps.js'
import {
  instructionMessage,
  parseServerMessage,
  preferenceMessage,
  type ServerMessage,
} from './protocol.js'
import { drawScene, type Pose, type SceneDraw } from './scene.js'
import {
  applyAck,
  applyFrame,
  beginEdit,
  editFlushed,
  initialState,
  recordError,
  setConnected,
  toggleMask,
  type UiState,
} from './state.js'

const TRAIL_LEN = 40

interface Controls {
  sliders: HTMLInputElement[]
  checks: HTMLInputElement[]
  readouts: HTMLSpanElement[]
}

async function fetchAttrs(): Promise<string[]> {
  const res = await fetch('/meta')
  const meta = (await res.json()) as { attrs: string[] }
  return meta.attrs
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id)
  if (!node) throw new Error(`missing #${id}`)
  return node as T
}

function buildControls(attrs: string[], panel: HTMLElement): Controls {
  const sliders: HTMLInputElement[] = []
  const checks: HTMLInputElement[] = []
  const readouts: HTMLSpanElement[] = []
  attrs.forEach((name, i) => {
    const row = document.createElement('div')
    row.className = 'attr-row'
    const check = document.createElement('input')
    check.type = 'checkbox'
    check.id = `mask-${i}`
    const label = document.createElement('label')
    label.htmlFor = check.id
    label.textContent = name
    label.style.color = ATTR_COLORS[i % ATTR_COLORS.length]
    const slider = document.createElement('input')
    slider.type = 'range'
    slider.min = '0'
    slider.max = '1'
    slider.step = '0.01'
    slider.value = '0.5'
    const readout = document.createElement('span')
    readout.className = 'readout'
    readout.textContent = '0.50'
    row.append(check, label, slider, readout)
    panel.append(row)
    sliders.push(slider)
    checks.push(check)
    readouts.push(readout)
  })
  return { sliders, checks, readouts }
}

function syncControls(state: UiState, controls: Controls): void {
  state.targets.forEach((v, i) => {
    controls.sliders[i].value = v.toFixed(2)
    controls.readouts[i].textContent = v.toFixed(2)
    controls.checks[i].checked = state.masks[i]
  })
}

export function startApp(): void {
  void fetchAttrs().then((attrs) => {
    let state = initialState(attrs)
    const controls = buildControls(attrs, el('controls'))
    const sceneCtx = (el<HTMLCanvasElement>('scene').getContext('2d') as unknown) as SceneDraw
    const chartCtx = el<HTMLCanvasElement>('chart').getContext('2d') as unknown as Parameters<
      typeof drawChart
    >[0]
    const status = el<HTMLSpanElement>('status')
    const ackBox = el<HTMLDivElement>('ack')
    const fps = new FpsCounter()
    const backoff = new Backoff()
    const trail: Pose[] = []
    const liveDrag = el<HTMLInputElement>('live-drag')
    let ws: WebSocket | null = null

    const render = () => {
      drawScene(sceneCtx, { width: 640, height: 260, metersWide: 16, metersHigh: 2.2 }, trail)
      drawChart(chartCtx, { width: 640, height: 200, window: 400 }, attrs, state.history,
        state.unconditional)
      const rate = fps.fps(performance.now())
      status.textContent = state.connected
        ? `connected | step ${state.lastFrame?.step ?? '-'} | ${rate.toFixed(1)} fps`
        : `disconnected (retry ${backoff.attempts})`
      status.className = state.connected ? 'ok' : 'bad'
    }

    const sendPreference = () => {
      state = editFlushed(state)
      ws?.send(JSON.stringify(preferenceMessage(state.targets, state.masks)))
    }

    controls.sliders.forEach((slider, i) => {
      slider.addEventListener('input', () => {
        state = beginEdit(state, i, Number(slider.value))
        controls.readouts[i].textContent = Number(slider.value).toFixed(2)
        if (liveDrag.checked) sendPreference()
      })
      // release commits the edit; drag only updates the local preview
      slider.addEventListener('change', sendPreference)
    })
    controls.checks.forEach((check, i) => {
      check.addEventListener('change', () => {
        state = toggleMask(state, i)
        sendPreference()
      })
    })

    el<HTMLFormElement>('instruction-form').addEventListener('submit', (ev) => {
      ev.preventDefault()
      const box = el<HTMLInputElement>('instruction')
      try {
        ws?.send(JSON.stringify(instructionMessage(box.value)))
        box.value = ''
      } catch {
        /* empty instruction */
      }
    })
    el<HTMLButtonElement>('pause').addEventListener('click', () =>
      ws?.send(JSON.stringify({ v: 1, type: 'pause' })))
    el<HTMLButtonElement>('resume').addEventListener('click', () =>
      ws?.send(JSON.stringify({ v: 1, type: 'resume' })))
    el<HTMLButtonElement>('reset').addEventListener('click', () =>
      ws?.send(JSON.stringify({ v: 1, type: 'reset' })))

    const handle = (msg: ServerMessage) => {
      if (msg.type === 'frame') {
        state = applyFrame(state, msg)
        trail.push({ x: msg.state.x, y: msg.state.y })
        if (trail.length > TRAIL_LEN) trail.shift()
        fps.tick(performance.now())
        if (!state.pendingEdit) syncControls(state, controls)
      } else if (msg.type === 'ack') {
        state = applyAck(state, msg)
        syncControls(state, controls)
        ackBox.textContent = msg.attr
          ? `"${msg.instruction}" -> (${msg.attr}, ${msg.dir}) sim ${msg.similarity.toFixed(2)}`
          : `"${msg.instruction}" -> no matching intent`
      } else {
        state = recordError(state, msg.reason)
        ackBox.textContent = `error: ${msg.reason}`
      }
    }

    const connect = () => {
      const proto = location.protocol === 'https:' ? 'wss' : 'ws'
      ws = new WebSocket(`${proto}://${location.host}/ws`)
      ws.onopen = () => {
        backoff.reset()
        state = setConnected(state, true)
      }
      ws.onmessage = (ev) => {
        try {
          handle(parseServerMessage(String(ev.data)))
        } catch (e) {
          state = recordError(state, String(e))
        }
      }
      ws.onclose = () => {
        state = setConnected(state, false)
        setTimeout(connect, backoff.nextDelay())
      }
    }

    connect()
    const loop = () => {
      render()
      requestAnimationFrame(loop)
    }
    loop()
  })
}

startApp()
