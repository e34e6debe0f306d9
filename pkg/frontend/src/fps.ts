// Frame-rate estimate over a sliding time window.

export class FpsCounter {
  private stamps: number[] = []

  constructor(private readonly windowMs = 2000) {}

  tick(nowMs: number): void {
    this.stamps.push(nowMs)
    const cutoff = nowMs - this.windowMs
    while (this.stamps.length && this.stamps[0] < cutoff) this.stamps.shift()
  }

  fps(nowMs: number): number {
    const cutoff = nowMs - this.windowMs
    while (this.stamps.length && this.stamps[0] < cutoff) this.stamps.shift()
    if (this.stamps.length < 2) return 0
    const span = nowMs - this.stamps[0]
    return span > 0 ? ((this.stamps.length - 1) * 1000) / span : 0
  }
}
