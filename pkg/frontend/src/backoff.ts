// Exponential backoff with a cap, for websocket reconnects.

export class Backoff {
  private attempt = 0

  constructor(
    private readonly baseMs = 250,
    private readonly maxMs = 10_000,
    private readonly factor = 2,
  ) {}

  nextDelay(): number {
    const delay = Math.min(this.maxMs, this.baseMs * Math.pow(this.factor, this.attempt))
    this.attempt += 1
    return delay
  }

  reset(): void {
    this.attempt = 0
  }

  get attempts(): number {
    return this.attempt
  }
}
