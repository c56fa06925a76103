/**
 * One in-flight inference per model instance; waiting requests sit in a
 * bounded queue and overflow is reported so the server can answer 429.
 */

export class QueueOverflowError extends Error {
  constructor(maxQueue: number) {
    super(`inference queue full (max ${maxQueue} waiting)`);
  }
}

export class SerialQueue {
  /** running (0 or 1) + waiting tasks */
  private occupancy = 0;
  private tail: Promise<unknown> = Promise.resolve();

  constructor(private readonly maxQueue: number) {}

  get depth(): number {
    return this.occupancy;
  }

  run<T>(task: () => Promise<T>): Promise<T> {
    if (this.occupancy >= this.maxQueue + 1) {
      return Promise.reject(new QueueOverflowError(this.maxQueue));
    }
    this.occupancy += 1;
    const result = this.tail.then(task).finally(() => {
      this.occupancy -= 1;
    });
    // keep the chain alive regardless of task failures
    this.tail = result.catch(() => undefined);
    return result;
  }
}
