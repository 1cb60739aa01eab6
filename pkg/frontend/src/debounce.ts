/**
 * Latest-wins render scheduling for knob twisting.
 *
 * Rapid gain changes collapse to one request: the runner fires after the
 * value has rested for `delayMs`, at most one request is ever in flight,
 * and a value that arrives mid-flight is remembered and rendered once the
 * current flight lands (intermediate positions are dropped).
 */

export interface RenderScheduler<T> {
  request(value: T): void;
  /** Resolves once nothing is pending or in flight (test convenience). */
  settled(): Promise<void>;
  inFlight(): boolean;
}

export function latestWins<T>(
  run: (value: T) => Promise<void>,
  delayMs = 150,
  setTimeoutImpl: typeof setTimeout = setTimeout,
  clearTimeoutImpl: typeof clearTimeout = clearTimeout,
): RenderScheduler<T> {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let flying = false;
  let queued: { value: T } | null = null;
  let waiters: (() => void)[] = [];

  const maybeSettle = () => {
    if (!flying && !queued && timer === null) {
      const done = waiters;
      waiters = [];
      for (const w of done) w();
    }
  };

  const launch = (value: T) => {
    flying = true;
    void run(value).finally(() => {
      flying = false;
      if (queued) {
        const next = queued.value;
        queued = null;
        launch(next);
      } else {
        maybeSettle();
      }
    });
  };

  return {
    request(value: T) {
      if (timer !== null) clearTimeoutImpl(timer);
      timer = setTimeoutImpl(() => {
        timer = null;
        if (flying) {
          queued = { value };
        } else {
          launch(value);
        }
      }, delayMs);
    },
    settled() {
      return new Promise((resolve) => {
        waiters.push(resolve);
        maybeSettle();
      });
    },
    inFlight() {
      return flying;
    },
  };
}
