import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { latestWins } from "../src/debounce.js";

describe("latestWins", () => {
  beforeEach(() => {
    vi.useFakeTimers();
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  it("collapses a 20-event burst into one request, never overlapping", async () => {
    let inFlight = 0;
    let maxInFlight = 0;
    const runs: number[][] = [];
    const scheduler = latestWins(async (gains: number[]) => {
      inFlight += 1;
      maxInFlight = Math.max(maxInFlight, inFlight);
      runs.push(gains);
      await new Promise((resolve) => setTimeout(resolve, 50));
      inFlight -= 1;
    });

    for (let i = 1; i <= 20; i++) {
      scheduler.request([i]);
      await vi.advanceTimersByTimeAsync(5); // wiggling faster than the rest time
    }
    await vi.advanceTimersByTimeAsync(1000);

    expect(maxInFlight).toBe(1);
    expect(runs).toEqual([[20]]); // only the final knob position rendered
  });

  it("queues the latest value that arrives mid-flight", async () => {
    const runs: number[] = [];
    const scheduler = latestWins(async (v: number) => {
      runs.push(v);
      await new Promise((resolve) => setTimeout(resolve, 500));
    });

    scheduler.request(1);
    await vi.advanceTimersByTimeAsync(150); // fires, now in flight for 500ms
    expect(scheduler.inFlight()).toBe(true);
    scheduler.request(2);
    scheduler.request(3);
    await vi.advanceTimersByTimeAsync(150); // rest elapses while flying: queue [3]
    await vi.advanceTimersByTimeAsync(2000);
    expect(runs).toEqual([1, 3]);
  });

  it("waits the full rest time before firing", async () => {
    const runs: number[] = [];
    const scheduler = latestWins(async (v: number) => {
      runs.push(v);
    });
    scheduler.request(1);
    await vi.advanceTimersByTimeAsync(149);
    expect(runs).toEqual([]);
    await vi.advanceTimersByTimeAsync(1);
    expect(runs).toEqual([1]);
  });

  it("settled resolves after the trailing render lands", async () => {
    let done = 0;
    const scheduler = latestWins(async () => {
      await new Promise((resolve) => setTimeout(resolve, 10));
      done += 1;
    });
    scheduler.request(1);
    const settled = scheduler.settled();
    await vi.advanceTimersByTimeAsync(500);
    await settled;
    expect(done).toBe(1);
  });
});
