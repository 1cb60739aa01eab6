import { describe, expect, it } from "vitest";

import { AbPlayer, AudioSink } from "../src/player.js";

class FakeSink implements AudioSink {
  clock = 0;
  startedAt = 0;
  starts: { offsetS: number; samples: Float32Array }[] = [];
  running = false;

  start(samples: Float32Array, _rate: number, offsetS: number): void {
    this.starts.push({ offsetS, samples });
    this.startedAt = this.clock;
    this.running = true;
  }

  stop(): void {
    this.running = false;
  }

  elapsedS(): number {
    return this.clock - this.startedAt;
  }
}

const wav = (fill: number, n = 8000) => ({
  sampleRate: 8000,
  samples: new Float32Array(n).fill(fill),
});

describe("AbPlayer", () => {
  it("keeps the original bus bit-exact", () => {
    const sink = new FakeSink();
    const player = new AbPlayer(sink);
    const original = wav(0.25);
    player.setBuffer("original", original);
    player.play();
    expect(sink.starts[0].samples).toBe(original.samples);
  });

  it("toggle switches buses and preserves the playhead", () => {
    const sink = new FakeSink();
    const player = new AbPlayer(sink);
    player.setBuffer("original", wav(0.1));
    player.setBuffer("remix", wav(0.2));
    player.play();
    sink.clock = 1.5;
    const bus = player.toggle();
    expect(bus).toBe("remix");
    // restarted on the other bus at the same position (one audio quantum
    // of slack: the fake clock is exact, so it's exact here)
    expect(sink.starts.at(-1)?.offsetS).toBeCloseTo(1.5, 6);
    expect(sink.starts.at(-1)?.samples[0]).toBeCloseTo(0.2, 6);
  });

  it("swapping the active buffer keeps the transport running", () => {
    const sink = new FakeSink();
    const player = new AbPlayer(sink);
    player.setBuffer("original", wav(0.1));
    player.setBuffer("remix", wav(0.2));
    player.toggle(); // listen to remix
    player.play();
    sink.clock = 0.75;
    player.setBuffer("remix", wav(0.3));
    expect(player.isPlaying()).toBe(true);
    expect(sink.starts.at(-1)?.offsetS).toBeCloseTo(0.75, 6);
    expect(sink.starts.at(-1)?.samples[0]).toBeCloseTo(0.3, 6);
  });

  it("pause freezes the position; play resumes from it", () => {
    const sink = new FakeSink();
    const player = new AbPlayer(sink);
    player.setBuffer("original", wav(0.1));
    player.play();
    sink.clock = 2.0;
    player.pause();
    expect(player.positionSeconds()).toBeCloseTo(2.0, 6);
    sink.clock = 5.0;
    player.play();
    expect(sink.starts.at(-1)?.offsetS).toBeCloseTo(2.0, 6);
  });

  it("swapping the inactive bus does not restart playback", () => {
    const sink = new FakeSink();
    const player = new AbPlayer(sink);
    player.setBuffer("original", wav(0.1));
    player.play();
    const startsBefore = sink.starts.length;
    player.setBuffer("remix", wav(0.9));
    expect(sink.starts.length).toBe(startsBefore);
  });
});
