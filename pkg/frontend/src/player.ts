/**
 * Two-bus audio player: the uploaded original on bus A, the latest remix
 * render on bus B. Toggling buses and swapping in a fresh render both
 * preserve the transport position.
 *
 * Playback is abstracted behind `AudioSink` so the console logic (and its
 * tests) run without a real audio device; `WebAudioSink` is the browser
 * implementation.
 */

import { DecodedWav } from "./wav.js";

export type Bus = "original" | "remix";

export interface AudioSink {
  /** (Re)start playback of the given buffer at an offset in seconds. */
  start(samples: Float32Array, sampleRate: number, offsetS: number): void;
  stop(): void;
  /** Seconds of audio clock elapsed since the last start(). */
  elapsedS(): number;
}

export class AbPlayer {
  private buffers: Record<Bus, DecodedWav | null> = { original: null, remix: null };
  private active: Bus = "original";
  private playing = false;
  private positionS = 0;

  constructor(private sink: AudioSink) {}

  setBuffer(bus: Bus, wav: DecodedWav): void {
    this.buffers[bus] = wav;
    if (this.playing && bus === this.active) {
      // swap under the playhead without stopping the transport
      this.restartAtCurrentPosition();
    }
  }

  activeBus(): Bus {
    return this.active;
  }

  isPlaying(): boolean {
    return this.playing;
  }

  positionSeconds(): number {
    if (!this.playing) return this.positionS;
    return this.positionS + this.sink.elapsedS();
  }

  play(): void {
    const buffer = this.buffers[this.active];
    if (!buffer || this.playing) return;
    this.sink.start(buffer.samples, buffer.sampleRate, this.positionS);
    this.playing = true;
  }

  pause(): void {
    if (!this.playing) return;
    this.positionS = this.positionSeconds();
    this.sink.stop();
    this.playing = false;
  }

  /** Switch buses, keeping the playhead where it is. */
  toggle(): Bus {
    this.active = this.active === "original" ? "remix" : "original";
    if (this.playing) this.restartAtCurrentPosition();
    return this.active;
  }

  private restartAtCurrentPosition(): void {
    this.positionS = this.positionSeconds();
    this.sink.stop();
    const buffer = this.buffers[this.active];
    if (buffer) {
      this.sink.start(buffer.samples, buffer.sampleRate, this.positionS);
    } else {
      this.playing = false;
    }
  }
}

/** Browser implementation over the Web Audio API. */
export class WebAudioSink implements AudioSink {
  private context: AudioContext;
  private node: AudioBufferSourceNode | null = null;
  private startedAt = 0;

  constructor(context?: AudioContext) {
    this.context = context ?? new AudioContext();
  }

  start(samples: Float32Array, sampleRate: number, offsetS: number): void {
    this.stop();
    const buffer = this.context.createBuffer(1, samples.length, sampleRate);
    // copy detaches us from the caller's buffer (and satisfies the DOM's
    // non-shared ArrayBuffer requirement)
    buffer.copyToChannel(new Float32Array(samples), 0);
    const node = this.context.createBufferSource();
    node.buffer = buffer;
    node.connect(this.context.destination);
    node.start(0, Math.min(offsetS, buffer.duration));
    this.node = node;
    this.startedAt = this.context.currentTime;
  }

  stop(): void {
    if (this.node) {
      try {
        this.node.stop();
      } catch {
        /* already stopped */
      }
      this.node.disconnect();
      this.node = null;
    }
  }

  elapsedS(): number {
    return this.context.currentTime - this.startedAt;
  }
}
