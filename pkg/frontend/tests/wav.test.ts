import { describe, expect, it } from "vitest";

import { dbToLinear, decodeWav, mixStems } from "../src/wav.js";
import { encodeWavFloat32 } from "./helpers.js";

describe("decodeWav", () => {
  it("round-trips float32 exactly", () => {
    const samples = new Float32Array([0, 0.5, -0.25, 1, -1]);
    const decoded = decodeWav(encodeWavFloat32(samples, 8000));
    expect(decoded.sampleRate).toBe(8000);
    expect(Array.from(decoded.samples)).toEqual(Array.from(samples));
  });

  it("decodes PCM16", () => {
    const buffer = new ArrayBuffer(44 + 4);
    const view = new DataView(buffer);
    const ascii = (offset: number, text: string) => {
      for (let i = 0; i < text.length; i++) view.setUint8(offset + i, text.charCodeAt(i));
    };
    ascii(0, "RIFF");
    view.setUint32(4, 36 + 4, true);
    ascii(8, "WAVE");
    ascii(12, "fmt ");
    view.setUint32(16, 16, true);
    view.setUint16(20, 1, true);
    view.setUint16(22, 1, true);
    view.setUint32(24, 8000, true);
    view.setUint32(28, 16000, true);
    view.setUint16(32, 2, true);
    view.setUint16(34, 16, true);
    ascii(36, "data");
    view.setUint32(40, 4, true);
    view.setInt16(44, 16384, true);
    view.setInt16(46, -32768, true);
    const decoded = decodeWav(buffer);
    expect(Array.from(decoded.samples)).toEqual([0.5, -1]);
  });

  it("rejects non-WAV bytes", () => {
    expect(() => decodeWav(new TextEncoder().encode("nope nope nope").buffer)).toThrow(
      /RIFF/,
    );
  });

  it("rejects stereo", () => {
    const buffer = encodeWavFloat32(new Float32Array(4), 8000);
    new DataView(buffer).setUint16(22, 2, true);
    expect(() => decodeWav(buffer)).toThrow(/mono/);
  });
});

describe("mixStems", () => {
  it("matches the dB-to-linear weighting", () => {
    const stems = [new Float32Array([1, 0]), new Float32Array([0, 1])];
    const out = mixStems(stems, [6.0206, -6.0206]);
    expect(out[0]).toBeCloseTo(dbToLinear(6.0206), 5);
    expect(out[1]).toBeCloseTo(dbToLinear(-6.0206), 5);
  });

  it("unity gains sum the stems", () => {
    const stems = [new Float32Array([0.25, 0.5]), new Float32Array([0.25, -0.5])];
    const out = mixStems(stems, [0, 0]);
    expect(Array.from(out)).toEqual([0.5, 0]);
  });
});
