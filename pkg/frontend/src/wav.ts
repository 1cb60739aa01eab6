/** Minimal mono WAV decoder: IEEE float32 and PCM16, as served by the API. */

export interface DecodedWav {
  sampleRate: number;
  samples: Float32Array;
}

/** Blob -> bytes, tolerating DOM implementations without Blob.arrayBuffer. */
export function blobBytes(blob: Blob): Promise<ArrayBuffer> {
  if (typeof blob.arrayBuffer === "function") {
    return blob.arrayBuffer();
  }
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => resolve(reader.result as ArrayBuffer);
    reader.onerror = () => reject(reader.error);
    reader.readAsArrayBuffer(blob);
  });
}

export function decodeWav(buffer: ArrayBuffer): DecodedWav {
  const view = new DataView(buffer);
  const magic = (offset: number) =>
    String.fromCharCode(
      view.getUint8(offset),
      view.getUint8(offset + 1),
      view.getUint8(offset + 2),
      view.getUint8(offset + 3),
    );
  if (buffer.byteLength < 12 || magic(0) !== "RIFF" || magic(8) !== "WAVE") {
    throw new Error("not a RIFF/WAVE file");
  }
  let offset = 12;
  let format: { audioFormat: number; channels: number; sampleRate: number; bits: number } | null =
    null;
  let data: { start: number; length: number } | null = null;
  while (offset + 8 <= buffer.byteLength) {
    const id = magic(offset);
    const size = view.getUint32(offset + 4, true);
    const body = offset + 8;
    if (body + size > buffer.byteLength) {
      throw new Error(`chunk ${id} at byte ${offset} overruns the file`);
    }
    if (id === "fmt ") {
      format = {
        audioFormat: view.getUint16(body, true),
        channels: view.getUint16(body + 2, true),
        sampleRate: view.getUint32(body + 4, true),
        bits: view.getUint16(body + 14, true),
      };
    } else if (id === "data") {
      data = { start: body, length: size };
    }
    offset = body + size + (size % 2);
  }
  if (!format || !data) throw new Error("missing fmt or data chunk");
  if (format.channels !== 1) throw new Error(`expected mono, got ${format.channels} channels`);

  if (format.audioFormat === 3 && format.bits === 32) {
    const n = data.length >> 2;
    const samples = new Float32Array(n);
    for (let i = 0; i < n; i++) samples[i] = view.getFloat32(data.start + 4 * i, true);
    return { sampleRate: format.sampleRate, samples };
  }
  if (format.audioFormat === 1 && format.bits === 16) {
    const n = data.length >> 1;
    const samples = new Float32Array(n);
    for (let i = 0; i < n; i++) samples[i] = view.getInt16(data.start + 2 * i, true) / 32768;
    return { sampleRate: format.sampleRate, samples };
  }
  throw new Error(
    `unsupported codec: format ${format.audioFormat}, ${format.bits}-bit`,
  );
}

/** Linear amplitude ratio for a dB change. */
export function dbToLinear(db: number): number {
  return Math.pow(10, db / 20);
}

/** Client-side preview mix: sum of gain-scaled stems (output-side variants only). */
export function mixStems(stems: Float32Array[], gainsDb: number[]): Float32Array {
  if (stems.length !== gainsDb.length) {
    throw new Error(`${gainsDb.length} gains for ${stems.length} stems`);
  }
  const n = stems[0].length;
  const out = new Float32Array(n);
  for (let k = 0; k < stems.length; k++) {
    const gamma = dbToLinear(gainsDb[k]);
    const stem = stems[k];
    for (let i = 0; i < n; i++) out[i] += gamma * stem[i];
  }
  return out;
}
