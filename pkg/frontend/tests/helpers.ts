/** Shared fixtures: WAV/zip builders and an in-memory service stand-in. */

/** Build a canonical 44-byte-header mono WAV in memory. */
export function encodeWavFloat32(samples: Float32Array, sampleRate: number): ArrayBuffer {
  const payload = samples.length * 4;
  const buffer = new ArrayBuffer(44 + payload);
  const view = new DataView(buffer);
  const ascii = (offset: number, text: string) => {
    for (let i = 0; i < text.length; i++) view.setUint8(offset + i, text.charCodeAt(i));
  };
  ascii(0, "RIFF");
  view.setUint32(4, 36 + payload, true);
  ascii(8, "WAVE");
  ascii(12, "fmt ");
  view.setUint32(16, 16, true);
  view.setUint16(20, 3, true); // IEEE float
  view.setUint16(22, 1, true);
  view.setUint32(24, sampleRate, true);
  view.setUint32(28, sampleRate * 4, true);
  view.setUint16(32, 4, true);
  view.setUint16(34, 32, true);
  ascii(36, "data");
  view.setUint32(40, payload, true);
  for (let i = 0; i < samples.length; i++) view.setFloat32(44 + 4 * i, samples[i], true);
  return buffer;
}

export function buildStoredZip(entries: { name: string; data: ArrayBuffer }[]): ArrayBuffer {
  const encoder = new TextEncoder();
  const locals: Uint8Array[] = [];
  const centrals: Uint8Array[] = [];
  let offset = 0;
  for (const entry of entries) {
    const name = encoder.encode(entry.name);
    const data = new Uint8Array(entry.data);
    const local = new Uint8Array(30 + name.length + data.length);
    const lv = new DataView(local.buffer);
    lv.setUint32(0, 0x04034b50, true);
    lv.setUint16(4, 20, true);
    lv.setUint16(8, 0, true); // stored
    lv.setUint32(18, data.length, true);
    lv.setUint32(22, data.length, true);
    lv.setUint16(26, name.length, true);
    local.set(name, 30);
    local.set(data, 30 + name.length);
    locals.push(local);

    const central = new Uint8Array(46 + name.length);
    const cv = new DataView(central.buffer);
    cv.setUint32(0, 0x02014b50, true);
    cv.setUint16(10, 0, true); // stored
    cv.setUint32(20, data.length, true);
    cv.setUint32(24, data.length, true);
    cv.setUint16(28, name.length, true);
    cv.setUint32(42, offset, true);
    central.set(name, 46);
    centrals.push(central);
    offset += local.length;
  }
  const centralStart = offset;
  const centralSize = centrals.reduce((n, c) => n + c.length, 0);
  const eocd = new Uint8Array(22);
  const ev = new DataView(eocd.buffer);
  ev.setUint32(0, 0x06054b50, true);
  ev.setUint16(8, entries.length, true);
  ev.setUint16(10, entries.length, true);
  ev.setUint32(12, centralSize, true);
  ev.setUint32(16, centralStart, true);

  const total = new Uint8Array(centralStart + centralSize + 22);
  let cursor = 0;
  for (const chunk of [...locals, ...centrals, eocd]) {
    total.set(chunk, cursor);
    cursor += chunk.length;
  }
  return total.buffer;
}

export interface FakeServiceStats {
  remixRequests: number[][];
  inFlight: number;
  maxInFlight: number;
}

export function fakeService(options: { variant?: string; remixDelayMs?: number } = {}) {
  const variant = options.variant ?? "baseline";
  const labels = ["piano", "drums"];
  const stats: FakeServiceStats = { remixRequests: [], inFlight: 0, maxInFlight: 0 };

  /** Deterministic render: header sample per gain, then a constant. */
  const renderWav = (gains: number[]) =>
    encodeWavFloat32(new Float32Array([...gains.map((g) => g / 100), 0.125]), 8000);

  const fetchImpl = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    if (url.endsWith("/v1/model")) {
      return Response.json({
        variant,
        config: { k: 2, sample_rate: 8000 },
        checkpoint_hash: "deadbeef",
        labels,
      });
    }
    if (url.endsWith("/v1/sessions")) {
      return Response.json({
        session_id: "s1",
        duration_s: 1.0,
        sample_rate: 8000,
        k: 2,
        labels,
      });
    }
    if (url.endsWith("/stems")) {
      const stems = [
        { name: "piano.wav", data: encodeWavFloat32(new Float32Array([0.5, 0.25]), 8000) },
        { name: "drums.wav", data: encodeWavFloat32(new Float32Array([-0.5, 0.75]), 8000) },
      ];
      return new Response(buildStoredZip(stems), {
        headers: { "content-type": "application/zip" },
      });
    }
    if (url.endsWith("/remix")) {
      const body = JSON.parse(String(init?.body)) as { gains_db: number[] };
      stats.inFlight += 1;
      stats.maxInFlight = Math.max(stats.maxInFlight, stats.inFlight);
      stats.remixRequests.push(body.gains_db);
      if (options.remixDelayMs) {
        await new Promise((resolve) => setTimeout(resolve, options.remixDelayMs));
      }
      const applied = body.gains_db.map((g) => Math.min(24, Math.max(-24, g)));
      const clamped = applied.some((g, i) => g !== body.gains_db[i]);
      stats.inFlight -= 1;
      return new Response(renderWav(applied), {
        headers: {
          "content-type": "audio/wav",
          "X-Applied-Gains-Db": JSON.stringify(applied),
          "X-Clamped": clamped ? "1" : "0",
        },
      });
    }
    return new Response(JSON.stringify({ error: `no route for ${url}` }), { status: 404 });
  }) as typeof fetch;

  return { fetchImpl, stats };
}
