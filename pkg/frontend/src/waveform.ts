/** Waveform thumbnails for the per-source strips. */

export interface PeakColumn {
  min: number;
  max: number;
}

/**
 * Min/max peaks per pixel column; the usual overview rendering that stays
 * faithful at any zoom because no sample can escape its column's envelope.
 */
export function peaks(samples: Float32Array, columns: number): PeakColumn[] {
  if (columns < 1) throw new Error("need at least one column");
  const out: PeakColumn[] = [];
  const perColumn = samples.length / columns;
  for (let c = 0; c < columns; c++) {
    const start = Math.floor(c * perColumn);
    const end = Math.max(start + 1, Math.floor((c + 1) * perColumn));
    let lo = Infinity;
    let hi = -Infinity;
    for (let i = start; i < end && i < samples.length; i++) {
      const v = samples[i];
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    if (lo === Infinity) {
      lo = 0;
      hi = 0;
    }
    out.push({ min: lo, max: hi });
  }
  return out;
}

/** Draw a peak envelope onto a canvas (no-op when 2D contexts are missing,
 * as in DOM test environments). */
export function drawThumbnail(
  canvas: HTMLCanvasElement,
  samples: Float32Array,
  color = "#4a90d9",
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = color;
  const envelope = peaks(samples, width);
  const mid = height / 2;
  for (let x = 0; x < width; x++) {
    const { min, max } = envelope[x];
    const top = mid - max * mid;
    const bottom = mid - min * mid;
    ctx.fillRect(x, top, 1, Math.max(1, bottom - top));
  }
}
