/**
 * Console state: per-source gain values and their invariants.
 *
 * Gains live in dB on a 1 dB grid, hard-clamped to [-24, +24] no matter
 * what the caller feeds in, so the UI can never send an out-of-range
 * vector. The displayed value tracks the last server-acknowledged gains;
 * a clamp reported by the server reconciles back into the sliders.
 */

import { GAIN_LIMIT_DB } from "./api.js";

export const GAIN_MIN_DB = -GAIN_LIMIT_DB;
export const GAIN_MAX_DB = GAIN_LIMIT_DB;
export const GAIN_SNAP_DB = 1;

export function clampGain(db: number): number {
  if (!Number.isFinite(db)) return 0;
  const snapped = Math.round(db / GAIN_SNAP_DB) * GAIN_SNAP_DB;
  return Math.min(GAIN_MAX_DB, Math.max(GAIN_MIN_DB, snapped));
}

export interface MixerListener {
  onGainsChanged(gains: number[]): void;
}

export class MixerState {
  private gains: number[];
  busy = false;

  constructor(
    public readonly labels: string[],
    private listener?: MixerListener,
  ) {
    this.gains = labels.map(() => 0);
  }

  get k(): number {
    return this.labels.length;
  }

  gainsDb(): number[] {
    return [...this.gains];
  }

  setGain(source: number, db: number): number {
    this.checkIndex(source);
    const value = clampGain(db);
    if (this.gains[source] !== value) {
      this.gains[source] = value;
      this.listener?.onGainsChanged(this.gainsDb());
    }
    return value;
  }

  resetGain(source: number): number {
    return this.setGain(source, 0);
  }

  /** Fold the server's applied-gain report back into the sliders. */
  acknowledge(appliedDb: number[]): void {
    if (appliedDb.length !== this.k) {
      throw new Error(`${appliedDb.length} acknowledged gains for ${this.k} sources`);
    }
    let changed = false;
    for (let i = 0; i < this.k; i++) {
      const value = clampGain(appliedDb[i]);
      if (this.gains[i] !== value) {
        this.gains[i] = value;
        changed = true;
      }
    }
    if (changed) this.listener?.onGainsChanged(this.gainsDb());
  }

  private checkIndex(source: number): void {
    if (source < 0 || source >= this.k) {
      throw new Error(`source index ${source} out of range for K=${this.k}`);
    }
  }
}
