/**
 * The mixing console: upload a mixture, move per-instrument dB sliders,
 * hear the neural remix.
 *
 * Render pipeline: slider edits clamp and snap locally, then feed a
 * 150 ms latest-wins scheduler so a knob twist produces one server render
 * (never more than one request in flight). For output-side checkpoints the
 * cached stems give an instant local preview while the authoritative
 * server render is in flight; latent-control checkpoints always wait for
 * the decoder re-run. The server's applied-gain report is reconciled back
 * into the sliders, so what you see is what the server rendered.
 */

import { ModelInfo, RemixerClient, SessionInfo } from "./api.js";
import { latestWins, RenderScheduler } from "./debounce.js";
import { GAIN_MAX_DB, GAIN_MIN_DB, GAIN_SNAP_DB, MixerState } from "./mixer.js";
import { AbPlayer } from "./player.js";
import { blobBytes, decodeWav, mixStems } from "./wav.js";
import { drawThumbnail } from "./waveform.js";
import { readZip } from "./zip.js";

export interface ConsoleOptions {
  debounceMs?: number;
  setTimeoutImpl?: typeof setTimeout;
  clearTimeoutImpl?: typeof clearTimeout;
}

export class MixingConsole {
  session: SessionInfo | null = null;
  model: ModelInfo | null = null;
  mixer: MixerState | null = null;
  /** Raw bytes of the last server render, exactly as received. */
  lastRenderWav: ArrayBuffer | null = null;
  renderCount = 0;

  private scheduler: RenderScheduler<number[]> | null = null;
  private stems: Float32Array[] = [];
  private sliderInputs: HTMLInputElement[] = [];
  private editSeq = 0;
  private readonly debounceMs: number;
  private readonly setTimeoutImpl: typeof setTimeout;
  private readonly clearTimeoutImpl: typeof clearTimeout;

  constructor(
    private root: HTMLElement,
    private client: RemixerClient,
    private player: AbPlayer,
    options: ConsoleOptions = {},
  ) {
    this.debounceMs = options.debounceMs ?? 150;
    this.setTimeoutImpl = options.setTimeoutImpl ?? setTimeout;
    this.clearTimeoutImpl = options.clearTimeoutImpl ?? clearTimeout;
    this.renderShell();
  }

  // -- DOM ----------------------------------------------------------------

  private renderShell(): void {
    this.root.innerHTML = `
      <div class="console">
        <label for="mixture-file">Mixture (mono WAV)</label>
        <input id="mixture-file" type="file" accept=".wav,audio/wav" />
        <div id="status" role="status" aria-live="polite"></div>
        <div id="strips"></div>
        <div id="transport" hidden>
          <button id="play-toggle" aria-label="play or pause">Play</button>
          <button id="ab-toggle" aria-pressed="false"
                  aria-label="toggle between original and remix">
            Listening: original
          </button>
          <a id="download" download="remix.wav" hidden>Download remix</a>
        </div>
      </div>`;
    const input = this.query<HTMLInputElement>("#mixture-file");
    input.addEventListener("change", () => {
      const file = input.files?.[0];
      if (file) void this.upload(file);
    });
    this.query<HTMLButtonElement>("#play-toggle").addEventListener("click", () => {
      if (this.player.isPlaying()) {
        this.player.pause();
        this.query<HTMLButtonElement>("#play-toggle").textContent = "Play";
      } else {
        this.player.play();
        this.query<HTMLButtonElement>("#play-toggle").textContent = "Pause";
      }
    });
    this.query<HTMLButtonElement>("#ab-toggle").addEventListener("click", () => {
      this.abToggle();
    });
  }

  private query<T extends Element>(selector: string): T {
    const el = this.root.querySelector(selector);
    if (!el) throw new Error(`missing element ${selector}`);
    return el as T;
  }

  private status(text: string, isError = false): void {
    const el = this.query<HTMLElement>("#status");
    el.textContent = text;
    el.classList.toggle("error", isError);
  }

  // -- Session ------------------------------------------------------------

  async upload(file: Blob): Promise<void> {
    this.status("uploading…");
    let session: SessionInfo;
    try {
      this.model = await this.client.modelInfo();
      session = await this.client.upload(file);
    } catch (e) {
      this.status(e instanceof Error ? e.message : String(e), true);
      return;
    }
    this.session = session;
    this.mixer = new MixerState(session.labels);
    this.scheduler = latestWins(
      (gains) => this.renderRemix(gains),
      this.debounceMs,
      this.setTimeoutImpl,
      this.clearTimeoutImpl,
    );
    this.player.setBuffer("original", decodeWav(await blobBytes(file)));
    this.buildStrips(session.labels);
    this.query<HTMLElement>("#transport").hidden = false;
    this.status(`session ${session.session_id.slice(0, 8)}: ${session.k} sources`);
    await this.loadStems();
    // seed the remix bus with the pass-through render
    this.scheduler.request(this.mixer.gainsDb());
    await this.scheduler.settled();
  }

  private buildStrips(labels: string[]): void {
    const strips = this.query<HTMLElement>("#strips");
    strips.innerHTML = "";
    this.sliderInputs = [];
    labels.forEach((label, index) => {
      const strip = document.createElement("div");
      strip.className = "strip";
      const id = `gain-${index}`;
      strip.innerHTML = `
        <canvas class="thumb" width="160" height="40" data-source="${index}"></canvas>
        <label for="${id}">${label}</label>
        <input id="${id}" type="range"
               min="${GAIN_MIN_DB}" max="${GAIN_MAX_DB}" step="${GAIN_SNAP_DB}"
               value="0" aria-label="${label} gain in decibels"
               aria-valuetext="0 dB" />
        <output for="${id}">0 dB</output>`;
      const slider = strip.querySelector("input") as HTMLInputElement;
      slider.addEventListener("input", () => {
        this.setGain(index, Number(slider.value));
      });
      slider.addEventListener("dblclick", () => {
        this.setGain(index, 0);
      });
      strips.appendChild(strip);
      this.sliderInputs.push(slider);
    });
  }

  private async loadStems(): Promise<void> {
    if (!this.session) return;
    try {
      const archive = await this.client.stems(this.session.session_id);
      const byName = new Map(readZip(archive).map((e) => [e.name, e.data]));
      this.stems = this.session.labels.map((label) => {
        const data = byName.get(`${label}.wav`);
        if (!data) throw new Error(`stems archive missing ${label}.wav`);
        return decodeWav(data).samples;
      });
      this.session.labels.forEach((_, index) => {
        const canvas = this.root.querySelector<HTMLCanvasElement>(
          `canvas[data-source="${index}"]`,
        );
        if (canvas) drawThumbnail(canvas, this.stems[index]);
      });
    } catch (e) {
      this.status(`stems unavailable: ${e instanceof Error ? e.message : e}`, true);
      this.stems = [];
    }
  }

  // -- Gains --------------------------------------------------------------

  setGain(source: number, db: number): void {
    if (!this.mixer || !this.scheduler || !this.session) return;
    this.editSeq += 1;
    const applied = this.mixer.setGain(source, db);
    this.reflectGain(source, applied);
    this.previewLocally();
    this.scheduler.request(this.mixer.gainsDb());
  }

  /** Cheap client-side preview while the server render is in flight;
   * only valid for output-side variants, where the remix is a linear mix
   * of the cached stems. */
  private previewLocally(): void {
    if (!this.mixer || this.model?.variant === "model2" || this.stems.length === 0) {
      return;
    }
    const rate = this.session?.sample_rate ?? 8000;
    this.player.setBuffer("remix", {
      sampleRate: rate,
      samples: mixStems(this.stems, this.mixer.gainsDb()),
    });
  }

  private async renderRemix(gains: number[]): Promise<void> {
    if (!this.session || !this.mixer) return;
    const launchedAt = this.editSeq;
    this.mixer.busy = true;
    try {
      const result = await this.client.remix(this.session.session_id, gains);
      this.lastRenderWav = result.wav;
      this.renderCount += 1;
      // reconcile the server's applied gains only when the user has not
      // edited since this render launched; a newer render is queued anyway
      if (this.editSeq === launchedAt) {
        this.mixer.acknowledge(result.appliedGainsDb);
        result.appliedGainsDb.forEach((db, index) => this.reflectGain(index, db));
      }
      this.player.setBuffer("remix", decodeWav(result.wav));
      this.updateDownload(result.wav);
      if (result.clamped) this.status("gain clamped to ±24 dB by the server");
    } catch (e) {
      // keep the slider positions; just surface the failure
      this.status(`render failed: ${e instanceof Error ? e.message : e}`, true);
    } finally {
      this.mixer.busy = false;
    }
  }

  private reflectGain(source: number, db: number): void {
    const slider = this.sliderInputs[source];
    if (!slider) return;
    slider.value = String(db);
    slider.setAttribute("aria-valuetext", `${db} dB`);
    const output = slider.parentElement?.querySelector("output");
    if (output) output.textContent = `${db} dB`;
  }

  private updateDownload(wav: ArrayBuffer): void {
    const anchor = this.query<HTMLAnchorElement>("#download");
    if (typeof URL.createObjectURL === "function") {
      if (anchor.href) URL.revokeObjectURL(anchor.href);
      anchor.href = URL.createObjectURL(new Blob([wav], { type: "audio/wav" }));
    }
    anchor.hidden = false;
  }

  // -- Transport ----------------------------------------------------------

  abToggle(): void {
    const bus = this.player.toggle();
    const button = this.query<HTMLButtonElement>("#ab-toggle");
    button.textContent = `Listening: ${bus}`;
    button.setAttribute("aria-pressed", bus === "remix" ? "true" : "false");
  }

  /** Test hook: wait until no render is pending or in flight. */
  async settled(): Promise<void> {
    await this.scheduler?.settled();
  }
}
