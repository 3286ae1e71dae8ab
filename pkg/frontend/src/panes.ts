/**
 * Looping turntable viewer: cycles an <img> through PNG frames fetched from
 * the service.  There is no 3D engine here — the pane only ever displays
 * bytes the service rendered.
 */

const FRAME_INTERVAL_MS = 250;

function toBase64(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x2000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}

export class TurntablePane {
  private frames: Uint8Array[] = [];
  private index = 0;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly img: HTMLImageElement,
    private readonly intervalMs: number = FRAME_INTERVAL_MS,
  ) {}

  setFrames(frames: Uint8Array[]): void {
    this.stop();
    this.frames = frames;
    this.index = 0;
    if (frames.length === 0) {
      this.img.removeAttribute("src");
      return;
    }
    this.show(0);
    if (frames.length > 1) {
      this.timer = setInterval(() => {
        this.index = (this.index + 1) % this.frames.length;
        this.show(this.index);
      }, this.intervalMs);
    }
  }

  /** The raw frame bytes currently backing the loop. */
  frameBytes(): Uint8Array[] {
    return this.frames;
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  private show(k: number): void {
    const frame = this.frames[k];
    if (frame !== undefined) {
      this.img.src = `data:image/png;base64,${toBase64(frame)}`;
    }
  }
}
