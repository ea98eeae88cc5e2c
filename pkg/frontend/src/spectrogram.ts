/** Spectrogram rendering: a server-provided matrix to RGBA pixels plus axis
 * ticks. Everything here is a pure view transform; the dB values, the mel
 * band centers, and the frame period all come from the server response and
 * are never recomputed on the client.
 *
 * Colors come from piecewise-linear interpolation through anchor points of
 * the viridis colormap. Viridis is the documented choice because it is
 * perceptually uniform with monotonically increasing luminance, so higher
 * log-energy always reads as brighter, and it stays legible under common
 * color-vision deficiencies.
 */

export interface Raster {
  width: number;
  height: number;
  /** RGBA, row-major from the top-left, 4 bytes per pixel. */
  pixels: Uint8ClampedArray<ArrayBuffer>;
}

/** Axis tick at a fractional position: 0 is the bottom (or left) edge of the
 * image, 1 the top (or right) edge. */
export interface AxisTick {
  label: string;
  pos: number;
}

// viridis anchors at t = 0, 1/8, ..., 1
const VIRIDIS: ReadonlyArray<readonly [number, number, number]> = [
  [68, 1, 84],
  [71, 44, 122],
  [59, 81, 139],
  [44, 113, 142],
  [33, 144, 141],
  [39, 173, 129],
  [92, 200, 99],
  [170, 220, 50],
  [253, 231, 37],
];

export function colormap(t: number): [number, number, number] {
  const clamped = Math.min(1, Math.max(0, t));
  const scaled = clamped * (VIRIDIS.length - 1);
  const lo = Math.min(VIRIDIS.length - 2, Math.floor(scaled));
  const frac = scaled - lo;
  const a = VIRIDIS[lo];
  const b = VIRIDIS[lo + 1];
  return [
    Math.round(a[0] + (b[0] - a[0]) * frac),
    Math.round(a[1] + (b[1] - a[1]) * frac),
    Math.round(a[2] + (b[2] - a[2]) * frac),
  ];
}

/** Render a [bins][frames] matrix to pixels, lowest band at the bottom.
 *
 * The matrix is normalized to its own min..max so the full colormap range is
 * used whatever the absolute dB scale; a constant matrix maps to the
 * midpoint color. Ragged or empty input is rejected.
 */
export function renderHeatmap(values: number[][]): Raster {
  const height = values.length;
  const width = height > 0 ? values[0].length : 0;
  if (height === 0 || width === 0) throw new Error("empty spectrogram matrix");
  let lo = Infinity;
  let hi = -Infinity;
  for (const row of values) {
    if (row.length !== width) throw new Error("ragged spectrogram matrix");
    for (const v of row) {
      if (!Number.isFinite(v)) throw new Error("non-finite spectrogram value");
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
  }
  const span = hi - lo;
  const pixels = new Uint8ClampedArray(width * height * 4);
  for (let y = 0; y < height; y++) {
    const row = values[height - 1 - y]; // row 0 is the lowest band, drawn last
    for (let x = 0; x < width; x++) {
      const t = span > 0 ? (row[x] - lo) / span : 0.5;
      const [r, g, b] = colormap(t);
      const at = (y * width + x) * 4;
      pixels[at] = r;
      pixels[at + 1] = g;
      pixels[at + 2] = b;
      pixels[at + 3] = 255;
    }
  }
  return { width, height, pixels };
}

export function formatHz(hz: number): string {
  const khz = hz / 1000;
  const shown = khz >= 10 ? Math.round(khz) : Number(khz.toFixed(1));
  return `${shown} kHz`;
}

/** Frequency ticks for the vertical axis: both band edges plus the mel
 * centers nearest a few round frequencies. Positions follow the mel bin
 * layout of the rendered image, not a linear Hz scale. */
export function frequencyTicks(doc: {
  mel_centers_hz: number[];
  fmin_hz: number;
  fmax_hz: number;
}): AxisTick[] {
  const centers = doc.mel_centers_hz;
  if (centers.length === 0) throw new Error("no mel centers");
  const ticks: AxisTick[] = [
    { label: formatHz(doc.fmin_hz), pos: 0 },
    { label: formatHz(doc.fmax_hz), pos: 1 },
  ];
  const used = new Set<number>();
  for (const target of [4000, 8000, 16000]) {
    if (target <= doc.fmin_hz || target >= doc.fmax_hz) continue;
    let best = 0;
    for (let i = 1; i < centers.length; i++) {
      if (Math.abs(centers[i] - target) < Math.abs(centers[best] - target)) best = i;
    }
    if (used.has(best)) continue;
    used.add(best);
    ticks.push({ label: formatHz(centers[best]), pos: (best + 0.5) / centers.length });
  }
  ticks.sort((a, b) => a.pos - b.pos);
  return ticks;
}

/** Time ticks every quarter second across the window. */
export function timeTicks(secondsPerFrame: number, nFrames: number): AxisTick[] {
  const total = secondsPerFrame * nFrames;
  if (!(total > 0)) throw new Error("non-positive window duration");
  const ticks: AxisTick[] = [];
  for (let k = 0; k * 0.25 <= total + 1e-9; k++) {
    const t = k * 0.25;
    ticks.push({ label: `${t.toFixed(2)} s`, pos: Math.min(1, t / total) });
  }
  return ticks;
}
